//! Pairwise-judgment survey: balanced task assignment, evaluator sessions
//! and a crash-safe judgment store.

mod assign;
mod pool;
mod store;
mod view;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::AbilityDimension;
use crate::generation::CandidateReply;
use crate::records::ContextTurn;

pub use assign::{assign_tasks, pair_key, CoverageLedger};
pub use pool::{ItemPool, PoolItem};
pub use store::{
    CalibrationAgreement, JudgmentRevision, LogicalClock, StoreConfig, SurveyClock, SurveyStore, SystemClock,
};
pub use view::{ChoiceOption, QuestionView, SessionView, TaskView};

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("pool has {available} eligible items but a session needs {required}")]
    PoolTooSmall { required: usize, available: usize },
    #[error("invalid item pool: {0}")]
    InvalidPool(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("task {got} submitted but the session is at task {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("consent has not been given for session {0}")]
    ConsentMissing(String),
    #[error("session {0} has no remaining tasks")]
    SessionComplete(String),
    #[error("evaluator id must not be empty")]
    EmptyEvaluator,
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store file {path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

/// One presented comparison. Position 0 of every session holds the shared
/// calibration task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentTask {
    pub item_id: String,
    pub context: Vec<ContextTurn>,
    pub student_utterance: String,
    pub left: CandidateReply,
    pub right: CandidateReply,
    pub abilities: [AbilityDimension; 3],
    #[serde(default)]
    pub calibration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySession {
    pub session_id: String,
    pub evaluator_id: String,
    /// Calibration task followed by the assigned items.
    pub assigned_tasks: Vec<JudgmentTask>,
    pub cursor: usize,
    pub consent_given: bool,
    #[serde(default)]
    pub consent_declined: bool,
    pub created_at: DateTime<Utc>,
}

impl SurveySession {
    pub fn is_complete(&self) -> bool {
        self.cursor >= self.assigned_tasks.len()
    }

    pub fn current_task(&self) -> Option<&JudgmentTask> {
        self.assigned_tasks.get(self.cursor)
    }
}

pub(crate) fn judgment_id(session_id: &str, task_index: usize, ability: AbilityDimension) -> String {
    format!("{session_id}-{task_index:02}-{}", ability.as_str())
}
