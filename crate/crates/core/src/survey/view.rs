use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{JudgmentTask, SurveySession};
use crate::bt::{AbilityDimension, Choice};
use crate::records::ContextTurn;

/// One answer option; `value` is what gets posted back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub value: Choice,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub ability: AbilityDimension,
    pub prompt: String,
    pub options: Vec<ChoiceOption>,
}

/// What a rater sees for one task. Replies carry no agent identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_index: usize,
    pub calibration: bool,
    /// 1-based position among the assigned items; 0 for calibration.
    pub position: usize,
    pub of: usize,
    pub context: Vec<ContextTurn>,
    pub student_utterance: String,
    pub reply_a: String,
    pub reply_b: String,
    pub questions: Vec<QuestionView>,
    pub answered: BTreeMap<AbilityDimension, Choice>,
}

impl TaskView {
    pub fn new(task: &JudgmentTask, task_index: usize, of: usize, answered: BTreeMap<AbilityDimension, Choice>) -> Self {
        let options = vec![
            ChoiceOption {
                value: Choice::Left,
                label: "A".into(),
            },
            ChoiceOption {
                value: Choice::Right,
                label: "B".into(),
            },
            ChoiceOption {
                value: Choice::Tie,
                label: "I cannot tell".into(),
            },
        ];
        Self {
            task_index,
            calibration: task.calibration,
            position: if task.calibration { 0 } else { task_index },
            of,
            context: task.context.clone(),
            student_utterance: task.student_utterance.clone(),
            reply_a: task.left.text.clone(),
            reply_b: task.right.text.clone(),
            questions: task
                .abilities
                .iter()
                .map(|&ability| QuestionView {
                    ability,
                    prompt: prompt_for(ability).into(),
                    options: options.clone(),
                })
                .collect(),
            answered,
        }
    }
}

fn prompt_for(ability: AbilityDimension) -> &'static str {
    match ability {
        AbilityDimension::SpeakLikeTeacher => "Which reply is more likely said by a teacher?",
        AbilityDimension::UnderstandStudent => "Which reply shows more understanding of the student?",
        AbilityDimension::HelpStudent => "Which reply does more to help the student?",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub consent_given: bool,
    pub consent_declined: bool,
    pub cursor: usize,
    pub total_tasks: usize,
    pub complete: bool,
    pub task: Option<TaskView>,
}

impl SessionView {
    pub(crate) fn new(session: &SurveySession, answered: BTreeMap<AbilityDimension, Choice>) -> Self {
        let of = session.assigned_tasks.iter().filter(|t| !t.calibration).count();
        Self {
            session_id: session.session_id.clone(),
            consent_given: session.consent_given,
            consent_declined: session.consent_declined,
            cursor: session.cursor,
            total_tasks: session.assigned_tasks.len(),
            complete: session.is_complete(),
            task: session
                .current_task()
                .map(|t| TaskView::new(t, session.cursor, of, answered)),
        }
    }
}
