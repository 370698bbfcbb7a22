use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::assign::{assign_tasks, CoverageLedger};
use super::view::SessionView;
use super::{judgment_id, ItemPool, SurveyError, SurveySession};
use crate::bt::{AbilityDimension, Choice, ComparisonJudgment};
use crate::generation::Provenance;
use crate::seed::derive_seed;

pub trait SurveyClock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl SurveyClock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Advances one second per reading, for reproducible runs.
#[derive(Debug)]
pub struct LogicalClock {
    start: DateTime<Utc>,
    ticks: AtomicI64,
}

impl LogicalClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            start,
            ticks: AtomicI64::new(0),
        }
    }
}

impl SurveyClock for LogicalClock {
    fn now(&self) -> DateTime<Utc> {
        self.start + Duration::seconds(self.ticks.fetch_add(1, Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub session_size: usize,
    pub seed: u64,
    /// Events between snapshots; 0 disables snapshots.
    pub snapshot_every: usize,
    pub fsync: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            session_size: 15,
            seed: 0,
            snapshot_every: 1000,
            fsync: true,
        }
    }
}

/// A replaced answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRevision {
    pub judgment_id: String,
    pub previous: Choice,
    pub replacement: Choice,
    pub previous_timestamp: DateTime<Utc>,
    pub timestamp: DateTime<Utc>,
}

/// Share of calibration answers picking the reference reply, per ability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAgreement {
    pub ability: AbilityDimension,
    pub n: usize,
    pub agree: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredJudgment {
    judgment: ComparisonJudgment,
    session_id: String,
    task_index: usize,
    calibration: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct SurveyState {
    seq: u64,
    sessions_created: u64,
    sessions: BTreeMap<String, SurveySession>,
    ledger: CoverageLedger,
    judgments: BTreeMap<String, StoredJudgment>,
    audit: Vec<JudgmentRevision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SurveyEvent {
    SessionCreated {
        session: SurveySession,
    },
    ConsentRecorded {
        session_id: String,
        given: bool,
    },
    JudgmentRecorded {
        session_id: String,
        task_index: usize,
        judgment: ComparisonJudgment,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    #[serde(flatten)]
    event: SurveyEvent,
}

impl SurveyState {
    fn answered(&self, session_id: &str, task_index: usize) -> BTreeMap<AbilityDimension, Choice> {
        AbilityDimension::ALL
            .into_iter()
            .filter_map(|a| {
                self.judgments
                    .get(&judgment_id(session_id, task_index, a))
                    .map(|s| (a, s.judgment.choice))
            })
            .collect()
    }

    fn apply(&mut self, entry: LogEntry) {
        self.seq = entry.seq;
        match entry.event {
            SurveyEvent::SessionCreated { session } => {
                self.sessions_created += 1;
                for t in &session.assigned_tasks {
                    self.ledger.record(t);
                }
                self.sessions.insert(session.session_id.clone(), session);
            }
            SurveyEvent::ConsentRecorded { session_id, given } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.consent_given = given;
                    s.consent_declined = !given;
                }
            }
            SurveyEvent::JudgmentRecorded {
                session_id,
                task_index,
                judgment,
            } => {
                let Some(session) = self.sessions.get(&session_id) else {
                    return;
                };
                let calibration = session.assigned_tasks.get(task_index).is_some_and(|t| t.calibration);
                let id = judgment.judgment_id.clone();
                let stored = StoredJudgment {
                    judgment,
                    session_id: session_id.clone(),
                    task_index,
                    calibration,
                };
                if let Some(prev) = self.judgments.insert(id.clone(), stored) {
                    let new = &self.judgments[&id].judgment;
                    self.audit.push(JudgmentRevision {
                        judgment_id: id,
                        previous: prev.judgment.choice,
                        replacement: new.choice,
                        previous_timestamp: prev.judgment.timestamp,
                        timestamp: new.timestamp,
                    });
                }
                if self.answered(&session_id, task_index).len() == AbilityDimension::ALL.len() {
                    if let Some(s) = self.sessions.get_mut(&session_id) {
                        if s.cursor == task_index {
                            s.cursor += 1;
                        }
                    }
                }
            }
        }
    }
}

struct EventLog {
    dir: PathBuf,
    file: File,
    fsync: bool,
    since_snapshot: usize,
}

const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

impl EventLog {
    fn open(dir: &Path, fsync: bool) -> Result<(Self, SurveyState), SurveyError> {
        fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut state = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path)?;
            serde_json::from_str(&text).map_err(|e| SurveyError::Corrupt {
                path: snap_path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            SurveyState::default()
        };

        let log_path = dir.join(LOG_FILE);
        let text = if log_path.exists() {
            fs::read_to_string(&log_path)?
        } else {
            String::new()
        };
        let mut offset = 0usize;
        let mut valid_len = 0usize;
        let mut replayed = 0usize;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            offset += line.len();
            if line.trim().is_empty() {
                valid_len = offset;
                continue;
            }
            let torn = !line.ends_with('\n');
            let entry: LogEntry = match serde_json::from_str(line) {
                Ok(e) => e,
                Err(_) if torn => {
                    tracing::warn!(line = i + 1, "dropping incomplete trailing event");
                    break;
                }
                Err(e) => {
                    return Err(SurveyError::Corrupt {
                        path: log_path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            valid_len = offset;
            if entry.seq <= state.seq {
                continue;
            }
            if entry.seq != state.seq + 1 {
                return Err(SurveyError::Corrupt {
                    path: log_path.display().to_string(),
                    line: i + 1,
                    message: format!("expected event {} but found {}", state.seq + 1, entry.seq),
                });
            }
            state.apply(entry);
            replayed += 1;
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if valid_len < text.len() {
            file.set_len(valid_len as u64)?;
        } else if !text.is_empty() && !text.ends_with('\n') {
            // Final line parsed but lacks its newline.
            (&file).write_all(b"\n")?;
        }
        Ok((
            Self {
                dir: dir.to_path_buf(),
                file,
                fsync,
                since_snapshot: replayed,
            },
            state,
        ))
    }

    fn append(&mut self, entry: &LogEntry) -> Result<(), SurveyError> {
        let mut line = serde_json::to_string(entry).expect("event serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.since_snapshot += 1;
        Ok(())
    }

    fn snapshot(&mut self, state: &SurveyState) -> Result<(), SurveyError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(serde_json::to_string(state).expect("state serializes").as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.file.set_len(0)?;
        if self.fsync {
            self.file.sync_all()?;
        }
        self.since_snapshot = 0;
        Ok(())
    }
}

/// Sessions, coverage and judgments. Every mutation goes through `&mut
/// self`, so wrapping the store in one lock gives a single writer.
pub struct SurveyStore {
    pool: Arc<ItemPool>,
    config: StoreConfig,
    state: SurveyState,
    log: Option<EventLog>,
}

impl SurveyStore {
    pub fn in_memory(pool: Arc<ItemPool>, config: StoreConfig) -> Self {
        Self {
            pool,
            config,
            state: SurveyState::default(),
            log: None,
        }
    }

    /// Opens or creates a store persisted under `dir`, replaying the
    /// snapshot and event log.
    pub fn open(dir: &Path, pool: Arc<ItemPool>, config: StoreConfig) -> Result<Self, SurveyError> {
        let (log, state) = EventLog::open(dir, config.fsync)?;
        Ok(Self {
            pool,
            config,
            state,
            log: Some(log),
        })
    }

    pub fn pool(&self) -> &ItemPool {
        &self.pool
    }

    /// Uses `pool` for sessions created from now on. Existing sessions keep
    /// their tasks.
    pub fn replace_pool(&mut self, pool: Arc<ItemPool>) {
        self.pool = pool;
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn ledger(&self) -> &CoverageLedger {
        &self.state.ledger
    }

    pub fn session(&self, session_id: &str) -> Option<&SurveySession> {
        self.state.sessions.get(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SurveySession> {
        self.state.sessions.values()
    }

    pub fn audit_trail(&self) -> &[JudgmentRevision] {
        &self.state.audit
    }

    fn commit(&mut self, event: SurveyEvent) -> Result<(), SurveyError> {
        let entry = LogEntry {
            seq: self.state.seq + 1,
            event,
        };
        if let Some(log) = self.log.as_mut() {
            log.append(&entry)?;
        }
        self.state.apply(entry);
        if let Some(log) = self.log.as_mut() {
            if self.config.snapshot_every > 0 && log.since_snapshot >= self.config.snapshot_every {
                log.snapshot(&self.state)?;
            }
        }
        Ok(())
    }

    /// Writes a snapshot now and clears the event log.
    pub fn snapshot(&mut self) -> Result<(), SurveyError> {
        if let Some(log) = self.log.as_mut() {
            log.snapshot(&self.state)?;
        }
        Ok(())
    }

    pub fn create_session(&mut self, evaluator_id: &str, now: DateTime<Utc>) -> Result<SurveySession, SurveyError> {
        if evaluator_id.trim().is_empty() {
            return Err(SurveyError::EmptyEvaluator);
        }
        let n = self.state.sessions_created.to_string();
        let seed = derive_seed(self.config.seed, &["session", &n]);
        let session_id = format!("{:016x}", derive_seed(self.config.seed, &["session-id", &n]));
        let mut tasks = vec![self.pool.calibration().clone()];
        tasks.extend(assign_tasks(&self.pool, &self.state.ledger, self.config.session_size, seed)?);
        let session = SurveySession {
            session_id: session_id.clone(),
            evaluator_id: evaluator_id.to_string(),
            assigned_tasks: tasks,
            cursor: 0,
            consent_given: false,
            consent_declined: false,
            created_at: now,
        };
        self.commit(SurveyEvent::SessionCreated {
            session: session.clone(),
        })?;
        tracing::debug!(%session_id, evaluator_id, "session created");
        Ok(session)
    }

    pub fn record_consent(&mut self, session_id: &str, given: bool) -> Result<SessionView, SurveyError> {
        if !self.state.sessions.contains_key(session_id) {
            return Err(SurveyError::SessionNotFound(session_id.into()));
        }
        self.commit(SurveyEvent::ConsentRecorded {
            session_id: session_id.into(),
            given,
        })?;
        self.view(session_id)
    }

    /// Stores one ability answer for the task at the session cursor.
    /// Answering the same ability again replaces the earlier answer and
    /// adds an audit entry; the cursor moves once all abilities of the task
    /// are answered.
    pub fn submit_judgment(
        &mut self,
        session_id: &str,
        task_index: usize,
        ability: AbilityDimension,
        choice: Choice,
        now: DateTime<Utc>,
    ) -> Result<ComparisonJudgment, SurveyError> {
        let session = self
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| SurveyError::SessionNotFound(session_id.into()))?;
        if !session.consent_given {
            return Err(SurveyError::ConsentMissing(session_id.into()));
        }
        let Some(task) = session.current_task() else {
            return Err(SurveyError::SessionComplete(session_id.into()));
        };
        if task_index != session.cursor {
            return Err(SurveyError::OutOfOrder {
                expected: session.cursor,
                got: task_index,
            });
        }
        let judgment = ComparisonJudgment {
            judgment_id: judgment_id(session_id, task_index, ability),
            evaluator_id: session.evaluator_id.clone(),
            item_id: task.item_id.clone(),
            ability,
            left_agent: task.left.agent.clone(),
            right_agent: task.right.agent.clone(),
            choice,
            timestamp: now,
        };
        self.commit(SurveyEvent::JudgmentRecorded {
            session_id: session_id.into(),
            task_index,
            judgment: judgment.clone(),
        })?;
        Ok(judgment)
    }

    pub fn view(&self, session_id: &str) -> Result<SessionView, SurveyError> {
        let session = self
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| SurveyError::SessionNotFound(session_id.into()))?;
        Ok(SessionView::new(session, self.state.answered(session_id, session.cursor)))
    }

    fn sorted(&self, calibration: bool) -> Vec<ComparisonJudgment> {
        let mut out: Vec<ComparisonJudgment> = self
            .state
            .judgments
            .values()
            .filter(|s| s.calibration == calibration)
            .map(|s| s.judgment.clone())
            .collect();
        out.sort_by(|a, b| (a.timestamp, &a.judgment_id).cmp(&(b.timestamp, &b.judgment_id)));
        out
    }

    /// Judgments on assigned items, ordered by timestamp.
    pub fn export_judgments(&self) -> Vec<ComparisonJudgment> {
        self.sorted(false)
    }

    /// Judgments on the calibration task, ordered by timestamp.
    pub fn export_calibration(&self) -> Vec<ComparisonJudgment> {
        self.sorted(true)
    }

    pub fn calibration_agreement(&self) -> Vec<CalibrationAgreement> {
        AbilityDimension::ALL
            .into_iter()
            .map(|ability| {
                let mut n = 0;
                let mut agree = 0;
                for s in self.state.judgments.values().filter(|s| s.calibration && s.judgment.ability == ability) {
                    let Some(task) = self
                        .state
                        .sessions
                        .get(&s.session_id)
                        .and_then(|sess| sess.assigned_tasks.get(s.task_index))
                    else {
                        continue;
                    };
                    let reference = match (task.left.provenance, task.right.provenance) {
                        (Provenance::Reference, Provenance::Generated) => Choice::Left,
                        (Provenance::Generated, Provenance::Reference) => Choice::Right,
                        _ => continue,
                    };
                    n += 1;
                    agree += usize::from(s.judgment.choice == reference);
                }
                CalibrationAgreement {
                    ability,
                    n,
                    agree,
                    rate: (n > 0).then(|| agree as f64 / n as f64),
                }
            })
            .collect()
    }
}
