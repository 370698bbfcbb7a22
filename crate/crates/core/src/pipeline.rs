//! File-based pipeline: prepare, generate, simulate, fit and report.
//!
//! Every command reads and writes line-delimited JSON under the configured
//! output directory and is a pure function of its inputs, configuration and
//! seed, so reruns produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{fit_item_ability, AbilityDimension, BtError, ComparisonJudgment, FitConfig, ItemAbilityFit};
use crate::corpus::{extract_dialogic_pairs, merge_consecutive_turns, select_items, SelectionPolicy};
use crate::generation::{
    effective_budget, generate_reply, AuditLog, CandidateReply, CompletionBackend, GenerationError, GenerationRequest,
    HttpBackend, HttpBackendConfig, MockBackend, Provenance, ReplayBackend, RetryPolicy, SamplingParams,
    DEFAULT_PERSONA,
};
use crate::records::{parse_jsonl, to_jsonl, DialogueRecord, ItemRecord, PoolRecord, RecordError, ScoreRecord};
use crate::report::{build_report, AnalysisReport, ReportConfig};
use crate::screening::{screen_evaluators, EvaluatorBiasFit, ScreeningConfig};
use crate::seed::derive_seed;
use crate::simulate::{simulate_survey, SurveySimulation};
use crate::survey::{CalibrationAgreement, ItemPool, LogicalClock, StoreConfig, SurveyError, SurveyStore};

pub const POOL_FILE: &str = "pool.jsonl";
pub const SELECTION_LOG_FILE: &str = "selection_log.jsonl";
pub const AUDIT_FILE: &str = "generation_audit.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.jsonl";
pub const SCREENING_FILE: &str = "screening.jsonl";
pub const FITS_FILE: &str = "fits.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{0}")]
    Invalid(String),
    #[error("judgments reference unknown item {0}")]
    UnknownItem(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("generation failed for {} replies; first: {}", .0.len(), .0[0])]
    GenerationFailures(Vec<String>),
    #[error("screening: {0}")]
    Screening(BtError),
    #[error("fit of item {item_id} on {ability}: {source}")]
    Fit {
        item_id: String,
        ability: AbilityDimension,
        #[source]
        source: BtError,
    },
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error("worker pool: {0}")]
    Workers(String),
}

impl PipelineError {
    /// Problems with the inputs or configuration, as opposed to failures
    /// while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Record(_)
                | PipelineError::Invalid(_)
                | PipelineError::UnknownItem(_)
                | PipelineError::Generation(GenerationError::Config(_))
        ) || matches!(self, PipelineError::Survey(SurveyError::InvalidPool(_) | SurveyError::PoolTooSmall { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    /// Per-reply uptake and perplexity scores merged during generation.
    pub scores: Option<PathBuf>,
    /// Judgments to fit; defaults to the exported survey judgments.
    pub judgments: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            scores: None,
            judgments: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendKind {
    Mock { reply: String },
    Replay { path: PathBuf },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub agent: String,
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_max_prompt_tokens")]
    pub max_prompt_tokens: usize,
    #[serde(default = "default_safety_margin")]
    pub safety_margin: f64,
    #[serde(default)]
    pub params: SamplingParams,
}

fn default_max_prompt_tokens() -> usize {
    1024
}

fn default_safety_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        let p = RetryPolicy::default();
        Self {
            max_retries: p.max_retries,
            initial_backoff_ms: p.initial_backoff.as_millis() as u64,
            max_backoff_ms: p.max_backoff.as_millis() as u64,
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial_backoff: std::time::Duration::from_millis(self.initial_backoff_ms),
            max_backoff: std::time::Duration::from_millis(self.max_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub persona: String,
    /// Agent name under which the corpus teacher reply is filed.
    pub reference_agent: String,
    pub retry: RetryConfig,
    pub backends: Vec<BackendSpec>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            persona: DEFAULT_PERSONA.to_string(),
            reference_agent: "teacher".into(),
            retry: RetryConfig::default(),
            backends: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub session_size: usize,
    pub bind: String,
    /// Name of the environment variable holding the operator token.
    pub operator_token_env: String,
    /// Pool file served by the survey; the pool in the output directory
    /// when absent.
    pub pool: Option<PathBuf>,
    /// Event log directory; in-memory when absent.
    pub store_dir: Option<PathBuf>,
    pub calibration_item: Option<String>,
    /// Agent order; inferred from the pool when absent.
    pub agents: Option<Vec<String>>,
    pub snapshot_every: usize,
    pub fsync: bool,
    /// Timestamps from a one-second-per-event clock starting at a fixed
    /// instant instead of the wall clock.
    pub logical_clock: bool,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        let store = StoreConfig::default();
        Self {
            session_size: store.session_size,
            bind: "127.0.0.1:8080".into(),
            operator_token_env: "TUTORBENCH_OPERATOR_TOKEN".into(),
            pool: None,
            store_dir: None,
            calibration_item: None,
            agents: None,
            snapshot_every: store.snapshot_every,
            fsync: store.fsync,
            logical_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningSection {
    pub enabled: bool,
    pub min_judgments: usize,
}

impl Default for ScreeningSection {
    fn default() -> Self {
        Self {
            enabled: true,
            min_judgments: ScreeningConfig::default().min_judgments,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for generation and fitting; 0 uses every core.
    pub workers: usize,
    pub paths: PathsConfig,
    pub selection: SelectionPolicy,
    pub generation: GenerationConfig,
    pub survey: SurveyConfig,
    pub simulate: SurveySimulation,
    pub screening: ScreeningSection,
    pub fit: FitConfig,
    pub report: ReportConfig,
}


fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = read(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.corpus, &mut p.scores, &mut p.judgments] {
            if let Some(path) = slot.as_mut() {
                resolve(base, path);
            }
        }
        resolve(base, &mut p.out_dir);
        for slot in [&mut self.survey.pool, &mut self.survey.store_dir] {
            if let Some(dir) = slot.as_mut() {
                resolve(base, dir);
            }
        }
        for b in &mut self.generation.backends {
            if let BackendKind::Replay { path } = &mut b.kind {
                resolve(base, path);
            }
        }
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.paths.out_dir.join(file)
    }

    /// Pool read by the survey, fitting and the report.
    pub fn pool_path(&self) -> PathBuf {
        self.survey.pool.clone().unwrap_or_else(|| self.out(POOL_FILE))
    }

    pub fn judgments_path(&self) -> PathBuf {
        self.paths.judgments.clone().unwrap_or_else(|| self.out(JUDGMENTS_FILE))
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            session_size: self.survey.session_size,
            seed: derive_seed(self.seed, &["survey"]),
            snapshot_every: self.survey.snapshot_every,
            fsync: self.survey.fsync,
        }
    }

    pub fn screening_config(&self) -> ScreeningConfig {
        ScreeningConfig {
            fit: self.fit.clone(),
            min_judgments: self.screening.min_judgments,
        }
    }

    fn worker_pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Workers(e.to_string()))
    }
}

/// Fixed start instant of the logical survey clock.
pub fn logical_clock() -> LogicalClock {
    LogicalClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(parse_jsonl(&read(path)?, &path.display().to_string())?)
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Records the seed and configuration digest of each command's outputs in
/// the output directory's manifest.
fn record_manifest(cfg: &PipelineConfig, command: &str, outputs: &[&str]) -> Result<(), PipelineError> {
    let path = cfg.out(MANIFEST_FILE);
    let mut manifest: BTreeMap<String, serde_json::Value> = if path.exists() {
        serde_json::from_str(&read(&path)?).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?
    } else {
        BTreeMap::new()
    };
    manifest.insert(
        command.to_string(),
        serde_json::json!({
            "seed": cfg.seed,
            "fit_config_hash": cfg.fit.config_hash(),
            "outputs": outputs,
        }),
    );
    write(&path, &pretty(&manifest))
}

/// Item and reply records of a pool file, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolFile {
    pub items: Vec<ItemRecord>,
    pub replies: Vec<CandidateReply>,
}

impl PoolFile {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        Ok(Self::from_records(read_records(path)?))
    }

    pub fn from_records(records: Vec<PoolRecord>) -> Self {
        let mut out = Self::default();
        for r in records {
            match r {
                PoolRecord::Item(i) => out.items.push(i),
                PoolRecord::Reply(r) => out.replies.push(r),
            }
        }
        out
    }

    pub fn records(&self) -> Vec<PoolRecord> {
        self.items
            .iter()
            .cloned()
            .map(PoolRecord::Item)
            .chain(self.replies.iter().cloned().map(PoolRecord::Reply))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records())
    }

    /// Replies ordered by item position, then agent name.
    fn sort_replies(&mut self) {
        let pos: BTreeMap<&str, usize> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.as_str(), i))
            .collect();
        self.replies.sort_by(|a, b| {
            let ka = (pos.get(a.item_id.as_str()), &a.agent);
            let kb = (pos.get(b.item_id.as_str()), &b.agent);
            ka.cmp(&kb)
        });
    }

    pub fn item_pool(&self, survey: &SurveyConfig) -> Result<ItemPool, SurveyError> {
        ItemPool::from_records(self.records(), survey.agents.clone(), survey.calibration_item.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub dialogues: usize,
    pub candidate_pairs: usize,
    pub retained: usize,
    pub rejected: usize,
}

/// Reads the corpus, merges consecutive same-speaker turns, extracts and
/// selects dialogic pairs, and writes the item pool plus selection log.
/// Replies already in an existing pool are kept for retained items.
pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<PrepareSummary, PipelineError> {
    let corpus = cfg
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| PipelineError::Config("paths.corpus is not set".into()))?;
    let text = read(corpus)?;
    let source = corpus.display().to_string();
    let mut dialogues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| RecordError {
            source_name: source.clone(),
            line: i + 1,
            message,
        };
        let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        dialogues.push(rec.into_dialogue().map_err(err)?);
    }
    if dialogues.is_empty() {
        tracing::warn!(corpus = %source, "corpus has no dialogues; writing an empty pool");
    }

    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for d in &dialogues {
        if !seen.insert(d.dialogue_id.clone()) {
            return Err(PipelineError::Invalid(format!("duplicate dialogue id {}", d.dialogue_id)));
        }
        pairs.extend(extract_dialogic_pairs(&merge_consecutive_turns(d), cfg.selection.context_budget));
    }
    let selection = select_items(&pairs, &cfg.selection);

    let pool_path = cfg.out(POOL_FILE);
    let previous = if pool_path.exists() {
        PoolFile::read(&pool_path)?
    } else {
        PoolFile::default()
    };
    let mut pool = PoolFile {
        items: selection.retained.iter().map(ItemRecord::from).collect(),
        replies: Vec::new(),
    };
    let kept: BTreeSet<&str> = pool.items.iter().map(|i| i.item_id.as_str()).collect();
    pool.replies = previous
        .replies
        .into_iter()
        .filter(|r| kept.contains(r.item_id.as_str()))
        .collect();
    pool.sort_replies();

    write(&pool_path, &pool.to_jsonl())?;
    write(&cfg.out(SELECTION_LOG_FILE), &to_jsonl(&selection.log))?;
    record_manifest(cfg, "prepare", &[POOL_FILE, SELECTION_LOG_FILE])?;
    let summary = PrepareSummary {
        dialogues: dialogues.len(),
        candidate_pairs: pairs.len(),
        retained: selection.retained.len(),
        rejected: selection.rejected().count(),
    };
    tracing::info!(?summary, "prepare finished");
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGenerationSummary {
    pub agent: String,
    pub generated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub items: usize,
    pub reference_added: usize,
    pub agents: Vec<AgentGenerationSummary>,
    pub scores_merged: usize,
}

/// Builds every configured backend up front so configuration problems, such
/// as a missing credential, surface before any request is sent.
/// A configured agent with its completion backend.
pub type AgentBackend = (BackendSpec, Box<dyn CompletionBackend>);

pub fn build_backends(cfg: &PipelineConfig) -> Result<Vec<AgentBackend>, PipelineError> {
    let mut out: Vec<(BackendSpec, Box<dyn CompletionBackend>)> = Vec::new();
    let mut names = BTreeSet::new();
    for spec in &cfg.generation.backends {
        if spec.agent == cfg.generation.reference_agent || !names.insert(spec.agent.clone()) {
            return Err(PipelineError::Config(format!("backend agent {} is not unique", spec.agent)));
        }
        let backend: Box<dyn CompletionBackend> = match &spec.kind {
            BackendKind::Mock { reply } => Box::new(MockBackend::echo(reply.clone())),
            BackendKind::Replay { path } => Box::new(ReplayBackend::from_file(path)?),
            BackendKind::Http(http) => Box::new(HttpBackend::from_env(http)?),
        };
        out.push((spec.clone(), backend));
    }
    Ok(out)
}

/// Adds the reference reply and one generated reply per backend for every
/// item lacking them, then merges optional scores. Existing replies are
/// left alone, so reruns only fill gaps.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateSummary, PipelineError> {
    let backends = build_backends(cfg)?;
    let pool_path = cfg.out(POOL_FILE);
    let mut pool = PoolFile::read(&pool_path)?;
    let reference_agent = &cfg.generation.reference_agent;

    let mut have: BTreeSet<(String, String)> = pool
        .replies
        .iter()
        .map(|r| (r.item_id.clone(), r.agent.clone()))
        .collect();
    let known: BTreeSet<&str> = pool.items.iter().map(|i| i.item_id.as_str()).collect();
    if let Some(r) = pool.replies.iter().find(|r| !known.contains(r.item_id.as_str())) {
        return Err(PipelineError::UnknownItem(r.item_id.clone()));
    }

    let mut reference_added = 0;
    for item in &pool.items {
        if have.insert((item.item_id.clone(), reference_agent.clone())) {
            pool.replies.push(CandidateReply {
                item_id: item.item_id.clone(),
                agent: reference_agent.clone(),
                text: item.reference_teacher_reply.clone(),
                provenance: Provenance::Reference,
                uptake_score: None,
                perplexity: None,
            });
            reference_added += 1;
        }
    }

    let retry = cfg.generation.retry.policy();
    let audit = AuditLog::in_memory();
    let workers = cfg.worker_pool()?;
    let mut agents = Vec::new();
    let mut failures = Vec::new();
    for (spec, backend) in &backends {
        let todo: Vec<&ItemRecord> = pool
            .items
            .iter()
            .filter(|i| !have.contains(&(i.item_id.clone(), spec.agent.clone())))
            .collect();
        let skipped = pool.items.len() - todo.len();
        let budget = effective_budget(spec.max_prompt_tokens, spec.safety_margin);
        let results: Vec<Result<CandidateReply, String>> = workers.install(|| {
            todo.par_iter()
                .map(|item| {
                    let request = GenerationRequest {
                        item_id: item.item_id.clone(),
                        persona_preamble: cfg.generation.persona.clone(),
                        history: item.history(),
                        student_utterance: item.student_utterance.clone(),
                        token_budget: budget,
                        backend_id: spec.agent.clone(),
                    };
                    generate_reply(&request, backend.as_ref(), &spec.params, &retry, &audit)
                        .map_err(|e| format!("item {} agent {}: {e}", item.item_id, spec.agent))
                })
                .collect()
        });
        let mut generated = 0;
        for r in results {
            match r {
                Ok(reply) => {
                    have.insert((reply.item_id.clone(), reply.agent.clone()));
                    pool.replies.push(reply);
                    generated += 1;
                }
                Err(e) => failures.push(e),
            }
        }
        agents.push(AgentGenerationSummary {
            agent: spec.agent.clone(),
            generated,
            skipped,
        });
    }

    let mut scores_merged = 0;
    if let Some(path) = &cfg.paths.scores {
        let scores: Vec<ScoreRecord> = read_records(path)?;
        let mut index: BTreeMap<(&str, &str), &ScoreRecord> = BTreeMap::new();
        for s in &scores {
            if !known.contains(s.item_id.as_str()) {
                return Err(PipelineError::UnknownItem(s.item_id.clone()));
            }
            index.insert((s.item_id.as_str(), s.agent.as_str()), s);
        }
        for reply in &mut pool.replies {
            if let Some(s) = index.get(&(reply.item_id.as_str(), reply.agent.as_str())) {
                if let Some(p) = s.perplexity {
                    if !(p > 0.0 && p.is_finite()) {
                        return Err(PipelineError::Invalid(format!(
                            "perplexity for {}/{} must be positive",
                            s.item_id, s.agent
                        )));
                    }
                }
                reply.uptake_score = s.uptake_score.or(reply.uptake_score);
                reply.perplexity = s.perplexity.or(reply.perplexity);
                scores_merged += 1;
            }
        }
    }

    pool.sort_replies();
    write(&pool_path, &pool.to_jsonl())?;
    let mut entries = audit.entries();
    entries.sort_by(|a, b| (&a.backend_id, &a.item_id, a.attempt).cmp(&(&b.backend_id, &b.item_id, b.attempt)));
    if !entries.is_empty() {
        let audit_path = cfg.out(AUDIT_FILE);
        let mut text = if audit_path.exists() { read(&audit_path)? } else { String::new() };
        text.push_str(&to_jsonl(&entries));
        write(&audit_path, &text)?;
    }
    record_manifest(cfg, "generate", &[POOL_FILE, AUDIT_FILE])?;
    if !failures.is_empty() {
        failures.sort();
        return Err(PipelineError::GenerationFailures(failures));
    }
    let summary = GenerateSummary {
        items: pool.items.len(),
        reference_added,
        agents,
        scores_merged,
    };
    tracing::info!(?summary, "generate finished");
    Ok(summary)
}

/// Loads the item pool used by the survey.
pub fn load_item_pool(cfg: &PipelineConfig) -> Result<ItemPool, PipelineError> {
    Ok(PoolFile::read(&cfg.pool_path())?.item_pool(&cfg.survey)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub sessions: usize,
    pub submissions: usize,
    pub judgments: usize,
    pub calibration_judgments: usize,
    pub calibration_agreement: Vec<CalibrationAgreement>,
}

/// Writes exported survey judgments to the output directory.
pub fn write_survey_exports(
    cfg: &PipelineConfig,
    judgments: &[ComparisonJudgment],
    calibration: &[ComparisonJudgment],
) -> Result<(), PipelineError> {
    write(&cfg.out(JUDGMENTS_FILE), &to_jsonl(judgments))?;
    write(&cfg.out(CALIBRATION_FILE), &to_jsonl(calibration))?;
    record_manifest(cfg, "survey", &[JUDGMENTS_FILE, CALIBRATION_FILE])
}

/// Runs the simulated rater population through an in-memory survey with a
/// logical clock and exports the judgments.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<SimulateSummary, PipelineError> {
    let pool = Arc::new(load_item_pool(cfg)?);
    let mut store = SurveyStore::in_memory(pool, cfg.store_config());
    let clock = logical_clock();
    let submissions = simulate_survey(&mut store, &cfg.simulate, derive_seed(cfg.seed, &["simulate"]), &clock)?;
    let judgments = store.export_judgments();
    let calibration = store.export_calibration();
    write_survey_exports(cfg, &judgments, &calibration)?;
    Ok(SimulateSummary {
        sessions: store.sessions().count(),
        submissions,
        judgments: judgments.len(),
        calibration_judgments: calibration.len(),
        calibration_agreement: store.calibration_agreement(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub judgments: usize,
    pub retained_judgments: usize,
    pub evaluators: usize,
    pub excluded_evaluators: Vec<String>,
    pub fits: usize,
    pub divergences: usize,
    pub min_ess: Option<f64>,
}

/// Screens raters, then fits every (item, ability) cell with judgments in
/// parallel. Agents come from the pool in its declared order.
pub fn fit_judgments(
    cfg: &PipelineConfig,
    pool: &PoolFile,
    judgments: &[ComparisonJudgment],
) -> Result<(Vec<EvaluatorBiasFit>, Vec<ItemAbilityFit>), PipelineError> {
    let positions: BTreeMap<&str, usize> = pool
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.item_id.as_str(), i))
        .collect();
    if let Some(j) = judgments.iter().find(|j| !positions.contains_key(j.item_id.as_str())) {
        return Err(PipelineError::UnknownItem(j.item_id.clone()));
    }
    let agents: Vec<String> = match &cfg.survey.agents {
        Some(a) => a.clone(),
        None => {
            let probe = ItemPool::from_records(pool.records(), None, None)?;
            probe.agents().to_vec()
        }
    };
    let agent_set: BTreeSet<&str> = agents.iter().map(String::as_str).collect();
    if let Some(j) = judgments
        .iter()
        .find(|j| !agent_set.contains(j.left_agent.as_str()) || !agent_set.contains(j.right_agent.as_str()))
    {
        return Err(PipelineError::Invalid(format!(
            "judgment {} compares agents {} and {} outside the pool agents {agents:?}",
            j.judgment_id, j.left_agent, j.right_agent
        )));
    }

    let workers = cfg.worker_pool()?;
    workers.install(|| {
        let (retained, screening) = if cfg.screening.enabled {
            let result = screen_evaluators(judgments, &cfg.screening_config(), derive_seed(cfg.seed, &["screening"]))
                .map_err(PipelineError::Screening)?;
            (result.retained, result.fits)
        } else {
            (judgments.to_vec(), Vec::new())
        };

        let mut cells: BTreeMap<(usize, AbilityDimension), Vec<ComparisonJudgment>> = BTreeMap::new();
        for j in retained {
            cells.entry((positions[j.item_id.as_str()], j.ability)).or_default().push(j);
        }
        let fits: Vec<ItemAbilityFit> = cells
            .par_iter()
            .map(|(&(pos, ability), js)| {
                let item_id = &pool.items[pos].item_id;
                let seed = derive_seed(cfg.seed, &["fit", item_id, ability.as_str()]);
                fit_item_ability(item_id, ability, js, &agents, &cfg.fit, seed).map_err(|source| PipelineError::Fit {
                    item_id: item_id.clone(),
                    ability,
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok((screening, fits))
    })
}

pub fn cmd_fit(cfg: &PipelineConfig) -> Result<FitSummary, PipelineError> {
    let pool = PoolFile::read(&cfg.pool_path())?;
    let judgments: Vec<ComparisonJudgment> = read_records(&cfg.judgments_path())?;
    let (screening, fits) = fit_judgments(cfg, &pool, &judgments)?;
    write(&cfg.out(SCREENING_FILE), &to_jsonl(&screening))?;
    write(&cfg.out(FITS_FILE), &to_jsonl(&fits))?;
    record_manifest(cfg, "fit", &[SCREENING_FILE, FITS_FILE])?;
    let excluded: Vec<String> = screening
        .iter()
        .filter(|f| f.excluded)
        .map(|f| f.evaluator_id.clone())
        .collect();
    let excluded_set: BTreeSet<&str> = excluded.iter().map(String::as_str).collect();
    let summary = FitSummary {
        judgments: judgments.len(),
        retained_judgments: judgments
            .iter()
            .filter(|j| !excluded_set.contains(j.evaluator_id.as_str()))
            .count(),
        evaluators: judgments
            .iter()
            .map(|j| j.evaluator_id.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        excluded_evaluators: excluded,
        fits: fits.len(),
        divergences: fits.iter().map(|f| f.diagnostics.divergences).sum(),
        min_ess: fits.iter().map(|f| f.diagnostics.ess_min).reduce(f64::min),
    };
    tracing::info!(?summary, "fit finished");
    Ok(summary)
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<AnalysisReport, PipelineError> {
    let fits: Vec<ItemAbilityFit> = read_records(&cfg.out(FITS_FILE))?;
    let pool_path = cfg.pool_path();
    let replies = if pool_path.exists() {
        PoolFile::read(&pool_path)?.replies
    } else {
        Vec::new()
    };
    let report = build_report(&fits, &replies, &cfg.report, cfg.seed);
    write(&cfg.out(REPORT_FILE), &pretty(&report))?;
    write(&cfg.out(REPORT_TEXT_FILE), &report.rendered)?;
    record_manifest(cfg, "report", &[REPORT_FILE, REPORT_TEXT_FILE])?;
    Ok(report)
}
