use std::fs;
use std::path::{Path, PathBuf};

use tutorbench_core::bt::ComparisonJudgment;
use tutorbench_core::pipeline::*;
use tutorbench_core::records::parse_jsonl;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e")
}

fn config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixture_dir().join("pipeline.toml")).unwrap();
    cfg.paths.out_dir = out.to_path_buf();
    cfg
}

fn run_all(cfg: &PipelineConfig) {
    cmd_prepare(cfg).unwrap();
    cmd_generate(cfg).unwrap();
    cmd_simulate(cfg).unwrap();
    cmd_fit(cfg).unwrap();
    cmd_report(cfg).unwrap();
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn prepare_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_prepare(&config(dir.path())).unwrap();
    assert_eq!(s.dialogues, 3);
    assert_eq!(s.retained, 4);
    assert_eq!(s.rejected, 2);
    let log = fs::read_to_string(dir.path().join(SELECTION_LOG_FILE)).unwrap();
    assert!(log.contains("too_short"));
    assert!(log.contains("missing_required_label"));
}

#[test]
fn prepare_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    fs::write(&corpus, "{\"dialogue_id\":\"a\",\"turns\":[]}\n{broken\n").unwrap();
    let mut cfg = config(&dir.path().join("out"));
    cfg.paths.corpus = Some(corpus);
    let err = cmd_prepare(&cfg).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains(":2:"), "{err}");
}

#[test]
fn empty_corpus_gives_empty_pool() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    fs::write(&corpus, "").unwrap();
    let mut cfg = config(&dir.path().join("out"));
    cfg.paths.corpus = Some(corpus);
    let s = cmd_prepare(&cfg).unwrap();
    assert_eq!(s.retained, 0);
    assert_eq!(fs::read_to_string(cfg.out(POOL_FILE)).unwrap(), "");
}

#[test]
fn generate_is_idempotent_and_merges_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_prepare(&cfg).unwrap();
    let first = cmd_generate(&cfg).unwrap();
    assert_eq!(first.reference_added, 4);
    assert!(first.agents.iter().all(|a| a.generated == 4 && a.skipped == 0));
    assert_eq!(first.scores_merged, 12);
    let pool_once = fs::read(cfg.out(POOL_FILE)).unwrap();
    let second = cmd_generate(&cfg).unwrap();
    assert_eq!(second.reference_added, 0);
    assert!(second.agents.iter().all(|a| a.generated == 0 && a.skipped == 4));
    assert_eq!(fs::read(cfg.out(POOL_FILE)).unwrap(), pool_once);

    let pool = PoolFile::read(&cfg.out(POOL_FILE)).unwrap();
    assert_eq!(pool.replies.len(), 12);
    assert!(pool.replies.iter().all(|r| r.text == r.text.trim() && !r.text.is_empty()));
    assert!(pool.replies.iter().all(|r| r.uptake_score.is_some()));
    // Re-preparing keeps generated replies of retained items.
    cmd_prepare(&cfg).unwrap();
    assert_eq!(fs::read(cfg.out(POOL_FILE)).unwrap(), pool_once);
}

#[test]
fn fit_rejects_unknown_item() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cmd_prepare(&cfg).unwrap();
    cmd_generate(&cfg).unwrap();
    let judgments = dir.path().join("bad.jsonl");
    fs::write(
        &judgments,
        r#"{"judgment_id":"x","evaluator_id":"e","item_id":"nope","ability":"help_student","left_agent":"teacher","right_agent":"gpt3","choice":"left","timestamp":"2024-01-01T00:00:00Z"}
"#,
    )
    .unwrap();
    cfg.paths.judgments = Some(judgments);
    let err = cmd_fit(&cfg).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("nope"));
}

#[test]
fn end_to_end_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(&config(a.path()));
    run_all(&config(b.path()));
    let sa = snapshot(a.path());
    assert_eq!(sa, snapshot(b.path()));
    let names: Vec<&str> = sa.iter().map(|(n, _)| n.as_str()).collect();
    for f in [POOL_FILE, JUDGMENTS_FILE, CALIBRATION_FILE, SCREENING_FILE, FITS_FILE, REPORT_FILE, REPORT_TEXT_FILE] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }

    let cfg = config(a.path());
    let judgments: Vec<ComparisonJudgment> =
        parse_jsonl(&fs::read_to_string(cfg.out(JUDGMENTS_FILE)).unwrap(), "j").unwrap();
    // 9 raters, 4 tasks each, 3 abilities per task.
    assert_eq!(judgments.len(), 108);
    let calibration = fs::read_to_string(cfg.out(CALIBRATION_FILE)).unwrap();
    assert_eq!(calibration.lines().count(), 27);
    let screening = fs::read_to_string(cfg.out(SCREENING_FILE)).unwrap();
    assert_eq!(screening.lines().count(), 9);

    let report = fs::read_to_string(cfg.out(REPORT_TEXT_FILE)).unwrap();
    assert!(report.contains("Uptake and ability"));
    assert!(!report.contains("unavailable"), "{report}");
}
