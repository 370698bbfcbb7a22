use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::oneshot;
use tutorbench_client::{simulate_raters, Client};
use tutorbench_core::api::{ComputeRequest, ExportSet};
use tutorbench_core::bt::{AbilityDimension, Choice};
use tutorbench_core::pipeline::{
    cmd_generate, cmd_prepare, cmd_simulate, load_item_pool, PipelineConfig, CALIBRATION_FILE, JUDGMENTS_FILE,
};
use tutorbench_core::records::to_jsonl;
use tutorbench_service::AppState;

const TOKEN: &str = "op-token";

fn fixture_config(out: &Path) -> PipelineConfig {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e/pipeline.toml");
    let mut cfg = PipelineConfig::load(&root).unwrap();
    cfg.paths.out_dir = out.to_path_buf();
    cfg
}

async fn spawn(cfg: PipelineConfig) -> (Client, oneshot::Sender<()>) {
    let state = Arc::new(AppState::new(cfg, Some(TOKEN.into())).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    tokio::spawn(tutorbench_service::serve(listener, state, async {
        let _ = rx.await;
    }));
    (Client::new(format!("http://{addr}")).with_token(TOKEN), tx)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pipeline_and_survey_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let (client, stop) = spawn(cfg.clone()).await;

    assert_eq!(client.health().await.unwrap().pool_items, None);
    let prepared = client.prepare(&ComputeRequest::default()).await.unwrap();
    assert_eq!(prepared.retained, 4);
    client.generate(&ComputeRequest::default()).await.unwrap();
    let health = client.health().await.unwrap();
    assert_eq!(health.pool_items, Some(4));

    let s = client.create_session("human-1").await.unwrap();
    assert_eq!(s.total_tasks, 5);
    let err = client
        .submit_judgment(&s.session_id, 0, AbilityDimension::HelpStudent, Choice::Left)
        .await
        .unwrap_err();
    assert_eq!(err.code(), Some("consent_missing"));
    assert!(err.is_client_error());
    client.consent(&s.session_id, true).await.unwrap();
    let err = client
        .submit_judgment(&s.session_id, 2, AbilityDimension::HelpStudent, Choice::Left)
        .await
        .unwrap_err();
    match err {
        tutorbench_client::ClientError::Api { body, .. } => assert_eq!(body.expected_task_index, Some(0)),
        other => panic!("{other}"),
    }
    let task = client.current_task(&s.session_id).await.unwrap().unwrap();
    assert!(task.calibration);
    for q in &task.questions {
        client
            .submit_judgment(&s.session_id, 0, q.ability, Choice::Left)
            .await
            .unwrap();
    }
    assert_eq!(client.session(&s.session_id).await.unwrap().cursor, 1);
    assert_eq!(client.export(ExportSet::Calibration).await.unwrap().len(), 3);
    assert!(client.export(ExportSet::Judgments).await.unwrap().is_empty());
    assert_eq!(client.reload().await.unwrap().pool_items, 4);

    let anonymous = Client::new(client.base_url());
    let err = anonymous.export(ExportSet::Judgments).await.unwrap_err();
    assert_eq!(err.code(), Some("unauthorized"));
    let _ = stop.send(());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_raters_match_in_process_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    cmd_prepare(&cfg).unwrap();
    cmd_generate(&cfg).unwrap();
    let summary = cmd_simulate(&cfg).unwrap();
    let judgments = std::fs::read_to_string(cfg.out(JUDGMENTS_FILE)).unwrap();
    let calibration = std::fs::read_to_string(cfg.out(CALIBRATION_FILE)).unwrap();

    let (client, stop) = spawn(cfg.clone()).await;
    let pool = load_item_pool(&cfg).unwrap();
    let seed = tutorbench_core::seed::derive_seed(cfg.seed, &["simulate"]);
    let submitted = simulate_raters(&client, &pool, &cfg.simulate, seed).await.unwrap();
    assert_eq!(submitted, summary.submissions);
    let over_http = to_jsonl(&client.export(ExportSet::Judgments).await.unwrap());
    assert_eq!(over_http, judgments);
    let cal = to_jsonl(&client.export(ExportSet::Calibration).await.unwrap());
    assert_eq!(cal, calibration);
    assert_eq!(client.calibration_agreement().await.unwrap(), summary.calibration_agreement);
    let _ = stop.send(());
}
