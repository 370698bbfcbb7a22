//! Async client for the survey and pipeline HTTP API.

use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tutorbench_core::api::{
    ComputeRequest, ConsentRequest, CreateSessionRequest, ErrorBody, ExportSet, Health, ReloadSummary,
    SubmitJudgmentRequest,
};
use tutorbench_core::bt::{AbilityDimension, Choice, ComparisonJudgment};
use tutorbench_core::pipeline::{FitSummary, GenerateSummary, PrepareSummary, SimulateSummary};
use tutorbench_core::records::parse_jsonl;
use tutorbench_core::report::AnalysisReport;
use tutorbench_core::simulate::{ReplyIndex, SurveySimulation};
use tutorbench_core::survey::{CalibrationAgreement, ItemPool, SessionView, TaskView};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {}", .body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl ClientError {
    /// True for answers that blame the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if status.is_client_error())
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base_url.into().trim_end_matches('/').to_string(),
            token: None,
        }
    }

    /// Operator token sent as a bearer credential on every request.
    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let rb = self.http.request(method, format!("{}{}", self.base, path));
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    async fn checked(rb: RequestBuilder) -> Result<Response, ClientError> {
        let resp = rb.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "unknown".into(),
            message: text,
            expected_task_index: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(rb: RequestBuilder) -> Result<T, ClientError> {
        let bytes = Self::checked(rb).await?.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::json(self.request(Method::POST, path).json(body)).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        Self::json(self.request(Method::GET, "/healthz")).await
    }

    pub async fn create_session(&self, evaluator_id: &str) -> Result<SessionView, ClientError> {
        self.post(
            "/sessions",
            &CreateSessionRequest {
                evaluator_id: evaluator_id.into(),
            },
        )
        .await
    }

    pub async fn session(&self, session_id: &str) -> Result<SessionView, ClientError> {
        Self::json(self.request(Method::GET, &format!("/sessions/{session_id}"))).await
    }

    /// The task awaiting answers, or `None` once the session is complete.
    pub async fn current_task(&self, session_id: &str) -> Result<Option<TaskView>, ClientError> {
        match Self::json(self.request(Method::GET, &format!("/sessions/{session_id}/task"))).await {
            Ok(t) => Ok(Some(t)),
            Err(ClientError::Api { status: StatusCode::GONE, .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub async fn consent(&self, session_id: &str, given: bool) -> Result<SessionView, ClientError> {
        self.post(&format!("/sessions/{session_id}/consent"), &ConsentRequest { given })
            .await
    }

    pub async fn submit_judgment(
        &self,
        session_id: &str,
        task_index: usize,
        ability: AbilityDimension,
        choice: Choice,
    ) -> Result<SessionView, ClientError> {
        let body = SubmitJudgmentRequest {
            task_index,
            ability,
            choice,
        };
        self.post(&format!("/sessions/{session_id}/judgments"), &body).await
    }

    pub async fn export(&self, set: ExportSet) -> Result<Vec<ComparisonJudgment>, ClientError> {
        let set_name = match set {
            ExportSet::Judgments => "judgments",
            ExportSet::Calibration => "calibration",
        };
        let rb = self.request(Method::GET, &format!("/export/judgments?set={set_name}"));
        let text = Self::checked(rb).await?.text().await?;
        parse_jsonl(&text, "export").map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn calibration_agreement(&self) -> Result<Vec<CalibrationAgreement>, ClientError> {
        Self::json(self.request(Method::GET, "/export/calibration-agreement")).await
    }

    pub async fn reload(&self) -> Result<ReloadSummary, ClientError> {
        Self::json(self.request(Method::POST, "/admin/reload")).await
    }

    pub async fn prepare(&self, req: &ComputeRequest) -> Result<PrepareSummary, ClientError> {
        self.post("/v1/prepare", req).await
    }

    pub async fn generate(&self, req: &ComputeRequest) -> Result<GenerateSummary, ClientError> {
        self.post("/v1/generate", req).await
    }

    pub async fn simulate(&self, req: &ComputeRequest) -> Result<SimulateSummary, ClientError> {
        self.post("/v1/simulate", req).await
    }

    pub async fn fit(&self, req: &ComputeRequest) -> Result<FitSummary, ClientError> {
        self.post("/v1/fit", req).await
    }

    pub async fn report(&self, req: &ComputeRequest) -> Result<AnalysisReport, ClientError> {
        self.post("/v1/report", req).await
    }
}

/// Runs simulated raters through the survey routes one after another, as
/// real raters would. `pool` must match the pool the server is using; it
/// only serves to read truths back from anonymised reply texts.
pub async fn simulate_raters(
    client: &Client,
    pool: &ItemPool,
    sim: &SurveySimulation,
    seed: u64,
) -> Result<usize, ClientError> {
    let index = ReplyIndex::from_pool(pool);
    let truth = sim.truth(pool, seed);
    let mut submitted = 0;
    for mut rater in sim.raters(seed) {
        let session = client.create_session(&rater.evaluator_id).await?;
        client.consent(&session.session_id, true).await?;
        while let Some(task) = client.current_task(&session.session_id).await? {
            for (ability, choice) in rater.answer_task(&task, &index, &truth) {
                client
                    .submit_judgment(&session.session_id, task.task_index, ability, choice)
                    .await?;
                submitted += 1;
            }
        }
    }
    Ok(submitted)
}
