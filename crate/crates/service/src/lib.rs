//! HTTP front end for the survey and the file-based pipeline.
//!
//! Survey routes serve raters and never expose which agent wrote a reply.
//! Export, reload and pipeline routes require the operator bearer token.

mod error;
mod routes;

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::Router;
use parking_lot::RwLock;
use tokio::net::TcpListener;
use tutorbench_core::pipeline::{load_item_pool, logical_clock, PipelineConfig, PipelineError};
use tutorbench_core::survey::{ItemPool, SurveyClock, SurveyError, SurveyStore, SystemClock};

pub use error::ApiError;
pub use routes::router;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
}

pub struct AppState {
    config: PipelineConfig,
    operator_token: Option<String>,
    clock: Arc<dyn SurveyClock>,
    survey: RwLock<Option<SurveyStore>>,
}

impl AppState {
    /// Opens the survey store over the pool in the configured output
    /// directory. Without a pool file the survey routes answer 503 until a
    /// pool is generated or reloaded.
    pub fn new(config: PipelineConfig, operator_token: Option<String>) -> Result<Self, ServiceError> {
        let clock: Arc<dyn SurveyClock> = if config.survey.logical_clock {
            Arc::new(logical_clock())
        } else {
            Arc::new(SystemClock)
        };
        let survey = if config.pool_path().exists() {
            match load_item_pool(&config) {
                Ok(pool) => Some(open_store(&config, Arc::new(pool))?),
                Err(e) => {
                    tracing::warn!(error = %e, "item pool not servable; survey routes disabled");
                    None
                }
            }
        } else {
            tracing::warn!(path = %config.pool_path().display(), "no item pool yet; survey routes disabled");
            None
        };
        Ok(Self {
            config,
            operator_token: operator_token.filter(|t| !t.is_empty()),
            clock,
            survey: RwLock::new(survey),
        })
    }

    /// Like [`AppState::new`] with the token read from the environment
    /// variable named in the survey configuration.
    pub fn from_env(config: PipelineConfig) -> Result<Self, ServiceError> {
        let token = std::env::var(&config.survey.operator_token_env).ok();
        if token.is_none() {
            tracing::warn!(
                var = %config.survey.operator_token_env,
                "operator token not set; export and pipeline routes are disabled"
            );
        }
        Self::new(config, token)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Re-reads the pool file. Existing sessions and judgments are kept.
    pub fn reload_pool(&self) -> Result<usize, ServiceError> {
        let pool = Arc::new(load_item_pool(&self.config)?);
        let n = pool.len();
        let mut guard = self.survey.write();
        match guard.as_mut() {
            Some(store) => store.replace_pool(pool),
            None => *guard = Some(open_store(&self.config, pool)?),
        }
        tracing::info!(items = n, "item pool loaded");
        Ok(n)
    }
}

fn open_store(config: &PipelineConfig, pool: Arc<ItemPool>) -> Result<SurveyStore, ServiceError> {
    Ok(match &config.survey.store_dir {
        Some(dir) => SurveyStore::open(Path::new(dir), pool, config.store_config())?,
        None => SurveyStore::in_memory(pool, config.store_config()),
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app: Router = router(state);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
