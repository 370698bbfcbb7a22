//! `tutorbench`: runs pipeline stages and the survey through the HTTP
//! service, either an embedded one on a loopback port or `--server`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tutorbench_client::{simulate_raters, Client, ClientError};
use tutorbench_core::api::{ComputeRequest, ExportSet};
use tutorbench_core::pipeline::{load_item_pool, write_survey_exports, PipelineConfig, PipelineError, SimulateSummary};
use tutorbench_core::seed::derive_seed;
use tutorbench_service::{AppState, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "tutorbench", version, about = "Tutor reply benchmark: corpus, generation, survey and fitting")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "tutorbench.toml")]
    config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long, global = true, env = "TUTORBENCH_SEED")]
    seed: Option<u64>,
    /// Worker threads for generation and fitting; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Talk to a running service instead of an embedded one.
    #[arg(long, global = true, env = "TUTORBENCH_SERVER")]
    server: Option<String>,
    /// Operator token for --server.
    #[arg(long, global = true, env = "TUTORBENCH_OPERATOR_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract and select dialogic pairs into the item pool.
    Prepare,
    /// Add reference and generated replies to the pool.
    Generate,
    /// Serve the survey and pipeline API until interrupted.
    Serve {
        /// Listen address; defaults to the configured one.
        #[arg(long, env = "TUTORBENCH_BIND")]
        bind: Option<String>,
        /// Items per session, calibration excluded.
        #[arg(long, env = "TUTORBENCH_SESSION_SIZE")]
        session_size: Option<usize>,
        /// Pool file to serve.
        #[arg(long, env = "TUTORBENCH_POOL")]
        pool: Option<PathBuf>,
    },
    /// Run simulated raters through the survey and write their judgments.
    Simulate,
    /// Screen raters and fit abilities per item and question.
    Fit,
    /// Write the analysis report and print its tables.
    Report,
    /// Download survey judgments as JSON lines.
    Export {
        #[arg(long, value_enum, default_value = "judgments")]
        set: SetArg,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SetArg {
    Judgments,
    Calibration,
}

/// Failure kinds that decide the exit status.
enum Failure {
    Validation(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Other(e.into())
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Pipeline(p) => p.into(),
            ServiceError::Survey(s) => PipelineError::from(s).into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let validation = matches!(&e, ClientError::Api { status, .. } if status.as_u16() == 400 || status.as_u16() == 422);
        if validation {
            Failure::Validation(e.into())
        } else {
            Failure::Other(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    if !cli.config.is_file() {
        return Err(Failure::Validation(anyhow::anyhow!(
            "config file {} not found",
            cli.config.display()
        )));
    }
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

/// A service on a loopback port, stopped on drop.
struct Embedded {
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Embedded {
    async fn start(cfg: PipelineConfig) -> Result<Self, Failure> {
        let token = hex::encode(rand::random::<[u8; 16]>());
        let state = Arc::new(AppState::new(cfg, Some(token.clone()))?);
        let listener = TcpListener::bind("127.0.0.1:0")
            .await
            .context("binding the embedded service")?;
        let addr = listener.local_addr().context("embedded service address")?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(tutorbench_service::serve(listener, state, async {
            let _ = rx.await;
        }));
        Ok(Self {
            client: Client::new(format!("http://{addr}")).with_token(token),
            stop: Some(tx),
            task: Some(task),
        })
    }

    async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("encoding output")?;
    println!("{text}");
    Ok(())
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    if let Command::Serve {
        bind,
        session_size,
        pool,
    } = &cli.command
    {
        if let Some(n) = session_size {
            cfg.survey.session_size = *n;
        }
        if let Some(p) = pool {
            cfg.survey.pool = Some(p.clone());
        }
        return serve(cfg, bind.clone(), cli.token.clone()).await;
    }

    // Against a remote service the overrides travel with each request; an
    // embedded service is built from the overridden config instead.
    let (client, embedded, request) = match &cli.server {
        Some(url) => {
            let mut client = Client::new(url.clone());
            if let Some(t) = &cli.token {
                client = client.with_token(t.clone());
            }
            let request = ComputeRequest {
                seed: cli.seed,
                workers: cli.workers,
                out_dir: cli.out.as_ref().map(|p| p.display().to_string()),
            };
            (client, None, request)
        }
        None => {
            if matches!(cli.command, Command::Simulate) {
                cfg.survey.logical_clock = true;
                cfg.survey.store_dir = None;
            }
            let e = Embedded::start(cfg.clone()).await?;
            (e.client.clone(), Some(e), ComputeRequest::default())
        }
    };

    let result = dispatch(&cli.command, &cfg, &client, &request).await;
    if let Some(e) = embedded {
        e.shutdown().await;
    }
    result
}

async fn dispatch(command: &Command, cfg: &PipelineConfig, client: &Client, req: &ComputeRequest) -> Result<(), Failure> {
    match command {
        Command::Prepare => print_json(&client.prepare(req).await?),
        Command::Generate => print_json(&client.generate(req).await?),
        Command::Fit => print_json(&client.fit(req).await?),
        Command::Report => {
            let report = client.report(req).await?;
            print!("{}", report.rendered);
            Ok(())
        }
        Command::Simulate => {
            let pool = load_item_pool(cfg)?;
            let submissions = simulate_raters(client, &pool, &cfg.simulate, derive_seed(cfg.seed, &["simulate"])).await?;
            let judgments = client.export(ExportSet::Judgments).await?;
            let calibration = client.export(ExportSet::Calibration).await?;
            write_survey_exports(cfg, &judgments, &calibration)?;
            let sessions = client.health().await?.sessions;
            print_json(&SimulateSummary {
                sessions,
                submissions,
                judgments: judgments.len(),
                calibration_judgments: calibration.len(),
                calibration_agreement: client.calibration_agreement().await?,
            })
        }
        Command::Export { set } => {
            let set = match set {
                SetArg::Judgments => ExportSet::Judgments,
                SetArg::Calibration => ExportSet::Calibration,
            };
            let records = client.export(set).await?;
            print!("{}", tutorbench_core::records::to_jsonl(&records));
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled before connecting"),
    }
}

async fn serve(cfg: PipelineConfig, bind: Option<String>, token: Option<String>) -> Result<(), Failure> {
    let addr = bind.unwrap_or_else(|| cfg.survey.bind.clone());
    let state = Arc::new(match token {
        Some(t) => AppState::new(cfg, Some(t))?,
        None => AppState::from_env(cfg)?,
    });
    let listener = TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr().context("listen address")?;
    eprintln!("listening on http://{local}");
    tutorbench_service::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .context("serving")?;
    Ok(())
}
