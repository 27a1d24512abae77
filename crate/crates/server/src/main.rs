use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use convograph_core::gateway::ReplayGateway;
use convograph_core::persistence::{load_log, replay_with, save_graph, to_canonical_json};
use convograph_core::templates::TemplateSet;
use convograph_server::config::{FileConfig, Overrides, Provider, Settings, API_KEY_ENV};
use convograph_server::{router, AppState};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(
    name = "convograph",
    version,
    about = "Graph-structured conversation server"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// TOML config file. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// JSON mock script for `--provider mock`.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Record store: written by `real`/`mock`, read by `replay`.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Human actions required between two meta-agent interventions.
    #[arg(long)]
    cooldown: Option<u32>,
    /// Minimum relevance for an intervention to surface, in [0, 1].
    #[arg(long)]
    relevance_threshold: Option<f64>,
    /// Where new sessions keep their graph and event log.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Re-run a session log against a record store and print the final graph.
    Replay {
        log: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Write the graph here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prompt templates the session ran with.
        #[arg(long)]
        templates_dir: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Replay {
            ref log,
            ref record,
            ref out,
            ref templates_dir,
        }) => run_replay(log, record, out.as_ref(), templates_dir.as_ref()),
        None => serve(cli),
    }
}

fn run_replay(
    log: &Path,
    record: &Path,
    out: Option<&PathBuf>,
    templates_dir: Option<&PathBuf>,
) -> anyhow::Result<()> {
    let events = load_log(log).with_context(|| format!("loading {}", log.display()))?;
    let gateway = Arc::new(ReplayGateway::open(record)?);
    let templates = match templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::default(),
    };
    let session = replay_with(&events, gateway, templates).context("replay diverged")?;
    match out {
        Some(path) => save_graph(session.graph(), path)?,
        None => print!("{}", to_canonical_json(session.graph())),
    }
    tracing::info!(events = session.log().len(), "replay matched the log");
    Ok(())
}

fn serve(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let settings = Settings::resolve(
        file,
        Overrides {
            host: cli.host,
            port: cli.port,
            provider: cli.provider,
            mock_script: cli.mock_script,
            record: cli.record,
            data_dir: cli.data_dir,
            cooldown: cli.cooldown,
            relevance_threshold: cli.relevance_threshold,
        },
    )?;
    let gateway = settings.build_gateway(std::env::var(API_KEY_ENV).ok())?;
    let state = AppState::new(
        gateway,
        settings.session.clone(),
        settings.templates()?,
        settings.data_dir.clone(),
    )
    .with_context(|| format!("creating {}", settings.data_dir.display()))?;

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", settings.host, settings.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, provider = ?settings.provider, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await?;
        Ok(())
    })
}
