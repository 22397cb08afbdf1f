use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scenemem::eval::{self, DatasetFormat, EvalOptions, Judge};
use scenemem::recollect::{Mode, Query};
use scenemem::space::Engine;
use scenemem::time::Timestamp;
use scenemem::trace::SegmentationStrategy;
use scenemem::types::DialogueTurn;
use scenemem_server::config::{providers, Settings};
use tracing_subscriber::EnvFilter;

/// Scene-structured long-term memory for conversational agents.
#[derive(Parser)]
#[command(name = "scenemem", version)]
struct Cli {
    /// Key-value config file (`key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the reference providers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding event logs and snapshots.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    user: String,
    #[arg(long)]
    query: String,
    /// Query time (RFC 3339 or YYYY-MM-DD); defaults to now.
    #[arg(long)]
    t_now: Option<Timestamp>,
    #[arg(long, default_value = "reasoning")]
    mode: Mode,
    /// Episode budget.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSON array of dialogue turns into a user's memory space.
    Ingest {
        #[arg(long)]
        user: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "semantic")]
        strategy: SegmentationStrategy,
    },
    /// Retrieve context for a query and print the retrieval result.
    Search(QueryArgs),
    /// Retrieve and answer a query.
    Answer(QueryArgs),
    /// Print a user's profile.
    Profile {
        #[arg(long)]
        user: String,
    },
    /// Run the benchmark harness (in memory; the data directory is untouched).
    Eval {
        /// Dataset file; without it a synthetic corpus is generated.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "synthetic")]
        format: String,
        /// Synthetic sessions.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Synthetic facts per session.
        #[arg(long, default_value_t = 3)]
        facts: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Comma-separated strategies; more than one prints a comparison table.
        #[arg(long, default_value = "semantic")]
        strategies: String,
        #[arg(long, default_value = "exact_match")]
        judge: Judge,
        /// Print JSON instead of text tables.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Require `Authorization: Bearer <token>`.
        #[arg(long)]
        token: Option<String>,
    },
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn query(engine: &Engine, a: QueryArgs) -> Query {
    let mut config = engine.config().clone();
    if let Some(k) = a.k {
        config.episode_top_k = k;
    }
    Query::new(a.user, a.query, a.t_now.unwrap_or_else(Timestamp::now))
        .with_mode(a.mode)
        .with_config(config)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(s) = cli.seed {
        settings.seed = s;
    }
    if let Some(d) = cli.data_dir {
        settings.data_dir = d;
    }
    let p = providers(settings.provider.as_deref(), settings.seed)?;
    let open = || Engine::open(p.clone(), settings.retrieval.clone(), &settings.data_dir);

    match cli.command {
        Command::Ingest { user, input, strategy } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let turns: Vec<DialogueTurn> = serde_json::from_str(&text).context("turns file must be a JSON array of turns")?;
            let engine = open()?;
            let report = engine.ingest(&user, &turns, &strategy)?;
            engine.flush()?;
            print_json(&report)
        }
        Command::Search(a) => {
            let engine = open()?;
            let q = query(&engine, a);
            print_json(&engine.search(&q)?)
        }
        Command::Answer(a) => {
            let engine = open()?;
            let q = query(&engine, a);
            let (answer, trace) = engine.answer(&q)?;
            print_json(&serde_json::json!({"answer": answer, "trace": trace}))
        }
        Command::Profile { user } => print_json(&open()?.profile(&user)?),
        Command::Eval { dataset, format, n, facts, k, strategies, judge, json } => {
            let ds = match dataset {
                Some(path) => eval::load_dataset(&path, format.parse::<DatasetFormat>()?)?,
                None => eval::generate_synthetic(settings.seed, n, facts),
            };
            let strategies: Vec<SegmentationStrategy> = strategies
                .split(',')
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?;
            let opts = EvalOptions { k, judge, ..EvalOptions::default() };
            match strategies.as_slice() {
                [] => bail!("no strategies given"),
                [one] => {
                    let engine = Engine::new(p, settings.retrieval.clone());
                    eval::ingest_dataset(&engine, &ds, one)?;
                    let report = eval::evaluate(&engine, &ds, &opts);
                    if json {
                        emit(&(report.to_json() + "\n"))?;
                    } else {
                        emit(&eval::render_report(&report))?;
                    }
                }
                many => {
                    let rows = eval::compare_segmentation(&ds, many, &p, &settings.retrieval, &opts);
                    if json {
                        print_json(&rows)?;
                    } else {
                        emit(&eval::render_segmentation(&rows))?;
                    }
                }
            }
            Ok(())
        }
        Command::Serve { bind, token } => {
            let bind = bind.unwrap_or(settings.bind.clone());
            let token = token.or(settings.token.clone());
            let engine = Arc::new(open()?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(%bind, "listening");
                eprintln!("scenemem listening on {}", listener.local_addr()?);
                scenemem_server::serve(engine, listener, token, shutdown_signal()).await
            })
        }
    }
}
