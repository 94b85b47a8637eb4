//! Command-line entry point.

use std::fs::File;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pubbie_core::classifier::{
    evaluate, make_split, render_features, train_linear_head, train_on_publications, EvalMetrics, HeadConfig,
    TrainedModel, DEFAULT_ALPHA,
};
use pubbie_core::llm::{EmbeddingCache, EmbeddingProvider};
use pubbie_core::orchestrator::{evaluate_text_to_sql, Nl2SqlCase, Orchestrator};
use pubbie_core::store::{Publication, Store};
use pubbie_core::ProgramLabel;

use crate::api::{router, AppState};
use crate::config::Config;
use crate::setup;

#[derive(Debug, Parser)]
#[command(name = "pubbie", version, about = "Chat agent over a publication database")]
pub struct Cli {
    /// Configuration file of dotted `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Verbose logs; turn responses include stage traces.
    #[arg(long, global = true)]
    pub debug: bool,
    /// Scripted completions instead of a model endpoint.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides server.bind_addr.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Load a CSV export into the store, predicting missing programs.
    Ingest { csv: PathBuf },
    /// Fit the bag-of-words classifier and report held-out metrics.
    TrainNb {
        labeled_csv: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Overrides classifier.model_path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the linear head on cached embeddings and report held-out metrics.
    TrainHead {
        labeled_csv: PathBuf,
        /// Embedding cache file; misses are embedded and appended.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score text-to-SQL generation on a question corpus.
    EvalNl2sql {
        corpus: PathBuf,
        /// Evaluate against this CSV in a scratch database instead of the
        /// configured store.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Interactive console session.
    Chat,
}

/// Runs the CLI; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    init_logging(cli.debug);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn init_logging(debug: bool) {
    let default = if debug { "debug" } else { "info" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let mock = cli.mock_script.as_deref();
    match cli.command {
        Command::Serve { bind } => serve(&config, mock, cli.debug, bind),
        Command::Ingest { csv } => ingest(&config, &csv),
        Command::TrainNb { labeled_csv, alpha, seed, out } => {
            train_nb(&config, &labeled_csv, alpha, seed, out.as_deref())
        }
        Command::TrainHead { labeled_csv, embeddings, epochs, learning_rate, seed, out } => {
            let mut head_config = HeadConfig { seed, ..HeadConfig::default() };
            if let Some(e) = epochs {
                head_config.epochs = e;
            }
            if let Some(lr) = learning_rate {
                head_config.learning_rate = lr;
            }
            train_head(&config, &labeled_csv, &embeddings, head_config, out.as_deref())
        }
        Command::EvalNl2sql { corpus, data } => eval_nl2sql(&config, mock, &corpus, data.as_deref()),
        Command::Chat => chat(&config, mock, cli.debug),
    }
}

fn serve(config: &Config, mock: Option<&Path>, debug: bool, bind: Option<String>) -> Result<()> {
    let orchestrator = setup::orchestrator(config, mock)?;
    let addr = match bind {
        Some(b) => b.parse().with_context(|| format!("CONFIG_INVALID: bad --bind {b:?}"))?,
        None => config.bind_addr,
    };
    let state = Arc::new(AppState { orchestrator, debug, max_upload_bytes: config.max_upload_bytes });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn ingest(config: &Config, csv: &Path) -> Result<()> {
    let store = setup::open_store(config)?;
    let labeler = setup::labeler(config)?;
    let file = File::open(csv).with_context(|| format!("IO_ERROR: opening {}", csv.display()))?;
    let report = store.ingest_csv(file, labeler.as_deref())?;
    println!("{}", report.summary());
    Ok(())
}

/// Human-labelled publications from a CSV, in file order.
fn labeled_publications(csv: &Path) -> Result<Vec<(Publication, ProgramLabel)>> {
    let store = Store::open_in_memory()?;
    let file = File::open(csv).with_context(|| format!("IO_ERROR: opening {}", csv.display()))?;
    let report = store.ingest_csv(file, None)?;
    if !report.errors.is_empty() {
        eprintln!("skipped {} malformed row(s)", report.errors.len());
    }
    Ok(store
        .publications()?
        .into_iter()
        .filter(|p| p.prog_source.is_human())
        .map(|p| {
            let label = p.prog;
            (p, label)
        })
        .collect())
}

fn pick<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}

fn print_metrics(name: &str, metrics: &EvalMetrics) {
    print!("{name}: {}", metrics.report());
}

fn save_model(model: TrainedModel, out: Option<&Path>, config: &Config) -> Result<()> {
    if let Some(path) = out.or(config.classifier_model_path.as_deref()) {
        model.save(path)?;
        println!("model written to {}", path.display());
    }
    Ok(())
}

fn train_nb(config: &Config, csv: &Path, alpha: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let labeled = labeled_publications(csv)?;
    let split = make_split(labeled.len(), seed)?;
    let (train, val, test) = split.sizes();
    println!("labelled publications: {} (train {train}, validation {val}, test {test})", labeled.len());
    let model = train_on_publications(&pick(&labeled, &split.train), alpha)?;
    for (name, indices) in [("validation", &split.val), ("test", &split.test)] {
        let items = pick(&labeled, indices);
        let predictions: Vec<ProgramLabel> =
            items.iter().map(|(p, _)| model.predict(render_features(p).as_str()).0).collect();
        let gold: Vec<ProgramLabel> = items.iter().map(|(_, l)| *l).collect();
        print_metrics(name, &evaluate(&predictions, &gold)?);
    }
    save_model(TrainedModel::NaiveBayes(model), out, config)
}

fn train_head(config: &Config, csv: &Path, cache: &Path, head_config: HeadConfig, out: Option<&Path>) -> Result<()> {
    let labeled = labeled_publications(csv)?;
    let split = make_split(labeled.len(), head_config.seed)?;
    let (train, val, test) = split.sizes();
    println!("labelled publications: {} (train {train}, validation {val}, test {test})", labeled.len());
    let cache = EmbeddingCache::open(cache)?.with_upstream(setup::embedder(config));
    let texts: Vec<_> = labeled.iter().map(|(p, _)| render_features(p)).collect();
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(64) {
        let refs: Vec<&str> = chunk.iter().map(|t| t.as_str()).collect();
        vectors.extend(cache.embed(&refs)?);
    }
    let labels: Vec<ProgramLabel> = labeled.iter().map(|(_, l)| *l).collect();
    let head = train_linear_head(&pick(&vectors, &split.train), &pick(&labels, &split.train), head_config)?;
    if let Some(loss) = head.final_loss() {
        println!("final training loss {loss:.4}");
    }
    for (name, indices) in [("validation", &split.val), ("test", &split.test)] {
        let predictions = indices
            .iter()
            .map(|&i| head.predict(&vectors[i]).map(|(l, _)| l))
            .collect::<Result<Vec<_>, _>>()?;
        print_metrics(name, &evaluate(&predictions, &pick(&labels, indices))?);
    }
    save_model(TrainedModel::LinearHead(head), out, config)
}

fn eval_nl2sql(config: &Config, mock: Option<&Path>, corpus: &Path, data: Option<&Path>) -> Result<()> {
    let cases = Nl2SqlCase::load_corpus(corpus)?;
    let store = match data {
        Some(csv) => {
            let store = Store::open_in_memory()?;
            let file = File::open(csv).with_context(|| format!("IO_ERROR: opening {}", csv.display()))?;
            store.ingest_csv(file, None)?;
            Arc::new(store)
        }
        None => setup::open_store(config)?,
    };
    let orchestrator = Orchestrator::new(
        store,
        setup::chat_provider(config, mock)?,
        setup::templates(config)?,
        config.orchestrator,
    )?;
    println!("{}", evaluate_text_to_sql(&orchestrator, &cases));
    Ok(())
}

const CHAT_HELP: &str = "Commands: /upload <csv>, /export <file>, /quit";

fn chat(config: &Config, mock: Option<&Path>, debug: bool) -> Result<()> {
    let orchestrator = setup::orchestrator(config, mock)?;
    let session = orchestrator.create_session()?;
    println!("session {session}. {CHAT_HELP}");
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        write!(out, "you> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        let turn = if line.is_empty() {
            continue;
        } else if line == "/quit" {
            break;
        } else if let Some(path) = line.strip_prefix("/upload ") {
            match std::fs::read(path.trim()) {
                Ok(bytes) => orchestrator.run_ingest_workflow(&session, &bytes).map(|(t, _)| t),
                Err(e) => {
                    println!("error: IO_ERROR: {e}");
                    continue;
                }
            }
        } else if let Some(path) = line.strip_prefix("/export ") {
            orchestrator.run_export_workflow(&session).map(|(bytes, turn)| {
                if let Err(e) = std::fs::write(path.trim(), bytes) {
                    println!("error: IO_ERROR: {e}");
                }
                turn
            })
        } else if line.starts_with('/') {
            println!("{CHAT_HELP}");
            continue;
        } else {
            orchestrator.handle_turn(&session, line)
        };
        match turn {
            Ok(turn) => {
                if debug {
                    for t in &turn.stage_trace {
                        println!("  [{}] {}", t.stage, t.text.replace('\n', " "));
                    }
                }
                println!("agent> {}", turn.agent_text);
            }
            Err(e) => println!("error: {e}"),
        }
    }
    Ok(())
}
