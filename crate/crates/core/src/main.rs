use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use triage::context::ContextTrainOptions;
use triage::corpus::{write_corpus, Catalog, CorpusSpec};
use triage::evalsim::{render_report, Baselines, SplitSpec};
use triage::experiment::{run_all, ExperimentConfig};
use triage::pipeline::Triage;
use triage::reason::{BowSettings, EmbeddingServer, FileProvider, Head, RemoteConfig};
use triage::service::{self, Server, Service, ServiceConfig, BIND_ENV, CONFIG_DIR_ENV, DEFAULT_BIND, MODEL_DIR_ENV};
use triage::workflow::{self, CorpusDir, ReasonStage, TextSource};

#[derive(Parser)]
#[command(name = "triage", version, about = "Customer-support triage: corpus, training, evaluation and chat service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Bow,
    File,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Lr,
    Mlp,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus (deterministic for a given seed).
    GenerateCorpus {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        size: usize,
        #[arg(long, default_value_t = 0.3)]
        ambiguity: f64,
        #[arg(long, default_value_t = 4000)]
        context_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the context gate (writes context.model).
    TrainContext {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = MODEL_DIR_ENV)]
        models: PathBuf,
        /// Hyper-parameter configurations to try.
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the contact-reason classifier (writes reason.model).
    TrainReason {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = MODEL_DIR_ENV)]
        models: PathBuf,
        #[arg(long, value_enum, default_value = "bow")]
        provider: ProviderArg,
        /// Embedding table for --provider file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embedding service address for --provider remote.
        #[arg(long)]
        remote: Option<String>,
        #[arg(long)]
        dimension: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, value_enum, default_value = "mlp")]
        head: HeadArg,
        #[arg(long, value_delimiter = ',', default_value = "256")]
        hidden: Vec<usize>,
        /// Inverse regularization of the linear head.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 50)]
        min_count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Calibrate the auto-routing threshold on the validation split (writes policy.json).
    Calibrate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = MODEL_DIR_ENV)]
        models: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        coverage: f64,
    },
    /// Score the stored models on the test split.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = MODEL_DIR_ENV)]
        models: PathBuf,
        /// Print tables instead of JSON.
        #[arg(long)]
        report: bool,
        #[arg(long)]
        baselines: bool,
    },
    /// Run every comparison (heads, text features, routing, context gate) on a fresh corpus.
    Experiments {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        size: usize,
        #[arg(long, default_value_t = 0.3)]
        ambiguity: f64,
        #[arg(long)]
        baselines: bool,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve an embedding table over TCP for --provider remote.
    EmbeddingsServer {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7879")]
        bind: String,
    },
    /// Run the chat service over TCP or stdin/stdout.
    Serve {
        #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
        bind: String,
        #[arg(long)]
        stdio: bool,
        #[arg(long, env = MODEL_DIR_ENV)]
        models: PathBuf,
        /// Directory with flow.toml / templates.toml / rules.toml overrides.
        #[arg(long, env = CONFIG_DIR_ENV)]
        config: Option<PathBuf>,
        /// Pin template variants and use logical timestamps.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn json_line(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_text(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn generate(seed: u64, size: usize, ambiguity: f64, context_size: usize, out: &Path) -> Result<()> {
    let spec = CorpusSpec { seed, size, ambiguity_rate: ambiguity, context_size, ..CorpusSpec::default() };
    let files = write_corpus(&Catalog::builtin(), &spec, out).context("generating corpus")?;
    eprintln!("wrote {size} tickets and {context_size} context annotations to {}", files.dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn text_source(
    provider: ProviderArg,
    embeddings: Option<PathBuf>,
    remote: Option<String>,
    dimension: Option<usize>,
    timeout_ms: u64,
) -> Result<TextSource> {
    Ok(match provider {
        ProviderArg::Bow => TextSource::Bow(BowSettings::default()),
        ProviderArg::File => TextSource::File(embeddings.context("--provider file needs --embeddings")?),
        ProviderArg::Remote => {
            let address = remote.context("--provider remote needs --remote")?;
            let dimension = dimension.context("--provider remote needs --dimension")?;
            TextSource::Remote(RemoteConfig { address, timeout_ms, dimension, truncation: 64 })
        }
    })
}

fn serve(bind: &str, stdio: bool, models: &Path, config: Option<&Path>, deterministic: bool, seed: u64) -> Result<()> {
    let triage = Triage::load(models, config).with_context(|| format!("loading models from {}", models.display()))?;
    let engine = triage.engine(seed)?;
    let service = Service::new(engine, ServiceConfig { deterministic, seed, ..ServiceConfig::default() });
    if stdio {
        return Ok(service::serve_stdio(&service)?);
    }
    let server = Server::bind(Arc::new(service), bind).with_context(|| format!("binding {bind}"))?;
    let flag = server.shutdown_flag();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;
    eprintln!("listening on {}", server.address());
    server.wait();
    eprintln!("stopped");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let split = SplitSpec::default();
    match cli.command {
        Command::GenerateCorpus { seed, size, ambiguity, context_size, out } => {
            generate(seed, size, ambiguity, context_size, &out)
        }
        Command::TrainContext { corpus, models, budget, seed } => {
            let corpus = CorpusDir::open(&corpus)?;
            let options = ContextTrainOptions {
                seed,
                budget,
                strategy: triage::evalsim::Strategy::Random { seed },
                ..ContextTrainOptions::default()
            };
            json_line(&workflow::train_context(&corpus, &models, &options)?)
        }
        Command::TrainReason {
            corpus,
            models,
            provider,
            embeddings,
            remote,
            dimension,
            timeout_ms,
            head,
            hidden,
            c,
            min_count,
            seed,
        } => {
            let corpus = CorpusDir::open(&corpus)?;
            let head = match head {
                HeadArg::Lr => Head::Linear { penalty: triage::models::Penalty::L2, c },
                HeadArg::Mlp => Head::Mlp { hidden },
            };
            let mut stage = ReasonStage {
                text: text_source(provider, embeddings, remote, dimension, timeout_ms)?,
                head,
                min_count,
                ..ReasonStage::default()
            };
            stage.train.seed = seed;
            json_line(&workflow::train_reason(&corpus, &models, &stage)?)
        }
        Command::Calibrate { corpus, models, coverage } => {
            if !(coverage > 0.0 && coverage <= 1.0) {
                bail!("--coverage must be in (0, 1]");
            }
            let corpus = CorpusDir::open(&corpus)?;
            json_line(&workflow::calibrate(&corpus, &models, coverage, &split)?)
        }
        Command::Evaluate { corpus, models, report, baselines } => {
            let corpus = CorpusDir::open(&corpus)?;
            let metrics = workflow::evaluate(&corpus, &models, &split)?;
            if report {
                print_text(&render_report(&metrics, Baselines { published: baselines }))
            } else {
                json_line(&metrics)
            }
        }
        Command::Experiments { seed, size, ambiguity, baselines, json } => {
            let mut config = ExperimentConfig::default();
            config.corpus.seed = seed;
            config.corpus.size = size;
            config.corpus.ambiguity_rate = ambiguity;
            let (report, _) = run_all(Catalog::builtin(), &config)?;
            print_text(&render_report(&report, Baselines { published: baselines }))?;
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(())
        }
        Command::EmbeddingsServer { embeddings, bind } => {
            let provider = Arc::new(FileProvider::open(embeddings)?);
            let server = EmbeddingServer::spawn(&bind, provider)?;
            eprintln!("embeddings on {}", server.address());
            let (tx, rx) = std::sync::mpsc::channel();
            ctrlc::set_handler(move || {
                let _ = tx.send(());
            })?;
            let _ = rx.recv();
            server.shutdown();
            Ok(())
        }
        Command::Serve { bind, stdio, models, config, deterministic, seed } => {
            serve(&bind, stdio, &models, config.as_deref(), deterministic, seed)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let _ = std::io::stdout().flush();
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
