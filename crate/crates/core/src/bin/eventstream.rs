use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eventstream::config::{AnchorMode, PipelineConfig};
use eventstream::evolution::DEFAULT_TOP_N;
use eventstream::model::{ingest_dataset, write_jsonl, DatasetFormat, MessageBlock};
use eventstream::pipeline::{self, DetectOptions, PipelineError, ProviderSpec, RunManifest};
use eventstream::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "eventstream",
    version,
    about = "Streaming social event detection and evolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic stream as JSONL.
    Synth(SynthArgs),
    /// Build anchors and key samples per block.
    Sample(SampleArgs),
    /// Detect events per block and write labels and knowledge-base snapshots.
    Detect(DetectArgs),
    /// Align events across days from knowledge-base snapshots.
    Evolve(EvolveArgs),
    /// Score labels against gold and, optionally, timeline keywords.
    Evaluate(EvaluateArgs),
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    events: usize,
    #[arg(long, default_value_t = 200)]
    messages_per_event: usize,
    #[arg(long, default_value_t = 0.5)]
    duplicate_rate: f64,
    #[arg(long, default_value_t = 1)]
    days: usize,
    /// Words shared by every event (breaks embedding separation).
    #[arg(long, default_value_t = 0)]
    shared_words: usize,
    #[arg(long, default_value_t = 256)]
    hash_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the French dataset defaults.
    #[arg(long)]
    french: bool,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_anchor_size: Option<usize>,
    #[arg(long, value_parser = parse_anchor_mode)]
    anchor_mode: Option<AnchorMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    strict: bool,
    /// `hash` or `http`.
    #[arg(long, env = "EVENTSTREAM_EMBEDDING_PROVIDER")]
    embedding_provider: Option<String>,
    #[arg(long, env = "EVENTSTREAM_EMBEDDING_URL")]
    embedding_url: Option<String>,
    #[arg(long, env = "EVENTSTREAM_EMBEDDING_MODEL")]
    embedding_model: Option<String>,
    #[arg(long, env = "EVENTSTREAM_CHAT_URL")]
    chat_url: Option<String>,
    #[arg(long, env = "EVENTSTREAM_CHAT_MODEL")]
    chat_model: Option<String>,
}

fn parse_anchor_mode(s: &str) -> Result<AnchorMode, String> {
    match s {
        "online" => Ok(AnchorMode::Online),
        "strict" => Ok(AnchorMode::Strict),
        _ => Err(format!("`{s}`: expected online or strict")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut c = match (&self.config, self.french) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, true) => PipelineConfig::french(),
            (None, false) => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident).+ = $value:expr) => {
                if let Some(v) = $value.clone() {
                    c.$($field).+ = v;
                }
            };
        }
        set!(tau = self.tau);
        set!(max_anchor_size = self.max_anchor_size);
        set!(anchor_mode = self.anchor_mode);
        set!(lambda = self.lambda);
        set!(p = self.p);
        set!(gamma = self.gamma);
        set!(q = self.q);
        set!(theta = self.theta);
        set!(embedding.provider = self.embedding_provider);
        set!(embedding.base_url = self.embedding_url);
        set!(embedding.model = self.embedding_model);
        set!(chat.base_url = self.chat_url);
        set!(chat.model = self.chat_model);
        c.strict |= self.strict;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `jsonl` or `tsv`; inferred from the extension when absent.
    #[arg(long)]
    format: Option<DatasetFormat>,
}

impl DatasetArgs {
    fn load(&self) -> Result<Vec<MessageBlock>, PipelineError> {
        let format = self
            .format
            .unwrap_or_else(|| DatasetFormat::from_path(&self.dataset));
        Ok(ingest_dataset(&self.dataset, format)?)
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    /// `openai` or `mock-oracle:<seed>[:<noise>]`.
    #[arg(long, env = "EVENTSTREAM_PROVIDER", default_value = "openai")]
    provider: ProviderSpec,
    /// Skip blocks already detected under the same configuration.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 1)]
    parallel_days: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvolveArgs {
    /// Directory holding `block-NNNN.kb.json` snapshots (the detect output).
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Aligned events kept in the stream-graph CSV.
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    top_n: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Directory holding `block-NNNN.labels.jsonl` files.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    timeline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn note_dataset(out: &Path, config: &PipelineConfig, dataset: &Path) -> Result<(), PipelineError> {
    let mut manifest = RunManifest::load_or_new(out, config)?;
    manifest.dataset = Some(pipeline::dataset_id(dataset)?);
    manifest.write(out)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Synth(a) => {
            let stream = generate(&SynthConfig {
                events: a.events,
                messages_per_event: a.messages_per_event,
                duplicate_rate: a.duplicate_rate,
                days: a.days,
                shared_words: a.shared_words,
                hash_dim: a.hash_dim,
                seed: a.seed,
                ..SynthConfig::default()
            })?;
            pipeline::write_file(&a.out, &write_jsonl(&stream.blocks))?;
            let total: usize = stream.blocks.iter().map(MessageBlock::len).sum();
            println!(
                "wrote {total} messages over {} days to {}",
                stream.blocks.len(),
                a.out.display()
            );
        }
        Command::Sample(a) => {
            let config = a.config.resolve()?;
            let blocks = a.data.load()?;
            let embedder = pipeline::build_embedder(&config)?;
            let summaries = pipeline::run_sample(&blocks, &config, embedder.as_ref(), &a.out)?;
            note_dataset(&a.out, &config, &a.data.dataset)?;
            println!("tau {}", config.tau);
            for s in summaries {
                println!(
                    "block {}: {} messages, {} anchors, compression {:.2}",
                    s.block, s.messages, s.anchors, s.compression_ratio
                );
            }
        }
        Command::Detect(a) => {
            let config = a.config.resolve()?;
            let blocks = a.data.load()?;
            let embedder = pipeline::build_embedder(&config)?;
            let chat = pipeline::build_chat(&a.provider, &config, &blocks)?;
            let options = DetectOptions {
                resume: a.resume,
                parallel_days: a.parallel_days,
            };
            let result = pipeline::run_detect(
                &blocks,
                &config,
                embedder.as_ref(),
                chat.as_ref(),
                &a.provider,
                &a.out,
                &options,
            );
            note_dataset(&a.out, &config, &a.data.dataset)?;
            let s = result?;
            println!(
                "{} messages, {} detector calls, {} evaluator calls, {} blocks skipped",
                s.messages,
                s.detector_calls,
                s.evaluator_calls,
                s.skipped.len()
            );
        }
        Command::Evolve(a) => {
            let config = a.config.resolve()?;
            let embedder = pipeline::build_embedder(&config)?;
            let s =
                pipeline::run_evolve(&a.snapshots, &config, embedder.as_ref(), a.top_n, &a.out)?;
            println!(
                "{} days, {} aligned events, {} forgotten",
                s.days, s.aligned_ids, s.forgotten
            );
        }
        Command::Evaluate(a) => {
            let config = a.config.resolve()?;
            let blocks = a.data.load()?;
            let report =
                pipeline::run_evaluate(&blocks, &a.labels, a.timeline.as_deref(), &config, &a.out)?;
            print!("{}", report.to_table());
        }
        Command::Report { out } => print!("{}", pipeline::render_report(&out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
