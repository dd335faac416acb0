//! Command-line interface: argument definitions and the pipeline stages.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use inmt_al::active::{curve_csv, run_al, ALConfig, ExperimentReport, JsonlSink};
use inmt_al::aligner::{train_alignment, AlignmentModel};
use inmt_al::corpus::{load_parallel_corpus, normalize_whitespace, ParallelPair, StreamSource};
use inmt_al::model::NmtSystem;
use inmt_al::sampling::Strategy;
use inmt_al::subword::{apply_bpe, learn_bpe, MergeTable};
use inmt_al::synthetic::ToyGrammar;

use crate::config::FileConfig;
use crate::http::router;
use crate::service::{Service, ServiceConfig};

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|_| {
        let names: Vec<&str> = Strategy::ALL.iter().map(|st| st.name()).collect();
        format!("unknown strategy {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let e: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&e) {
        Ok(e)
    } else {
        Err(format!("epsilon {e} is outside [0, 1]"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "inmt-al", version, about = "Interactive translation with active learning over sentence streams")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the initial translation system.
    Train(TrainArgs),
    /// Train the word-alignment model used by quality-estimation sampling.
    Align(AlignArgs),
    /// Learn or apply subword merges.
    #[command(subcommand)]
    Bpe(BpeCommand),
    /// Run the active-learning loop with a simulated user.
    RunAl(RunAlArgs),
    /// Serve live interactive sessions over HTTP.
    Serve(ServeArgs),
    /// Print corpus BLEU of a trained system.
    Eval(EvalArgs),
    /// Write a synthetic toy corpus with a domain-shifted stream.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long, requires = "dev_tgt")]
    pub dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    pub dev_tgt: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the trained system.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BpeCommand {
    /// Learn merges jointly over the given files.
    Learn {
        #[arg(long, default_value_t = 1000)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Segment lines from stdin, one space-separated line of pieces each.
    Apply {
        #[arg(long)]
        codes: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunAlArgs {
    /// Trained system directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Stream source sentences, one per line.
    #[arg(long)]
    pub src: PathBuf,
    /// Translations the simulated user wants, line-aligned with the stream.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Alignment model; required by qes and qbc.
    #[arg(long)]
    pub aligner: Option<PathBuf>,
    /// Fraction of each block to supervise; repeat for several runs.
    #[arg(long, value_parser = parse_epsilon, num_args = 1.., value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    /// Sampling strategy; repeat for several runs.
    #[arg(long, value_parser = parse_strategy, num_args = 1.., value_delimiter = ',')]
    pub strategy: Vec<Strategy>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-decode every unsupervised sentence with the current model.
    #[arg(long)]
    pub strict: bool,
    /// Save the model every this many blocks (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Trained system directory; without it every decode answers 503.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub aligner: Option<PathBuf>,
    /// Sentences offered through the queue, one per line.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long, env = "INMT_PORT")]
    pub port: Option<u16>,
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Step size of the update after each accept; 0 disables updates.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub dev: usize,
    #[arg(long, default_value_t = 1500)]
    pub stream: usize,
    /// Rate of shifted nouns in training and dev data.
    #[arg(long, default_value_t = 0.005)]
    pub train_shift: f64,
    /// Rate of shifted nouns in the stream.
    #[arg(long, default_value_t = 0.8)]
    pub stream_shift: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => train(&config, a),
        Command::Align(a) => align(&config, a),
        Command::Bpe(c) => bpe(c),
        Command::RunAl(a) => run_al_cmd(&config, a),
        Command::Serve(a) => serve(&config, a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_pairs(src: &Path, tgt: &Path) -> anyhow::Result<Vec<ParallelPair>> {
    let loaded = load_parallel_corpus(src, tgt).with_context(|| format!("loading {} / {}", src.display(), tgt.display()))?;
    if !loaded.skipped_lines.is_empty() {
        log::warn!("{}: skipped {} line(s) with an empty side", src.display(), loaded.skipped_lines.len());
    }
    Ok(loaded.pairs)
}

fn load_system(dir: &Path) -> anyhow::Result<NmtSystem> {
    NmtSystem::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn load_aligner(path: &Path) -> anyhow::Result<AlignmentModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    AlignmentModel::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(normalize_whitespace).collect())
}

fn train(config: &FileConfig, a: TrainArgs) -> anyhow::Result<()> {
    let mut sys_cfg = config.system.clone();
    if let Some(e) = a.epochs {
        sys_cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        sys_cfg.seed = s;
    }
    let corpus = load_pairs(&a.src, &a.tgt)?;
    let dev = match (&a.dev_src, &a.dev_tgt) {
        (Some(s), Some(t)) => load_pairs(s, t)?,
        _ => Vec::new(),
    };
    let (system, report) = NmtSystem::train_initial(&sys_cfg, &corpus, &dev)?;
    system.save(&a.out)?;
    fs::write(a.out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    match report.best_dev {
        Some(b) => println!("trained {} epochs, best dev BLEU = {:.2}", report.epochs_run, 100.0 * b),
        None => println!("trained {} epochs", report.epochs_run),
    }
    Ok(())
}

fn align(config: &FileConfig, a: AlignArgs) -> anyhow::Result<()> {
    let corpus = load_pairs(&a.src, &a.tgt)?;
    let trained = train_alignment(&corpus, &config.aligner)?;
    fs::write(&a.out, trained.model.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(ll) = trained.log_likelihood.last() {
        println!("log-likelihood {ll:.4} after {} iterations", trained.log_likelihood.len() - 1);
    }
    Ok(())
}

fn bpe(c: BpeCommand) -> anyhow::Result<()> {
    match c {
        BpeCommand::Learn { merges, out, inputs } => {
            let mut lines = Vec::new();
            for p in &inputs {
                lines.extend(read_lines(p)?);
            }
            let table = learn_bpe(lines.iter().map(String::as_str), merges)?;
            fs::write(&out, table.to_text()).with_context(|| format!("writing {}", out.display()))?;
            println!("learned {} merges", table.len());
        }
        BpeCommand::Apply { codes } => {
            let text = fs::read_to_string(&codes).with_context(|| format!("reading {}", codes.display()))?;
            let table = MergeTable::from_text(&text)?;
            let stdout = std::io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for line in std::io::stdin().lock().lines() {
                writeln!(out, "{}", apply_bpe(&table, &line?).join(" "))?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Directory name of one run, e.g. `ads-0.3`.
pub fn run_name(strategy: Strategy, epsilon: f64) -> String {
    format!("{}-{}", strategy.name(), epsilon)
}

fn run_al_cmd(config: &FileConfig, a: RunAlArgs) -> anyhow::Result<()> {
    let mut base: ALConfig = config.al.clone();
    if let Some(v) = a.block_size {
        base.block_size = v;
    }
    if let Some(v) = a.beam {
        base.beam = v;
    }
    if let Some(v) = a.lr {
        base.lr = v;
    }
    if let Some(v) = a.seed {
        base.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        base.checkpoint_every = v;
    }
    base.strict |= a.strict;
    let strategies = if a.strategy.is_empty() { vec![base.strategy] } else { a.strategy.clone() };
    let epsilons = if a.epsilon.is_empty() { vec![base.epsilon] } else { a.epsilon.clone() };

    let references = read_lines(&a.reference)?;
    let aligner = a.aligner.as_deref().map(load_aligner).transpose()?;
    let initial = load_system(&a.model)?;
    fs::create_dir_all(&a.out)?;

    let mut reports: Vec<ExperimentReport> = Vec::new();
    for &strategy in &strategies {
        for &epsilon in &epsilons {
            let dir = a.out.join(run_name(strategy, epsilon));
            fs::create_dir_all(&dir)?;
            let mut cfg = base.clone();
            cfg.strategy = strategy;
            cfg.epsilon = epsilon;
            cfg.checkpoint_dir = (cfg.checkpoint_every > 0).then(|| dir.join("checkpoints"));
            let mut model = initial.clone();
            let mut stream = StreamSource::open(&a.src)?;
            let file = fs::File::create(dir.join("report.jsonl"))?;
            let mut sink = JsonlSink::new(BufWriter::new(file));
            let report = run_al(&mut model, &mut stream, &references, aligner.as_ref(), &cfg, &mut sink)
                .with_context(|| format!("run {}", run_name(strategy, epsilon)))?;
            let mut output = report.outputs.join("\n");
            output.push('\n');
            fs::write(dir.join("output.txt"), output)?;
            fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
            let s = &report.summary;
            println!(
                "{:<5} eps {:<5} supervised {:>6.2}%  BLEU {:>6.2}  KSMR {:>6.2}%",
                strategy.name(),
                epsilon,
                s.percent_supervised,
                100.0 * s.bleu,
                100.0 * s.ksmr
            );
            reports.push(report);
        }
    }
    fs::write(a.out.join("curve.csv"), curve_csv(&reports))?;
    Ok(())
}

/// Builds the service described by the config and flags.
pub fn build_service(config: &FileConfig, a: &ServeArgs) -> anyhow::Result<Service> {
    let mut queue = config.al.clone();
    if let Some(v) = a.epsilon {
        queue.epsilon = v;
    }
    if let Some(v) = a.strategy {
        queue.strategy = v;
    }
    if let Some(v) = a.block_size {
        queue.block_size = v;
    }
    if let Some(v) = a.beam {
        queue.beam = v;
    }
    if let Some(v) = a.lr {
        queue.lr = v;
    }
    let svc_cfg = ServiceConfig {
        beam: queue.beam,
        lr: queue.lr,
        skip_adjacent_positioning: queue.skip_adjacent_positioning,
        queue,
    };
    let model = match &a.model {
        Some(dir) => Some(Box::new(load_system(dir)?) as crate::service::SharedModel),
        None => {
            log::warn!("no model given; sessions answer 503 until one is loaded");
            None
        }
    };
    let aligner = a.aligner.as_deref().map(load_aligner).transpose()?;
    if matches!(svc_cfg.queue.strategy, Strategy::Qes | Strategy::Qbc) && aligner.is_none() && a.stream.is_some() {
        bail!("strategy {} needs --aligner", svc_cfg.queue.strategy);
    }
    let mut service = Service::new(model, aligner, svc_cfg);
    if let Some(p) = &a.stream {
        service = service.with_stream(StreamSource::open(p)?);
    }
    Ok(service)
}

fn serve(config: &FileConfig, a: ServeArgs) -> anyhow::Result<()> {
    let service = Arc::new(build_service(config, &a)?);
    let host = a.host.clone().unwrap_or_else(|| config.service.host.clone());
    let port = a.port.unwrap_or(config.service.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let system = load_system(&a.model)?;
    let pairs = load_pairs(&a.src, &a.tgt)?;
    let bleu = system.bleu(&pairs, a.beam)?;
    println!("BLEU = {:.2}", 100.0 * bleu);
    Ok(())
}

fn write_side(dir: &Path, name: &str, pairs: &[ParallelPair]) -> anyhow::Result<()> {
    let mut src = String::new();
    let mut tgt = String::new();
    for p in pairs {
        src.push_str(p.source.surface());
        src.push('\n');
        tgt.push_str(p.target.surface());
        tgt.push('\n');
    }
    fs::write(dir.join(format!("{name}.src")), src)?;
    fs::write(dir.join(format!("{name}.tgt")), tgt)?;
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let grammar = ToyGrammar::new(a.seed);
    fs::create_dir_all(&a.out)?;
    let seed = a.seed.wrapping_mul(10);
    write_side(&a.out, "train", &grammar.corpus(a.train, a.train_shift, seed))?;
    write_side(&a.out, "dev", &grammar.corpus(a.dev, a.train_shift, seed + 1))?;
    write_side(&a.out, "stream", &grammar.corpus(a.stream, a.stream_shift, seed + 2))?;
    println!("wrote train/dev/stream corpora to {}", a.out.display());
    Ok(())
}
