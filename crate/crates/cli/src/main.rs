use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dualenc::discrete::{Bm25Params, Scorer};
use dualenc::encoder::{load_embeddings, EmbeddingTable, TextEncoder, DEFAULT_DIM};
use dualenc::eval::{map_at_k, map_at_k_qrels, MissingQueries, DEFAULT_K};
use dualenc::pipeline::{self, Rankings};
use dualenc::search::{read_run, write_run};
use dualenc::tasks::{build_retrieval_task, load_pairs, read_qrels, PairFormat, PairRecord, RetrievalTask};
use dualenc::train::{save_checkpoint, train_multi_task, TaskSpec, TrainConfig};
use dualenc::{LossKind, TripletConfig, Vocabulary};

#[derive(Parser)]
#[command(name = "dualenc", version, about = "Dual-encoder retrieval experiments")]
struct Cli {
    /// Worker threads for encoding, training and retrieval (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a retrieval task (queries, candidates, qrels) from test pairs.
    BuildTask(BuildTaskArgs),
    /// Train a shared embedding table on one or more pair datasets.
    Train(TrainArgs),
    /// Rank candidates for every task query and write a TREC run.
    Retrieve(RetrieveArgs),
    /// Score a TREC run against qrels with MAP@K.
    Evaluate(EvaluateArgs),
    /// Print task statistics and baseline MAP@K for a test pair file.
    BaselineStats(BaselineArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Pair file.
    #[arg(long)]
    input: PathBuf,
    /// quora-tsv, askubuntu or paralex.
    #[arg(long, value_parser = parse_format)]
    format: PairFormat,
    /// Question-title file (askubuntu only).
    #[arg(long)]
    titles: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> Result<Vec<PairRecord>> {
        load_pairs(&self.input, self.format, self.titles.as_deref()).with_context(|| format!("loading {}", self.input.display()))
    }

    fn task(&self) -> Result<RetrievalTask> {
        Ok(build_retrieval_task(&self.load()?)?)
    }
}

#[derive(Args)]
struct BuildTaskArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Output directory for queries.txt, candidates.tsv and qrels.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct TaskArg {
    name: String,
    format: PairFormat,
    path: PathBuf,
    titles: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset as NAME:FORMAT:PATH[:TITLES]; repeat for multi-task training.
    #[arg(long = "task", required = true, value_parser = parse_task_arg)]
    tasks: Vec<TaskArg>,
    /// Train this task alone first, then continue on all tasks.
    #[arg(long)]
    pretrain: Option<String>,
    /// softmax, in-batch-ce, triplet or pairwise-ce.
    #[arg(long, default_value = "softmax", value_parser = parse_loss)]
    loss: LossKind,
    /// Triplet margin.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 200)]
    eval_every: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Batch size of the tuning metric (default: --batch-size).
    #[arg(long)]
    tuning_batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum token count for the vocabulary.
    #[arg(long, default_value_t = 2)]
    min_count: usize,
    /// Fraction of each dataset held out for the tuning metric.
    #[arg(long, default_value_t = 0.05)]
    holdout: f64,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exhaustive,
    Quantized,
    Bm25,
    Tfidf,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EncoderKind {
    /// Unweighted average of token embeddings.
    Avg,
    /// IDF-weighted average, IDF counted over the candidates.
    Idf,
}

#[derive(Args)]
struct Bm25Args {
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

impl Bm25Args {
    fn params(&self) -> Result<Bm25Params> {
        Ok(Bm25Params::new(self.k1, self.b)?)
    }
}

#[derive(Args)]
struct RetrieveArgs {
    /// Directory written by build-task.
    #[arg(long)]
    task_dir: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Directory written by train (exhaustive and quantized modes).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "avg")]
    encoder: EncoderKind,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    bm25: Bm25Args,
    /// Run tag (default: the mode name).
    #[arg(long)]
    tag: Option<String>,
    /// Also save the dense index in binary form.
    #[arg(long)]
    save_index: Option<PathBuf>,
    /// Output TREC run file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Write per-query AP as TSV.
    #[arg(long)]
    per_query: Option<PathBuf>,
    /// Write `metric<TAB>value` lines.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score queries absent from the run as empty rankings instead of failing.
    #[arg(long)]
    missing_as_empty: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    bm25: Bm25Args,
    /// Word embeddings (text format) for the average and IDF-average baselines.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<PairFormat, String> {
    s.parse().map_err(|e: dualenc::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: dualenc::Error| e.to_string())
}

fn parse_task_arg(s: &str) -> Result<TaskArg, String> {
    let parts: Vec<&str> = s.splitn(4, ':').collect();
    let [name, format, path, rest @ ..] = parts.as_slice() else {
        return Err("expected NAME:FORMAT:PATH[:TITLES]".into());
    };
    if name.is_empty() || path.is_empty() {
        return Err("task name and path must be non-empty".into());
    }
    Ok(TaskArg {
        name: (*name).to_owned(),
        format: parse_format(format)?,
        path: PathBuf::from(*path),
        titles: rest.first().map(|t| PathBuf::from(*t)),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn build_task(args: BuildTaskArgs) -> Result<()> {
    let task = args.data.task()?;
    task.save(&args.out)?;
    println!("{}", task.stats());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let loss = match args.loss {
        LossKind::Triplet(_) => LossKind::Triplet(TripletConfig::new(args.delta)?),
        other => other,
    };
    let mut datasets = Vec::with_capacity(args.tasks.len());
    for t in &args.tasks {
        let records = load_pairs(&t.path, t.format, t.titles.as_deref()).with_context(|| format!("loading task `{}`", t.name))?;
        datasets.push(records);
    }
    let vocab = pipeline::pair_vocabulary(datasets.iter().flatten(), args.min_count)?;
    ensure!(!vocab.is_empty(), "vocabulary is empty at --min-count {}", args.min_count);
    let specs = args
        .tasks
        .iter()
        .zip(&datasets)
        .enumerate()
        .map(|(i, (t, records))| {
            let pairs = pipeline::train_pairs(&vocab, records);
            TaskSpec::with_holdout(t.name.clone(), pairs, loss, args.holdout, args.seed.wrapping_add(i as u64))
        })
        .collect::<dualenc::Result<Vec<_>>>()?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        max_steps: args.max_steps,
        eval_every: args.eval_every,
        patience: args.patience,
        seed: args.seed,
        learning_rate: args.lr,
        momentum: args.momentum,
        tuning_batch_size: args.tuning_batch_size,
    };
    let table = EmbeddingTable::random(vocab.len(), args.dim, args.seed);
    let outcome = train_multi_task(&specs, table, &config, args.pretrain.as_deref())?;
    save_checkpoint(&args.out, &vocab, &outcome)?;
    println!(
        "steps={} best_step={} tuning_p1={:.4} stopped_early={} vocab={}",
        outcome.steps_run,
        outcome.best_step,
        outcome.best_metric,
        outcome.stopped_early,
        vocab.len()
    );
    Ok(())
}

/// Loads `embeddings.txt` and, when present, checks it against `vocab.tsv`.
fn load_checkpoint(dir: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let (vocab, table) = load_embeddings(&dir.join("embeddings.txt"))?;
    let vocab_path = dir.join("vocab.tsv");
    if vocab_path.exists() {
        let saved = Vocabulary::load(&vocab_path)?;
        ensure!(
            saved.len() == table.rows(),
            "checkpoint vocabulary has {} tokens but the embedding table has {} rows",
            saved.len(),
            table.rows()
        );
        ensure!(saved.tokens().eq(vocab.tokens()), "checkpoint vocabulary and embedding tokens disagree");
    }
    Ok((vocab, table))
}

fn dense_encoder(vocab: Vocabulary, table: EmbeddingTable, kind: EncoderKind, task: &RetrievalTask) -> Result<TextEncoder> {
    let encoder = TextEncoder::new(vocab, table)?;
    Ok(match kind {
        EncoderKind::Avg => encoder,
        EncoderKind::Idf => {
            let texts: Vec<&str> = task.candidates().iter().map(|(_, t)| t.as_str()).collect();
            encoder.with_idf_from(&texts)?
        }
    })
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let task = RetrievalTask::load(&args.task_dir)?;
    let rankings: Rankings = match args.mode {
        Mode::Identity => pipeline::identity(&task),
        Mode::Bm25 => pipeline::discrete_rankings(&task, Scorer::Bm25(args.bm25.params()?), args.k)?,
        Mode::Tfidf => pipeline::discrete_rankings(&task, Scorer::Tfidf, args.k)?,
        Mode::Exhaustive | Mode::Quantized => {
            let Some(dir) = &args.checkpoint else {
                bail!("--checkpoint is required for {:?} mode", args.mode);
            };
            let (vocab, table) = load_checkpoint(dir)?;
            let encoder = dense_encoder(vocab, table, args.encoder, &task)?;
            let index = pipeline::build_dense_index(&task, &encoder, args.mode == Mode::Quantized)?;
            if let Some(path) = &args.save_index {
                index.save(path)?;
            }
            let texts = task.texts();
            let queries: Vec<&str> = task.queries().iter().map(|q| texts[q]).collect();
            let lists = index.top_k_all(&encoder.encode_all(&queries), args.k)?;
            task.queries().iter().cloned().zip(lists).collect()
        }
    };
    let tag = args.tag.unwrap_or_else(|| format!("{:?}", args.mode).to_lowercase());
    write_run(create(&args.out)?, &rankings, &tag).with_context(|| format!("writing {}", args.out.display()))?;
    println!("queries={} run={}", rankings.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let run = read_run(open(&args.run)?, &args.run.display().to_string())?;
    ensure!(!run.is_empty(), "run file {} is empty", args.run.display());
    let qrels = read_qrels(open(&args.qrels)?, &args.qrels.display().to_string())?;
    let missing = if args.missing_as_empty { MissingQueries::AsEmpty } else { MissingQueries::Error };
    let report = map_at_k_qrels(&run, &qrels, args.k, missing)?;
    println!("MAP@{} {:.2}", report.k, report.map_points());
    if let Some(path) = &args.report {
        report.write_summary(create(path)?)?;
    }
    if let Some(path) = &args.per_query {
        report.write_per_query(create(path)?)?;
    }
    Ok(())
}

fn baseline_stats(args: BaselineArgs) -> Result<()> {
    let task = args.data.task()?;
    println!("{}", task.stats());
    let mut out = std::io::stdout().lock();
    let mut report = |name: &str, rankings: &Rankings| -> Result<()> {
        let map = map_at_k(rankings, &task, args.k)?;
        writeln!(out, "{name}\tMAP@{}\t{:.2}", args.k, map.map_points())?;
        Ok(())
    };
    report("identity", &pipeline::identity(&task))?;
    report("tfidf", &pipeline::discrete_rankings(&task, Scorer::Tfidf, args.k)?)?;
    report("bm25", &pipeline::discrete_rankings(&task, Scorer::Bm25(args.bm25.params()?), args.k)?)?;
    if let Some(path) = &args.embeddings {
        let (vocab, table) = load_embeddings(path)?;
        for kind in [EncoderKind::Avg, EncoderKind::Idf] {
            let encoder = dense_encoder(vocab.clone(), table.clone(), kind, &task)?;
            let name = if kind == EncoderKind::Avg { "avg-embedding" } else { "idf-embedding" };
            report(name, &pipeline::dense_rankings(&task, &encoder, false, args.k)?)?;
        }
    }
    Ok(())
}

fn is_missing_file(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        let io = match cause.downcast_ref::<dualenc::Error>() {
            Some(dualenc::Error::Io { source, .. }) => Some(source),
            _ => cause.downcast_ref::<std::io::Error>(),
        };
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::NotFound)
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::BuildTask(a) => build_task(a),
        Command::Train(a) => train(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BaselineStats(a) => baseline_stats(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_missing_file(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
