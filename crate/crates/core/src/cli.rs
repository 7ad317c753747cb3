//! Command-line front end. Each command reads an optional JSON config file,
//! applies flag overrides, prints the resolved config and runs one pipeline
//! stage.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, Aggregation, EvalReport};
use crate::io::{self, check_vocab_hash, ArtifactMeta};
use crate::knowledge::{build_semantic_matrix, ConstraintMatrix, SemanticMatrix, DEFAULT_TAU};
use crate::model::{self, DistillMode, HeadRole, Knowledge, SavedHead, StoredHead, TrainConfig};
use crate::rank::{self, Heads, ProposalSet, RankMode, RelevanceSource, Task};
use crate::stats::{self, PairStats, DEFAULT_ALPHA};
use crate::synth::{self, SynthSpec};
use crate::types::Dataset;

#[derive(Debug, Parser)]
#[command(
    name = "relguide",
    version,
    about = "Relationship proposal ranking with distilled predicate heads"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Co-occurrence and annotation statistics.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Knowledge constraint matrices.
    Knowledge {
        #[command(subcommand)]
        command: KnowledgeCommand,
    },
    /// Train a classifier head.
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    /// Rank relationship proposals for every image of a dataset.
    Rank(RankArgs),
    /// Score ranked proposals against annotations.
    Eval(EvalArgs),
    /// Relative gains of one report over a baseline report.
    Compare { baseline: PathBuf, report: PathBuf },
    /// Generate a synthetic dataset with planted structure.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    Build {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum KnowledgeCommand {
    /// Temperature-softmax similarity matrix over predicate embeddings.
    Semantic {
        /// Any dataset file carrying the vocabulary.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothed per-pair predicate distributions as a text table.
    Internal {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plain-text export of a semantic matrix.
    Export {
        #[arg(long)]
        semantic: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Relevance {
        #[command(flatten)]
        common: TrainFlags,
        #[arg(long)]
        negative_ratio: Option<f64>,
    },
    Predicate {
        #[command(flatten)]
        common: TrainFlags,
        #[arg(long, value_enum)]
        distill: Option<DistillMode>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Semantic matrix, required for `sk` and `both`.
        #[arg(long)]
        semantic: Option<PathBuf>,
        /// Pair statistics, required for `ik` and `both`.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    Object {
        #[command(flatten)]
        common: TrainFlags,
    },
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub predicate: PathBuf,
    #[arg(long)]
    pub object: Option<PathBuf>,
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RelevanceSource>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub one_per_pair: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    /// Training statistics; their predicate totals define the frequency groups.
    #[arg(long)]
    pub stats: PathBuf,
    /// Pool ground truth over all images instead of averaging per image.
    #[arg(long)]
    pub pooled: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeSection {
    pub tau: f64,
    pub alpha: f64,
}

impl Default for KnowledgeSection {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub mode: RelevanceSource,
    pub task: Task,
    pub k: usize,
    pub one_per_pair: bool,
}

impl Default for RankSection {
    fn default() -> Self {
        Self {
            mode: RelevanceSource::None,
            task: Task::PredCls,
            k: 100,
            one_per_pair: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pooled: bool,
}

/// Structured config file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub synth: SynthSpec,
    pub knowledge: KnowledgeSection,
    pub train: TrainConfig,
    pub rank: RankSection,
    pub eval: EvalSection,
}

impl Config {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            line: e.line(),
            field: "config".into(),
            detail: e.to_string(),
        })
    }
}

fn print_resolved<T: Serialize>(command: &str, seed: u64, config: &T) -> Result<()> {
    eprintln!(
        "{command}: seed={seed} config={}",
        serde_json::to_string(config)?
    );
    Ok(())
}

fn read_head(path: &Path, role: HeadRole, dataset: &Dataset, source: &str) -> Result<SavedHead> {
    let saved = SavedHead::read(path)?;
    check_vocab_hash(
        &saved.meta.vocab_hash,
        source,
        &dataset.vocab.hash(),
        "dataset",
    )?;
    if saved.role != role {
        return Err(Error::Artifact(format!(
            "{}: expected a {role:?} head, found {:?}",
            path.display(),
            saved.role
        )));
    }
    Ok(saved)
}

fn read_stats(path: &Path, dataset: &Dataset) -> Result<PairStats> {
    let stats = PairStats::read(path)?;
    stats.check_vocab(&dataset.vocab, "dataset")?;
    Ok(stats)
}

fn resolve_train(config: &Config, seed: u64, flags: &TrainFlags) -> TrainConfig {
    let mut train = config.train.clone();
    train.seed = seed;
    if let Some(v) = flags.epochs {
        train.epochs = v;
    }
    if let Some(v) = flags.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = flags.hidden {
        train.hidden = v;
    }
    train
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::read(path)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);

    match cli.command {
        Command::Synth { out_dir } => {
            let mut spec = config.synth.clone();
            spec.seed = seed;
            print_resolved("synth", seed, &spec)?;
            let out = synth::synth(&spec)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            io::write_dataset(out_dir.join("train.jsonl"), &out.train, Some(&out.meta))?;
            io::write_dataset(out_dir.join("test.jsonl"), &out.test, Some(&out.meta))?;
            io::write_text(out_dir.join("embeddings.txt"), &out.embeddings)?;
            let mut truth = serde_json::to_string_pretty(&out.truth)?;
            truth.push('\n');
            io::write_text(out_dir.join("truth.json"), &truth)?;
        }
        Command::Stats {
            command: StatsCommand::Build { train, out },
        } => {
            print_resolved("stats build", seed, &serde_json::json!({ "train": train }))?;
            let dataset = io::read_dataset(&train)?;
            stats::build_pair_stats(&dataset, seed)?.write(&out)?;
        }
        Command::Knowledge { command } => run_knowledge(command, &config, seed)?,
        Command::Train { command } => run_train(command, &config, seed)?,
        Command::Rank(args) => run_rank(args, &config, seed)?,
        Command::Eval(args) => run_eval(args, &config, seed)?,
        Command::Compare { baseline, report } => {
            print_resolved(
                "compare",
                seed,
                &serde_json::json!({ "baseline": baseline, "report": report }),
            )?;
            let a = EvalReport::read(&baseline)?;
            let b = EvalReport::read(&report)?;
            check_vocab_hash(
                &a.meta.vocab_hash,
                &baseline.display().to_string(),
                &b.meta.vocab_hash,
                &report.display().to_string(),
            )?;
            print!("{}", eval::format_comparison(&eval::compare(&a, &b)));
        }
    }
    Ok(())
}

fn run_knowledge(command: KnowledgeCommand, config: &Config, seed: u64) -> Result<()> {
    match command {
        KnowledgeCommand::Semantic {
            data,
            embeddings,
            tau,
            out,
        } => {
            let tau = tau.unwrap_or(config.knowledge.tau);
            print_resolved(
                "knowledge semantic",
                seed,
                &serde_json::json!({ "tau": tau }),
            )?;
            let dataset = io::read_dataset(&data)?;
            let emb = io::load_embeddings(&embeddings, &dataset.vocab)?;
            let meta = ArtifactMeta::new(&dataset.vocab, seed);
            build_semantic_matrix(&emb.predicate_vectors, tau, meta)?.write(&out)?;
        }
        KnowledgeCommand::Internal { stats, alpha, out } => {
            let alpha = alpha.unwrap_or(config.knowledge.alpha);
            print_resolved(
                "knowledge internal",
                seed,
                &serde_json::json!({ "alpha": alpha }),
            )?;
            let st = PairStats::read(&stats)?;
            let mut text = String::new();
            let _ = writeln!(
                text,
                "# vocab_hash={} seed={} tool_version={} alpha={alpha}",
                st.meta.vocab_hash, st.meta.seed, st.meta.tool_version
            );
            for (key, counts) in &st.pairs {
                if counts.rel == 0 {
                    continue;
                }
                let row = stats::smoothed_row(Some(counts), st.num_predicates, alpha)?;
                let cells: Vec<String> = row.probs().iter().map(|p| format!("{p:.6}")).collect();
                let _ = writeln!(text, "{} {} {}", key.subject, key.object, cells.join(" "));
            }
            io::write_text(&out, &text)?;
        }
        KnowledgeCommand::Export { semantic, out } => {
            print_resolved(
                "knowledge export",
                seed,
                &serde_json::json!({ "semantic": semantic }),
            )?;
            io::write_text(&out, &SemanticMatrix::read(&semantic)?.export_text())?;
        }
    }
    Ok(())
}

fn run_train(command: TrainCommand, config: &Config, seed: u64) -> Result<()> {
    let (role, saved_head, train_cfg, dataset, out, trace) = match command {
        TrainCommand::Relevance {
            common,
            negative_ratio,
        } => {
            let mut cfg = resolve_train(config, seed, &common);
            if let Some(r) = negative_ratio {
                cfg.negative_ratio = r;
            }
            print_resolved("train relevance", seed, &cfg)?;
            let dataset = io::read_dataset(&common.train)?;
            let result = model::train_relevance(&dataset, &cfg)?;
            (
                HeadRole::Relevance,
                StoredHead::Relevance(result.head),
                cfg,
                dataset,
                common.out,
                result.loss_trace,
            )
        }
        TrainCommand::Object { common } => {
            let cfg = resolve_train(config, seed, &common);
            print_resolved("train object", seed, &cfg)?;
            let dataset = io::read_dataset(&common.train)?;
            let result = model::train_object(&dataset, &cfg)?;
            (
                HeadRole::Object,
                StoredHead::Mlp(result.head),
                cfg,
                dataset,
                common.out,
                result.loss_trace,
            )
        }
        TrainCommand::Predicate {
            common,
            distill,
            lambda,
            alpha,
            semantic,
            stats,
        } => {
            let mut cfg = resolve_train(config, seed, &common);
            if let Some(d) = distill {
                cfg.distill = d;
            }
            if let Some(l) = lambda {
                cfg.distill_config.lambda = l;
            }
            let alpha = alpha.unwrap_or(config.knowledge.alpha);
            print_resolved(
                "train predicate",
                seed,
                &serde_json::json!({ "train": cfg, "alpha": alpha }),
            )?;
            let dataset = io::read_dataset(&common.train)?;
            let semantic = match semantic {
                Some(path) if cfg.distill.uses_semantic() => {
                    let m = SemanticMatrix::read(&path)?;
                    m.check_vocab(&dataset.vocab, "dataset")?;
                    Some(ConstraintMatrix::Semantic(m))
                }
                _ => None,
            };
            let internal = match stats {
                Some(path) if cfg.distill.uses_internal() => Some(ConstraintMatrix::Internal {
                    stats: read_stats(&path, &dataset)?,
                    alpha,
                }),
                _ => None,
            };
            let knowledge = Knowledge {
                semantic: semantic.as_ref(),
                internal: internal.as_ref(),
            };
            let result = model::train_predicate(&dataset, knowledge, &cfg)?;
            (
                HeadRole::Predicate,
                StoredHead::Mlp(result.head),
                cfg,
                dataset,
                common.out,
                result.loss_trace,
            )
        }
    };
    if let Some(last) = trace.last() {
        eprintln!("final epoch loss {last:.6}");
    }
    SavedHead {
        meta: ArtifactMeta::new(&dataset.vocab, train_cfg.seed),
        role,
        head: saved_head,
    }
    .write(&out)
}

fn run_rank(args: RankArgs, config: &Config, seed: u64) -> Result<()> {
    let mut section = config.rank.clone();
    if let Some(m) = args.mode {
        section.mode = m;
    }
    if let Some(t) = args.task {
        section.task = t;
    }
    if let Some(k) = args.k {
        section.k = k;
    }
    section.one_per_pair |= args.one_per_pair;
    print_resolved("rank", seed, &section)?;

    let dataset = io::read_dataset(&args.data)?;
    let predicate = read_head(
        &args.predicate,
        HeadRole::Predicate,
        &dataset,
        "predicate head",
    )?
    .into_mlp(HeadRole::Predicate)?;
    let object = match &args.object {
        Some(path) => Some(
            read_head(path, HeadRole::Object, &dataset, "object head")?
                .into_mlp(HeadRole::Object)?,
        ),
        None => None,
    };
    let relevance = match &args.relevance {
        Some(path) => Some(
            read_head(path, HeadRole::Relevance, &dataset, "relevance head")?.into_relevance()?,
        ),
        None => None,
    };
    let stats = match &args.stats {
        Some(path) => Some(read_stats(path, &dataset)?),
        None => None,
    };
    let mode = RankMode {
        relevance: section.mode,
        one_per_pair: section.one_per_pair,
    };
    let heads = Heads {
        predicate: &predicate,
        object: object.as_ref(),
        relevance: relevance.as_ref(),
    };
    let ranked = rank::rank_dataset(
        &dataset,
        heads,
        stats.as_ref(),
        mode,
        section.task,
        section.k,
    )?;
    let set = ProposalSet {
        meta: ArtifactMeta::new(&dataset.vocab, seed),
        mode,
        task: section.task,
        k: section.k,
        images: dataset
            .images
            .iter()
            .map(|i| i.image_id.clone())
            .zip(ranked)
            .collect(),
    };
    io::write_text(&args.out, &set.to_text(&dataset.vocab)?)
}

fn run_eval(args: EvalArgs, config: &Config, seed: u64) -> Result<()> {
    let pooled = args.pooled || config.eval.pooled;
    print_resolved("eval", seed, &serde_json::json!({ "pooled": pooled }))?;
    let dataset = io::read_dataset(&args.data)?;
    let stats = read_stats(&args.stats, &dataset)?;
    let set = ProposalSet::read(&args.proposals, &dataset.vocab)?;
    let mut by_id: HashMap<String, Vec<rank::Proposal>> = set.images.into_iter().collect();
    let proposals: Vec<_> = dataset
        .images
        .iter()
        .map(|img| by_id.remove(&img.image_id).unwrap_or_default())
        .collect();
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Artifact(format!(
            "proposals for unknown image {extra}"
        )));
    }
    let aggregation = if pooled {
        Aggregation::Pooled
    } else {
        Aggregation::ImageMean
    };
    let report = eval::evaluate(
        &dataset,
        &proposals,
        set.task,
        &stats.predicate_totals(),
        aggregation,
        &set.mode.to_string(),
        ArtifactMeta::new(&dataset.vocab, seed),
    )?;
    if let Some(out) = &args.out {
        report.write_json(out)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

/// Parses `args`, runs the command and maps failure to a nonzero exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    main_with_args(std::env::args_os())
}
