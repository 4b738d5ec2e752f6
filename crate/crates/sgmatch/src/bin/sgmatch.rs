//! Command-line front end: `gen`, `train`, `eval`, and `retrieve`
//! subcommands over the library pipeline. Flags win over `--config` file
//! values; every command is deterministic given its arguments and inputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use sgmatch::config::{Mining, ModelConfig, ScoreMode, TrainConfig, TripletFeatureMode};
use sgmatch::data::{gen_synthetic, load_dataset, save_dataset, GenConfig, PairedDataset, Split, Vocab};
use sgmatch::eval::{ground_truth_reports, rank_all, ranked_candidates, report, Direction};
use sgmatch::params::{load_checkpoint, save_checkpoint, Checkpoint};
use sgmatch::pipeline::encode_corpus;
use sgmatch::score::total_score;
use sgmatch::train::{train, TrainData};
use sgmatch::{Error, Result};

#[derive(Parser)]
#[command(name = "sgmatch", about = "Scene-graph matching for image-text retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (train/val/test + vocabulary files).
    Gen(GenArgs),
    /// Train a model and write best/last checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write Recall@K reports.
    Eval(EvalArgs),
    /// Rank candidates for a single query with per-part score breakdown.
    Retrieve(RetrieveArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for train.jsonl / val.jsonl / test.jsonl / vocab.json.
    #[arg(long)]
    out: PathBuf,
    /// Training pairs to generate.
    #[arg(long, default_value_t = 64)]
    pairs: usize,
    /// Validation pairs (default: pairs / 4, at least 2).
    #[arg(long)]
    val_pairs: Option<usize>,
    /// Test pairs (default: same as validation).
    #[arg(long)]
    test_pairs: Option<usize>,
    /// Generator seed (mandatory for reproducibility).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    captions: usize,
    /// Width of the precomputed image features (d_I).
    #[arg(long, default_value_t = 32)]
    feat_dim: usize,
    #[arg(long, default_value_t = 16)]
    object_categories: usize,
    #[arg(long, default_value_t = 8)]
    predicate_categories: usize,
    /// Vocabulary frequency threshold.
    #[arg(long, default_value_t = 4)]
    threshold: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (train.jsonl, optional val.jsonl, vocab.json).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// Training seed (mandatory for reproducibility).
    #[arg(long)]
    seed: u64,
    /// Key=value config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Dimensions d_W,d_I,d_F,d (default desk scale 16,32,32,24).
    #[arg(long, conflicts_with = "paper_dims")]
    dims: Option<String>,
    /// Use the full-scale dimensions 300,2048,2048,1024.
    #[arg(long)]
    paper_dims: bool,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Resume from a previous last.ckpt; epochs counts the total target.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Early-stopping patience in epochs (0 disables).
    #[arg(long)]
    patience: Option<usize>,
    /// Global gradient-norm clip (off unless set).
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    mining: Option<String>,
    #[arg(long)]
    score_mode: Option<String>,
    #[arg(long)]
    triplet_feature: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    ckpt: PathBuf,
    /// Report directory (metrics.txt, metrics.tsv, pair_scores.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Recall cutoffs.
    #[arg(long, default_value = "1,5,10")]
    k: String,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    ckpt: PathBuf,
    /// Image id (image_to_text) or caption id like img00003#2 (text_to_image).
    #[arg(long)]
    query: String,
    #[arg(long, default_value = "text_to_image")]
    direction: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Retrieve(args) => cmd_retrieve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

// ── key=value config file; flags win ────────────────────────────────────

struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key = value",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {key:?} = {raw:?}: {e}"))),
        }
    }
}

fn parse_dims(spec: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--dims expects d_W,d_I,d_F,d: {e}")))?;
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "--dims expects exactly 4 values, got {}",
            parts.len()
        )));
    }
    Ok((parts[0], parts[1], parts[2], parts[3]))
}

fn parse_ks(spec: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--k expects a comma list: {e}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("--k values must be >= 1".into()));
    }
    Ok(ks)
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, raw: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.replace('-', "_")))
        .map_err(|_| Error::Config(format!("unknown {what}: {raw:?}")))
}

// ── gen ─────────────────────────────────────────────────────────────────

fn cmd_gen(args: GenArgs) -> Result<()> {
    let val = args.val_pairs.unwrap_or((args.pairs / 4).max(2));
    let test = args.test_pairs.unwrap_or(val);
    let cfg = GenConfig {
        n_train: args.pairs,
        n_val: val,
        n_test: test,
        seed: args.seed,
        feat_dim: args.feat_dim,
        n_object_categories: args.object_categories,
        n_predicate_categories: args.predicate_categories,
        captions_per_image: args.captions,
        vocab_threshold: args.threshold,
        noise: args.noise,
        ..GenConfig::default()
    };
    let corpus = gen_synthetic(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    save_dataset(&corpus.train, &args.out.join("train.jsonl"))?;
    save_dataset(&corpus.val, &args.out.join("val.jsonl"))?;
    save_dataset(&corpus.test, &args.out.join("test.jsonl"))?;
    corpus.vocab.save(&args.out.join("vocab.json"))?;
    println!(
        "wrote {} train / {} val / {} test pairs (vocab {}) to {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        args.out.display()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn load_split(dir: &Path, split: Split, vocab: &Vocab) -> Result<PairedDataset> {
    load_dataset(&dir.join(format!("{split}.jsonl")), vocab, split)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    init_threads(args.threads)?;
    let file = FileConfig::load(args.config.as_deref())?;

    let vocab = Vocab::load(&args.data.join("vocab.json"))?;
    let train_set = load_split(&args.data, Split::Train, &vocab)?;
    let val_path = args.data.join("val.jsonl");
    let val_set = if val_path.exists() {
        Some(load_split(&args.data, Split::Val, &vocab)?)
    } else {
        None
    };

    let dims_spec = match (&args.dims, args.paper_dims) {
        (Some(d), _) => Some(d.clone()),
        (None, true) => Some("300,2048,2048,1024".into()),
        (None, false) => file.get::<String>("dims")?,
    };
    let mut model_cfg = ModelConfig::desk(
        vocab.len(),
        vocab.n_object_categories,
        vocab.n_predicate_categories,
    );
    if let Some(spec) = dims_spec {
        let (dw, di, df, d) = parse_dims(&spec)?;
        model_cfg.word_dim = dw;
        model_cfg.image_feat_dim = di;
        model_cfg.fused_dim = df;
        model_cfg.graph_dim = d;
    }
    if let Some(rate) = args.dropout.or(file.get("dropout")?) {
        model_cfg.dropout = rate;
    }
    if let Some(raw) = args.score_mode.clone().or(file.get("score_mode")?) {
        model_cfg.score_mode = parse_enum::<ScoreMode>("score mode", &raw)?;
    }
    if let Some(raw) = args.triplet_feature.clone().or(file.get("triplet_feature")?) {
        model_cfg.triplet_feature = parse_enum::<TripletFeatureMode>("triplet feature mode", &raw)?;
    }
    if train_set.feat_dim != model_cfg.image_feat_dim {
        return Err(Error::Config(format!(
            "dataset features are {}-dimensional; pass --dims with d_I={}",
            train_set.feat_dim, train_set.feat_dim
        )));
    }

    let patience = args.patience.or(file.get("patience")?).filter(|&p| p > 0);
    let train_cfg = TrainConfig {
        margin: args.margin.or(file.get("margin")?).unwrap_or(0.35),
        batch_size: args.batch.or(file.get("batch")?).unwrap_or(16),
        learning_rate: args.lr.or(file.get("lr")?).unwrap_or(3e-4),
        epochs: args.epochs.or(file.get("epochs")?).unwrap_or(30),
        seed: args.seed,
        grad_clip: args.clip.or(file.get("clip")?),
        mining: match args.mining.clone().or(file.get("mining")?) {
            Some(raw) => parse_enum::<Mining>("mining strategy", &raw)?,
            None => Mining::Hardest,
        },
        patience,
    };

    let resume = match &args.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let resumed_from = resume.as_ref().map(|c| c.epoch).unwrap_or(0);

    let data = TrainData {
        train: &train_set,
        val: val_set.as_ref(),
        vocab: &vocab,
    };
    let outcome = train(&data, &model_cfg, &train_cfg, resume)?;

    std::fs::create_dir_all(&args.out)?;
    save_checkpoint(&outcome.best, &args.out.join("best.ckpt"))?;
    save_checkpoint(&outcome.last, &args.out.join("last.ckpt"))?;

    // resuming appends to the existing log instead of re-running epochs
    let log_path = args.out.join("train_log.jsonl");
    let mut log_text = if resumed_from > 0 && log_path.exists() {
        std::fs::read_to_string(&log_path)?
    } else {
        String::new()
    };
    for entry in &outcome.log {
        log_text.push_str(&serde_json::to_string(entry)?);
        log_text.push('\n');
    }
    sgmatch::util::write_atomic(&log_path, log_text.as_bytes())?;

    let snapshot = serde_json::json!({ "model": model_cfg, "train": train_cfg });
    sgmatch::util::write_atomic(
        &args.out.join("config.json"),
        serde_json::to_string_pretty(&snapshot)?.as_bytes(),
    )?;

    let last = outcome.log.last();
    println!(
        "trained epochs {}..{} (best epoch: {})",
        resumed_from + 1,
        outcome.last.epoch,
        outcome
            .best_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "last".into())
    );
    if let Some(entry) = last {
        println!("final mean batch loss {:.4}", entry.mean_loss);
        if let Some(v) = entry.val {
            println!("validation R@1 {:.3}/{:.3}, R-Sum {:.1}%", v.i2t[0], v.t2i[0], v.r_sum * 100.0);
        }
    }
    println!("checkpoints written to {}", args.out.display());
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────

fn load_for_eval(
    data: &Path,
    split_raw: &str,
    ckpt_path: &Path,
) -> Result<(Checkpoint, Vocab, PairedDataset)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let vocab = Vocab::load(&data.join("vocab.json"))?;
    let split: Split = split_raw.parse()?;
    let dataset = load_split(data, split, &vocab)?;
    if dataset.feat_dim != ckpt.model.image_feat_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {}-dimensional image features, dataset has {}",
            ckpt.model.image_feat_dim, dataset.feat_dim
        )));
    }
    if vocab.len() != ckpt.model.vocab_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained with vocabulary size {}, dataset vocabulary has {}",
            ckpt.model.vocab_size,
            vocab.len()
        )));
    }
    Ok((ckpt, vocab, dataset))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    init_threads(args.threads)?;
    let ks = parse_ks(&args.k)?;
    let (ckpt, _, dataset) = load_for_eval(&args.data, &args.split, &args.ckpt)?;

    let corpus = encode_corpus(&ckpt.params, &dataset, &ckpt.model)?;
    let (i2t, t2i) = rank_all(&corpus, ckpt.model.score_mode)?;
    let metrics = report(&i2t, &t2i, &ks)?;

    std::fs::create_dir_all(&args.out)?;
    sgmatch::util::write_atomic(&args.out.join("metrics.tsv"), metrics.to_machine().as_bytes())?;
    sgmatch::util::write_atomic(&args.out.join("metrics.txt"), metrics.to_table().as_bytes())?;

    let mut dump = String::new();
    for (image, caption, r) in ground_truth_reports(&corpus, ckpt.model.score_mode)? {
        let line = serde_json::json!({ "image": image, "caption": caption, "scores": r });
        dump.push_str(&serde_json::to_string(&line)?);
        dump.push('\n');
    }
    sgmatch::util::write_atomic(&args.out.join("pair_scores.jsonl"), dump.as_bytes())?;

    print!("{}", metrics.to_table());
    println!("reports written to {}", args.out.display());
    Ok(())
}

// ── retrieve ────────────────────────────────────────────────────────────

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    init_threads(args.threads)?;
    let direction: Direction = args.direction.parse()?;
    let (ckpt, _, dataset) = load_for_eval(&args.data, &args.split, &args.ckpt)?;
    let corpus = encode_corpus(&ckpt.params, &dataset, &ckpt.model)?;
    let mode = ckpt.model.score_mode;

    let (candidates, header) = match direction {
        Direction::TextToImage => {
            let q = find_id(&corpus.caption_ids, &args.query)?;
            let scored: Vec<(usize, sgmatch::score::SimilarityReport)> = (0..corpus.images.len())
                .map(|i| total_score(&corpus.images[i], &corpus.captions[q], mode).map(|r| (i, r)))
                .collect::<Result<_>>()?;
            (scored, "image")
        }
        Direction::ImageToText => {
            let q = find_id(&corpus.image_ids, &args.query)?;
            let scored: Vec<(usize, sgmatch::score::SimilarityReport)> = (0..corpus.captions.len())
                .map(|j| total_score(&corpus.images[q], &corpus.captions[j], mode).map(|r| (j, r)))
                .collect::<Result<_>>()?;
            (scored, "caption")
        }
    };

    let mut k = args.k.max(1);
    if k > candidates.len() {
        eprintln!("warning: k={k} exceeds corpus size {}; clamping", candidates.len());
        k = candidates.len();
    }
    let totals: Vec<f64> = candidates.iter().map(|(_, r)| r.s_total).collect();
    let order = ranked_candidates(&totals);

    println!("query {} ({direction})", args.query);
    println!("{:<4} {:<12} {:>9} {:>9} {:>9} {:>9}", "rank", header, "s_node", "s_rel", "s_global", "s_total");
    for (rank, &idx) in order.iter().take(k).enumerate() {
        let (cand, r) = &candidates[idx];
        let id = match direction {
            Direction::TextToImage => &corpus.image_ids[*cand],
            Direction::ImageToText => &corpus.caption_ids[*cand],
        };
        println!(
            "{:<4} {:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            rank + 1,
            id,
            r.s_node,
            r.s_rel,
            r.s_global,
            r.s_total
        );
    }
    Ok(())
}

fn find_id(ids: &[String], query: &str) -> Result<usize> {
    ids.iter()
        .position(|id| id == query)
        .ok_or_else(|| Error::data(format!("unknown id {query:?}")))
}
