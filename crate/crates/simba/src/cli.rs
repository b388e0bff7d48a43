//! The `simba` command-line interface.
//!
//! Subcommands: `train`, `eval`, `stats`, `synth`, `cmd`. Flags override
//! config-file values; exit codes are 0 (ok), 1 (usage), 2 (data error),
//! 3 (numeric failure).

use crate::config::{DatasetSpec, RunConfig};
use crate::data::{write_tu_dataset, SynthConfig};
use crate::error::{Result, SimbaError};
use crate::metrics::{MetricsReport, METRICS_SCHEMA_VERSION};
use crate::model::SimbaModel;
use crate::train::{
    cmd_head_tail_analysis, dataset_stats, evaluate, load_dataset, train,
};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "simba",
    version,
    about = "Size-imbalanced graph classification: size-invariant encoding, \
             graphs-to-graph smoothing and energy-based re-weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and report test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Print dataset statistics (size, classes, SIR, head count).
    Stats(StatsArgs),
    /// Generate a synthetic power-law dataset in TUDataset format.
    Synth(SynthArgs),
    /// Head/tail CMD analysis of encoder embeddings from a checkpoint.
    Cmd(CmdArgs),
}

#[derive(Args, Debug, Default)]
struct CommonTrainFlags {
    /// Dataset directory or synth:... recipe.
    #[arg(long)]
    dataset: Option<String>,
    /// GNN backbone: gin, gcn or sage.
    #[arg(long)]
    backbone: Option<String>,
    /// Neighbors per graph in the kNN abstraction.
    #[arg(long)]
    k: Option<usize>,
    /// Propagation hops over the abstraction.
    #[arg(long = "g2g-hops")]
    g2g_hops: Option<usize>,
    /// Energy mixing weight in (0,1).
    #[arg(long)]
    lambda: Option<f64>,
    /// Energy propagation steps.
    #[arg(long = "t-steps")]
    t_steps: Option<usize>,
    #[arg(long = "eps-min")]
    eps_min: Option<f64>,
    #[arg(long = "eps-max")]
    eps_max: Option<f64>,
    #[arg(long = "hidden-dim")]
    hidden_dim: Option<usize>,
    #[arg(long = "attention-dim")]
    attention_dim: Option<usize>,
    #[arg(long = "mlp-hidden")]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    /// Train/val/test ratio, e.g. 6:2:2.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long = "head-fraction")]
    head_fraction: Option<f64>,
    /// Explicit head count override.
    #[arg(long = "head-count")]
    head_count: Option<usize>,
    /// Ablation: no-g2g or no-rew.
    #[arg(long)]
    ablate: Option<String>,
    /// Evaluate with a joint train+eval abstraction.
    #[arg(long)]
    transductive: bool,
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the metrics report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonTrainFlags {
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let default_dataset = cfg.dataset.clone();
        if let Some(path) = &self.config {
            cfg.apply_config_file(path)?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = DatasetSpec::parse(d)?;
        }
        if let Some(b) = &self.backbone {
            cfg.encoder.backbone = b.parse()?;
        }
        if let Some(v) = self.k {
            cfg.g2g.k = v;
        }
        if let Some(v) = self.g2g_hops {
            cfg.g2g.hops = v;
        }
        if let Some(v) = self.lambda {
            cfg.rew.lambda = v;
        }
        if let Some(v) = self.t_steps {
            cfg.rew.steps = v;
        }
        if let Some(v) = self.eps_min {
            cfg.rew.eps_min = v;
        }
        if let Some(v) = self.eps_max {
            cfg.rew.eps_max = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.encoder.hidden_dim = v;
        }
        if let Some(v) = self.attention_dim {
            cfg.encoder.attention_dim = v;
        }
        if let Some(v) = self.mlp_hidden {
            cfg.encoder.mlp_hidden = v;
        }
        if let Some(v) = self.layers {
            cfg.encoder.layers = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optim.weight_decay = v;
        }
        if let Some(r) = &self.ratios {
            cfg.set_key("ratios", r)?;
        }
        if let Some(v) = self.head_fraction {
            cfg.head_fraction = v;
        }
        if let Some(v) = self.head_count {
            cfg.head_count = Some(v);
        }
        if let Some(a) = &self.ablate {
            cfg.ablation = a.parse()?;
        }
        if self.transductive {
            cfg.g2g.transductive = true;
        }
        if self.dataset.is_none() && cfg.dataset == default_dataset && self.config.is_none() {
            return Err(SimbaError::Argument(
                "no dataset given: pass --dataset or a --config file".into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainFlags,
    /// Save the best-validation checkpoint here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-epoch energy trace CSV.
    #[arg(long = "energy-trace")]
    energy_trace: Option<PathBuf>,
    /// Edge dump of the last abstraction built.
    #[arg(long = "g2g-dump")]
    g2g_dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonTrainFlags,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split to evaluate: train, val or test. Splits are reconstructed
    /// from the dataset, ratios and seed, so reuse the training seed.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Dataset directory or synth:... recipe.
    #[arg(long)]
    dataset: String,
    #[arg(long = "head-fraction")]
    head_fraction: Option<f64>,
    #[arg(long = "head-count")]
    head_count: Option<usize>,
    /// Write the statistics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for the TUDataset files.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Dataset name (file prefix).
    #[arg(long, default_value = "SYNTH")]
    name: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    min: usize,
    #[arg(long, default_value_t = 200)]
    max: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    motif: usize,
    #[arg(long, default_value_t = 0.5)]
    extra: f64,
    #[arg(long = "noise-dims", default_value_t = 0)]
    noise_dims: usize,
    #[arg(long = "noise-std", default_value_t = 0.0)]
    noise_std: f64,
    /// Fraction of structurally ambiguous graphs with coin-flip labels.
    #[arg(long, default_value_t = 0.0)]
    confusers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CmdArgs {
    /// Dataset directory or synth:... recipe.
    #[arg(long)]
    dataset: String,
    /// Trained checkpoint providing the encoder.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of central moments.
    #[arg(long, default_value_t = 5)]
    moments: usize,
    #[arg(long = "sample-size", default_value_t = 300)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.build_config()?;
    cfg.energy_trace = args.energy_trace.clone();
    cfg.g2g_dump = args.g2g_dump.clone();
    let outcome = train(&cfg)?;
    let r = &outcome.report;
    println!(
        "test accuracy {:.4}  macro-F1 {:.4}  head {}  tail {}  (best epoch {}, {:.1}s)",
        r.accuracy,
        r.macro_f1,
        r.head_accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.tail_accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.best_epoch,
        r.wall_clock_secs,
    );
    if let Some(path) = &args.checkpoint {
        outcome.model.save(path)?;
        println!("checkpoint written to {}", path.display());
    }
    if let Some(path) = &args.common.out {
        write_json(path, r)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.build_config()?;
    let mut set = load_dataset(&cfg.dataset)?;
    if let Some(t) = cfg.head_count {
        set.set_head_count(t)?;
    } else {
        set.set_head_fraction(cfg.head_fraction)?;
    }
    let splits = set.stratified_split(cfg.ratios, cfg.seed)?;
    set.assign_splits(splits)?;
    let splits = set.splits().expect("just assigned");
    let eval_ids = match args.split.as_str() {
        "train" => splits.train.clone(),
        "val" => splits.val.clone(),
        "test" => splits.test.clone(),
        other => {
            return Err(SimbaError::Argument(format!(
                "unknown split {other:?} (expected train, val or test)"
            )))
        }
    };
    let model = SimbaModel::load(&args.checkpoint)?;
    let summary = evaluate(
        &model,
        &set,
        &eval_ids,
        &splits.train,
        &cfg.g2g,
        cfg.ablation,
    )?;
    println!(
        "{} accuracy {:.4}  macro-F1 {:.4}  head {}  tail {}",
        args.split,
        summary.accuracy,
        summary.macro_f1,
        summary.head_accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
        summary.tail_accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    if let Some(path) = &args.common.out {
        let report = MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION.to_string(),
            accuracy: summary.accuracy,
            macro_f1: summary.macro_f1,
            head_accuracy: summary.head_accuracy,
            tail_accuracy: summary.tail_accuracy,
            sir: set.compute_sir()?,
            loss_curve: Vec::new(),
            val_accuracy_curve: Vec::new(),
            best_epoch: 0,
            seed: cfg.seed,
            wall_clock_secs: 0.0,
            config: serde_json::to_value(&cfg)?,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_stats(args: &StatsArgs) -> Result<()> {
    let spec = DatasetSpec::parse(&args.dataset)?;
    let mut set = load_dataset(&spec)?;
    if let Some(t) = args.head_count {
        set.set_head_count(t)?;
    } else if let Some(f) = args.head_fraction {
        set.set_head_fraction(f)?;
    }
    let name = match &spec {
        DatasetSpec::Dir { name, .. } => name.clone(),
        DatasetSpec::Synth(_) => "synthetic".to_string(),
    };
    let stats = dataset_stats(&set, &name)?;
    println!(
        "{}: N={} classes={} avg|V|={:.2} avg|E|={:.2} attrs={} T={} SIR={:.3} (log2 {:.3})",
        stats.name,
        stats.graphs,
        stats.classes,
        stats.avg_nodes,
        stats.avg_edges,
        stats.feature_dim,
        stats.head_count,
        stats.sir,
        stats.sir_log2,
    );
    if let Some(path) = &args.out {
        write_json(path, &stats)?;
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_graphs: args.n,
        size_exponent: args.alpha,
        size_range: (args.min, args.max),
        num_classes: args.classes,
        motif_size: args.motif,
        extra_edge_factor: args.extra,
        feature_noise_dims: args.noise_dims,
        feature_noise_std: args.noise_std,
        confuser_fraction: args.confusers,
        seed: args.seed,
    };
    let set = crate::data::synth_powerlaw_set(&cfg)?;
    write_tu_dataset(&args.out_dir, &args.name, &set)?;
    println!(
        "wrote {} graphs ({} classes, SIR {:.3}) to {}",
        set.len(),
        set.num_classes(),
        set.compute_sir()?,
        args.out_dir.display()
    );
    Ok(())
}

fn run_cmd(args: &CmdArgs) -> Result<()> {
    let spec = DatasetSpec::parse(&args.dataset)?;
    let set = load_dataset(&spec)?;
    let model = SimbaModel::load(&args.checkpoint)?;
    let analysis = cmd_head_tail_analysis(&model, &set, args.moments, args.sample_size, args.seed)?;
    println!(
        "CMD head vs tail: long-tailed sampling {:.6}, size-balanced sampling {:.6}",
        analysis.cmd_longtail, analysis.cmd_balanced
    );
    if let Some(path) = &args.out {
        write_json(path, &analysis)?;
    }
    Ok(())
}

/// Parse and run; returns the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Stats(args) => run_stats(args),
        Command::Synth(args) => run_synth(args),
        Command::Cmd(args) => run_cmd(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
