//! `binpack`: dataset generation, training, evaluation, export and the
//! built-in self-test.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use binpack_core::datagen::{dataset_checksum, generate, read_dataset, write_dataset, DatasetKind, DatasetSpec};
use binpack_core::geometry::{Dims, ProblemInstance};
use binpack_core::harness::{
    evaluate, evaluate_heuristic, selftest, write_configurations, ExperimentConfig, ExportFormat, HeuristicKind,
    Metric, RunManifest, Variant,
};
use binpack_core::model::{ModelConfig, PolicyModel};
use binpack_core::train::{run_paths, AdamConfig, MetricLog, Trainer, TrainerConfig};
use binpack_tensor::Checkpoint;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "binpack", version, about = "Neural bin packing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file (one JSON instance per line).
    Datagen(DatagenArgs),
    /// Train a policy; writes config, manifest, metric log and checkpoints.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint, or of a non-learned baseline.
    Eval(EvalArgs),
    /// Export packed configurations as JSON or SVG.
    Export(ExportArgs),
    /// Run the geometry, gradient and cut-conservation oracle suites.
    Selftest,
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    match s {
        "2" | "2d" => Ok(Dims::Two),
        "3" | "3d" => Ok(Dims::Three),
        _ => Err(format!("dims must be 2 or 3, got {s:?}")),
    }
}

fn parse_bin(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("bin must look like WxH, got {s:?}"))?;
    let p = |v: &str| v.parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(w)?, p(h)?))
}

fn parse_edges(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("edges must look like A..B, got {s:?}"))?;
    let p = |v: &str| v.parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value = "cut")]
    kind: DatasetKind,
    #[arg(long, value_parser = parse_dims, default_value = "3")]
    dims: Dims,
    /// Bin cross-section `WxH`; 2D bins use `Wx1`.
    #[arg(long, value_parser = parse_bin, default_value = "10x10")]
    bin: (u32, u32),
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Inclusive edge range `A..B` (random datasets; cut datasets use A as the minimum cut).
    #[arg(long, value_parser = parse_edges, default_value = "1..10")]
    edges: (u32, u32),
    /// Length of the block cut datasets are cut from; defaults to W.
    #[arg(long)]
    cut_length: Option<u32>,
}

impl DataArgs {
    fn spec(&self, count: usize, seed: u64) -> DatasetSpec {
        let (w, h) = self.bin;
        let height = if self.dims == Dims::Two { 1 } else { h };
        DatasetSpec {
            kind: self.kind,
            dims: self.dims,
            width: w,
            height,
            n: self.n,
            edge_min: self.edges.0,
            edge_max: self.edges.1,
            count,
            seed,
            cut_length: self.cut_length,
        }
    }
}

#[derive(Args)]
struct DatagenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Full experiment config as JSON; overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a trainer checkpoint (`last.ckpt`).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 4)]
    po_batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Learning-rate multiplier applied after every epoch.
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    /// Clip each update's gradient to this L2 norm.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    cost_scale: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 1000)]
    eval_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollout worker threads; 1 gives the single-threaded mode.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model or trainer checkpoint.
    #[arg(long, required_unless_present = "heuristic")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a non-learned policy instead of a checkpoint.
    #[arg(long, value_parser = parse_heuristic)]
    heuristic: Option<HeuristicKind>,
    #[arg(long)]
    data: PathBuf,
    /// Extra metrics: rr, l, trim.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<Metric>,
    /// Label for the report row.
    #[arg(long, default_value = "model")]
    label: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report row and per-instance outputs as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_heuristic(s: &str) -> Result<HeuristicKind, String> {
    match s {
        "sorted" => Ok(HeuristicKind::Sorted),
        "random" | "random-placement" => Ok(HeuristicKind::RandomPlacement),
        _ => Err(format!("unknown heuristic {s:?}; use sorted or random-placement")),
    }
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "svg")]
    format: ExportFormat,
    /// Export only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::Selftest => run_selftest(),
    }
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let spec = a.data.spec(a.count, a.seed);
    let items = generate(&spec)?;
    write_dataset(&a.out, &items)?;
    println!(
        "wrote {} instances to {} (sha256 {})",
        items.len(),
        a.out.display(),
        dataset_checksum(&a.out)?
    );
    Ok(())
}

fn experiment_from_flags(a: &TrainArgs) -> Result<ExperimentConfig> {
    let dataset = a.data.spec(0, a.seed);
    let eval = a.data.spec(a.eval_size, a.seed.wrapping_add(1_000_003));
    let base_model = ModelConfig::scaled(dataset.dims, dataset.width, dataset.height, a.d);
    let base_trainer = TrainerConfig {
        batch: a.batch,
        po_batch: a.po_batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        cost_scale: a.cost_scale,
        lr_decay: a.lr_decay,
        grad_clip: a.grad_clip,
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        seed: a.seed,
        threads: a.threads,
        ..TrainerConfig::default()
    };
    Ok(ExperimentConfig::assemble(
        a.variant, dataset, eval, &base_model, &base_trainer, a.seed,
    )?)
}

fn train(a: TrainArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (log_path, _, _) = run_paths(&a.out);
    let mut trainer = if let Some(ck) = &a.resume {
        let t = Trainer::load(ck, a.threads).with_context(|| format!("resuming from {}", ck.display()))?;
        println!("resumed at epoch {} step {}", t.epoch, t.step);
        t
    } else {
        let exp = match &a.config {
            Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
            None => experiment_from_flags(&a)?,
        };
        let eval_items = generate(&exp.eval)?;
        let eval_path = a.out.join("eval.jsonl");
        write_dataset(&eval_path, &eval_items)?;
        let eval_set: Vec<ProblemInstance> = eval_items.into_iter().map(|g| g.instance).collect();
        fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&exp)?)?;
        RunManifest::new("train", &exp)?
            .seed("dataset", exp.dataset.seed)
            .seed("eval", exp.eval.seed)
            .seed("model", exp.model_seed)
            .seed("trainer", exp.trainer.seed)
            .dataset("eval", dataset_checksum(&eval_path)?)
            .write(a.out.join("manifest.json"))?;
        let model = PolicyModel::new(exp.model.clone(), exp.model_seed)?;
        Trainer::new(exp.trainer, exp.dataset, eval_set, model)?
    };
    let file = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    let mut log = MetricLog::new(file);
    trainer.run(Some(&a.out), &mut |r| {
        if let Some(u) = r.mean_utility_eval {
            println!(
                "epoch {:>3} step {:>6} train cost {:.4} eval utility {:.4} eta {:.3}{}",
                r.epoch,
                r.step,
                r.mean_cost,
                u,
                r.eta,
                if r.baseline_replaced { " (baseline replaced)" } else { "" }
            );
        }
        log.write(r)
    })?;
    println!(
        "best eval utility {:.4}; outputs in {}",
        trainer.best_utility.unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<PolicyModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(PolicyModel::from_checkpoint(&ck)?)
}

fn load_instances(path: &Path) -> Result<Vec<ProblemInstance>> {
    let items = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    if items.is_empty() {
        bail!("{} holds no instances", path.display());
    }
    Ok(items.into_iter().map(|g| g.instance).collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let instances = load_instances(&a.data)?;
    let dataset = a.data.display().to_string();
    let (row, outputs) = match (&a.heuristic, &a.checkpoint) {
        (Some(kind), _) => evaluate_heuristic(*kind, &instances, &a.metrics, &dataset, a.seed)?,
        (None, Some(ck)) => {
            let model = load_model(ck)?;
            let (row, outputs, _) = evaluate(&model, &instances, &a.metrics, &a.label, &dataset)?;
            (row, outputs)
        }
        (None, None) => bail!("pass --checkpoint or --heuristic"),
    };
    println!("{row}");
    if let Some(out) = &a.out {
        let doc = serde_json::json!({ "report": row, "instances": outputs });
        fs::write(out, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let mut instances = load_instances(&a.data)?;
    if let Some(n) = a.limit {
        instances.truncate(n);
    }
    let (_, _, configs) = evaluate(&model, &instances, &[], "export", "")?;
    let paths = write_configurations(&configs, a.format, &a.out)?;
    println!("wrote {} file(s) to {}", paths.len(), a.out.display());
    Ok(())
}

fn run_selftest() -> Result<()> {
    let checks = selftest();
    for c in &checks {
        println!("{} {:<18} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}
