//! REINFORCE with a greedy-rollout baseline and prioritized oversampling.

use std::io::Write;
use std::path::{Path, PathBuf};

use binpack_tensor::Checkpoint;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::paired_t_test;
use super::optim::{AdamConfig, OptimizerState};
use super::rollout::{rollout, DecodeMode, EpisodeRecord};
use super::stats::{positive_part, RunningStats};
use crate::datagen::{generate_one, instance_rng, DatasetSpec, InstanceRecord};
use crate::error::{Error, Result};
use crate::geometry::ProblemInstance;
use crate::model::PolicyModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub batch: usize,
    pub po_batch: usize,
    /// Prioritized oversampling on or off.
    pub po: bool,
    pub adam: AdamConfig,
    pub cost_scale: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub alpha: f64,
    /// Greedy rollout of the frozen baseline model; otherwise the batch-mean
    /// cost is the baseline.
    pub greedy_baseline: bool,
    /// Runs without oversampling get `steps_per_epoch * po_batch / batch`
    /// extra steps per epoch so both see the same number of episodes.
    pub parity: bool,
    pub stats_beta: f64,
    /// Rescales each update's gradient to at most this L2 norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Learning rate multiplier applied once per completed epoch.
    #[serde(default = "unit")]
    pub lr_decay: f64,
    /// Beam-search re-learning of oversampled instances; not implemented and
    /// rejected by validation.
    pub beam_relearn: bool,
    pub seed: u64,
    /// Worker threads for rollouts; `Some(1)` is the single-threaded mode.
    pub threads: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            po_batch: 4,
            po: true,
            adam: AdamConfig::default(),
            cost_scale: 3.0,
            epochs: 10,
            steps_per_epoch: 100,
            alpha: 0.05,
            greedy_baseline: true,
            parity: true,
            stats_beta: 0.95,
            grad_clip: None,
            lr_decay: 1.0,
            beam_relearn: false,
            seed: 0,
            threads: None,
        }
    }
}

fn unit() -> f64 {
    1.0
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch == 0 || self.steps_per_epoch == 0 {
            return bad("batch and steps per epoch must be positive");
        }
        if self.po && (self.po_batch == 0 || self.po_batch > self.batch || self.batch % self.po_batch != 0) {
            return bad("oversampling batch must divide the batch");
        }
        if self.beam_relearn {
            return bad("beam-search re-learning is not supported");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate decay must lie in (0, 1]");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        if !(0.0..1.0).contains(&self.stats_beta) || !(0.0..1.0).contains(&self.alpha) {
            return bad("stats beta and alpha must lie in [0, 1)");
        }
        Ok(())
    }

    /// Steps per epoch after the parity adjustment.
    pub fn effective_steps(&self) -> usize {
        if self.parity && !self.po {
            self.steps_per_epoch + (self.steps_per_epoch * self.po_batch + self.batch / 2) / self.batch
        } else {
            self.steps_per_epoch
        }
    }
}

/// Raw inputs of the running-statistics update of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsUpdate {
    pub pos_mean: f64,
    pub pos_count: f64,
    /// Present on steps that collected oversampling candidates.
    pub po_mean: Option<f64>,
    pub po_count: f64,
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: u64,
    pub mean_cost: f64,
    /// Set on the last step of an epoch.
    pub mean_utility_eval: Option<f64>,
    pub eta: f64,
    pub baseline_replaced: bool,
    pub aborted_rate: f64,
    pub episodes: u64,
    pub po_relearned: bool,
    /// L2 norm of the main-batch gradient before clipping.
    #[serde(default)]
    pub grad_norm: f64,
    pub update: StatsUpdate,
    pub stats: RunningStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoEntry {
    instance: InstanceRecord,
    eta: f64,
}

/// Serializable trainer bookkeeping stored in checkpoint metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    config: TrainerConfig,
    data: DatasetSpec,
    step: u64,
    epoch: usize,
    episodes: u64,
    stats: RunningStats,
    best_utility: Option<f64>,
    baseline_eval_costs: Vec<f64>,
    po_buffer: Vec<PoEntry>,
    main_t: u64,
    po_t: u64,
}

pub struct Trainer {
    pub config: TrainerConfig,
    /// Source of training instances; instance `step * batch + i` is used at
    /// `step`, so the stream never repeats.
    pub data: DatasetSpec,
    pub eval_set: Vec<ProblemInstance>,
    pub model: PolicyModel,
    pub baseline: PolicyModel,
    pub main_opt: OptimizerState,
    pub po_opt: OptimizerState,
    pub stats: RunningStats,
    pub step: u64,
    pub epoch: usize,
    pub episodes: u64,
    pub best_utility: Option<f64>,
    pub best_model: Option<PolicyModel>,
    baseline_eval_costs: Vec<f64>,
    po_buffer: Vec<(ProblemInstance, f64)>,
    pool: rayon::ThreadPool,
}

const TAG_SAMPLE: u64 = 0;
const TAG_RELEARN: u64 = 1;

/// Reproducible stream for episode `index` of `step`.
fn episode_rng(seed: u64, step: u64, index: usize, tag: u64) -> ChaCha8Rng {
    instance_rng(seed ^ 0x9e37_79b9_7f4a_7c15, (step << 24) | ((index as u64) << 2) | tag)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Greedy rollouts of `model` over `instances`, in input order.
pub fn evaluate_greedy(model: &PolicyModel, instances: &[ProblemInstance]) -> Result<Vec<EpisodeRecord>> {
    instances
        .par_iter()
        .map(|inst| {
            let mut rng = instance_rng(0, 0);
            Ok(rollout(model, inst, DecodeMode::Greedy, false, &mut rng)?.record)
        })
        .collect()
}

struct Sampled {
    record: EpisodeRecord,
    baseline_cost: f64,
    grad: Option<Vec<f32>>,
}

impl Trainer {
    pub fn new(
        config: TrainerConfig,
        data: DatasetSpec,
        eval_set: Vec<ProblemInstance>,
        model: PolicyModel,
    ) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        if eval_set.len() < 2 {
            return Err(Error::Config("evaluation set needs at least 2 instances".into()));
        }
        let n = model.param_count();
        let pool = build_pool(config.threads)?;
        let baseline = model.clone();
        let baseline_eval_costs = if config.greedy_baseline {
            pool.install(|| evaluate_greedy(&baseline, &eval_set))?
                .iter()
                .map(|r| r.cost)
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            main_opt: OptimizerState::new(config.adam, n),
            po_opt: OptimizerState::new(config.adam, n),
            stats: RunningStats::new(config.stats_beta),
            config,
            data,
            eval_set,
            baseline,
            model,
            step: 0,
            epoch: 0,
            episodes: 0,
            best_utility: None,
            best_model: None,
            baseline_eval_costs,
            po_buffer: Vec::new(),
            pool,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn po_buffer_len(&self) -> usize {
        self.po_buffer.len()
    }

    /// Sampled rollouts with gradients plus their baseline costs.
    fn sample_batch(&self, instances: &[ProblemInstance], tag: u64) -> Result<Vec<Sampled>> {
        let greedy = self.config.greedy_baseline;
        let (model, baseline) = (&self.model, &self.baseline);
        let (seed, step) = (self.config.seed, self.step);
        let mut out: Vec<Sampled> = self.pool.install(|| {
            instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut rng = episode_rng(seed, step, i, tag);
                    let baseline_cost = if greedy {
                        rollout(baseline, inst, DecodeMode::Greedy, false, &mut rng)?.record.cost
                    } else {
                        0.0
                    };
                    let r = rollout(model, inst, DecodeMode::Sample, true, &mut rng)?;
                    Ok(Sampled {
                        record: r.record,
                        baseline_cost,
                        grad: r.grad,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        if !greedy {
            let m = mean(&out.iter().map(|s| s.record.cost).collect::<Vec<_>>());
            for s in &mut out {
                s.baseline_cost = m;
            }
        }
        Ok(out)
    }

    /// `Σ coef_i · g_i`, summed in index order.
    fn combine(&self, batch: &[Sampled], coef: &[f64]) -> Vec<f32> {
        let mut total = vec![0.0f64; self.model.param_count()];
        for (s, &c) in batch.iter().zip(coef) {
            if c == 0.0 {
                continue;
            }
            if let Some(g) = &s.grad {
                for (t, &x) in total.iter_mut().zip(g) {
                    *t += c * x as f64;
                }
            }
        }
        total.into_iter().map(|x| x as f32).collect()
    }

    /// Clips and applies `grad`; returns its norm before clipping.
    fn apply(&mut self, mut grad: Vec<f32>, po: bool) -> Result<f64> {
        let norm = grad.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
        if let Some(c) = self.config.grad_clip {
            if norm > c {
                let k = (c / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        let lr = self.config.adam.lr * self.config.lr_decay.powi(self.epoch as i32);
        self.main_opt.config.lr = lr;
        self.po_opt.config.lr = lr;
        let mut flat = self.model.flat();
        if po {
            self.po_opt.step(&mut flat, &grad)?;
        } else {
            self.main_opt.step(&mut flat, &grad)?;
        }
        self.model.set_flat(&flat)?;
        Ok(norm)
    }

    /// One minibatch update, with oversampling bookkeeping and, when the
    /// buffer fills, one re-learning update.
    pub fn train_step(&mut self) -> Result<MetricRecord> {
        let b = self.config.batch;
        let instances = (0..b)
            .map(|i| Ok(generate_one(&self.data, self.step as usize * b + i)?.instance))
            .collect::<Result<Vec<_>>>()?;
        let batch = self.sample_batch(&instances, TAG_SAMPLE)?;
        let adv: Vec<f64> = batch.iter().map(|s| s.record.cost - s.baseline_cost).collect();
        if let Some(i) = adv.iter().position(|a| !a.is_finite()) {
            return Err(Error::Contract(format!("non-finite advantage for episode {i}")));
        }
        let eta = self.stats.eta();
        let mut weight = vec![1.0; b];
        let (pos_mean, pos_count) = positive_part(&adv);
        let mut update = StatsUpdate {
            pos_mean,
            pos_count,
            po_mean: None,
            po_count: 0.0,
        };
        if self.config.po {
            let mut idx: Vec<usize> = (0..b).collect();
            idx.sort_by(|&i, &j| adv[j].total_cmp(&adv[i]).then(i.cmp(&j)));
            let chosen = &idx[..self.config.po_batch];
            for &i in chosen {
                weight[i] = eta;
                self.po_buffer.push((instances[i].clone(), eta));
            }
            let po_mean = mean(&chosen.iter().map(|&i| adv[i]).collect::<Vec<_>>());
            update.po_mean = Some(po_mean);
            update.po_count = chosen.len() as f64;
        }
        let scale = self.config.cost_scale / b as f64;
        let coef: Vec<f64> = (0..b).map(|i| scale * weight[i] * adv[i]).collect();
        let grad_norm = self.apply(self.combine(&batch, &coef), false)?;

        self.stats.update_positive(update.pos_mean, update.pos_count);
        if let Some(m) = update.po_mean {
            self.stats.update_po(m, update.po_count);
        }
        self.episodes += b as u64;

        let po_relearned = self.config.po && self.po_buffer.len() >= b;
        if po_relearned {
            self.po_relearn()?;
        }
        let costs: Vec<f64> = batch.iter().map(|s| s.record.cost).collect();
        let rec = MetricRecord {
            epoch: self.epoch,
            step: self.step,
            mean_cost: mean(&costs),
            mean_utility_eval: None,
            eta,
            baseline_replaced: false,
            aborted_rate: batch.iter().filter(|s| s.record.aborted).count() as f64 / b as f64,
            episodes: self.episodes,
            po_relearned,
            grad_norm,
            update,
            stats: self.stats,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Unweighted REINFORCE gradient on `instances` at the current step,
    /// as applied when no sample is oversampled. Does not update anything.
    pub fn policy_gradient(&self, instances: &[ProblemInstance]) -> Result<Vec<f32>> {
        let batch = self.sample_batch(instances, TAG_SAMPLE)?;
        let scale = self.config.cost_scale / batch.len().max(1) as f64;
        let coef: Vec<f64> = batch
            .iter()
            .map(|s| scale * (s.record.cost - s.baseline_cost))
            .collect();
        Ok(self.combine(&batch, &coef))
    }

    /// Fresh sampled rollouts on the buffered instances, weighted `1 - η`,
    /// applied with the oversampling optimizer. Empties the buffer.
    fn po_relearn(&mut self) -> Result<()> {
        let entries = std::mem::take(&mut self.po_buffer);
        let instances: Vec<ProblemInstance> = entries.iter().map(|(i, _)| i.clone()).collect();
        let batch = self.sample_batch(&instances, TAG_RELEARN)?;
        let scale = self.config.cost_scale / batch.len() as f64;
        let coef: Vec<f64> = batch
            .iter()
            .zip(&entries)
            .map(|(s, (_, eta))| scale * (1.0 - eta) * (s.record.cost - s.baseline_cost))
            .collect();
        self.episodes += batch.len() as u64;
        self.apply(self.combine(&batch, &coef), true)?;
        Ok(())
    }

    /// Greedy evaluation, baseline test and best-model retention. Returns
    /// the mean evaluation utility and whether the baseline was replaced.
    pub fn end_epoch(&mut self) -> Result<(f64, bool)> {
        let records = self.pool.install(|| evaluate_greedy(&self.model, &self.eval_set))?;
        let costs: Vec<f64> = records.iter().map(|r| r.cost).collect();
        let utility = 1.0 - mean(&costs);
        let mut replaced = false;
        if self.config.greedy_baseline {
            let test = paired_t_test(&costs, &self.baseline_eval_costs, self.config.alpha)?;
            if test.replace {
                self.baseline = self.model.clone();
                self.baseline_eval_costs = costs;
                replaced = true;
            }
        }
        if self.best_utility.is_none_or(|b| utility > b) {
            self.best_utility = Some(utility);
            self.best_model = Some(self.model.clone());
        }
        self.epoch += 1;
        Ok((utility, replaced))
    }

    /// Trains the remaining epochs, passing every metric record to `sink`.
    /// With `out_dir`, writes `last.ckpt` after each epoch and `best.ckpt`
    /// whenever the evaluation utility improves.
    pub fn run(&mut self, out_dir: Option<&Path>, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let steps = self.config.effective_steps() as u64;
            let first = self.epoch as u64 * steps;
            while self.step < first + steps {
                let mut rec = self.train_step()?;
                if self.step == first + steps {
                    let before = self.best_utility;
                    let (u, replaced) = self.end_epoch()?;
                    rec.mean_utility_eval = Some(u);
                    rec.baseline_replaced = replaced;
                    if let Some(dir) = out_dir {
                        if self.best_utility != before {
                            if let Some(best) = &self.best_model {
                                best.to_checkpoint()?.save(dir.join("best.ckpt"))?;
                            }
                        }
                        self.save(dir.join("last.ckpt"))?;
                    }
                }
                sink(&rec)?;
            }
        }
        Ok(())
    }

    /// Model, baseline, both optimizers, statistics, counters and the
    /// oversampling buffer. Episode randomness is keyed by `(seed, step)`,
    /// so restoring the counters restores the random streams.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let state = TrainerState {
            config: self.config.clone(),
            data: self.data.clone(),
            step: self.step,
            epoch: self.epoch,
            episodes: self.episodes,
            stats: self.stats,
            best_utility: self.best_utility,
            baseline_eval_costs: self.baseline_eval_costs.clone(),
            po_buffer: self
                .po_buffer
                .iter()
                .map(|(inst, eta)| PoEntry {
                    instance: InstanceRecord::from_instance(inst),
                    eta: *eta,
                })
                .collect(),
            main_t: self.main_opt.t,
            po_t: self.po_opt.t,
        };
        let eval: Vec<InstanceRecord> = self.eval_set.iter().map(InstanceRecord::from_instance).collect();
        let mut ck = Checkpoint::new(serde_json::json!({
            "model": self.model.config,
            "trainer": state,
            "eval_set": eval,
        }));
        self.model.write_to(&mut ck, "");
        self.baseline.write_to(&mut ck, "baseline/");
        if let Some(best) = &self.best_model {
            best.write_to(&mut ck, "best/");
        }
        self.main_opt.write_to(&mut ck, "opt.main/");
        self.po_opt.write_to(&mut ck, "opt.po/");
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint, threads: Option<usize>) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint has no {k} entry")))
        };
        let mut state: TrainerState = serde_json::from_value(meta("trainer")?)?;
        state.config.threads = threads.or(state.config.threads);
        let eval: Vec<InstanceRecord> = serde_json::from_value(meta("eval_set")?)?;
        let eval_set = eval
            .into_iter()
            .map(|r| Ok(r.into_generated()?.instance))
            .collect::<Result<Vec<_>>>()?;
        let model = PolicyModel::from_checkpoint(ck)?;
        let cfg = model.config.clone();
        let n = model.param_count();
        let baseline = PolicyModel::read_from(cfg.clone(), ck, "baseline/")?;
        let best_model = match state.best_utility {
            Some(_) => Some(PolicyModel::read_from(cfg, ck, "best/")?),
            None => None,
        };
        let po_buffer = state
            .po_buffer
            .into_iter()
            .map(|e| Ok((e.instance.into_generated()?.instance, e.eta)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            main_opt: OptimizerState::read_from(state.config.adam, state.main_t, ck, "opt.main/", n)?,
            po_opt: OptimizerState::read_from(state.config.adam, state.po_t, ck, "opt.po/", n)?,
            pool: build_pool(state.config.threads)?,
            config: state.config,
            data: state.data,
            eval_set,
            model,
            baseline,
            stats: state.stats,
            step: state.step,
            epoch: state.epoch,
            episodes: state.episodes,
            best_utility: state.best_utility,
            best_model,
            baseline_eval_costs: state.baseline_eval_costs,
            po_buffer,
        })
    }

    pub fn load(path: impl AsRef<Path>, threads: Option<usize>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, threads)
    }
}

/// Appends metric records as JSON lines.
pub struct MetricLog<W: Write> {
    out: W,
}

impl<W: Write> MetricLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_metric_log(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Recomputes the running statistics from the logged raw updates and
/// returns the largest absolute deviation from the logged values (including
/// `η`), and
/// whether every logged `η` lies in `[0.5, 1]`.
pub fn replay_stats(records: &[MetricRecord], beta: f64) -> (f64, bool) {
    let mut s = RunningStats::new(beta);
    let mut worst = 0.0f64;
    let mut eta_ok = true;
    for r in records {
        eta_ok &= (0.5..=1.0).contains(&r.eta);
        let mut worst_step = (r.eta - s.eta()).abs();
        s.update_positive(r.update.pos_mean, r.update.pos_count);
        if let Some(m) = r.update.po_mean {
            s.update_po(m, r.update.po_count);
        }
        let d = |a: f64, b: f64| (a - b).abs();
        worst_step = worst_step
            .max(d(s.a_pos, r.stats.a_pos))
            .max(d(s.b_pos, r.stats.b_pos))
            .max(d(s.b_po, r.stats.b_po))
            .max(d(s.a_po.unwrap_or(0.0), r.stats.a_po.unwrap_or(0.0)));
        if s.a_po.is_some() != r.stats.a_po.is_some() {
            worst_step = f64::INFINITY;
        }
        worst = worst.max(worst_step);
    }
    (worst, eta_ok)
}

/// Default output file names inside a run directory.
pub fn run_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join("metrics.jsonl"), dir.join("last.ckpt"), dir.join("best.ckpt"))
}
