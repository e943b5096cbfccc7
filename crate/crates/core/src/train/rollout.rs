//! One episode of the policy against the packing environment.

use binpack_tensor::{Graph, Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{feature_scale, normalize};
use crate::error::{Error, Result};
use crate::geometry::{Configuration, PackState, Placement, ProblemInstance};
use crate::heuristics::sorted_order;
use crate::model::{Net, PolicyModel, SequenceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

/// One decision: the chosen box and placement with their log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub placement: Placement,
    /// Zero when the order is fixed.
    pub logp_s: f64,
    pub logp_p: f64,
    /// Probability the two distributions put on masked actions.
    pub masked_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instance_id: String,
    pub steps: Vec<StepRecord>,
    /// `1 - r_u`, or 1.0 when the episode was aborted.
    pub cost: f64,
    pub aborted: bool,
}

impl EpisodeRecord {
    pub fn utility(&self) -> f64 {
        1.0 - self.cost
    }

    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.logp_s + s.logp_p).sum()
    }

    pub fn configuration(&self, instance: &ProblemInstance) -> Configuration {
        Configuration::new(
            instance.canonicalized(),
            self.steps.iter().map(|s| s.placement).collect(),
        )
    }
}

pub struct Rollout {
    pub record: EpisodeRecord,
    /// Gradient of `Σ log π` over the taken actions, flat in parameter
    /// order; present when requested.
    pub grad: Option<Vec<f32>>,
}

fn probs<T: Scalar>(g: &Graph<T>, logp: Tensor) -> Vec<f64> {
    g.value(logp)
        .iter()
        .map(|&v| if v.is_masked() { 0.0 } else { v.to_f64().exp() })
        .collect()
}

/// Index drawn from `p` (greedy: the first maximum). Zero-probability
/// entries are never returned.
fn choose<R: Rng>(p: &[f64], mode: DecodeMode, rng: &mut R) -> usize {
    let best = || {
        p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0
    };
    match mode {
        DecodeMode::Greedy => best(),
        DecodeMode::Sample => {
            let total: f64 = p.iter().sum();
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut last = None;
            for (i, &v) in p.iter().enumerate() {
                if v > 0.0 {
                    acc += v;
                    last = Some(i);
                    if u < acc {
                        return i;
                    }
                }
            }
            last.unwrap_or_else(best)
        }
    }
}

fn masked_mass(p: &[f64], feasible: impl Fn(usize) -> bool) -> f64 {
    p.iter().enumerate().filter(|(i, _)| !feasible(*i)).map(|(_, v)| v).sum()
}

/// Runs one episode on a tape of element type `T`, using already bound
/// parameters. Returns the record and the summed log-probability tensor.
pub fn run_episode<T: Scalar, R: Rng>(
    net: &Net<'_>,
    model: &PolicyModel,
    g: &mut Graph<T>,
    instance: &ProblemInstance,
    mode: DecodeMode,
    forced: Option<&[Placement]>,
    rng: &mut R,
) -> Result<(EpisodeRecord, Option<Tensor>)> {
    let cfg = &model.config;
    let inst = instance.canonicalized();
    if inst.bin.width != cfg.width || inst.bin.height != cfg.height || inst.dims() != cfg.dims {
        return Err(Error::Config(format!(
            "model is built for a {}x{} bin, instance {} has {}x{}",
            cfg.width, cfg.height, inst.id, inst.bin.width, inst.bin.height
        )));
    }
    let n = inst.len();
    let ctx = net.encode(g, &normalize(&inst))?;
    let scale = feature_scale(&inst);
    let mut st = PackState::new(&inst);
    let order: Option<Vec<usize>> = match (cfg.joint_boxes, cfg.sequence) {
        (Some(_), _) | (None, SequenceMode::Learned) => None,
        (None, SequenceMode::Given) => Some((0..n).collect()),
        (None, SequenceMode::Sorted) => Some(sorted_order(&inst.boxes)),
    };
    let w = cfg.width as usize;
    let actions = cfg.placement_actions();
    let mut steps = Vec::with_capacity(n);
    let mut total: Option<Tensor> = None;
    let mut add_logp = |g: &mut Graph<T>, logp: Tensor, i: usize| -> Result<f64> {
        let picked = g.pick(logp, i)?;
        total = Some(match total {
            Some(t) => g.add(t, picked)?,
            None => picked,
        });
        Ok(g.scalar(picked).to_f64())
    };
    let mut aborted = false;
    for t in 0..n {
        let fr = net.frontier(g, st.frontier_prev(), st.frontier_cur(), scale)?;
        let packed = st.packed_mask().to_vec();
        let forced_step = forced.map(|f| f[t]);
        let (s, a, logp_s, logp_p, mass);
        if cfg.joint_boxes.is_some() {
            let mut feasible = vec![false; n * actions];
            for i in (0..n).filter(|&i| !packed[i]) {
                feasible[i * actions..(i + 1) * actions].copy_from_slice(&st.placement_mask(i));
            }
            if !feasible.iter().any(|&m| m) {
                aborted = true;
                break;
            }
            let logp = net.joint_logp(g, &ctx, &packed, &fr, &feasible)?;
            let p = probs(g, logp);
            let j = match forced_step {
                Some(f) => f.s * actions + f.o * w + f.y as usize,
                None => choose(&p, mode, rng),
            };
            mass = masked_mass(&p, |i| feasible[i]);
            s = j / actions;
            a = j % actions;
            logp_s = 0.0;
            logp_p = add_logp(g, logp, j)?;
        } else {
            let (chosen, ls, seq_mass) = match &order {
                Some(order) => (forced_step.map_or(order[t], |f| f.s), 0.0, 0.0),
                None => {
                    let logp = net.sequence_logp(g, &ctx, &packed, &fr)?;
                    let p = probs(g, logp);
                    let i = forced_step.map_or_else(|| choose(&p, mode, rng), |f| f.s);
                    let m = masked_mass(&p, |k| !packed[k]);
                    (i, add_logp(g, logp, i)?, m)
                }
            };
            s = chosen;
            let feasible = st.placement_mask(s);
            if !feasible.iter().any(|&m| m) {
                aborted = true;
                break;
            }
            let mut after = packed.clone();
            after[s] = true;
            let logp = net.placement_logp(g, &ctx, s, &after, &fr, &feasible)?;
            let p = probs(g, logp);
            a = forced_step.map_or_else(|| choose(&p, mode, rng), |f| f.o * w + f.y as usize);
            mass = seq_mass + masked_mass(&p, |i| feasible[i]);
            logp_s = ls;
            logp_p = add_logp(g, logp, a)?;
        }
        let placed = st.apply(s, a / w, (a % w) as u32)?;
        steps.push(StepRecord {
            placement: placed.placement(),
            logp_s,
            logp_p,
            masked_mass: mass,
        });
    }
    let cost = if aborted {
        1.0
    } else {
        Configuration::from_state(&inst, &st).cost()?
    };
    Ok((
        EpisodeRecord {
            instance_id: inst.id.clone(),
            steps,
            cost,
            aborted,
        },
        total,
    ))
}

/// Runs one `f32` episode; with `with_grad` also back-propagates `Σ log π`.
pub fn rollout<R: Rng>(
    model: &PolicyModel,
    instance: &ProblemInstance,
    mode: DecodeMode,
    with_grad: bool,
    rng: &mut R,
) -> Result<Rollout> {
    let mut g = Graph::<f32>::new();
    let net = Net::bind(model, &mut g, with_grad)?;
    let (record, total) = run_episode(&net, model, &mut g, instance, mode, None, rng)?;
    let grad = match (with_grad, total) {
        (false, _) => None,
        (true, None) => Some(vec![0.0; model.param_count()]),
        (true, Some(total)) => {
            g.backward(total)?;
            let mut flat = Vec::with_capacity(model.param_count());
            for (&h, (_, t)) in net.handles().iter().zip(&model.params) {
                match g.grad(h) {
                    Some(gr) => flat.extend_from_slice(gr),
                    None => flat.extend(std::iter::repeat(0.0).take(t.len())),
                }
            }
            Some(flat)
        }
    };
    Ok(Rollout { record, grad })
}
