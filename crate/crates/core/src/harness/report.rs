//! Greedy evaluation and aggregated report rows.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinSpec, Configuration, Dims, ProblemInstance};
use crate::heuristics::{heuristic_pack, random_pack, sorted_order};
use crate::model::PolicyModel;
use crate::train::evaluate_greedy;

/// Optional metrics beyond utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    RewardRr,
    /// 2D only.
    RewardL,
    /// Trim to the `W x W x H` comparison cube; 3D only.
    OnlineTrim,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr" | "reward-rr" => Ok(Metric::RewardRr),
            "l" | "reward-l" => Ok(Metric::RewardL),
            "trim" | "online-trim" => Ok(Metric::OnlineTrim),
            _ => Err(Error::Parse(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Per-instance evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub instance_id: String,
    /// Zero when aborted.
    pub utility: f64,
    pub aborted: bool,
    pub reward_rr: Option<f64>,
    pub reward_l: Option<f64>,
    pub trim_count: Option<usize>,
    pub trim_utility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub dataset: String,
    pub utility: MeanStd,
    pub reward_rr: Option<MeanStd>,
    pub reward_l: Option<MeanStd>,
    pub online_count: Option<MeanStd>,
    pub online_utility: Option<MeanStd>,
    pub aborted_rate: f64,
    pub wall_clock_s: f64,
}

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16} {:<20} r_u {}", self.variant, self.dataset, self.utility)?;
        if let Some(m) = &self.reward_rr {
            write!(f, "  r_RR {m}")?;
        }
        if let Some(m) = &self.reward_l {
            write!(f, "  r_L {m}")?;
        }
        if let (Some(c), Some(u)) = (&self.online_count, &self.online_utility) {
            write!(f, "  trimmed {c} boxes, {u} utility")?;
        }
        write!(f, "  aborted {:.3}  {:.1}s", self.aborted_rate, self.wall_clock_s)
    }
}

fn output_for(config: &Configuration, aborted: bool, metrics: &[Metric]) -> Result<EvalOutput> {
    let inst = &config.instance;
    let complete = !aborted && config.is_complete();
    let mut out = EvalOutput {
        instance_id: inst.id.clone(),
        utility: if complete { config.utility()? } else { 0.0 },
        aborted,
        reward_rr: None,
        reward_l: None,
        trim_count: None,
        trim_utility: None,
    };
    for m in metrics {
        match m {
            Metric::RewardRr => out.reward_rr = Some(if complete { config.reward_rr()? } else { 0.0 }),
            Metric::RewardL if inst.dims() == Dims::Two && complete => out.reward_l = Some(config.reward_l()?),
            Metric::OnlineTrim if inst.dims() == Dims::Three => {
                let cube = BinSpec {
                    length: inst.bin.width,
                    ..inst.bin
                };
                let t = config.online_trim(&cube)?;
                out.trim_count = Some(t.count);
                out.trim_utility = Some(t.utility);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Aggregates per-instance outputs into a report row.
pub fn summarize(variant: &str, dataset: &str, outputs: &[EvalOutput], wall_clock_s: f64) -> ReportRow {
    let col = |f: &dyn Fn(&EvalOutput) -> Option<f64>| {
        let xs: Vec<f64> = outputs.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| MeanStd::of(&xs))
    };
    ReportRow {
        variant: variant.to_string(),
        dataset: dataset.to_string(),
        utility: MeanStd::of(&outputs.iter().map(|o| o.utility).collect::<Vec<_>>()),
        reward_rr: col(&|o| o.reward_rr),
        reward_l: col(&|o| o.reward_l),
        online_count: col(&|o| o.trim_count.map(|c| c as f64)),
        online_utility: col(&|o| o.trim_utility),
        aborted_rate: outputs.iter().filter(|o| o.aborted).count() as f64 / outputs.len().max(1) as f64,
        wall_clock_s,
    }
}

/// Greedy rollouts of `model`; returns the row, the per-instance outputs and
/// the configurations in input order.
pub fn evaluate(
    model: &PolicyModel,
    instances: &[ProblemInstance],
    metrics: &[Metric],
    variant: &str,
    dataset: &str,
) -> Result<(ReportRow, Vec<EvalOutput>, Vec<Configuration>)> {
    let t = Instant::now();
    let records = evaluate_greedy(model, instances)?;
    let configs: Vec<Configuration> = records
        .iter()
        .zip(instances)
        .map(|(r, inst)| r.configuration(inst))
        .collect();
    let outputs = configs
        .iter()
        .zip(&records)
        .map(|(c, r)| output_for(c, r.aborted, metrics))
        .collect::<Result<Vec<_>>>()?;
    let row = summarize(variant, dataset, &outputs, t.elapsed().as_secs_f64());
    Ok((row, outputs, configs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicKind {
    /// Largest-first order with the greedy geometric placement rule.
    Sorted,
    /// Given order, uniformly random feasible placement.
    RandomPlacement,
}

impl HeuristicKind {
    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Sorted => "sorted-heuristic",
            HeuristicKind::RandomPlacement => "random-placement",
        }
    }
}

/// Evaluates a non-learned policy on canonicalized instances.
pub fn evaluate_heuristic(
    kind: HeuristicKind,
    instances: &[ProblemInstance],
    metrics: &[Metric],
    dataset: &str,
    seed: u64,
) -> Result<(ReportRow, Vec<EvalOutput>)> {
    let t = Instant::now();
    let outputs = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let inst = inst.canonicalized();
            let packed = match kind {
                HeuristicKind::Sorted => heuristic_pack(&inst, &sorted_order(&inst.boxes)),
                HeuristicKind::RandomPlacement => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    random_pack(&inst, &(0..inst.len()).collect::<Vec<_>>(), &mut rng)
                }
            };
            match packed {
                Ok(c) => output_for(&c, false, metrics),
                Err(Error::Infeasible { .. }) => output_for(&Configuration::new(inst, Vec::new()), true, metrics),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(kind.name(), dataset, &outputs, t.elapsed().as_secs_f64()), outputs))
}
