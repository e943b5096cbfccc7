//! Experiment wiring for the full method and its ablations, evaluation
//! reports, export and the self-test.

mod export;
mod manifest;
mod report;
mod selftest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SequenceMode};
use crate::train::TrainerConfig;

pub use export::{render_svg, write_configurations, ExportFormat, ExportedConfiguration};
pub use manifest::{config_hash, git_describe, RunManifest};
pub use report::{
    evaluate, evaluate_heuristic, summarize, EvalOutput, HeuristicKind, MeanStd, Metric, ReportRow,
};
pub use selftest::{selftest, SelftestCheck};

/// The full method and the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Learned sequence and placement with prioritized oversampling.
    Full,
    NoPo,
    /// One softmax over every `(box, orientation, y)`.
    NoPoJoint,
    /// Boxes in their given (random) order.
    NoSeq,
    /// Given order, encoder attention replaced by a residual MLP.
    NoSeqNoAtt,
    /// Given order, no attention and no leftover embedding.
    StrictOnline,
    /// Same wiring as `NoSeq`.
    RandomOrder,
    SortedOrder,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoPo,
        Variant::NoPoJoint,
        Variant::NoSeq,
        Variant::NoSeqNoAtt,
        Variant::StrictOnline,
        Variant::RandomOrder,
        Variant::SortedOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPo => "no-po",
            Variant::NoPoJoint => "no-po-joint",
            Variant::NoSeq => "no-seq",
            Variant::NoSeqNoAtt => "no-seq-no-att",
            Variant::StrictOnline => "strict-online",
            Variant::RandomOrder => "random-order",
            Variant::SortedOrder => "sorted-order",
        }
    }

    pub fn uses_po(self) -> bool {
        self == Variant::Full
    }

    pub fn sequence(self) -> SequenceMode {
        match self {
            Variant::Full | Variant::NoPo | Variant::NoPoJoint => SequenceMode::Learned,
            Variant::SortedOrder => SequenceMode::Sorted,
            _ => SequenceMode::Given,
        }
    }

    pub fn attention(self) -> bool {
        !matches!(self, Variant::NoSeqNoAtt | Variant::StrictOnline)
    }

    pub fn leftover(self) -> bool {
        self != Variant::StrictOnline
    }

    pub fn joint(self) -> bool {
        self == Variant::NoPoJoint
    }

    /// Sets the variant's flags on a base model config. `n` is the fixed box
    /// count the joint head is sized for.
    pub fn model_config(self, base: &ModelConfig, n: usize) -> ModelConfig {
        ModelConfig {
            attention: self.attention(),
            leftover: self.leftover(),
            sequence: self.sequence(),
            joint_boxes: self.joint().then_some(n),
            ..base.clone()
        }
    }

    pub fn trainer_config(self, base: &TrainerConfig) -> TrainerConfig {
        TrainerConfig {
            po: self.uses_po(),
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant {s:?}")))
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub dataset: DatasetSpec,
    pub eval: DatasetSpec,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub model_seed: u64,
}

impl ExperimentConfig {
    /// Assembles a consistent config from base model and trainer settings.
    pub fn assemble(
        variant: Variant,
        dataset: DatasetSpec,
        eval: DatasetSpec,
        base_model: &ModelConfig,
        base_trainer: &TrainerConfig,
        model_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            variant,
            model: variant.model_config(base_model, dataset.n),
            trainer: variant.trainer_config(base_trainer),
            dataset,
            eval,
            model_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects flag combinations that disagree with the variant or with
    /// each other.
    pub fn validate(&self) -> Result<()> {
        let v = self.variant;
        let m = &self.model;
        let mismatch = |what: &str| Err(Error::Config(format!("variant {v} is inconsistent with {what}")));
        if m.attention != v.attention() {
            return mismatch("the encoder attention flag");
        }
        if m.leftover != v.leftover() {
            return mismatch("the leftover flag");
        }
        if m.sequence != v.sequence() {
            return mismatch("the sequence mode");
        }
        if m.joint_boxes.is_some() != v.joint() {
            return mismatch("the joint head");
        }
        if self.trainer.po != v.uses_po() {
            return mismatch("the oversampling flag");
        }
        if let Some(n) = m.joint_boxes {
            if n != self.dataset.n || n != self.eval.n {
                return Err(Error::Config(format!(
                    "joint head is sized for {n} boxes, datasets have {} and {}",
                    self.dataset.n, self.eval.n
                )));
            }
        }
        for spec in [&self.dataset, &self.eval] {
            spec.validate()?;
            if spec.dims != m.dims || spec.width != m.width || spec.height != m.height {
                return Err(Error::Config("dataset bin does not match the model".into()));
            }
        }
        m.validate()?;
        self.trainer.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dims;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("no-attention".parse::<Variant>().is_err());
    }

    #[test]
    fn strict_online_drops_leftover_and_attention() {
        let base = ModelConfig::scaled(Dims::Three, 10, 10, 32);
        let m = Variant::StrictOnline.model_config(&base, 24);
        assert!(!m.attention && !m.leftover);
        assert_eq!(m.sequence, SequenceMode::Given);
    }

    #[test]
    fn inconsistent_flags_are_rejected() {
        let spec = DatasetSpec::cut10(Dims::Two, 10, 0);
        let base = ModelConfig::scaled(Dims::Two, 10, 1, 16);
        let mut cfg = ExperimentConfig::assemble(
            Variant::NoPo,
            spec.clone(),
            spec,
            &base,
            &TrainerConfig::default(),
            0,
        )
        .unwrap();
        cfg.trainer.po = true;
        assert!(cfg.validate().is_err());
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
