//! The packing policy: box encoder, frontier encoder, pointer decoder over
//! boxes and a placement head over `(orientation, y)`.

mod config;
mod net;
mod params;

use binpack_tensor::{Checkpoint, HostTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use config::{FrontierVariant, ModelConfig, SequenceMode};
pub use net::{EpisodeCtx, FrontierEmb, Net};
use params::Layout;

/// All learnable parameters, in a fixed order, with their layout.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub params: Vec<(String, HostTensor)>,
    layout: Layout,
}

impl PolicyModel {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = Layout::build(&config, &mut rng)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameters concatenated in order.
    pub fn flat(&self) -> Vec<f32> {
        self.params.iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector.
    pub fn set_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for (_, t) in &mut self.params {
            let n = t.len();
            t.data.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Appends the parameters, prefixed with `prefix`, to a checkpoint.
    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        for (name, t) in &self.params {
            ck.push(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Rebuilds a model of `config` from checkpoint tensors under `prefix`.
    pub fn read_from(config: ModelConfig, ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        for (name, t) in &mut model.params {
            let key = format!("{prefix}{name}");
            let stored = ck
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {key}")))?;
            if stored.shape != t.shape {
                return Err(Error::Config(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    stored.shape, t.shape
                )));
            }
            *t = stored.clone();
        }
        Ok(model)
    }

    /// Standalone checkpoint with the config in the manifest.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({ "model": self.config }));
        self.write_to(&mut ck, "");
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ck.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Config("checkpoint has no model config".into()))?,
        )?;
        Self::read_from(config, ck, "")
    }
}
