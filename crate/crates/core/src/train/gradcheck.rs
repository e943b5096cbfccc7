//! Finite-difference check of the full policy gradient on one episode.

use binpack_tensor::{grad_check, GradCheckConfig, GradCheckReport, Graph, Scalar, ScalarFunction, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{rollout, run_episode, DecodeMode};
use crate::error::{Error, Result};
use crate::geometry::{Placement, ProblemInstance};
use crate::model::{Net, PolicyModel};

/// `-Σ log π` of a fixed action sequence as a function of every parameter.
pub struct EpisodeLoss<'a> {
    pub model: &'a PolicyModel,
    pub instance: ProblemInstance,
    pub actions: Vec<Placement>,
}

impl ScalarFunction for EpisodeLoss<'_> {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Tensor]) -> binpack_tensor::Result<Tensor> {
        let to_tensor_err = |e: Error| binpack_tensor::TensorError::Shape {
            op: "episode",
            detail: e.to_string(),
        };
        let net = Net::from_handles(self.model, inputs.to_vec()).map_err(to_tensor_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, total) = run_episode(
            &net,
            self.model,
            g,
            &self.instance,
            DecodeMode::Greedy,
            Some(&self.actions),
            &mut rng,
        )
        .map_err(to_tensor_err)?;
        let total = total.ok_or_else(|| binpack_tensor::TensorError::Shape {
            op: "episode",
            detail: "no actions".into(),
        })?;
        Ok(g.scale(total, -1.0))
    }
}

/// Samples one episode with `seed`, then checks the gradient of its
/// negative log-probability at up to `samples` parameter coordinates.
pub fn check_episode_gradient(
    model: &PolicyModel,
    instance: &ProblemInstance,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let rec = rollout(model, instance, DecodeMode::Sample, false, &mut ChaCha8Rng::seed_from_u64(seed))?.record;
    if rec.aborted {
        return Err(Error::Contract("gradient check episode was aborted".into()));
    }
    let f = EpisodeLoss {
        model,
        instance: instance.clone(),
        actions: rec.steps.iter().map(|s| s.placement).collect(),
    };
    let inputs: Vec<_> = model.params.iter().map(|(_, t)| t.clone()).collect();
    Ok(grad_check(
        &f,
        &inputs,
        GradCheckConfig {
            eps: 1e-4,
            samples,
            seed,
        },
    )?)
}
