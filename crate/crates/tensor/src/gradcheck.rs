//! Finite-difference verification of tape gradients.
//!
//! The function under test is evaluated twice: once on an `f32` tape, whose
//! reverse-mode gradient is the value being checked, and repeatedly on `f64`
//! tapes for central differences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Tensor};
use crate::host::HostTensor;
use crate::scalar::Scalar;

/// A scalar-valued computation that can be replayed at any precision.
pub trait ScalarFunction {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Tensor]) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Upper bound on checked coordinates; all are checked if there are fewer.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

fn eval_at<F: ScalarFunction, T: Scalar>(
    f: &F,
    inputs: &[HostTensor],
    perturb: Option<(usize, usize, f64)>,
) -> Result<(Graph<T>, Vec<Tensor>, Tensor)> {
    let mut g = Graph::<T>::new();
    let mut handles = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let mut data: Vec<T> = x.data.iter().map(|&v| T::of(v as f64)).collect();
        if let Some((pi, pj, d)) = perturb {
            if pi == i {
                data[pj] = T::of(x.data[pj] as f64 + d);
            }
        }
        handles.push(g.param(data, &x.shape)?);
    }
    let out = f.eval(&mut g, &handles)?;
    Ok((g, handles, out))
}

/// Returns the max over sampled coordinates of
/// `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F: ScalarFunction>(
    f: &F,
    inputs: &[HostTensor],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let (mut g, handles, out) = eval_at::<F, f32>(f, inputs, None)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = handles
        .iter()
        .zip(inputs)
        .map(|(&h, x)| match g.grad(h) {
            Some(gr) => gr.iter().map(|&v| v as f64).collect(),
            None => vec![0.0; x.len()],
        })
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, x)| (0..x.len()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= cfg.samples {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, coords.len(), cfg.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: chosen.len(),
        worst: None,
    };
    for &(i, j) in &chosen {
        let (gp, _, op) = eval_at::<F, f64>(f, inputs, Some((i, j, cfg.eps)))?;
        let (gm, _, om) = eval_at::<F, f64>(f, inputs, Some((i, j, -cfg.eps)))?;
        let fd = (gp.scalar(op) - gm.scalar(om)) / (2.0 * cfg.eps);
        let err = (analytic[i][j] - fd).abs() / fd.abs().max(1.0);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
