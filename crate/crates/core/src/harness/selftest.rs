//! Built-in oracle suites: brute-force geometry, finite-difference
//! gradients and cut-instance conservation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, DatasetSpec};
use crate::error::Result;
use crate::geometry::{BoxDims, Configuration, Dims, ProblemInstance};
use crate::model::{ModelConfig, PolicyModel};
use crate::oracle::{random_episode_discrepancies, small_instance};
use crate::train::check_episode_gradient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn geometry_check(episodes: usize) -> SelftestCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let (mut bad, mut violations) = (0, 0);
    for i in 0..episodes {
        let dims = if i % 2 == 0 { Dims::Two } else { Dims::Three };
        let inst = small_instance(&mut rng, dims);
        let (b, st) = random_episode_discrepancies(&mut rng, &inst);
        bad += b;
        violations += st.invariant_violations().len();
    }
    SelftestCheck {
        name: "geometry-oracle".into(),
        passed: bad == 0 && violations == 0,
        detail: format!("{episodes} episodes, {bad} discrepancies, {violations} invariant violations"),
    }
}

fn gradient_check() -> Result<SelftestCheck> {
    let cfg = ModelConfig {
        heads: 2,
        layers: 1,
        ..ModelConfig::scaled(Dims::Three, 10, 10, 8)
    };
    let model = PolicyModel::new(cfg, 1)?;
    let b = |l, w, h| BoxDims { l, w, h };
    let inst = ProblemInstance::new("gradcheck", Dims::Three, 10, 10, vec![b(3, 4, 5), b(2, 6, 7), b(5, 5, 3)])?;
    let r = check_episode_gradient(&model, &inst, 256, 7)?;
    Ok(SelftestCheck {
        name: "gradient".into(),
        passed: r.coords_checked >= 200 && r.max_rel_error <= 1e-3,
        detail: format!("{} coordinates, max relative error {:.2e}", r.coords_checked, r.max_rel_error),
    })
}

fn cut_check(count: usize) -> Result<SelftestCheck> {
    let mut failures = 0;
    for dims in [Dims::Two, Dims::Three] {
        let spec = DatasetSpec::cut10(dims, count, 0xc07);
        let (l, w, h) = spec.block();
        let block = l as u64 * w as u64 * h as u64;
        for g in generate(&spec)? {
            let ok = g.instance.total_volume() == block
                && g.certificate.clone().is_some_and(|cert| {
                    let c = Configuration::new(g.instance.clone(), cert);
                    c.check_disjoint_in_bin().is_ok() && c.utility_ratio().ok() == Some((block, block))
                });
            failures += usize::from(!ok);
        }
    }
    Ok(SelftestCheck {
        name: "cut-conservation".into(),
        passed: failures == 0,
        detail: format!("{} instances, {failures} failures", 2 * count),
    })
}

/// Runs every suite; a check that errors counts as failed.
pub fn selftest() -> Vec<SelftestCheck> {
    let or_failed = |name: &str, r: Result<SelftestCheck>| {
        r.unwrap_or_else(|e| SelftestCheck {
            name: name.into(),
            passed: false,
            detail: e.to_string(),
        })
    };
    vec![
        geometry_check(200),
        or_failed("gradient", gradient_check()),
        or_failed("cut-conservation", cut_check(500)),
    ]
}
