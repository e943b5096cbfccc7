//! Instance generation: guillotine-cut instances with a perfect-packing
//! certificate, and uniform random instances.
//!
//! Every instance draws from its own ChaCha8 stream, seeded with the dataset
//! seed and selected by the instance index, so datasets regenerate
//! identically on any platform and instances can be built in parallel.

mod cut;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDims, Dims, Placement, ProblemInstance};

pub use cut::cut_boxes;
pub use io::{dataset_checksum, read_dataset, write_dataset, InstanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cut,
    Random,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cut" => Ok(Self::Cut),
            "random" => Ok(Self::Random),
            _ => Err(Error::Parse(format!("unknown dataset kind {s:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cut => "cut",
            Self::Random => "random",
        })
    }
}

/// Parameters of a generated dataset. For cut datasets `edge_min` is the
/// minimum cut size and the block being cut is `cut_length x W x H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub dims: Dims,
    pub width: u32,
    pub height: u32,
    pub n: usize,
    pub edge_min: u32,
    pub edge_max: u32,
    pub count: usize,
    pub seed: u64,
    /// Length of the block to cut; defaults to `width`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_length: Option<u32>,
}

impl DatasetSpec {
    /// 10 boxes cut from a 10-cell square or cube, edges in `[1, 10]`.
    pub fn cut10(dims: Dims, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Cut,
            dims,
            width: 10,
            height: if dims == Dims::Three { 10 } else { 1 },
            n: 10,
            edge_min: 1,
            edge_max: 10,
            count,
            seed,
            cut_length: None,
        }
    }

    /// Random boxes with edges in `[edge_min, edge_max]` for a `W x H` bin.
    pub fn random(dims: Dims, width: u32, height: u32, n: usize, edges: (u32, u32), count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Random,
            dims,
            width,
            height: if dims == Dims::Three { height } else { 1 },
            n,
            edge_min: edges.0,
            edge_max: edges.1,
            count,
            seed,
            cut_length: None,
        }
    }

    pub fn block(&self) -> (u32, u32, u32) {
        let h = if self.dims == Dims::Three { self.height } else { 1 };
        (self.cut_length.unwrap_or(self.width), self.width, h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n == 0 {
            return bad("box count must be at least 1".into());
        }
        if self.edge_min == 0 || self.edge_min > self.edge_max {
            return bad(format!("edge range {}..{} is empty or starts at 0", self.edge_min, self.edge_max));
        }
        if self.width == 0 || self.height == 0 {
            return bad("bin cross-section must be positive".into());
        }
        match self.kind {
            DatasetKind::Cut => {
                let (l, w, h) = self.block();
                let m = self.edge_min as u64;
                let per_box = if self.dims == Dims::Three { m * m * m } else { m * m };
                let vol = l as u64 * w as u64 * h as u64;
                if self.n as u64 * per_box > vol {
                    return bad(format!(
                        "{} boxes with minimum edge {} cannot be cut from {l}x{w}x{h}",
                        self.n, self.edge_min
                    ));
                }
                if self.edge_max < l.max(w).max(if self.dims == Dims::Three { h } else { 1 }) {
                    return bad(format!("edge_max {} is below the block size", self.edge_max));
                }
            }
            DatasetKind::Random => {
                let cross = if self.dims == Dims::Three {
                    self.width.min(self.height)
                } else {
                    self.width
                };
                if self.edge_max > cross {
                    return bad(format!("edge_max {} does not fit the bin cross-section", self.edge_max));
                }
            }
        }
        Ok(())
    }
}

/// A generated instance and, for cut instances, the placements that
/// reassemble the original block.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    pub certificate: Option<Vec<Placement>>,
}

/// Independent, reproducible stream for instance `index`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn instance_id(spec: &DatasetSpec, index: usize) -> String {
    let d: u8 = spec.dims.into();
    format!("{}{d}d-n{}-s{}-{index}", spec.kind, spec.n, spec.seed)
}

/// Generates instance `index` of a dataset.
pub fn generate_one(spec: &DatasetSpec, index: usize) -> Result<GeneratedInstance> {
    let mut rng = instance_rng(spec.seed, index as u64);
    match spec.kind {
        DatasetKind::Cut => generate_cut(spec, index, &mut rng),
        DatasetKind::Random => generate_random(spec, index, &mut rng),
    }
}

/// Generates the whole dataset, in parallel across instances.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<GeneratedInstance>> {
    spec.validate()?;
    (0..spec.count).into_par_iter().map(|i| generate_one(spec, i)).collect()
}

/// Cuts the block, canonicalizes every piece and shuffles them, carrying the
/// cut positions along as a certificate.
pub fn generate_cut<R: Rng>(spec: &DatasetSpec, index: usize, rng: &mut R) -> Result<GeneratedInstance> {
    spec.validate()?;
    let pieces = cut_boxes(spec.block(), spec.dims, spec.n, spec.edge_min, rng)?;
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.shuffle(rng);
    let mut boxes = Vec::with_capacity(pieces.len());
    let mut certificate = Vec::with_capacity(pieces.len());
    for (s, &i) in order.iter().enumerate() {
        let (cut, (x, y, z)) = pieces[i];
        let canon = cut.canonicalize_for(spec.dims);
        let o = canon
            .orientation_to(&cut, spec.dims)
            .expect("a canonical box can always be rotated back");
        boxes.push(canon);
        certificate.push(Placement { s, o, x, y, z });
    }
    let instance = ProblemInstance::new(instance_id(spec, index), spec.dims, spec.width, spec.height, boxes)?;
    Ok(GeneratedInstance {
        instance,
        certificate: Some(certificate),
    })
}

/// Draws every edge uniformly from `[edge_min, edge_max]`.
pub fn generate_random<R: Rng>(spec: &DatasetSpec, index: usize, rng: &mut R) -> Result<GeneratedInstance> {
    spec.validate()?;
    let mut edge = || rng.gen_range(spec.edge_min..=spec.edge_max);
    let mut boxes: Vec<BoxDims> = (0..spec.n)
        .map(|_| {
            let (l, w) = (edge(), edge());
            let h = if spec.dims == Dims::Three { edge() } else { 1 };
            BoxDims { l, w, h }.canonicalize_for(spec.dims)
        })
        .collect();
    boxes.shuffle(rng);
    let instance = ProblemInstance::new(instance_id(spec, index), spec.dims, spec.width, spec.height, boxes)?;
    Ok(GeneratedInstance {
        instance,
        certificate: None,
    })
}

/// Largest edge in the instance (`l`/`w` only in 2D); box features and
/// frontier heights are both divided by it.
pub fn feature_scale(instance: &ProblemInstance) -> u32 {
    let dims = instance.dims();
    instance
        .boxes
        .iter()
        .map(|b| match dims {
            Dims::Three => b.max_edge(),
            Dims::Two => b.l.max(b.w),
        })
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Canonical boxes scaled by [`feature_scale`], one row of `(l, w, h)` per
/// box. 2D boxes get a zero third feature.
pub fn normalize(instance: &ProblemInstance) -> Vec<[f64; 3]> {
    let dims = instance.dims();
    let m = feature_scale(instance) as f64;
    instance
        .boxes
        .iter()
        .map(|b| {
            let b = b.canonicalize_for(dims);
            match dims {
                Dims::Three => [b.l as f64 / m, b.w as f64 / m, b.h as f64 / m],
                Dims::Two => [b.l as f64 / m, b.w as f64 / m, 0.0],
            }
        })
        .collect()
}

/// Uniformly random reordering of the boxes; returns the permutation used
/// (`new[i] = old[order[i]]`).
pub fn permute<R: Rng>(instance: &ProblemInstance, rng: &mut R) -> (ProblemInstance, Vec<usize>) {
    let mut order: Vec<usize> = (0..instance.len()).collect();
    order.shuffle(rng);
    (instance.reordered(&order), order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_random_range_gives_identical_cubes() {
        let spec = DatasetSpec::random(Dims::Three, 10, 10, 5, (4, 4), 1, 0);
        let g = generate_one(&spec, 0).unwrap();
        assert_eq!(g.instance.boxes, vec![BoxDims { l: 4, w: 4, h: 4 }; 5]);
    }

    #[test]
    fn normalize_examples() {
        let inst = ProblemInstance::new("t", Dims::Three, 10, 10, vec![BoxDims { l: 5, w: 2, h: 3 }]).unwrap();
        assert_eq!(normalize(&inst), vec![[0.4, 0.6, 1.0]]);
        let cubes = ProblemInstance::new("t", Dims::Three, 10, 10, vec![BoxDims { l: 3, w: 3, h: 3 }; 4]).unwrap();
        assert!(normalize(&cubes).iter().all(|r| r == &[1.0, 1.0, 1.0]));
    }

    #[test]
    fn single_box_cut_is_the_block() {
        let mut spec = DatasetSpec::cut10(Dims::Three, 1, 3);
        spec.n = 1;
        let g = generate_one(&spec, 0).unwrap();
        assert_eq!(g.instance.boxes, vec![BoxDims { l: 10, w: 10, h: 10 }]);
    }

    #[test]
    fn unreachable_cut_rejected() {
        let mut spec = DatasetSpec::cut10(Dims::Three, 1, 0);
        spec.n = 1001;
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        spec.n = 10;
        spec.edge_min = 5;
        spec.n = 9;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn permute_keeps_the_multiset() {
        let spec = DatasetSpec::random(Dims::Three, 10, 10, 12, (2, 5), 1, 8);
        let g = generate_one(&spec, 0).unwrap();
        let (p, order) = permute(&g.instance, &mut instance_rng(1, 0));
        let mut a = g.instance.boxes.clone();
        let mut b = p.boxes.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        for (i, &o) in order.iter().enumerate() {
            assert_eq!(p.boxes[i], g.instance.boxes[o]);
        }
    }
}
