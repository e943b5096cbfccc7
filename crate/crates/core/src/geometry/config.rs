use serde::{Deserialize, Serialize};

use super::state::{check_placements, PlacedBox};
use super::{BinSpec, Dims, PackState, ProblemInstance};
use crate::error::{contract, Result};

/// One step of a configuration: which box, which orientation, and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub s: usize,
    pub o: usize,
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

/// Boxes left after trimming a configuration to a comparison bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimResult {
    pub count: usize,
    pub utility: f64,
}

/// A packing of an instance: the ordered placements, possibly partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub instance: ProblemInstance,
    pub placements: Vec<Placement>,
}

impl Configuration {
    pub fn new(instance: ProblemInstance, placements: Vec<Placement>) -> Self {
        Self { instance, placements }
    }

    pub fn from_state(instance: &ProblemInstance, state: &PackState) -> Self {
        Self {
            instance: instance.clone(),
            placements: state.placed().iter().map(|p| p.placement()).collect(),
        }
    }

    /// Placements resolved to oriented boxes.
    pub fn placed_boxes(&self) -> Result<Vec<PlacedBox>> {
        let dims = self.instance.dims();
        self.placements
            .iter()
            .map(|p| {
                let b = self
                    .instance
                    .boxes
                    .get(p.s)
                    .ok_or_else(|| contract(format!("placement refers to missing box {}", p.s)))?;
                Ok(PlacedBox {
                    index: p.s,
                    orientation: p.o,
                    dims: b.orient(p.o, dims)?,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                })
            })
            .collect()
    }

    /// True iff every box index appears exactly once.
    pub fn is_complete(&self) -> bool {
        let n = self.instance.len();
        if self.placements.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for p in &self.placements {
            if p.s >= n || seen[p.s] {
                return false;
            }
            seen[p.s] = true;
        }
        true
    }

    fn require_complete(&self) -> Result<Vec<PlacedBox>> {
        if !self.is_complete() {
            return Err(contract(format!(
                "configuration of {} has {} placements for {} boxes or repeats an index",
                self.instance.id,
                self.placements.len(),
                self.instance.len()
            )));
        }
        self.placed_boxes()
    }

    /// Bin bounds plus pairwise disjointness; drop support is not required,
    /// so hand-built layouts such as cut certificates can be checked too.
    pub fn check_disjoint_in_bin(&self) -> Result<()> {
        let boxes = self.placed_boxes()?;
        let bin = &self.instance.bin;
        for (i, p) in boxes.iter().enumerate() {
            if p.x_end() > bin.length || p.y_end() > bin.width || p.z_end() > bin.height {
                return Err(contract(format!("box {} leaves the bin", p.index)));
            }
            if let Some(q) = boxes[..i].iter().find(|q| p.overlap_volume(q) > 0) {
                return Err(contract(format!("box {} overlaps box {}", p.index, q.index)));
            }
        }
        Ok(())
    }

    /// Overlap, support and contact violations under drop semantics.
    pub fn invariant_violations(&self) -> Result<Vec<String>> {
        Ok(check_placements(&self.instance.bin, &self.placed_boxes()?))
    }

    /// `(Σ volume, L_C · W · H)` as exact integers.
    pub fn utility_ratio(&self) -> Result<(u64, u64)> {
        let boxes = self.require_complete()?;
        let lc = boxes.iter().map(|p| p.x_end()).max().unwrap_or(0) as u64;
        let vol: u64 = boxes.iter().map(|p| p.dims.volume()).sum();
        Ok((vol, lc * self.instance.bin.cross_section()))
    }

    /// Volume over the bounding region `L_C x W x H`.
    pub fn utility(&self) -> Result<f64> {
        let (num, den) = self.utility_ratio()?;
        Ok(num as f64 / den as f64)
    }

    /// `1 - utility`.
    pub fn cost(&self) -> Result<f64> {
        Ok(1.0 - self.utility()?)
    }

    /// Extents of the minimum bounding box of the packed set.
    fn bounding_extents(boxes: &[PlacedBox]) -> (f64, f64, f64) {
        let max = |f: fn(&PlacedBox) -> u32| boxes.iter().map(f).max().unwrap_or(0) as f64;
        (max(|p| p.x_end()), max(|p| p.y_end()), max(|p| p.z_end()))
    }

    /// Surface-style reward, 1.0 for a perfect square or cube.
    ///
    /// 2D: `2 √A / (L + W)`; 3D: `3 V^(2/3) / (LW + WH + HL)`.
    pub fn reward_rr(&self) -> Result<f64> {
        let boxes = self.require_complete()?;
        let (l, w, h) = Self::bounding_extents(&boxes);
        Ok(match self.instance.dims() {
            Dims::Two => {
                let area: u64 = boxes.iter().map(|p| p.dims.l as u64 * p.dims.w as u64).sum();
                2.0 * (area as f64).sqrt() / (l + w)
            }
            Dims::Three => {
                let vol: u64 = boxes.iter().map(|p| p.dims.volume()).sum();
                let side = (vol as f64).cbrt();
                3.0 * side * side / (l * w + w * h + h * l)
            }
        })
    }

    /// `L_π / (Σ l w / W)`: used length over the gap-free length.
    pub fn reward_l(&self) -> Result<f64> {
        let boxes = self.require_complete()?;
        let (l, _, _) = Self::bounding_extents(&boxes);
        let area: u64 = boxes.iter().map(|p| p.dims.l as u64 * p.dims.w as u64).sum();
        Ok(l / (area as f64 / self.instance.bin.width as f64))
    }

    /// Drops every box not fully inside `cube` and reports what is left.
    pub fn online_trim(&self, cube: &BinSpec) -> Result<TrimResult> {
        let boxes = self.placed_boxes()?;
        let inside: Vec<_> = boxes
            .iter()
            .filter(|p| p.x_end() <= cube.length && p.y_end() <= cube.width && p.z_end() <= cube.height)
            .collect();
        let vol: u64 = inside.iter().map(|p| p.dims.volume()).sum();
        let cube_vol = cube.length as u64 * cube.width as u64 * cube.height as u64;
        Ok(TrimResult {
            count: inside.len(),
            utility: vol as f64 / cube_vol as f64,
        })
    }
}
