use serde::{Deserialize, Serialize};

use super::{BinSpec, BoxDims, Dims, Placement, ProblemInstance};
use crate::error::{contract, Error, Result};

/// A box after placement: its instance index, orientation, oriented edges
/// and rear-left-bottom corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedBox {
    pub index: usize,
    pub orientation: usize,
    pub dims: BoxDims,
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl PlacedBox {
    pub fn placement(&self) -> Placement {
        Placement {
            s: self.index,
            o: self.orientation,
            x: self.x,
            y: self.y,
            z: self.z,
        }
    }

    pub fn x_end(&self) -> u32 {
        self.x + self.dims.l
    }

    pub fn y_end(&self) -> u32 {
        self.y + self.dims.w
    }

    pub fn z_end(&self) -> u32 {
        self.z + self.dims.h
    }

    /// Volume of the intersection of two boxes.
    pub fn overlap_volume(&self, other: &PlacedBox) -> u64 {
        let span = |a0: u32, a1: u32, b0: u32, b1: u32| a1.min(b1).saturating_sub(a0.max(b0)) as u64;
        span(self.x, self.x_end(), other.x, other.x_end())
            * span(self.y, self.y_end(), other.y, other.y_end())
            * span(self.z, self.z_end(), other.z, other.z_end())
    }
}

/// Mutable packing state of one episode.
///
/// The heightmap is indexed `x * W + y`, the frontiers `y * H + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackState {
    bin: BinSpec,
    boxes: Vec<BoxDims>,
    placed: Vec<PlacedBox>,
    packed: Vec<bool>,
    heightmap: Vec<u32>,
    frontier_prev: Vec<u32>,
    frontier_cur: Vec<u32>,
    extent: u32,
}

impl PackState {
    pub fn new(instance: &ProblemInstance) -> Self {
        let bin = instance.bin;
        let cells = bin.width as usize * bin.height as usize;
        Self {
            bin,
            boxes: instance.boxes.clone(),
            placed: Vec::with_capacity(instance.len()),
            packed: vec![false; instance.len()],
            heightmap: vec![0; bin.length as usize * bin.width as usize],
            frontier_prev: vec![0; cells],
            frontier_cur: vec![0; cells],
            extent: 0,
        }
    }

    pub fn bin(&self) -> &BinSpec {
        &self.bin
    }

    pub fn boxes(&self) -> &[BoxDims] {
        &self.boxes
    }

    pub fn placed(&self) -> &[PlacedBox] {
        &self.placed
    }

    pub fn packed_mask(&self) -> &[bool] {
        &self.packed
    }

    pub fn is_packed(&self, s: usize) -> bool {
        self.packed.get(s).copied().unwrap_or(false)
    }

    pub fn step(&self) -> usize {
        self.placed.len()
    }

    pub fn remaining(&self) -> usize {
        self.boxes.len() - self.placed.len()
    }

    pub fn is_done(&self) -> bool {
        self.remaining() == 0
    }

    /// Largest front face `x + l` over placed boxes.
    pub fn extent(&self) -> u32 {
        self.extent
    }

    pub fn heightmap(&self) -> &[u32] {
        &self.heightmap
    }

    pub fn height_at(&self, x: u32, y: u32) -> u32 {
        self.heightmap[x as usize * self.bin.width as usize + y as usize]
    }

    pub fn frontier_prev(&self) -> &[u32] {
        &self.frontier_prev
    }

    pub fn frontier_cur(&self) -> &[u32] {
        &self.frontier_cur
    }

    pub fn orientations(&self) -> usize {
        self.bin.dims.orientations()
    }

    /// Rearest-lowest position `(x, z)` for an oriented box at width offset
    /// `y`: the smallest `x` whose drop height leaves the box under the lid.
    pub fn locate(&self, b: &BoxDims, y: u32) -> Option<(u32, u32)> {
        let BinSpec {
            length,
            width,
            height,
            ..
        } = self.bin;
        if b.h > height || b.l > length || y + b.w > width {
            return None;
        }
        // Past the extent every column is empty, so the scan stops there.
        let last = self.extent.min(length - b.l);
        let wdt = width as usize;
        let (y0, y1) = (y as usize, (y + b.w) as usize);
        let span = (last + b.l) as usize;
        let band: Vec<u32> = (0..span)
            .map(|x| self.heightmap[x * wdt + y0..x * wdt + y1].iter().copied().max().unwrap_or(0))
            .collect();
        (0..=last as usize).find_map(|x| {
            let z = band[x..x + b.l as usize].iter().copied().max().unwrap_or(0);
            (z + b.h <= height).then_some((x as u32, z))
        })
    }

    /// Feasibility of every `(o, y)` for box `s`, flattened as `o * W + y`.
    pub fn placement_mask(&self, s: usize) -> Vec<bool> {
        let w = self.bin.width as usize;
        let o_count = self.orientations();
        let mut mask = vec![false; o_count * w];
        let Some(&b) = self.boxes.get(s) else {
            return mask;
        };
        for o in 0..o_count {
            let r = b.orient(o, self.bin.dims).unwrap();
            if r.w > self.bin.width || r.h > self.bin.height {
                continue;
            }
            for y in 0..=(self.bin.width - r.w) {
                mask[o * w + y as usize] = self.locate(&r, y).is_some();
            }
        }
        mask
    }

    /// Places box `s` in orientation `o` at width offset `y`.
    pub fn apply(&mut self, s: usize, o: usize, y: u32) -> Result<PlacedBox> {
        let b = *self
            .boxes
            .get(s)
            .ok_or_else(|| contract(format!("box index {s} out of range ({})", self.boxes.len())))?;
        if self.packed[s] {
            return Err(contract(format!("box {s} is already packed")));
        }
        let r = b.orient(o, self.bin.dims)?;
        let (x, z) = self
            .locate(&r, y)
            .ok_or_else(|| contract(format!("placement (o={o}, y={y}) of box {s} is masked")))?;
        let p = PlacedBox {
            index: s,
            orientation: o,
            dims: r,
            x,
            y,
            z,
        };
        let (wdt, hgt) = (self.bin.width as usize, self.bin.height as usize);
        for xi in x..p.x_end() {
            let row = xi as usize * wdt;
            for yi in y..p.y_end() {
                self.heightmap[row + yi as usize] = p.z_end();
            }
        }
        self.frontier_prev.copy_from_slice(&self.frontier_cur);
        for yi in y as usize..p.y_end() as usize {
            for zi in z as usize..p.z_end() as usize {
                let f = &mut self.frontier_cur[yi * hgt + zi];
                *f = (*f).max(p.x_end());
            }
        }
        self.extent = self.extent.max(p.x_end());
        self.packed[s] = true;
        self.placed.push(p);
        Ok(p)
    }

    /// Applies a placement given with explicit coordinates, checking that
    /// they match what `locate` produces.
    pub fn apply_placement(&mut self, p: &Placement) -> Result<PlacedBox> {
        let placed = self.apply(p.s, p.o, p.y)?;
        if (placed.x, placed.z) != (p.x, p.z) {
            return Err(contract(format!(
                "box {} landed at (x={}, z={}), expected (x={}, z={})",
                p.s, placed.x, placed.z, p.x, p.z
            )));
        }
        Ok(placed)
    }

    /// Frontier recomputed from the placed list; equals `frontier_cur`.
    pub fn frontier_from_scratch(&self) -> Vec<u32> {
        frontier_of(&self.bin, &self.placed)
    }

    /// Checks overlap, drop support and contact for every placed box
    /// against the boxes placed before it. Returns human-readable
    /// violations; empty means the state is sound.
    pub fn invariant_violations(&self) -> Vec<String> {
        check_placements(&self.bin, &self.placed)
    }
}

pub(crate) fn frontier_of(bin: &BinSpec, placed: &[PlacedBox]) -> Vec<u32> {
    let hgt = bin.height as usize;
    let mut f = vec![0; bin.width as usize * hgt];
    for p in placed {
        for yi in p.y as usize..p.y_end() as usize {
            for zi in p.z as usize..p.z_end() as usize {
                f[yi * hgt + zi] = f[yi * hgt + zi].max(p.x_end());
            }
        }
    }
    f
}

/// Top height over column `(x, y)` among `placed`.
fn column_top(placed: &[PlacedBox], x: u32, y: u32) -> u32 {
    placed
        .iter()
        .filter(|p| p.x <= x && x < p.x_end() && p.y <= y && y < p.y_end())
        .map(|p| p.z_end())
        .max()
        .unwrap_or(0)
}

pub(crate) fn check_placements(bin: &BinSpec, placed: &[PlacedBox]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, p) in placed.iter().enumerate() {
        let earlier = &placed[..k];
        if p.x_end() > bin.length || p.y_end() > bin.width || p.z_end() > bin.height {
            out.push(format!("box {} at step {k} leaves the bin", p.index));
        }
        for q in earlier {
            if p.overlap_volume(q) > 0 {
                out.push(format!("box {} overlaps box {}", p.index, q.index));
            }
        }
        // Drop support: the floor, or some footprint column topped at exactly z,
        // and nothing in the footprint reaching above z.
        let mut max_top = 0;
        for x in p.x..p.x_end() {
            for y in p.y..p.y_end() {
                max_top = max_top.max(column_top(earlier, x, y));
            }
        }
        if max_top != p.z {
            out.push(format!(
                "box {} rests at z={} but its footprint tops out at {max_top}",
                p.index, p.z
            ));
        }
        // Contact: rear wall, a supporting box, or a column directly behind
        // the box that was too high to let it sit one step further back.
        let blocked_behind = p.x > 0
            && (p.y..p.y_end()).any(|y| column_top(earlier, p.x - 1, y) + p.dims.h > bin.height);
        if !(p.x == 0 || p.z > 0 || blocked_behind) {
            out.push(format!("box {} at step {k} touches nothing behind or below", p.index));
        }
    }
    out
}

impl PackState {
    /// Replays a list of `(s, o, y)` actions from a fresh state.
    pub fn replay(instance: &ProblemInstance, actions: &[(usize, usize, u32)]) -> Result<Self> {
        let mut st = Self::new(instance);
        for (step, &(s, o, y)) in actions.iter().enumerate() {
            st.apply(s, o, y).map_err(|e| match e {
                Error::Contract(_) => Error::Infeasible { box_index: s, step },
                other => other,
            })?;
        }
        Ok(st)
    }

    pub fn dims(&self) -> Dims {
        self.bin.dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_bin(boxes: Vec<BoxDims>) -> ProblemInstance {
        ProblemInstance::new("t", Dims::Three, 10, 10, boxes).unwrap()
    }

    fn b(l: u32, w: u32, h: u32) -> BoxDims {
        BoxDims::new(l, w, h).unwrap()
    }

    #[test]
    fn empty_bin_locates_origin() {
        let st = PackState::new(&cube_bin(vec![b(3, 4, 5)]));
        assert_eq!(st.locate(&b(3, 4, 5), 0), Some((0, 0)));
    }

    #[test]
    fn stacks_on_top_when_room() {
        let mut st = PackState::new(&cube_bin(vec![b(2, 2, 2), b(2, 2, 2)]));
        st.apply(0, 0, 0).unwrap();
        assert_eq!(st.locate(&b(2, 2, 2), 0), Some((0, 2)));
    }

    #[test]
    fn full_height_column_pushes_forward() {
        let mut st = PackState::new(&cube_bin(vec![b(2, 2, 10), b(2, 2, 2)]));
        st.apply(0, 0, 0).unwrap();
        assert_eq!(st.locate(&b(2, 2, 2), 0), Some((2, 0)));
    }

    #[test]
    fn mask_respects_walls() {
        let st = PackState::new(&cube_bin(vec![b(2, 3, 5)]));
        let mask = st.placement_mask(0);
        // orientation 0 keeps w = 3: y in 0..=7
        for y in 0..10 {
            assert_eq!(mask[y], y <= 7, "y={y}");
        }
        // orientation 3 is (2, 5, 3): y in 0..=5
        for y in 0..10 {
            assert_eq!(mask[3 * 10 + y], y <= 5);
        }
    }

    #[test]
    fn too_tall_everywhere_masks_everything() {
        let inst = ProblemInstance {
            id: "t".into(),
            bin: BinSpec {
                length: 30,
                width: 4,
                height: 4,
                dims: Dims::Three,
            },
            boxes: vec![b(5, 5, 5)],
        };
        let st = PackState::new(&inst);
        assert!(st.placement_mask(0).iter().all(|m| !m));
    }

    #[test]
    fn apply_rejects_masked_and_repeated() {
        let mut st = PackState::new(&cube_bin(vec![b(2, 3, 5), b(1, 1, 1)]));
        assert!(matches!(st.apply(0, 0, 8), Err(Error::Contract(_))));
        st.apply(0, 0, 0).unwrap();
        assert!(matches!(st.apply(0, 0, 0), Err(Error::Contract(_))));
        assert!(matches!(st.apply(5, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn frontiers_shift() {
        let mut st = PackState::new(&cube_bin(vec![b(2, 2, 2), b(3, 1, 1)]));
        st.apply(0, 0, 0).unwrap();
        assert!(st.frontier_prev().iter().all(|&v| v == 0));
        assert_eq!(st.frontier_cur()[0], 2);
        st.apply(1, 0, 5).unwrap();
        assert_eq!(st.frontier_prev()[0], 2);
        assert_eq!(st.frontier_cur()[5 * 10], 3);
        assert_eq!(st.frontier_cur(), st.frontier_from_scratch().as_slice());
    }

    #[test]
    fn overhang_gap_still_passes_contact_form() {
        // A thin pillar holds up a lintel; the next box slides in under
        // neither and sits behind the lintel's column.
        let inst = ProblemInstance::new(
            "t",
            Dims::Three,
            1,
            10,
            vec![b(1, 1, 8), b(2, 1, 2), b(1, 1, 3)],
        )
        .unwrap();
        let mut st = PackState::new(&inst);
        st.apply(0, 0, 0).unwrap();
        let lintel = st.apply(1, 0, 0).unwrap();
        assert_eq!((lintel.x, lintel.z), (0, 8));
        let last = st.apply(2, 0, 0).unwrap();
        assert_eq!((last.x, last.z), (2, 0));
        assert!(st.invariant_violations().is_empty());
    }
}
