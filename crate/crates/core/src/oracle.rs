//! Brute-force reference implementations of the packing geometry, used by
//! the self-test and the integration tests. Deliberately naive: they scan
//! every cell instead of sharing code with the environment.


use crate::geometry::{BinSpec, BoxDims, Dims, PackState, PlacedBox, ProblemInstance};
use rand::Rng;

/// Drop height of a footprint, computed straight from the placed list.
pub fn drop_height(placed: &[PlacedBox], x: u32, y: u32, b: &BoxDims) -> u32 {
    placed
        .iter()
        .filter(|p| p.x < x + b.l && x < p.x_end() && p.y < y + b.w && y < p.y_end())
        .map(|p| p.z_end())
        .max()
        .unwrap_or(0)
}

fn intersects(p: &PlacedBox, x: u32, y: u32, z: u32, b: &BoxDims) -> bool {
    p.x < x + b.l && x < p.x_end() && p.y < y + b.w && y < p.y_end() && p.z < z + b.h && z < p.z_end()
}

/// Every `(x, z)` at width offset `y` that is in bounds, collision free and
/// resting exactly at the drop height.
pub fn feasible_points(bin: &BinSpec, placed: &[PlacedBox], b: &BoxDims, y: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    if y + b.w > bin.width {
        return out;
    }
    for x in 0..bin.length {
        for z in 0..bin.height {
            if x + b.l > bin.length || z + b.h > bin.height {
                continue;
            }
            if placed.iter().any(|p| intersects(p, x, y, z, b)) {
                continue;
            }
            if z == drop_height(placed, x, y, b) {
                out.push((x, z));
            }
        }
    }
    out
}

/// Lexicographic minimum over the feasible set.
pub fn locate_oracle(bin: &BinSpec, placed: &[PlacedBox], b: &BoxDims, y: u32) -> Option<(u32, u32)> {
    feasible_points(bin, placed, b, y).into_iter().min()
}

pub fn mask_oracle(bin: &BinSpec, placed: &[PlacedBox], b: &BoxDims) -> Vec<bool> {
    let o_count = bin.dims.orientations();
    let w = bin.width as usize;
    let mut mask = vec![false; o_count * w];
    for o in 0..o_count {
        let r = b.orient(o, bin.dims).expect("orientation index in range");
        for y in 0..bin.width {
            mask[o * w + y as usize] = locate_oracle(bin, placed, &r, y).is_some();
        }
    }
    mask
}

pub fn heightmap_oracle(bin: &BinSpec, placed: &[PlacedBox]) -> Vec<u32> {
    let mut hm = vec![0; (bin.length * bin.width) as usize];
    for x in 0..bin.length {
        for y in 0..bin.width {
            hm[(x * bin.width + y) as usize] = drop_height(placed, x, y, &BoxDims { l: 1, w: 1, h: 1 });
        }
    }
    hm
}

pub fn frontier_oracle(bin: &BinSpec, placed: &[PlacedBox]) -> Vec<u32> {
    let mut f = Vec::new();
    for y in 0..bin.width {
        for z in 0..bin.height {
            let covering = placed.iter().filter(|p| p.y <= y && y < p.y_end() && p.z <= z && z < p.z_end());
            f.push(covering.map(|p| p.x_end()).max().unwrap_or(0));
        }
    }
    f
}

/// A small instance inside a bin of at most 12 cells per side. Boxes need
/// not fit the derived length, so masks can go all-false.
pub fn small_instance<R: Rng>(rng: &mut R, dims: Dims) -> ProblemInstance {
    let n = rng.gen_range(1..=6);
    let width = rng.gen_range(1..=12);
    let height = if dims == Dims::Three { rng.gen_range(1..=12) } else { 1 };
    let length = rng.gen_range(1..=12);
    let boxes = (0..n)
        .map(|_| {
            let h = if dims == Dims::Three { rng.gen_range(1..=height.min(6)) } else { 1 };
            BoxDims { l: rng.gen_range(1..=6), w: rng.gen_range(1..=width.min(6)), h }
        })
        .collect();
    ProblemInstance {
        id: "small".into(),
        bin: BinSpec {
            length,
            width,
            height,
            dims,
        },
        boxes,
    }
}

/// Runs one random episode, checking every mask, locate and apply against
/// the oracles. Returns the number of discrepancies and the final state.
pub fn random_episode_discrepancies<R: Rng>(rng: &mut R, inst: &ProblemInstance) -> (usize, PackState) {
    let bin = inst.bin;
    let mut st = PackState::new(inst);
    let mut bad = 0;
    loop {
        let mut options = Vec::new();
        for s in (0..inst.len()).filter(|&s| !st.is_packed(s)) {
            let mask = st.placement_mask(s);
            let oracle = mask_oracle(&bin, st.placed(), &inst.boxes[s]);
            if mask != oracle {
                bad += 1;
            }
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    options.push((s, i / bin.width as usize, (i % bin.width as usize) as u32));
                }
            }
        }
        if options.is_empty() {
            break;
        }
        let (s, o, y) = options[rng.gen_range(0..options.len())];
        let r = inst.boxes[s].orient(o, bin.dims).expect("mask entries are valid orientations");
        let expect = locate_oracle(&bin, st.placed(), &r, y);
        if st.locate(&r, y) != expect {
            bad += 1;
        }
        let placed = st.apply(s, o, y).expect("mask entries are applicable");
        if Some((placed.x, placed.z)) != expect || placed.y != y {
            bad += 1;
        }
        if st.heightmap() != heightmap_oracle(&bin, st.placed()).as_slice() {
            bad += 1;
        }
        if st.frontier_cur() != frontier_oracle(&bin, st.placed()).as_slice() {
            bad += 1;
        }
    }
    (bad, st)
}
