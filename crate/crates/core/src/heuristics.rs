//! Non-learned packing policies used as baselines and for fixed orders.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{BoxDims, Configuration, PackState, ProblemInstance};

/// Largest volume first; ties by descending `w/h`, then descending `l/w`
/// on the canonical edges; remaining ties keep input order.
pub fn sorted_order(boxes: &[BoxDims]) -> Vec<usize> {
    let canon: Vec<BoxDims> = boxes.iter().map(|b| b.canonicalize()).collect();
    // a/b vs c/d compared exactly as a*d vs c*b
    let ratio = |a: u32, b: u32, c: u32, d: u32| (a as u64 * d as u64).cmp(&(c as u64 * b as u64));
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&canon[i], &canon[j]);
        b.volume()
            .cmp(&a.volume())
            .then_with(|| ratio(b.w, b.h, a.w, a.h))
            .then_with(|| ratio(b.l, b.w, a.l, a.w))
    });
    order
}

/// Packs boxes in `order`, asking `choose` for an `(o, y)` among the
/// feasible entries of each mask.
pub fn pack_in_order<F>(instance: &ProblemInstance, order: &[usize], mut choose: F) -> Result<Configuration>
where
    F: FnMut(&PackState, usize, &[(usize, u32)]) -> (usize, u32),
{
    let mut st = PackState::new(instance);
    let w = instance.bin.width as usize;
    for (step, &s) in order.iter().enumerate() {
        let options: Vec<(usize, u32)> = st
            .placement_mask(s)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / w, (i % w) as u32))
            .collect();
        if options.is_empty() {
            return Err(Error::Infeasible { box_index: s, step });
        }
        let (o, y) = choose(&st, s, &options);
        st.apply(s, o, y)?;
    }
    Ok(Configuration::from_state(instance, &st))
}

/// Greedy geometric rule: smallest resulting extent, then the rearmost
/// front face, then the lowest top, then leftmost.
pub fn heuristic_pack(instance: &ProblemInstance, order: &[usize]) -> Result<Configuration> {
    let dims = instance.dims();
    pack_in_order(instance, order, |st, s, options| {
        let key = |&(o, y): &(usize, u32)| {
            let r = st.boxes()[s].orient(o, dims).expect("mask entries are valid orientations");
            let (x, z) = st.locate(&r, y).expect("mask entries are locatable");
            (st.extent().max(x + r.l), x + r.l, z + r.h, y, o)
        };
        *options.iter().min_by_key(|a| key(a)).expect("options are non-empty")
    })
}

/// Uniformly random feasible `(o, y)` at every step.
pub fn random_pack<R: Rng>(instance: &ProblemInstance, order: &[usize], rng: &mut R) -> Result<Configuration> {
    pack_in_order(instance, order, |_, _, options| options[rng.gen_range(0..options.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dims;

    fn b(l: u32, w: u32, h: u32) -> BoxDims {
        BoxDims { l, w, h }
    }

    #[test]
    fn sorted_by_volume() {
        assert_eq!(sorted_order(&[b(2, 2, 2), b(3, 3, 3), b(1, 1, 1)]), vec![1, 0, 2]);
    }

    #[test]
    fn ties_prefer_larger_w_over_h() {
        // (1,2,4): w/h = 0.5, (2,2,2): w/h = 1
        assert_eq!(sorted_order(&[b(1, 2, 4), b(2, 2, 2)]), vec![1, 0]);
    }

    #[test]
    fn identical_boxes_keep_input_order() {
        assert_eq!(sorted_order(&[b(1, 2, 3); 5]), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn heuristic_fills_slabs_exactly() {
        let inst = ProblemInstance::new("t", Dims::Three, 10, 10, vec![b(5, 10, 10), b(5, 10, 10)]).unwrap();
        let cfg = heuristic_pack(&inst, &[0, 1]).unwrap();
        assert_eq!(cfg.utility().unwrap(), 1.0);
    }
}
