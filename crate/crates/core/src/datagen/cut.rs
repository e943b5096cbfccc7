use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{BoxDims, Dims};

type Piece = (BoxDims, (u32, u32, u32));

fn axes(dims: Dims) -> &'static [usize] {
    match dims {
        Dims::Two => &[0, 1],
        Dims::Three => &[0, 1, 2],
    }
}

fn edge(b: &BoxDims, axis: usize) -> u32 {
    [b.l, b.w, b.h][axis]
}

/// Recursive guillotine cutting of a `(L, W, H)` block into `n` pieces with
/// every edge at least `min_cut`.
///
/// Each round picks a piece with probability proportional to its volume, an
/// axis proportional to the piece's extent along it, and a cut point `j`
/// in `[1, e - 1]` with weight `|j - e/2| + 1/2`, so cuts near the ends
/// are likelier than cuts through the middle. A cut that would leave a
/// piece thinner than `min_cut` is abandoned and the piece goes back.
///
/// Returns the pieces in generation order, each with its position inside
/// the block.
pub fn cut_boxes<R: Rng>(block: (u32, u32, u32), dims: Dims, n: usize, min_cut: u32, rng: &mut R) -> Result<Vec<Piece>> {
    let (l, w, h) = block;
    let h = if dims == Dims::Two { 1 } else { h };
    let mut pieces: Vec<Piece> = vec![(BoxDims::new(l, w, h)?, (0, 0, 0))];
    while pieces.len() < n {
        let splittable = pieces
            .iter()
            .any(|(b, _)| axes(dims).iter().any(|&a| edge(b, a) >= 2 * min_cut));
        if !splittable {
            return Err(Error::InvalidSpec(format!(
                "cannot reach {n} pieces with minimum cut {min_cut} (stuck at {})",
                pieces.len()
            )));
        }
        let vol = WeightedIndex::new(pieces.iter().map(|(b, _)| b.volume())).expect("positive volumes");
        let k = vol.sample(rng);
        let (b, pos) = pieces.remove(k);
        let axes = axes(dims);
        let axis = axes[WeightedIndex::new(axes.iter().map(|&a| edge(&b, a)))
            .expect("positive edges")
            .sample(rng)];
        let e = edge(&b, axis);
        if e < 2 {
            pieces.push((b, pos));
            continue;
        }
        // weights doubled to stay integral: |2j - e| + 1
        let j = 1 + WeightedIndex::new((1..e).map(|j| (2 * j as i64 - e as i64).unsigned_abs() + 1))
            .expect("positive weights")
            .sample(rng) as u32;
        if j < min_cut || e - j < min_cut {
            pieces.push((b, pos));
            continue;
        }
        let (mut a, mut c) = (b, b);
        let mut c_pos = pos;
        match axis {
            0 => {
                a.l = j;
                c.l = e - j;
                c_pos.0 += j;
            }
            1 => {
                a.w = j;
                c.w = e - j;
                c_pos.1 += j;
            }
            _ => {
                a.h = j;
                c.h = e - j;
                c_pos.2 += j;
            }
        }
        pieces.push((a, pos));
        pieces.push((c, c_pos));
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pieces_tile_the_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 2, 10, 50] {
            let p = cut_boxes((10, 10, 10), Dims::Three, n, 1, &mut rng).unwrap();
            assert_eq!(p.len(), n);
            let vol: u64 = p.iter().map(|(b, _)| b.volume()).sum();
            assert_eq!(vol, 1000);
            let mut grid = vec![0u8; 1000];
            for (b, (x, y, z)) in &p {
                for i in *x..x + b.l {
                    for j in *y..y + b.w {
                        for k in *z..z + b.h {
                            grid[(i * 100 + j * 10 + k) as usize] += 1;
                        }
                    }
                }
            }
            assert!(grid.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn stuck_cut_errors_instead_of_looping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(cut_boxes((3, 3, 3), Dims::Three, 2, 2, &mut rng).is_err());
    }
}
