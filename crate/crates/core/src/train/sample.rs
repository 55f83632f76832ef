use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Positive pairs of a target relation at one snapshot.
///
/// For a relation within one type, pairs are unordered: `(i, j)` and `(j, i)`
/// collapse to `(min, max)` and self pairs are dropped.
pub fn positive_pairs(edges: &[(usize, usize)], same_type: bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges
        .iter()
        .filter(|(i, j)| !same_type || i != j)
        .map(|&(i, j)| if same_type { (i.min(j), i.max(j)) } else { (i, j) })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Uniform draw, without repetition, of pairs absent from `pos`.
///
/// Draws `min(|pos|, available)` pairs from `n_src × n_dst` (unordered pairs
/// `i < j` when `same_type`). Rejection sampling is used while the space is
/// sparse; near saturation the complement is enumerated instead.
pub fn sample_negatives(
    pos: &[(usize, usize)],
    n_src: usize,
    n_dst: usize,
    same_type: bool,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let taken: HashSet<(usize, usize)> = pos.iter().copied().collect();
    let space = if same_type { n_src * n_src.saturating_sub(1) / 2 } else { n_src * n_dst };
    let available = space.saturating_sub(taken.len());
    if available == 0 {
        return Err(Error::Training {
            epoch: 0,
            msg: format!("no negative pairs left: all {space} candidate pairs are positive"),
        });
    }
    let want = pos.len().min(available);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> (usize, usize) {
        if same_type {
            let (a, b) = (rng.random_range(0..n_src), rng.random_range(0..n_src - 1));
            let b = if b >= a { b + 1 } else { b };
            (a.min(b), a.max(b))
        } else {
            (rng.random_range(0..n_src), rng.random_range(0..n_dst))
        }
    };
    if want * 4 <= available {
        let mut seen = HashSet::with_capacity(want);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let p = draw(&mut rng);
            if !taken.contains(&p) && seen.insert(p) {
                out.push(p);
            }
        }
        return Ok(out);
    }
    let mut free: Vec<(usize, usize)> = (0..n_src)
        .flat_map(|i| {
            let lo = if same_type { i + 1 } else { 0 };
            let hi = if same_type { n_src } else { n_dst };
            (lo..hi).map(move |j| (i, j))
        })
        .filter(|p| !taken.contains(p))
        .collect();
    for k in 0..want {
        let pick = rng.random_range(k..free.len());
        free.swap(k, pick);
    }
    free.truncate(want);
    Ok(free)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_free_pair_is_forced() {
        let mut pos = Vec::new();
        for i in 0..3 {
            for j in 0..4 {
                if (i, j) != (2, 1) {
                    pos.push((i, j));
                }
            }
        }
        assert_eq!(sample_negatives(&pos, 3, 4, false, 9).unwrap(), vec![(2, 1)]);
        let pos = vec![(0, 1), (0, 2)];
        assert_eq!(sample_negatives(&pos, 3, 3, true, 9).unwrap(), vec![(1, 2)]);
    }

    #[test]
    fn complete_graph_is_an_error() {
        let pos: Vec<_> = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).collect();
        assert!(sample_negatives(&pos, 2, 2, false, 0).is_err());
    }

    #[test]
    fn seeded_and_disjoint_from_positives() {
        let pos = positive_pairs(&[(0, 1), (1, 0), (2, 2), (3, 4)], true);
        assert_eq!(pos, vec![(0, 1), (3, 4)]);
        let a = sample_negatives(&pos, 6, 6, true, 5).unwrap();
        assert_eq!(a, sample_negatives(&pos, 6, 6, true, 5).unwrap());

        let pos: Vec<_> = (0..20).map(|i| (i, (i * 7) % 13)).collect();
        for seed in 0..1000 {
            let neg = sample_negatives(&pos, 20, 13, false, seed).unwrap();
            assert_eq!(neg.len(), pos.len());
            let uniq: HashSet<_> = neg.iter().collect();
            assert_eq!(uniq.len(), neg.len());
            assert!(neg.iter().all(|p| !pos.contains(p) && p.0 < 20 && p.1 < 13));
        }
    }

    #[test]
    fn dense_positives_use_enumeration() {
        let pos: Vec<_> = (0..5).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|p| p.0 != p.1).collect();
        let neg = sample_negatives(&pos, 5, 4, false, 1).unwrap();
        let mut sorted = neg.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }
}
