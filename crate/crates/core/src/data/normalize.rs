use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// Adjacency normalization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `1 / deg_dst(i)`: every nonempty row averages its neighbors.
    Row,
    /// `1 / sqrt(deg_dst(i) · deg_src(j))`.
    Sym,
}

impl Normalization {
    /// Row normalization across types, symmetric within a type.
    pub fn default_for(same_type: bool) -> Self {
        if same_type {
            Normalization::Sym
        } else {
            Normalization::Row
        }
    }
}

/// Builds the `n_dst × n_src` normalized adjacency of `(src, dst)` edges.
///
/// Repeated edges collapse into one. Rows of destinations without incoming
/// edges stay empty.
pub fn normalize_adjacency(
    edges: &[(usize, usize)],
    n_dst: usize,
    n_src: usize,
    kind: Normalization,
) -> Result<SparseMatrix> {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(s, d) in edges {
        if s >= n_src || d >= n_dst {
            return Err(Error::Index(format!(
                "edge ({s}, {d}) outside {n_src} sources x {n_dst} destinations"
            )));
        }
        pairs.push((d, s));
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut deg_dst = vec![0usize; n_dst];
    let mut deg_src = vec![0usize; n_src];
    for &(d, s) in &pairs {
        deg_dst[d] += 1;
        deg_src[s] += 1;
    }
    let entries: Vec<_> = pairs
        .iter()
        .map(|&(d, s)| {
            let w = match kind {
                Normalization::Row => 1.0 / deg_dst[d] as f64,
                Normalization::Sym => 1.0 / ((deg_dst[d] * deg_src[s]) as f64).sqrt(),
            };
            (d, s, w)
        })
        .collect();
    SparseMatrix::from_triplets(n_dst, n_src, &entries)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use proptest::prelude::*;

    use super::*;
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn row_normalization_by_hand() {
        // dst 0 receives from sources 0 and 1, dst 1 from source 1
        let a = normalize_adjacency(&[(0, 0), (1, 0), (1, 1)], 2, 2, Normalization::Row).unwrap();
        assert_eq!(a.to_dense().data(), &[0.5, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn sym_self_loop_has_unit_weight() {
        let a = normalize_adjacency(&[(0, 0)], 1, 1, Normalization::Sym).unwrap();
        assert_eq!(a.to_dense().data(), &[1.0]);
    }

    #[test]
    fn isolated_destination_yields_zero_row() {
        let a = Rc::new(normalize_adjacency(&[(0, 0)], 2, 1, Normalization::Row).unwrap());
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap());
        let y = g.spmm(&a, x).unwrap();
        assert_eq!(g.value(y).row(1), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(normalize_adjacency(&[(2, 0)], 2, 2, Normalization::Row).is_err());
    }

    fn edge_set() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..9).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..30)))
    }

    proptest! {
        #[test]
        fn nonzero_rows_sum_to_one((n, edges) in edge_set(), m in 1usize..9) {
            let edges: Vec<_> = edges.into_iter().map(|(s, d)| (s % m, d)).collect();
            let a = normalize_adjacency(&edges, n, m, Normalization::Row).unwrap();
            for i in 0..n {
                let row: Vec<f64> = a.row(i).map(|(_, w)| w).collect();
                if !row.is_empty() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn sym_on_symmetric_edges_is_symmetric((n, edges) in edge_set()) {
            let mut both = edges.clone();
            both.extend(edges.iter().map(|&(s, d)| (d, s)));
            let a = normalize_adjacency(&both, n, n, Normalization::Sym).unwrap().to_dense();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(a.at(i, j), a.at(j, i));
                }
            }
        }
    }
}
