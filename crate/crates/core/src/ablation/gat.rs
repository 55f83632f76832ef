use crate::error::Result;
use crate::tensor::{Activation, Graph, Var};

/// Graph-attention aggregation of one relation.
///
/// `edges` are `(dst, src)` pairs. With `P = H W`, edge scores are
/// `LeakyReLU(P_dst·a_dst + P_src·a_src)`, normalized by a softmax over each
/// destination's incoming edges; the output row of a destination is the
/// weighted sum of its neighbors' `P_src`. Destinations without incoming
/// edges get a zero row.
///
/// `h_src: [n_src, d]`, `h_dst: [n_dst, d]`, `w: [d, d']`, `a_src, a_dst: [d', 1]`.
pub fn gat_aggregate(
    g: &mut Graph,
    edges: &[(usize, usize)],
    h_src: Var,
    h_dst: Var,
    w: Var,
    a_src: Var,
    a_dst: Var,
) -> Result<Var> {
    let n_dst = g.shape(h_dst)[0];
    let p_src = g.matmul(h_src, w)?;
    let d_out = g.shape(p_src)[1];
    if edges.is_empty() {
        return Ok(g.constant(crate::tensor::Tensor::zeros(&[n_dst, d_out])));
    }
    let p_dst = g.matmul(h_dst, w)?;
    let s_src = g.matmul(p_src, a_src)?;
    let s_src = g.reshape(s_src, &[g.shape(p_src)[0]])?;
    let s_dst = g.matmul(p_dst, a_dst)?;
    let s_dst = g.reshape(s_dst, &[n_dst])?;
    let dsts: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let srcs: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let e_dst = g.gather_rows(s_dst, &dsts)?;
    let e_src = g.gather_rows(s_src, &srcs)?;
    let raw = g.add(e_dst, e_src)?;
    let scores = g.activation(raw, Activation::LeakyRelu)?;
    let weights = g.segment_softmax(scores, &dsts)?;
    g.scatter_weighted(weights, p_src, edges, n_dst)
}
