use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Scalar score `mean_rows(tanh(H W + b)) · q` of one relation's
/// representation `H: [n, d]`, with `W: [d, d]`, `b: [d]`, `q: [d, 1]`.
pub fn projected_score(g: &mut Graph, h: Var, w: Var, b: Var, q: Var) -> Result<Var> {
    let hw = g.matmul(h, w)?;
    let pre = g.add_bias(hw, b)?;
    let act = g.tanh(pre)?;
    let pooled = g.mean_rows(act)?;
    let d = g.shape(pooled)[0];
    let row = g.reshape(pooled, &[1, d])?;
    let s = g.matmul(row, q)?;
    g.index(s, 0)
}

/// Per-snapshot relation attention with no memory: the softmax of
/// [`projected_score`] over the relations `hs` of one destination type.
pub fn static_relation_attention(g: &mut Graph, hs: &[Var], w: Var, b: Var, q: Var) -> Result<Var> {
    if hs.is_empty() {
        return Err(Error::Dimension("relation attention over an empty relation set".into()));
    }
    let scores = hs
        .iter()
        .map(|&h| projected_score(g, h, w, b, q))
        .collect::<Result<Vec<_>>>()?;
    let s = g.stack(&scores)?;
    g.softmax(s)
}

/// One gated update `e = g∘e_prev + (1−g)∘s` with `g = σ(H Wg + bg)` and
/// `s = H Ws + bs`; `H: [n, d]`, `e_prev: [n, k]`.
pub fn gated_step(g: &mut Graph, h: Var, e_prev: Var, wg: Var, bg: Var, ws: Var, bs: Var) -> Result<Var> {
    let gp = g.matmul(h, wg)?;
    let gp = g.add_bias(gp, bg)?;
    let gate = g.sigmoid(gp)?;
    let sp = g.matmul(h, ws)?;
    let score = g.add_bias(sp, bs)?;
    // score + gate ∘ (e_prev − score)
    let diff = g.sub(e_prev, score)?;
    let kept = g.mul(gate, diff)?;
    g.add(score, kept)
}

/// Causal self-attention over the per-snapshot mean representations of one
/// relation. Queries and keys are `m_t Wq`, `m_t Wk`; the values are scalar
/// scores `m_t · ws + bs`. Returns one scalar per snapshot.
pub fn self_attention_scores(
    g: &mut Graph,
    hs: &[Var],
    wq: Var,
    wk: Var,
    ws: Var,
    bs: Var,
) -> Result<Vec<Var>> {
    let t = hs.len();
    if t == 0 {
        return Err(Error::Dimension("self attention over an empty sequence".into()));
    }
    let mut rows = Vec::with_capacity(t);
    for &h in hs {
        let m = g.mean_rows(h)?;
        let d = g.shape(m)[0];
        rows.push(g.reshape(m, &[1, d])?);
    }
    let seq = g.concat_rows(&rows)?;
    let q = g.matmul(seq, wq)?;
    let k = g.matmul(seq, wk)?;
    let v = g.matmul(seq, ws)?;
    let v = g.add_bias(v, bs)?;
    let dk = g.shape(q)[1];
    let q = g.reshape(q, &[1, t, dk])?;
    let k = g.reshape(k, &[1, t, dk])?;
    let v = g.reshape(v, &[1, t, 1])?;
    let out = g.causal_attention(q, k, v)?;
    (0..t).map(|i| g.index(out, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn c(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn equal_scores_give_uniform_attention() {
        let mut g = Graph::new();
        let h = c(&mut g, &[vec![0.3, -0.2], vec![1.0, 0.5]]);
        let w = c(&mut g, &[vec![0.1, 0.2], vec![-0.3, 0.4]]);
        let b = g.constant(Tensor::vector(vec![0.0, 0.1]));
        let q = c(&mut g, &[vec![1.0], vec![-1.0]]);
        let a = static_relation_attention(&mut g, &[h, h, h], w, b, q).unwrap();
        for p in g.value(a).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let single = static_relation_attention(&mut g, &[h], w, b, q).unwrap();
        assert_eq!(g.value(single).data(), &[1.0]);
    }

    #[test]
    fn saturated_gate_keeps_previous_state() {
        let mut g = Graph::new();
        let h = c(&mut g, &[vec![0.3, -0.2], vec![1.0, 0.5]]);
        let e0 = c(&mut g, &[vec![0.25], vec![0.25]]);
        let wg = c(&mut g, &[vec![0.0], vec![0.0]]);
        let bg = g.constant(Tensor::vector(vec![1e3]));
        let ws = c(&mut g, &[vec![0.7], vec![-0.4]]);
        let bs = g.constant(Tensor::vector(vec![0.2]));
        let mut e = e0;
        for _ in 0..4 {
            e = gated_step(&mut g, h, e, wg, bg, ws, bs).unwrap();
        }
        assert!(g.value(e).max_abs_diff(g.value(e0)) < 1e-15);
    }

    #[test]
    fn single_step_self_attention_returns_its_score() {
        let mut g = Graph::new();
        let h = c(&mut g, &[vec![0.5, 1.0], vec![1.5, -1.0]]);
        let wq = c(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ws = c(&mut g, &[vec![2.0], vec![3.0]]);
        let bs = g.constant(Tensor::vector(vec![0.5]));
        let out = self_attention_scores(&mut g, &[h], wq, wq, ws, bs).unwrap();
        // mean row = [1.0, 0.0], score = 2.0 + 0.5
        assert_eq!(g.item(out[0]).unwrap(), 2.5);
    }
}
