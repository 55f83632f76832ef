use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Dot-product scores `h_src[i] · h_dst[j]` of `pairs`.
pub fn pair_scores(g: &mut Graph, h_src: Var, h_dst: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let is: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let js: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a = g.gather_rows(h_src, &is)?;
    let b = g.gather_rows(h_dst, &js)?;
    g.row_dot(a, b)
}

/// `−Σ log σ(pos) − Σ log σ(−neg)` over pair scores.
pub fn link_loss(g: &mut Graph, h_src: Var, h_dst: Var, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<Var> {
    if pos.is_empty() {
        return Err(Error::Dimension("link loss needs at least one positive pair".into()));
    }
    let sp = pair_scores(g, h_src, h_dst, pos)?;
    let lp = g.log_sigmoid(sp)?;
    let mut total = g.sum(lp)?;
    if !neg.is_empty() {
        let sn = pair_scores(g, h_src, h_dst, neg)?;
        let flipped = g.neg(sn)?;
        let ln = g.log_sigmoid(flipped)?;
        let s = g.sum(ln)?;
        total = g.add(total, s)?;
    }
    g.neg(total)
}

/// Summed negative log-likelihood of `labels` under row-wise softmax of
/// `logits` restricted to `nodes`.
pub fn classify_loss(g: &mut Graph, logits: Var, nodes: &[usize], labels: &[usize]) -> Result<Var> {
    let rows = g.gather_rows(logits, nodes)?;
    g.nll_sum(rows, labels)
}

/// Mean absolute error of the single-column predictions at `nodes`.
pub fn regress_loss(g: &mut Graph, pred: Var, nodes: &[usize], y: &[f64]) -> Result<Var> {
    if nodes.is_empty() || nodes.len() != y.len() {
        return Err(Error::Dimension(format!("regression over {} nodes and {} targets", nodes.len(), y.len())));
    }
    let rows = g.gather_rows(pred, nodes)?;
    let flat = g.reshape(rows, &[nodes.len()])?;
    let target = g.constant(crate::tensor::Tensor::vector(y.to_vec()));
    let diff = g.sub(flat, target)?;
    let abs = g.abs(diff)?;
    let s = g.sum(abs)?;
    g.scale(s, 1.0 / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use super::*;
    use crate::tensor::Tensor;

    fn mat(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn link_loss_examples() {
        let mut g = Graph::new();
        let h = mat(&mut g, &[vec![0.0, 0.0], vec![1.0, 2.0]]);
        let l = link_loss(&mut g, h, h, &[(0, 1)], &[]).unwrap();
        assert!((g.item(l).unwrap() - LN_2).abs() < 1e-9);
        let l = link_loss(&mut g, h, h, &[(0, 1)], &[(1, 0)]).unwrap();
        assert!((g.item(l).unwrap() - 2.0 * LN_2).abs() < 1e-9);

        let mut prev = f64::INFINITY;
        for dot in [0.0, 1.0, 5.0, 10.0, 20.0] {
            let a = mat(&mut g, &[vec![dot]]);
            let b = mat(&mut g, &[vec![1.0]]);
            let lv = link_loss(&mut g, a, b, &[(0, 0)], &[]).unwrap();
            let l = g.item(lv).unwrap();
            assert!(l < prev && l > 0.0);
            prev = l;
        }
        assert!(prev < 1e-8);
        assert!(link_loss(&mut g, h, h, &[], &[(0, 1)]).is_err());
    }

    #[test]
    fn link_loss_is_overflow_safe() {
        let mut g = Graph::new();
        let a = mat(&mut g, &[vec![1e3]]);
        let b = mat(&mut g, &[vec![1e3]]);
        let l = link_loss(&mut g, a, b, &[(0, 0)], &[(0, 0)]).unwrap();
        assert!((g.item(l).unwrap() - 1e6).abs() < 1e-6);
    }

    #[test]
    fn classify_loss_examples() {
        let mut g = Graph::new();
        let z = mat(&mut g, &[vec![0.0, 0.0], vec![100.0, 0.0]]);
        let l = classify_loss(&mut g, z, &[0], &[0]).unwrap();
        assert!((g.item(l).unwrap() - LN_2).abs() < 1e-9);
        let l = classify_loss(&mut g, z, &[1], &[0]).unwrap();
        assert!(g.item(l).unwrap() < 1e-8);
        let s = mat(&mut g, &[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let l = classify_loss(&mut g, s, &[0, 1], &[1, 0]).unwrap();
        let ov = classify_loss(&mut g, s, &[0], &[1]).unwrap();
        let one = g.item(ov).unwrap();
        assert!((g.item(l).unwrap() - 2.0 * one).abs() < 1e-12);
        let l = classify_loss(&mut g, z, &[0, 0], &[0, 1]).unwrap();
        assert!((g.item(l).unwrap() - 2.0 * LN_2).abs() < 1e-9);
        assert!(classify_loss(&mut g, z, &[0], &[2]).is_err());
    }

    #[test]
    fn regress_loss_examples() {
        let mut g = Graph::new();
        let p = mat(&mut g, &[vec![2.0], vec![5.0]]);
        let l = regress_loss(&mut g, p, &[0, 1], &[1.0, 3.0]).unwrap();
        assert_eq!(g.item(l).unwrap(), 1.5);
        let l = regress_loss(&mut g, p, &[0, 1], &[2.0, 5.0]).unwrap();
        assert_eq!(g.item(l).unwrap(), 0.0);
        let shifted = mat(&mut g, &[vec![12.0], vec![15.0]]);
        let l = regress_loss(&mut g, shifted, &[0, 1], &[11.0, 13.0]).unwrap();
        assert_eq!(g.item(l).unwrap(), 1.5);
        assert!(regress_loss(&mut g, p, &[], &[]).is_err());
    }
}
