//! The building blocks of the forward pass as free functions over a tape.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gru_cell, Graph, GruParams, SparseMatrix, Var};

/// `X W + b`: `[n, f] × [f, d] + [d]`.
pub fn project_features(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Parameter-free neighbor aggregation `ELU(A H_src)`.
pub fn aggregate_relation(g: &mut Graph, adj: &Rc<SparseMatrix>, h_src: Var) -> Result<Var> {
    let ah = g.spmm(adj, h_src)?;
    g.elu(ah)
}

/// One step of a relation's attention chain: `e_t = GRU(H_{v,r}^t, e_{t-1})`.
pub fn dynamic_attention_step(g: &mut Graph, h: Var, e_prev: Var, p: &GruParams) -> Result<Var> {
    gru_cell(g, h, e_prev, p)
}

/// Relation fusion of one destination type at one snapshot.
///
/// `ebar[i]` is the scalar summary of relation `i`'s coefficients; `shift` is
/// added to all of them before normalization. Returns `(α, Σ α_i H_i)`.
pub fn fuse_relations(g: &mut Graph, ebar: &[Var], hs: &[Var], shift: f64) -> Result<(Var, Var)> {
    if ebar.is_empty() || ebar.len() != hs.len() {
        return Err(Error::Dimension(format!(
            "fusion over {} coefficients and {} representations",
            ebar.len(),
            hs.len()
        )));
    }
    let mut s = g.stack(ebar)?;
    if shift != 0.0 {
        s = g.add_const(s, shift)?;
    }
    let alpha = g.softmax(s)?;
    let mut acc = None;
    for (i, &h) in hs.iter().enumerate() {
        let a = g.index(alpha, i)?;
        let term = g.scale_by(h, a)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok((alpha, acc.expect("non-empty relation set")))
}

/// Contracts the time axis of a window of representations.
///
/// `zs` holds `T` matrices `[n, d]`; with `w: [T, β]` and `b: [β]` the result
/// holds `β` matrices `Σ_t zs[t]·w[t, s] + b[s]`.
pub fn temporal_project(g: &mut Graph, zs: &[Var], w: Var, b: Var) -> Result<Vec<Var>> {
    let t = zs.len();
    let ws = g.shape(w).to_vec();
    if ws.len() != 2 || ws[0] != t {
        return Err(Error::Dimension(format!("temporal projection {ws:?} over a window of {t}")));
    }
    let beta = ws[1];
    let z = g.stack_last(zs)?;
    let s = g.shape(z).to_vec();
    let flat = g.reshape(z, &[s[0] * s[1], t])?;
    let proj = g.matmul(flat, w)?;
    let proj = g.add_bias(proj, b)?;
    let cube = g.reshape(proj, &[s[0], s[1], beta])?;
    (0..beta).map(|k| g.slice_last(cube, k)).collect()
}

/// Two affine layers with an ELU between them.
pub fn mlp_head(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = project_features(g, x, w1, b1)?;
    let h = g.elu(h)?;
    project_features(g, h, w2, b2)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn projection_identity_and_bias_only() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let i = g.constant(Tensor::identity(2));
        let zero = g.constant(Tensor::zeros(&[2]));
        let y = project_features(&mut g, x, i, zero).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x0 = g.constant(Tensor::zeros(&[3, 2]));
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let y = project_features(&mut g, x0, w, b).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(y).row(r), &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn projection_matches_affine_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, w, b) = (rand_t(&mut rng, &[4, 3]), rand_t(&mut rng, &[3, 5]), rand_t(&mut rng, &[5]));
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = project_features(&mut g, xv, wv, bv).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = b.data()[j];
                for k in 0..3 {
                    s += x.at(i, k) * w.at(k, j);
                }
                assert!((g.value(y).at(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_cases() {
        let adj = Rc::new(SparseMatrix::from_triplets(3, 2, &[(0, 0, 0.5), (0, 1, 0.5), (1, 1, 1.0)]).unwrap());
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap());
        let out = aggregate_relation(&mut g, &adj, h).unwrap();
        assert_eq!(g.value(out).data(), &[2.0, 1.0, 3.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hs = rand_t(&mut rng, &[2, 4]);
        let hv = g.constant(hs.clone());
        let out = aggregate_relation(&mut g, &adj, hv).unwrap();
        let dense = adj.to_dense();
        for i in 0..3 {
            for j in 0..4 {
                let raw: f64 = (0..2).map(|k| dense.at(i, k) * hs.at(k, j)).sum();
                let want = if raw >= 0.0 { raw } else { raw.exp() - 1.0 };
                assert!((g.value(out).at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gru_halves_constant_state() {
        let mut g = Graph::new();
        let mut z = |s: &[usize]| g.constant(Tensor::zeros(s));
        let p = GruParams {
            wz: z(&[2, 3]),
            uz: z(&[3, 3]),
            bz: z(&[3]),
            wr: z(&[2, 3]),
            ur: z(&[3, 3]),
            br: z(&[3]),
            wh: z(&[2, 3]),
            uh: z(&[3, 3]),
            bh: z(&[3]),
        };
        let h = g.constant(Tensor::from_rows(&[vec![0.2, 0.4], vec![1.0, 1.0]]).unwrap());
        let e = g.constant(Tensor::new(vec![2, 3], vec![0.6; 6]).unwrap());
        let out = dynamic_attention_step(&mut g, h, e, &p).unwrap();
        assert!(g.value(out).data().iter().all(|x| (x - 0.3).abs() < 1e-15));
    }

    #[test]
    fn broadcast_initial_state_keeps_identical_rows_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let mut put = |s: &[usize]| {
            let t = rand_t(&mut rng, s);
            g.constant(t)
        };
        let p = GruParams {
            wz: put(&[2, 2]),
            uz: put(&[2, 2]),
            bz: put(&[2]),
            wr: put(&[2, 2]),
            ur: put(&[2, 2]),
            br: put(&[2]),
            wh: put(&[2, 2]),
            uh: put(&[2, 2]),
            bh: put(&[2]),
        };
        let s = g.scalar(0.4);
        let e = g.broadcast(s, &[3, 2]).unwrap();
        let h = g.constant(Tensor::from_rows(&[vec![0.1, 0.9], vec![0.1, 0.9], vec![0.1, 0.9]]).unwrap());
        let out = dynamic_attention_step(&mut g, h, e, &p).unwrap();
        let v = g.value(out);
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(v.row(1), v.row(2));
    }

    #[test]
    fn fusion_cases() {
        let mut g = Graph::new();
        let h1 = g.constant(Tensor::from_rows(&[vec![3.0, 0.0]]).unwrap());
        let h2 = g.constant(Tensor::from_rows(&[vec![0.0, 3.0]]).unwrap());
        let (a, b) = (g.scalar(0.7), g.scalar(0.7));
        let (alpha, out) = fuse_relations(&mut g, &[a, b], &[h1, h2], 0.0).unwrap();
        assert_eq!(g.value(alpha).data(), &[0.5, 0.5]);
        assert_eq!(g.value(out).data(), &[1.5, 1.5]);

        let (alpha, out) = fuse_relations(&mut g, &[a], &[h1], 0.0).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);
        assert_eq!(g.value(out), g.value(h1));

        let (l2, zero) = (g.scalar(2f64.ln()), g.scalar(0.0));
        let (alpha, out) = fuse_relations(&mut g, &[l2, zero], &[h1, h2], 0.0).unwrap();
        assert!((g.value(alpha).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        let o = g.value(out).data();
        assert!((o[0] - 2.0).abs() < 1e-12 && (o[1] - 1.0).abs() < 1e-12);

        let (shifted, _) = fuse_relations(&mut g, &[l2, zero], &[h1, h2], 123.0).unwrap();
        assert!(g.value(shifted).max_abs_diff(g.value(alpha)) < 1e-12);
        assert!(fuse_relations(&mut g, &[], &[], 0.0).is_err());
    }

    #[test]
    fn temporal_selector_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = Graph::new();
        let zs: Vec<Var> = (0..3).map(|_| g.constant(rand_t(&mut rng, &[2, 4]))).collect();
        let sel = g.constant(Tensor::from_rows(&[vec![0.0], vec![0.0], vec![1.0]]).unwrap());
        let b0 = g.constant(Tensor::zeros(&[1]));
        let out = temporal_project(&mut g, &zs, sel, b0).unwrap();
        assert_eq!(g.value(out[0]), g.value(zs[2]));

        let w0 = g.constant(Tensor::zeros(&[3, 1]));
        let out = temporal_project(&mut g, &zs, w0, b0).unwrap();
        assert!(g.value(out[0]).data().iter().all(|x| *x == 0.0));

        let eye = g.constant(Tensor::identity(3));
        let b3 = g.constant(Tensor::zeros(&[3]));
        let out = temporal_project(&mut g, &zs, eye, b3).unwrap();
        for k in 0..3 {
            assert_eq!(g.value(out[k]), g.value(zs[k]));
        }
    }

    #[test]
    fn temporal_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d, t, beta) = (3, 2, 4, 2);
        let zs_t: Vec<Tensor> = (0..t).map(|_| rand_t(&mut rng, &[n, d])).collect();
        let w = rand_t(&mut rng, &[t, beta]);
        let b = rand_t(&mut rng, &[beta]);
        let mut g = Graph::new();
        let zs: Vec<Var> = zs_t.iter().map(|z| g.constant(z.clone())).collect();
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        let out = temporal_project(&mut g, &zs, wv, bv).unwrap();
        for s in 0..beta {
            for i in 0..n {
                for j in 0..d {
                    let mut acc = b.data()[s];
                    for k in 0..t {
                        acc += zs_t[k].at(i, j) * w.at(k, s);
                    }
                    assert!((g.value(out[s]).at(i, j) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn head_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap());
        let i = g.constant(Tensor::identity(2));
        let z2 = g.constant(Tensor::zeros(&[2]));
        let y = mlp_head(&mut g, x, i, z2, i, z2).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let w0 = g.constant(Tensor::zeros(&[2, 1]));
        let b = g.constant(Tensor::vector(vec![4.5]));
        let y = mlp_head(&mut g, x, i, z2, w0, b).unwrap();
        assert_eq!(g.value(y).data(), &[4.5]);

        let wc = g.constant(Tensor::zeros(&[2, 2]));
        let logits = mlp_head(&mut g, x, i, z2, wc, z2).unwrap();
        let row = g.reshape(logits, &[2]).unwrap();
        let p = g.softmax(row).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }
}
