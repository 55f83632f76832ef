use crate::error::{Error, Result};
use crate::model::Schema;
use crate::tensor::{Graph, Tensor, Var};

/// Initial attention coefficients from type embeddings, on the tape.
///
/// `emb: [types, d_llm]` holds one embedding per node type, `wq, wk:
/// [d_llm, d_sim]`. For a relation `r` from `u` into `v` the similarity is
/// `(h_u Wq) · (h_v Wk)`; the coefficients of `v` are the softmax of the
/// similarities over its incoming relations. Returns one vector per type,
/// ordered like `schema.incoming[v]`.
pub fn init_attention(g: &mut Graph, emb: Var, wq: Var, wk: Var, schema: &Schema) -> Result<Vec<Var>> {
    if g.shape(emb)[0] != schema.num_types() {
        return Err(Error::Dimension(format!(
            "{} type embeddings for {} node types",
            g.shape(emb)[0],
            schema.num_types()
        )));
    }
    let q = g.matmul(emb, wq)?;
    let k = g.matmul(emb, wk)?;
    let mut out = Vec::with_capacity(schema.num_types());
    for (v, incoming) in schema.incoming.iter().enumerate() {
        if incoming.is_empty() {
            return Err(Error::Dimension(format!("type '{}' has no incoming relation", schema.type_names[v])));
        }
        let srcs: Vec<usize> = incoming.iter().map(|&r| schema.relations[r].src).collect();
        let qs = g.gather_rows(q, &srcs)?;
        let ks = g.gather_rows(k, &vec![v; srcs.len()])?;
        let sim = g.row_dot(qs, ks)?;
        out.push(g.softmax(sim)?);
    }
    Ok(out)
}

/// Plain-value version of [`init_attention`].
pub fn init_coefficients(emb: &Tensor, wq: &Tensor, wk: &Tensor, schema: &Schema) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let (e, q, k) = (g.constant(emb.clone()), g.constant(wq.clone()), g.constant(wk.clone()));
    let vars = init_attention(&mut g, e, q, k, schema)?;
    Ok(vars.into_iter().map(|v| g.value(v).data().to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RelationInfo;

    fn schema() -> Schema {
        let rel = |name: &str, src, dst| RelationInfo { name: name.into(), src, dst };
        Schema {
            type_names: vec!["a".into(), "b".into()],
            counts: vec![2, 2],
            feature_dims: vec![1, 1],
            relations: vec![rel("ab", 0, 1), rel("bb", 1, 1), rel("self_a", 0, 0), rel("self_b", 1, 1)],
            incoming: vec![vec![2], vec![0, 1, 3]],
        }
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let v = crate::prompt::FallbackProvider::new(rows * cols, seed).vector("w");
        Tensor::new(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn identical_embeddings_give_uniform_coefficients() {
        let emb = Tensor::from_rows(&[vec![0.3, -0.4, 0.5], vec![0.3, -0.4, 0.5]]).unwrap();
        let e0 = init_coefficients(&emb, &rand_matrix(3, 2, 1), &rand_matrix(3, 2, 2), &schema()).unwrap();
        assert_eq!(e0[0], vec![1.0]);
        for x in &e0[1] {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_maps_give_uniform_coefficients() {
        let emb = rand_matrix(2, 3, 9);
        let z = Tensor::zeros(&[3, 2]);
        let e0 = init_coefficients(&emb, &z, &z, &schema()).unwrap();
        assert_eq!(e0[1], vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn coefficients_are_distributions_and_differentiable() {
        let emb = rand_matrix(2, 3, 4);
        let mut g = Graph::new();
        let e = g.constant(emb);
        let q = g.leaf(rand_matrix(3, 2, 5).with_grad());
        let k = g.leaf(rand_matrix(3, 2, 6).with_grad());
        let e0 = init_attention(&mut g, e, q, k, &schema()).unwrap();
        for v in &e0 {
            let s: f64 = g.value(*v).data().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let first = g.index(e0[1], 0).unwrap();
        g.backward(first).unwrap();
        assert!(g.grad(q).unwrap().iter().any(|x| *x != 0.0));
        assert!(g.grad(k).unwrap().iter().any(|x| *x != 0.0));
    }
}
