use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::projected_score;
use crate::error::{Error, Result};
use crate::model::{
    aggregate_relation, check_window, fuse_relations, mlp_head, project_features, Bound, Forecaster, ForwardOptions,
    ForwardOutput, HeadKind, ModelConfig, ParamStore, PreparedGraph, Schema,
};
use crate::tensor::{Graph, Var};

/// Spatial-then-temporal baseline.
///
/// Every window position owns its relation weights and relation scorer, so
/// the parameter count grows with the window. Snapshot representations are
/// then combined per node by causal self-attention over the window, whose
/// cost is quadratic in its length. Step `s` of the forecast is an affine map
/// of the last attended position, fed to the shared head.
#[derive(Debug, Clone)]
pub struct DecoupledBaseline {
    cfg: ModelConfig,
    schema: Schema,
    head: HeadKind,
}

impl DecoupledBaseline {
    pub fn new(schema: &Schema, cfg: &ModelConfig, head: HeadKind) -> Result<Self> {
        cfg.validate()?;
        if let Some(v) = schema.incoming.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("type '{}' has no incoming relation", schema.type_names[v])));
        }
        Ok(DecoupledBaseline { cfg: *cfg, schema: schema.clone(), head })
    }

    /// Representations of every type at window position `t`.
    fn spatial(&self, g: &mut Graph, p: &Bound, data: &PreparedGraph, t: usize, snap: usize) -> Result<Vec<Var>> {
        let s = &self.schema;
        let mut h = Vec::with_capacity(s.num_types());
        for (v, name) in s.type_names.iter().enumerate() {
            let x = g.constant(data.features(v, snap).clone());
            h.push(project_features(g, x, p.get(&format!("proj.{name}.W"))?, p.get(&format!("proj.{name}.b"))?)?);
        }
        let (w, b, q) = (
            p.get(&format!("spatial.{t}.W"))?,
            p.get(&format!("spatial.{t}.b"))?,
            p.get(&format!("spatial.{t}.q"))?,
        );
        let mut out = Vec::with_capacity(s.num_types());
        for incoming in &s.incoming {
            let mut hs = Vec::with_capacity(incoming.len());
            let mut scores = Vec::with_capacity(incoming.len());
            for &r in incoming {
                let rel = &s.relations[r];
                let hw = g.matmul(h[rel.src], p.get(&format!("spatial.{t}.{}.W", rel.name))?)?;
                let agg = aggregate_relation(g, data.adjacency(r, snap), hw)?;
                scores.push(projected_score(g, agg, w, b, q)?);
                hs.push(agg);
            }
            out.push(fuse_relations(g, &scores, &hs, 0.0)?.1);
        }
        Ok(out)
    }

    /// Causal self-attention over the window for one type; returns the
    /// representation at the last position.
    fn temporal(&self, g: &mut Graph, p: &Bound, seq: &[Var], n: usize) -> Result<Var> {
        let (t, d) = (seq.len(), self.cfg.hidden_dim);
        let time_major = g.concat_rows(seq)?;
        let node_major: Vec<usize> = (0..n).flat_map(|i| (0..t).map(move |k| k * n + i)).collect();
        let x = g.gather_rows(time_major, &node_major)?;
        let proj = |g: &mut Graph, name: &str| -> Result<Var> {
            let y = g.matmul(x, p.get(name)?)?;
            g.reshape(y, &[n, t, d])
        };
        let q = proj(g, "temporal_att.Wq")?;
        let k = proj(g, "temporal_att.Wk")?;
        let v = proj(g, "temporal_att.Wv")?;
        let att = g.causal_attention(q, k, v)?;
        let flat = g.reshape(att, &[n * t, d])?;
        let last: Vec<usize> = (0..n).map(|i| i * t + t - 1).collect();
        g.gather_rows(flat, &last)
    }
}

impl Forecaster for DecoupledBaseline {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn head(&self) -> HeadKind {
        self.head
    }

    fn window(&self) -> usize {
        self.cfg.window
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let d = self.cfg.hidden_dim;
        let s = &self.schema;
        for (v, name) in s.type_names.iter().enumerate() {
            let f = s.feature_dims[v];
            ps.insert_uniform(format!("proj.{name}.W"), &[f, d], f, &mut rng);
            ps.insert_uniform(format!("proj.{name}.b"), &[d], f, &mut rng);
        }
        for t in 0..self.cfg.window {
            for rel in &s.relations {
                ps.insert_uniform(format!("spatial.{t}.{}.W", rel.name), &[d, d], d, &mut rng);
            }
            ps.insert_uniform(format!("spatial.{t}.W"), &[d, d], d, &mut rng);
            ps.insert_uniform(format!("spatial.{t}.b"), &[d], d, &mut rng);
            ps.insert_uniform(format!("spatial.{t}.q"), &[d, 1], d, &mut rng);
        }
        for n in ["Wq", "Wk", "Wv"] {
            ps.insert_uniform(format!("temporal_att.{n}"), &[d, d], d, &mut rng);
        }
        for st in 0..self.cfg.horizon {
            ps.insert_uniform(format!("out.{st}.W"), &[d, d], d, &mut rng);
            ps.insert_uniform(format!("out.{st}.b"), &[d], d, &mut rng);
        }
        let out = self.head.out_dim(d);
        ps.insert_uniform("head.1.W", &[d, d], d, &mut rng);
        ps.insert_uniform("head.1.b", &[d], d, &mut rng);
        ps.insert_uniform("head.2.W", &[d, out], d, &mut rng);
        ps.insert_uniform("head.2.b", &[out], d, &mut rng);
        ps
    }

    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        data: &PreparedGraph,
        target: usize,
        outputs: &[usize],
        _opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        check_window(data, &self.schema, self.cfg.window, target)?;
        let start = target - self.cfg.window;
        let per_t = (0..self.cfg.window)
            .map(|t| self.spatial(g, p, data, t, start + t))
            .collect::<Result<Vec<_>>>()?;
        let (w1, b1, w2, b2) = (p.get("head.1.W")?, p.get("head.1.b")?, p.get("head.2.W")?, p.get("head.2.b")?);
        let mut predictions = BTreeMap::new();
        for &v in outputs {
            if v >= self.schema.num_types() {
                return Err(Error::Index(format!("output type {v} of {}", self.schema.num_types())));
            }
            let seq: Vec<Var> = per_t.iter().map(|h| h[v]).collect();
            let last = self.temporal(g, p, &seq, self.schema.counts[v])?;
            let mut preds = Vec::with_capacity(self.cfg.horizon);
            for st in 0..self.cfg.horizon {
                let z = project_features(g, last, p.get(&format!("out.{st}.W"))?, p.get(&format!("out.{st}.b"))?)?;
                preds.push(mlp_head(g, z, w1, b1, w2, b2)?);
            }
            predictions.insert(v, preds);
        }
        Ok(ForwardOutput { predictions, attention: Vec::new(), init: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn setup(window: usize) -> (PreparedGraph, DecoupledBaseline) {
        let mut cfg = SynthConfig::toy(1);
        cfg.num_snapshots = 6;
        let data = PreparedGraph::new(&generate_synthetic(&cfg).unwrap().graph).unwrap();
        let mc = ModelConfig { hidden_dim: 4, window, horizon: 2, ..ModelConfig::default() };
        let m = DecoupledBaseline::new(&data.schema, &mc, HeadKind::Regress).unwrap();
        (data, m)
    }

    #[test]
    fn parameters_grow_with_window() {
        let (_, a) = setup(2);
        let (_, b) = setup(5);
        let (pa, pb) = (a.init_params(0).count(), b.init_params(0).count());
        assert!(pb > pa);
        let per_t = pa - setup(1).1.init_params(0).count();
        assert_eq!(pb - pa, 3 * per_t);
    }

    #[test]
    fn forward_shapes_and_causality() {
        let (data, m) = setup(3);
        let ps = m.init_params(4);
        let run = |data: &PreparedGraph| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g, |_| false);
            let out = m.forward(&mut g, &b, data, 4, &[0, 1], &ForwardOptions::default()).unwrap();
            assert_eq!(out.predictions[&1].len(), 2);
            out.predictions[&0].iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
        };
        let base = run(&data);
        assert_eq!(base[0].shape(), &[5, 1]);
        let mut later = data.graph.clone();
        for f in &mut later.snapshots[4].features {
            f.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        assert_eq!(run(&PreparedGraph::new(&later).unwrap()), base);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (data, m) = setup(2);
        let ps = m.init_params(3);
        let loss_of = |ps: &ParamStore| -> (f64, BTreeMap<String, Vec<f64>>) {
            let mut g = Graph::new();
            let b = ps.bind(&mut g, |_| false);
            let out = m.forward(&mut g, &b, &data, 3, &[1], &ForwardOptions::default()).unwrap();
            let s = g.sum(out.predictions[&1][1]).unwrap();
            g.backward(s).unwrap();
            (g.value(s).item().unwrap(), b.grads(&g))
        };
        let (_, grads) = loss_of(&ps);
        for name in ["spatial.1.q", "temporal_att.Wk", "out.1.W", "proj.paper.W"] {
            for i in 0..2 {
                let mut plus = ps.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += 1e-6;
                let mut minus = ps.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= 1e-6;
                let num = (loss_of(&plus).0 - loss_of(&minus).0) / 2e-6;
                let ana = grads[name][i];
                assert!((num - ana).abs() <= 1e-5 * (1.0 + ana.abs()), "{name}[{i}]: {num} vs {ana}");
            }
        }
    }
}
