//! The forecasting model: per-type feature projection, parameter-free
//! neighbor aggregation per relation, relation attention driven by one
//! recurrent chain per (layer, relation), relation fusion, a linear
//! projection over the time axis and a two-layer head.
//!
//! Layer and window positions are 0-based. A forward pass for target `t`
//! reads snapshots `t-γ .. t-1` and predicts steps `t .. t+β-1`.

mod checkpoint;
mod ops;
mod params;
mod prepared;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use ops::{aggregate_relation, dynamic_attention_step, fuse_relations, mlp_head, project_features, temporal_project};
pub use params::{Bound, ParamStore};
pub use prepared::{PreparedGraph, RelationInfo, Schema};

use crate::ablation::{
    gat_aggregate, gated_step, projected_score, self_attention_scores, variant_init, AggregationKind, AttentionKind,
    InitKind, VariantConfig,
};
use crate::error::{Error, Result};
use crate::prompt::init_attention;
use crate::tensor::{lstm_cell, Graph, GruParams, LstmParams, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Model dimension `d`.
    pub hidden_dim: usize,
    /// Width `k` of every attention state.
    pub heads: usize,
    pub layers: usize,
    /// Window length `γ`.
    pub window: usize,
    /// Forecast horizon `β`.
    pub horizon: usize,
    /// Width of the type-similarity space; defaults to `hidden_dim`.
    pub sim_dim: Option<usize>,
    /// Keep the type-similarity maps at their initial values.
    pub freeze_llm: bool,
    pub variant: VariantConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 32,
            heads: 1,
            layers: 2,
            window: 4,
            horizon: 1,
            sim_dim: None,
            freeze_llm: false,
            variant: VariantConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("window", self.window),
            ("horizon", self.horizon),
            ("sim_dim", self.sim_dim.unwrap_or(1)),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    fn uses_llm(&self) -> bool {
        self.variant.init == InitKind::Llm && self.variant.attention.uses_init()
    }
}

/// Output layer of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum HeadKind {
    /// Node embeddings of width `d`, scored by dot products.
    Link,
    Classify { classes: usize },
    Regress,
}

impl HeadKind {
    pub fn out_dim(self, hidden: usize) -> usize {
        match self {
            HeadKind::Link => hidden,
            HeadKind::Classify { classes } => classes,
            HeadKind::Regress => 1,
        }
    }
}

/// Adds `amount` to every relation summary of one destination type before
/// normalization, at one layer and window position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbarShift {
    pub layer: usize,
    pub node_type: usize,
    pub step: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOptions {
    pub ebar_shift: Option<EbarShift>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `predictions[v][s]`: head output of type `v` for step `target + s`.
    pub predictions: BTreeMap<usize, Vec<Var>>,
    /// `attention[l][v][t]`: coefficients over `schema.incoming[v]`.
    pub attention: Vec<Vec<Vec<Var>>>,
    /// Initial coefficients per type, for variants that use them.
    pub init: Option<Vec<Var>>,
}

/// Anything that maps a window of snapshots to per-type forecasts.
pub trait Forecaster {
    fn schema(&self) -> &Schema;
    fn head(&self) -> HeadKind;
    fn window(&self) -> usize;
    fn horizon(&self) -> usize;
    fn init_params(&self, seed: u64) -> ParamStore;
    /// Parameters that receive no updates.
    fn is_frozen(&self, _name: &str) -> bool {
        false
    }
    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        data: &PreparedGraph,
        target: usize,
        outputs: &[usize],
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput>;
}

/// Checks that the window ending before `target` exists in `data`.
pub(crate) fn check_window(data: &PreparedGraph, schema: &Schema, window: usize, target: usize) -> Result<()> {
    if data.schema != *schema {
        return Err(Error::Config("graph schema differs from the model's".into()));
    }
    if target < window || target > data.num_snapshots() {
        return Err(Error::Index(format!(
            "target {target} needs snapshots {}..{target}, graph has {}",
            target as i64 - window as i64,
            data.num_snapshots()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    schema: Schema,
    head: HeadKind,
    /// `[types, d_llm]`, present when the initial coefficients come from type embeddings.
    embeddings: Option<Tensor>,
    /// Constant initial coefficients of the other init kinds.
    fixed_init: Option<Vec<Vec<f64>>>,
    /// `slot[r]`: position of relation `r` within `schema.incoming[dst]`.
    slot: Vec<usize>,
}

impl Model {
    /// `schema` must include self relations (see [`PreparedGraph`]).
    /// `embeddings` holds one row per type, in schema order.
    pub fn new(schema: &Schema, cfg: &ModelConfig, head: HeadKind, embeddings: Option<Tensor>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if let HeadKind::Classify { classes } = head {
            if classes < 2 {
                return Err(Error::Config(format!("classification needs at least 2 classes, got {classes}")));
            }
        }
        let sizes: Vec<usize> = schema.incoming.iter().map(Vec::len).collect();
        if let Some(v) = sizes.iter().position(|&m| m == 0) {
            return Err(Error::Config(format!("type '{}' has no incoming relation", schema.type_names[v])));
        }
        let embeddings = if cfg.uses_llm() {
            let e = embeddings
                .ok_or_else(|| Error::Config("init 'llm' needs type embeddings (run `embed` or set a provider)".into()))?;
            if e.shape().len() != 2 || e.rows() != schema.num_types() || e.cols() == 0 {
                return Err(Error::Config(format!(
                    "type embeddings have shape {:?}, expected [{}, d]",
                    e.shape(),
                    schema.num_types()
                )));
            }
            Some(e)
        } else {
            None
        };
        let fixed_init = if cfg.variant.attention.uses_init() { variant_init(cfg.variant.init, &sizes, seed) } else { None };
        let mut slot = vec![0; schema.relations.len()];
        for incoming in &schema.incoming {
            for (i, &r) in incoming.iter().enumerate() {
                slot[r] = i;
            }
        }
        Ok(Model { cfg: *cfg, schema: schema.clone(), head, embeddings, fixed_init, slot })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn d(&self) -> usize {
        self.cfg.hidden_dim
    }

    fn k(&self) -> usize {
        self.cfg.heads
    }

    /// Initial coefficients for every type, on the tape.
    fn initial(&self, g: &mut Graph, p: &Bound) -> Result<Option<Vec<Var>>> {
        if !self.cfg.variant.attention.uses_init() {
            return Ok(None);
        }
        if let Some(emb) = &self.embeddings {
            let e = g.constant(emb.clone());
            let (wq, wk) = (p.get("llm.WQ")?, p.get("llm.WK")?);
            return init_attention(g, e, wq, wk, &self.schema).map(Some);
        }
        let fixed = self.fixed_init.as_ref().expect("constant init for non-llm kinds");
        Ok(Some(fixed.iter().map(|v| g.constant(Tensor::vector(v.clone()))).collect()))
    }

    fn gru(p: &Bound, prefix: &str) -> Result<GruParams> {
        let get = |n: &str| p.get(&format!("{prefix}.{n}"));
        Ok(GruParams {
            wz: get("Wz")?,
            uz: get("Uz")?,
            bz: get("bz")?,
            wr: get("Wr")?,
            ur: get("Ur")?,
            br: get("br")?,
            wh: get("Wh")?,
            uh: get("Uh")?,
            bh: get("bh")?,
        })
    }

    fn lstm(p: &Bound, prefix: &str) -> Result<LstmParams> {
        let get = |n: &str| p.get(&format!("{prefix}.{n}"));
        Ok(LstmParams {
            wi: get("Wi")?,
            ui: get("Ui")?,
            bi: get("bi")?,
            wf: get("Wf")?,
            uf: get("Uf")?,
            bf: get("bf")?,
            wo: get("Wo")?,
            uo: get("Uo")?,
            bo: get("bo")?,
            wc: get("Wc")?,
            uc: get("Uc")?,
            bc: get("bc")?,
        })
    }

    fn aggregate(&self, g: &mut Graph, p: &Bound, data: &PreparedGraph, l: usize, r: usize, snap: usize, h: &[Var]) -> Result<Var> {
        let rel = &self.schema.relations[r];
        let pre = |n: &str, kind: &str| format!("{kind}.{l}.{}.{n}", rel.name);
        match self.cfg.variant.aggregation {
            AggregationKind::Simplified => aggregate_relation(g, data.adjacency(r, snap), h[rel.src]),
            AggregationKind::Gcn => {
                let hw = g.matmul(h[rel.src], p.get(&pre("W", "gcn"))?)?;
                aggregate_relation(g, data.adjacency(r, snap), hw)
            }
            AggregationKind::Gat => {
                let out = gat_aggregate(
                    g,
                    data.edges(r, snap),
                    h[rel.src],
                    h[rel.dst],
                    p.get(&pre("W", "gat"))?,
                    p.get(&pre("a_src", "gat"))?,
                    p.get(&pre("a_dst", "gat"))?,
                )?;
                g.elu(out)
            }
            AggregationKind::None => Ok(h[rel.dst]),
        }
    }

    /// Relation summaries `ē[t]` of relation `r` over the window.
    fn summaries(&self, g: &mut Graph, p: &Bound, l: usize, r: usize, agg: &[Var], e0: Option<&[Var]>) -> Result<Vec<Var>> {
        let rel = &self.schema.relations[r];
        let shape = [self.schema.counts[rel.dst], self.k()];
        let start = |g: &mut Graph| -> Result<Var> {
            let e0 = e0.expect("initial coefficients for stateful attention");
            let s = g.index(e0[rel.dst], self.slot[r])?;
            g.broadcast(s, &shape)
        };
        let mut out = Vec::with_capacity(agg.len());
        match self.cfg.variant.attention {
            AttentionKind::Dynamic => {
                let gp = Self::gru(p, &format!("gru.{l}.{}", rel.name))?;
                let mut e = start(g)?;
                for &h in agg {
                    e = dynamic_attention_step(g, h, e, &gp)?;
                    out.push(g.mean(e)?);
                }
            }
            AttentionKind::Lstm => {
                let lp = Self::lstm(p, &format!("lstm.{l}.{}", rel.name))?;
                let mut e = start(g)?;
                let mut c = g.constant(Tensor::zeros(&shape));
                for &h in agg {
                    (e, c) = lstm_cell(g, h, e, c, &lp)?;
                    out.push(g.mean(e)?);
                }
            }
            AttentionKind::Gated => {
                let get = |n: &str| p.get(&format!("gated.{l}.{}.{n}", rel.name));
                let (wg, bg, ws, bs) = (get("Wg")?, get("bg")?, get("Ws")?, get("bs")?);
                let mut e = start(g)?;
                for &h in agg {
                    e = gated_step(g, h, e, wg, bg, ws, bs)?;
                    out.push(g.mean(e)?);
                }
            }
            AttentionKind::Projected => {
                for (t, &h) in agg.iter().enumerate() {
                    let get = |n: &str| p.get(&format!("proj_att.{l}.{t}.{n}"));
                    out.push(projected_score(g, h, get("W")?, get("b")?, get("q")?)?);
                }
            }
            AttentionKind::SelfAttention => {
                let get = |n: &str| p.get(&format!("selfatt.{l}.{}.{n}", rel.name));
                out = self_attention_scores(g, agg, get("Wq")?, get("Wk")?, get("ws")?, get("bs")?)?;
            }
        }
        Ok(out)
    }

    /// One spatial layer over the whole window. `h[t][v]` are the inputs;
    /// returns the fused outputs in the same layout and `α[v][t]`.
    #[allow(clippy::too_many_arguments)]
    fn layer(
        &self,
        g: &mut Graph,
        p: &Bound,
        data: &PreparedGraph,
        l: usize,
        snaps: &[usize],
        h: &[Vec<Var>],
        e0: Option<&[Var]>,
        opts: &ForwardOptions,
    ) -> Result<(Vec<Vec<Var>>, Vec<Vec<Var>>)> {
        let nrel = self.schema.relations.len();
        let mut agg = vec![Vec::with_capacity(snaps.len()); nrel];
        for (r, per_t) in agg.iter_mut().enumerate() {
            for (t, &snap) in snaps.iter().enumerate() {
                per_t.push(self.aggregate(g, p, data, l, r, snap, &h[t])?);
            }
        }
        let ebar = (0..nrel)
            .map(|r| self.summaries(g, p, l, r, &agg[r], e0))
            .collect::<Result<Vec<_>>>()?;
        let ntypes = self.schema.num_types();
        let mut out = vec![Vec::with_capacity(ntypes); snaps.len()];
        let mut alpha = vec![Vec::with_capacity(snaps.len()); ntypes];
        for t in 0..snaps.len() {
            for v in 0..ntypes {
                let incoming = &self.schema.incoming[v];
                let es: Vec<Var> = incoming.iter().map(|&r| ebar[r][t]).collect();
                let hs: Vec<Var> = incoming.iter().map(|&r| agg[r][t]).collect();
                let shift = match opts.ebar_shift {
                    Some(s) if s.layer == l && s.node_type == v && s.step == t => s.amount,
                    _ => 0.0,
                };
                let (a, fused) = fuse_relations(g, &es, &hs, shift)?;
                alpha[v].push(a);
                out[t].push(fused);
            }
        }
        Ok((out, alpha))
    }
}

impl Forecaster for Model {
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

    fn is_frozen(&self, name: &str) -> bool {
        self.cfg.freeze_llm && name.starts_with("llm.")
    }

    fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let (d, k) = (self.d(), self.k());
        let s = &self.schema;
        for (v, name) in s.type_names.iter().enumerate() {
            let f = s.feature_dims[v];
            ps.insert_uniform(format!("proj.{name}.W"), &[f, d], f, &mut rng);
            ps.insert_uniform(format!("proj.{name}.b"), &[d], f, &mut rng);
        }
        let variant = self.cfg.variant;
        for l in 0..self.cfg.layers {
            for rel in &s.relations {
                let mut put = |kind: &str, n: &str, shape: &[usize], fan: usize| {
                    ps.insert_uniform(format!("{kind}.{l}.{}.{n}", rel.name), shape, fan, &mut rng)
                };
                match variant.attention {
                    AttentionKind::Dynamic => {
                        for gate in ["z", "r", "h"] {
                            put("gru", &format!("W{gate}"), &[d, k], d);
                            put("gru", &format!("U{gate}"), &[k, k], k);
                            put("gru", &format!("b{gate}"), &[k], k);
                        }
                    }
                    AttentionKind::Lstm => {
                        for gate in ["i", "f", "o", "c"] {
                            put("lstm", &format!("W{gate}"), &[d, k], d);
                            put("lstm", &format!("U{gate}"), &[k, k], k);
                            put("lstm", &format!("b{gate}"), &[k], k);
                        }
                    }
                    AttentionKind::Gated => {
                        put("gated", "Wg", &[d, k], d);
                        put("gated", "bg", &[k], d);
                        put("gated", "Ws", &[d, k], d);
                        put("gated", "bs", &[k], d);
                    }
                    AttentionKind::SelfAttention => {
                        put("selfatt", "Wq", &[d, d], d);
                        put("selfatt", "Wk", &[d, d], d);
                        put("selfatt", "ws", &[d, 1], d);
                        put("selfatt", "bs", &[1], d);
                    }
                    AttentionKind::Projected => {}
                }
                match variant.aggregation {
                    AggregationKind::Gcn => put("gcn", "W", &[d, d], d),
                    AggregationKind::Gat => {
                        put("gat", "W", &[d, d], d);
                        put("gat", "a_src", &[d, 1], d);
                        put("gat", "a_dst", &[d, 1], d);
                    }
                    AggregationKind::Simplified | AggregationKind::None => {}
                }
            }
            if variant.attention == AttentionKind::Projected {
                for t in 0..self.cfg.window {
                    ps.insert_uniform(format!("proj_att.{l}.{t}.W"), &[d, d], d, &mut rng);
                    ps.insert_uniform(format!("proj_att.{l}.{t}.b"), &[d], d, &mut rng);
                    ps.insert_uniform(format!("proj_att.{l}.{t}.q"), &[d, 1], d, &mut rng);
                }
            }
        }
        if let Some(emb) = &self.embeddings {
            let (dl, ds) = (emb.cols(), self.cfg.sim_dim.unwrap_or(d));
            ps.insert_uniform("llm.WQ", &[dl, ds], dl, &mut rng);
            ps.insert_uniform("llm.WK", &[dl, ds], dl, &mut rng);
        }
        let (gamma, beta) = (self.cfg.window, self.cfg.horizon);
        ps.insert_uniform("temporal.W", &[gamma, beta], gamma, &mut rng);
        ps.insert_uniform("temporal.b", &[beta], gamma, &mut rng);
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
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        check_window(data, &self.schema, self.cfg.window, target)?;
        let snaps: Vec<usize> = (target - self.cfg.window..target).collect();
        let init = self.initial(g, p)?;
        let mut h = Vec::with_capacity(snaps.len());
        for &snap in &snaps {
            let mut per_type = Vec::with_capacity(self.schema.num_types());
            for (v, name) in self.schema.type_names.iter().enumerate() {
                let x = g.constant(data.features(v, snap).clone());
                let (w, b) = (p.get(&format!("proj.{name}.W"))?, p.get(&format!("proj.{name}.b"))?);
                per_type.push(project_features(g, x, w, b)?);
            }
            h.push(per_type);
        }
        let mut attention = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let (next, alpha) = self.layer(g, p, data, l, &snaps, &h, init.as_deref(), opts)?;
            h = next;
            attention.push(alpha);
        }
        let (tw, tb) = (p.get("temporal.W")?, p.get("temporal.b")?);
        let (w1, b1, w2, b2) = (p.get("head.1.W")?, p.get("head.1.b")?, p.get("head.2.W")?, p.get("head.2.b")?);
        let mut predictions = BTreeMap::new();
        for &v in outputs {
            if v >= self.schema.num_types() {
                return Err(Error::Index(format!("output type {v} of {}", self.schema.num_types())));
            }
            let zs: Vec<Var> = h.iter().map(|per_type| per_type[v]).collect();
            let steps = temporal_project(g, &zs, tw, tb)?;
            let preds = steps
                .into_iter()
                .map(|z| mlp_head(g, z, w1, b1, w2, b2))
                .collect::<Result<Vec<_>>>()?;
            predictions.insert(v, preds);
        }
        Ok(ForwardOutput { predictions, attention, init })
    }
}
