//! Fixtures and scalar reference implementations shared by the integration
//! tests. The references work on plain nested vectors straight from the raw
//! graph and parameter values; they do not call into the engine.

#![allow(dead_code)]

use htgnn::ablation::VariantConfig;
use htgnn::data::{generate_synthetic, HTGraph, SynthConfig};
use htgnn::model::{Forecaster, HeadKind, Model, ModelConfig, ParamStore, PreparedGraph};
use htgnn::prompt::{embed_dataset, FallbackProvider};
use htgnn::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

/// Width of the fallback embeddings used by the toy fixture.
pub const TOY_LLM_DIM: usize = 16;

/// Toy graph: two node types of five nodes, `writes` and `cites`, `t`
/// snapshots.
pub fn toy_graph(t: usize, seed: u64) -> HTGraph {
    let mut cfg = SynthConfig::toy(seed);
    cfg.num_snapshots = t;
    generate_synthetic(&cfg).unwrap().graph
}

pub fn toy_config(window: usize, horizon: usize, variant: VariantConfig) -> ModelConfig {
    ModelConfig { hidden_dim: 4, heads: 1, layers: 2, window, horizon, variant, ..ModelConfig::default() }
}

pub fn embeddings(data: &PreparedGraph, dim: usize) -> Tensor {
    let table = embed_dataset(&data.graph, &mut FallbackProvider::new(dim, 0), None).unwrap();
    table.matrix(&data.schema.type_names).unwrap()
}

pub fn toy_model(data: &PreparedGraph, cfg: &ModelConfig, head: HeadKind, seed: u64) -> (Model, ParamStore) {
    let emb = embeddings(data, TOY_LLM_DIM);
    let m = Model::new(&data.schema, cfg, head, Some(emb), seed).unwrap();
    let ps = m.init_params(seed);
    (m, ps)
}

pub fn to_mat(t: &Tensor) -> Mat {
    match t.shape() {
        [r, c] => (0..*r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect(),
        [_] => vec![t.data().to_vec()],
        s => panic!("not a matrix: {s:?}"),
    }
}

pub fn param(ps: &ParamStore, name: &str) -> Mat {
    to_mat(ps.get(name).unwrap_or_else(|| panic!("missing parameter {name}")))
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    let flat: Vec<f64> = a.iter().flatten().copied().collect();
    assert_eq!(flat.len(), b.data().len());
    flat.iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), m);
        for j in 0..p {
            for k in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn affine(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut out = matmul(x, w);
    for row in &mut out {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[0][j];
        }
    }
    out
}

fn map(x: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    x.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn mean_all(x: &Mat) -> f64 {
    let n = x.len() * x[0].len();
    x.iter().flatten().sum::<f64>() / n as f64
}

/// Relations after appending `self_<type>`: `(name, src, dst)`.
fn relations(g: &HTGraph) -> Vec<(String, usize, usize)> {
    let ty = |name: &str| g.node_types.iter().position(|t| t.name == name).unwrap();
    let mut rels: Vec<_> =
        g.relation_types.iter().map(|r| (r.name.clone(), ty(&r.src), ty(&r.dst))).collect();
    for (v, t) in g.node_types.iter().enumerate() {
        rels.push((format!("self_{}", t.name), v, v));
    }
    rels
}

/// Dense normalized adjacency `[n_dst][n_src]`: row-normalized across types,
/// `1/sqrt(deg_dst·deg_src)` within a type, duplicates ignored.
fn adjacency(g: &HTGraph, r: usize, snap: usize, rels: &[(String, usize, usize)]) -> Mat {
    let (_, src, dst) = &rels[r];
    let (ns, nd) = (g.node_types[*src].count, g.node_types[*dst].count);
    let mut a = vec![vec![0.0; ns]; nd];
    if r >= g.relation_types.len() {
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        return a;
    }
    for &(s, d) in &g.snapshots[snap].edges[r] {
        a[d][s] = 1.0;
    }
    let deg_dst: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let deg_src: Vec<f64> = (0..ns).map(|j| a.iter().map(|row| row[j]).sum()).collect();
    for i in 0..nd {
        for j in 0..ns {
            if a[i][j] != 0.0 {
                a[i][j] = if src == dst { 1.0 / (deg_dst[i] * deg_src[j]).sqrt() } else { 1.0 / deg_dst[i] };
            }
        }
    }
    a
}

fn features(g: &HTGraph, v: usize, snap: usize) -> Mat {
    to_mat(&g.snapshots[snap].features[v])
}

fn head(z: &Mat, ps: &ParamStore) -> Mat {
    let h = map(&affine(z, &param(ps, "head.1.W"), &param(ps, "head.1.b")), elu);
    affine(&h, &param(ps, "head.2.W"), &param(ps, "head.2.b"))
}

pub struct OracleOutput {
    /// `predictions[v][s]`.
    pub predictions: Vec<Vec<Mat>>,
    /// `alpha[l][v][t]`, ordered by relation index.
    pub alpha: Vec<Vec<Vec<Vec<f64>>>>,
    /// Initial coefficients per type.
    pub init: Vec<Vec<f64>>,
}

/// Forward pass of the recurrent relation-attention model with GRU chains,
/// parameter-free aggregation and type-embedding initialization.
pub fn dynamic_forward(g: &HTGraph, ps: &ParamStore, emb: &Mat, cfg: &ModelConfig, target: usize) -> OracleOutput {
    let rels = relations(g);
    let ntypes = g.node_types.len();
    let incoming: Vec<Vec<usize>> = (0..ntypes).map(|v| (0..rels.len()).filter(|&r| rels[r].2 == v).collect()).collect();
    let k = cfg.heads;

    let q = matmul(emb, &param(ps, "llm.WQ"));
    let kk = matmul(emb, &param(ps, "llm.WK"));
    let init: Vec<Vec<f64>> = incoming
        .iter()
        .enumerate()
        .map(|(v, inc)| {
            let sims: Vec<f64> =
                inc.iter().map(|&r| (0..q[0].len()).map(|j| q[rels[r].1][j] * kk[v][j]).sum()).collect();
            softmax(&sims)
        })
        .collect();

    let snaps: Vec<usize> = (target - cfg.window..target).collect();
    let mut h: Vec<Vec<Mat>> = snaps
        .iter()
        .map(|&s| {
            (0..ntypes)
                .map(|v| {
                    let name = &g.node_types[v].name;
                    affine(&features(g, v, s), &param(ps, &format!("proj.{name}.W")), &param(ps, &format!("proj.{name}.b")))
                })
                .collect()
        })
        .collect();

    let mut alpha = Vec::new();
    for l in 0..cfg.layers {
        let agg: Vec<Vec<Mat>> = (0..rels.len())
            .map(|r| {
                snaps
                    .iter()
                    .enumerate()
                    .map(|(t, &s)| map(&matmul(&adjacency(g, r, s, &rels), &h[t][rels[r].1]), elu))
                    .collect()
            })
            .collect();
        let mut ebar = vec![Vec::new(); rels.len()];
        for (r, (name, _, dst)) in rels.iter().enumerate() {
            let p = |n: &str| param(ps, &format!("gru.{l}.{name}.{n}"));
            let (wz, uz, bz, wr, ur, br, wh, uh, bh) =
                (p("Wz"), p("Uz"), p("bz"), p("Wr"), p("Ur"), p("br"), p("Wh"), p("Uh"), p("bh"));
            let slot = incoming[*dst].iter().position(|&x| x == r).unwrap();
            let n = g.node_types[*dst].count;
            let mut e = vec![vec![init[*dst][slot]; k]; n];
            for x in &agg[r] {
                let mut next = e.clone();
                for i in 0..n {
                    let gate = |w: &Mat, u: &Mat, b: &Mat, hprev: &[f64], j: usize| -> f64 {
                        let mut s = b[0][j];
                        for a in 0..x[i].len() {
                            s += x[i][a] * w[a][j];
                        }
                        for a in 0..k {
                            s += hprev[a] * u[a][j];
                        }
                        s
                    };
                    let z: Vec<f64> = (0..k).map(|j| sigmoid(gate(&wz, &uz, &bz, &e[i], j))).collect();
                    let rr: Vec<f64> = (0..k).map(|j| sigmoid(gate(&wr, &ur, &br, &e[i], j))).collect();
                    let reset: Vec<f64> = (0..k).map(|j| rr[j] * e[i][j]).collect();
                    for j in 0..k {
                        let cand = gate(&wh, &uh, &bh, &reset, j).tanh();
                        next[i][j] = (1.0 - z[j]) * e[i][j] + z[j] * cand;
                    }
                }
                e = next;
                ebar[r].push(mean_all(&e));
            }
        }
        let mut layer_alpha = vec![Vec::new(); ntypes];
        let mut out = vec![Vec::new(); snaps.len()];
        for t in 0..snaps.len() {
            for v in 0..ntypes {
                let a = softmax(&incoming[v].iter().map(|&r| ebar[r][t]).collect::<Vec<_>>());
                let n = g.node_types[v].count;
                let mut fused = vec![vec![0.0; cfg.hidden_dim]; n];
                for (ai, &r) in a.iter().zip(&incoming[v]) {
                    for i in 0..n {
                        for j in 0..cfg.hidden_dim {
                            fused[i][j] += ai * agg[r][t][i][j];
                        }
                    }
                }
                layer_alpha[v].push(a);
                out[t].push(fused);
            }
        }
        alpha.push(layer_alpha);
        h = out;
    }

    let tw = param(ps, "temporal.W");
    let tb = param(ps, "temporal.b");
    let predictions = (0..ntypes)
        .map(|v| {
            (0..cfg.horizon)
                .map(|s| {
                    let n = g.node_types[v].count;
                    let mut z = vec![vec![tb[0][s]; cfg.hidden_dim]; n];
                    for (t, ht) in h.iter().enumerate() {
                        for i in 0..n {
                            for j in 0..cfg.hidden_dim {
                                z[i][j] += ht[v][i][j] * tw[t][s];
                            }
                        }
                    }
                    head(&z, ps)
                })
                .collect()
        })
        .collect();
    OracleOutput { predictions, alpha, init }
}

/// Forward pass of the spatial-then-temporal baseline; `predictions[v][s]`.
pub fn baseline_forward(g: &HTGraph, ps: &ParamStore, cfg: &ModelConfig, target: usize) -> Vec<Vec<Mat>> {
    let rels = relations(g);
    let ntypes = g.node_types.len();
    let d = cfg.hidden_dim;
    let start = target - cfg.window;
    // seq[t][v]
    let seq: Vec<Vec<Mat>> = (0..cfg.window)
        .map(|t| {
            let s = start + t;
            let h: Vec<Mat> = (0..ntypes)
                .map(|v| {
                    let name = &g.node_types[v].name;
                    affine(&features(g, v, s), &param(ps, &format!("proj.{name}.W")), &param(ps, &format!("proj.{name}.b")))
                })
                .collect();
            let (w, b, q) = (param(ps, &format!("spatial.{t}.W")), param(ps, &format!("spatial.{t}.b")), param(ps, &format!("spatial.{t}.q")));
            (0..ntypes)
                .map(|v| {
                    let inc: Vec<usize> = (0..rels.len()).filter(|&r| rels[r].2 == v).collect();
                    let aggs: Vec<Mat> = inc
                        .iter()
                        .map(|&r| {
                            let hw = matmul(&h[rels[r].1], &param(ps, &format!("spatial.{t}.{}.W", rels[r].0)));
                            map(&matmul(&adjacency(g, r, s, &rels), &hw), elu)
                        })
                        .collect();
                    let scores: Vec<f64> = aggs
                        .iter()
                        .map(|a| {
                            let act = map(&affine(a, &w, &b), f64::tanh);
                            (0..d).map(|j| act.iter().map(|row| row[j]).sum::<f64>() / act.len() as f64 * q[j][0]).sum()
                        })
                        .collect();
                    let alpha = softmax(&scores);
                    let n = g.node_types[v].count;
                    let mut fused = vec![vec![0.0; d]; n];
                    for (a, m) in alpha.iter().zip(&aggs) {
                        for i in 0..n {
                            for j in 0..d {
                                fused[i][j] += a * m[i][j];
                            }
                        }
                    }
                    fused
                })
                .collect()
        })
        .collect();

    let (wq, wk, wv) = (param(ps, "temporal_att.Wq"), param(ps, "temporal_att.Wk"), param(ps, "temporal_att.Wv"));
    let last = cfg.window - 1;
    (0..ntypes)
        .map(|v| {
            let n = g.node_types[v].count;
            let mut attended = vec![vec![0.0; d]; n];
            for (i, row) in attended.iter_mut().enumerate() {
                let xs: Mat = (0..cfg.window).map(|t| seq[t][v][i].clone()).collect();
                let (qs, ks, vs) = (matmul(&xs, &wq), matmul(&xs, &wk), matmul(&xs, &wv));
                let logits: Vec<f64> = (0..=last)
                    .map(|j| (0..d).map(|c| qs[last][c] * ks[j][c]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let p = softmax(&logits);
                for j in 0..=last {
                    for c in 0..d {
                        row[c] += p[j] * vs[j][c];
                    }
                }
            }
            (0..cfg.horizon)
                .map(|s| {
                    let z = affine(&attended, &param(ps, &format!("out.{s}.W")), &param(ps, &format!("out.{s}.b")));
                    head(&z, ps)
                })
                .collect()
        })
        .collect()
}
