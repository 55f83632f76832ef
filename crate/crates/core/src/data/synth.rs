//! Seeded synthetic graphs with planted communities.
//!
//! Every node belongs to one of `communities` groups for the whole time span.
//! Features are noisy, slowly drifting per-(type, community) centroids. A
//! relation with density `p` and homophily `h` links a pair of nodes with
//! probability `p` when they share a community and `p·(1−h)` otherwise;
//! outside its `informative` range a relation has homophily 0, which is how
//! regime switches are planted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HTGraph, LabelSpec, NodeLabels, NodeType, RelationType, Snapshot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthType {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRelation {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub density: f64,
    #[serde(default = "one")]
    pub homophily: f64,
    /// Emit both directions of every sampled pair (same-type relations only).
    #[serde(default)]
    pub symmetric: bool,
    /// Half-open snapshot range `[start, end)` in which the homophily applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informative: Option<[usize; 2]>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub node_types: Vec<SynthType>,
    pub relations: Vec<SynthRelation>,
    pub num_snapshots: usize,
    pub communities: usize,
    /// Scale of the community centroids.
    #[serde(default = "one")]
    pub signal: f64,
    /// Standard deviation of the per-node feature noise.
    #[serde(default = "one")]
    pub noise: f64,
    /// Centroid displacement per snapshot.
    #[serde(default)]
    pub drift: f64,
    pub seed: u64,
}

/// A generated graph together with its planted communities.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub graph: HTGraph,
    /// `communities[v][i]` is the group of node `i` of type `v`.
    pub communities: Vec<Vec<usize>>,
}

fn ty(name: &str, count: usize, feature_dim: usize, description: &str) -> SynthType {
    SynthType { name: name.into(), count, feature_dim, description: description.into() }
}

fn rel(name: &str, src: &str, dst: &str, density: f64, homophily: f64) -> SynthRelation {
    SynthRelation {
        name: name.into(),
        src: src.into(),
        dst: dst.into(),
        density,
        homophily,
        symmetric: false,
        informative: None,
    }
}

impl SynthConfig {
    /// Five authors and five papers over three snapshots.
    pub fn toy(seed: u64) -> Self {
        SynthConfig {
            node_types: vec![
                ty("author", 5, 3, "Researchers who write and co-author academic papers."),
                ty("paper", 5, 3, "Academic papers that cite each other."),
            ],
            relations: vec![rel("writes", "author", "paper", 0.6, 0.8), rel("cites", "paper", "paper", 0.5, 0.8)],
            num_snapshots: 3,
            communities: 2,
            signal: 1.0,
            noise: 0.5,
            drift: 0.1,
            seed,
        }
    }

    /// Co-authorship forecasting over about two thousand nodes and eight
    /// snapshots; `coauthor` is the target relation.
    pub fn planted_link(seed: u64) -> Self {
        let mut coauthor = rel("coauthor", "author", "author", 0.05, 0.998);
        coauthor.symmetric = true;
        SynthConfig {
            node_types: vec![
                ty("author", 1000, 16, "Researchers who write academic papers and collaborate with each other."),
                ty("paper", 1000, 16, "Academic papers written by authors and citing earlier papers."),
            ],
            relations: vec![
                rel("writes", "author", "paper", 0.01, 0.9),
                rel("written_by", "paper", "author", 0.01, 0.9),
                coauthor,
                rel("cites", "paper", "paper", 0.01, 0.9),
            ],
            num_snapshots: 8,
            communities: 20,
            signal: 1.0,
            noise: 1.0,
            drift: 0.05,
            seed,
        }
    }

    /// One node type with two structural views whose informativeness swaps
    /// halfway through; `link` is the target relation.
    pub fn regime_switch(seed: u64) -> Self {
        let t = 8;
        let mut early = rel("early", "user", "user", 0.1, 1.0);
        early.informative = Some([0, t / 2]);
        let mut late = rel("late", "user", "user", 0.1, 1.0);
        late.informative = Some([t / 2, t]);
        let mut link = rel("link", "user", "user", 0.05, 0.9);
        link.symmetric = true;
        SynthConfig {
            node_types: vec![ty("user", 300, 8, "Users of a platform who interact with each other.")],
            relations: vec![early, late, link],
            num_snapshots: t,
            communities: 10,
            signal: 0.6,
            noise: 1.0,
            drift: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.node_types.is_empty() {
            return bad("at least one node type is required".into());
        }
        if self.num_snapshots == 0 || self.communities == 0 {
            return bad("num_snapshots and communities must be positive".into());
        }
        for t in &self.node_types {
            if t.count == 0 || t.feature_dim == 0 {
                return bad(format!("type '{}' needs count >= 1 and feature_dim >= 1", t.name));
            }
        }
        for r in &self.relations {
            if !(r.density > 0.0 && r.density <= 1.0) {
                return bad(format!("relation '{}' density {} not in (0, 1]", r.name, r.density));
            }
            if !(0.0..=1.0).contains(&r.homophily) {
                return bad(format!("relation '{}' homophily {} not in [0, 1]", r.name, r.homophily));
            }
            if r.symmetric && r.src != r.dst {
                return bad(format!("relation '{}' is symmetric but joins two types", r.name));
            }
            for end in [&r.src, &r.dst] {
                if !self.node_types.iter().any(|t| &t.name == end) {
                    return bad(format!("relation '{}' references unknown type '{end}'", r.name));
                }
            }
        }
        if !(self.noise >= 0.0 && self.signal >= 0.0 && self.drift.is_finite()) {
            return bad("signal and noise must be non-negative".into());
        }
        Ok(())
    }
}

fn gaussians(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generates a graph from `cfg`; identical configs give identical graphs.
///
/// Besides the structure, every node type gets a class label series
/// `<type>_community` and a regression series `<type>_degree` (in-degree over
/// all relations at that snapshot).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.communities;
    let communities: Vec<Vec<usize>> = cfg
        .node_types
        .iter()
        .map(|t| (0..t.count).map(|_| rng.random_range(0..c)).collect())
        .collect();
    let centroids: Vec<Vec<Vec<f64>>> = cfg
        .node_types
        .iter()
        .map(|t| {
            (0..c)
                .map(|_| gaussians(&mut rng, t.feature_dim).into_iter().map(|x| x * cfg.signal).collect())
                .collect()
        })
        .collect();
    let directions: Vec<Vec<Vec<f64>>> = cfg
        .node_types
        .iter()
        .map(|t| (0..c).map(|_| gaussians(&mut rng, t.feature_dim)).collect())
        .collect();
    let index = |name: &str| cfg.node_types.iter().position(|t| t.name == name).expect("validated");

    let mut snapshots = Vec::with_capacity(cfg.num_snapshots);
    for t in 0..cfg.num_snapshots {
        let features = cfg
            .node_types
            .iter()
            .enumerate()
            .map(|(v, ty)| {
                let mut data = Vec::with_capacity(ty.count * ty.feature_dim);
                for i in 0..ty.count {
                    let k = communities[v][i];
                    for f in 0..ty.feature_dim {
                        let noise: f64 = rng.sample(StandardNormal);
                        data.push(centroids[v][k][f] + cfg.drift * t as f64 * directions[v][k][f] + cfg.noise * noise);
                    }
                }
                Tensor::new(vec![ty.count, ty.feature_dim], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = cfg
            .relations
            .iter()
            .map(|r| {
                let (s, d) = (index(&r.src), index(&r.dst));
                let active = r.informative.is_none_or(|[a, b]| (a..b).contains(&t));
                let h = if active { r.homophily } else { 0.0 };
                let mut out = Vec::new();
                for i in 0..cfg.node_types[s].count {
                    let lo = if r.symmetric { i + 1 } else { 0 };
                    for j in lo..cfg.node_types[d].count {
                        if s == d && i == j {
                            continue;
                        }
                        let p = if communities[s][i] == communities[d][j] { r.density } else { r.density * (1.0 - h) };
                        if rng.random::<f64>() < p {
                            out.push((i, j));
                            if r.symmetric {
                                out.push((j, i));
                            }
                        }
                    }
                }
                out.sort_unstable();
                out
            })
            .collect();
        snapshots.push(Snapshot { edges, features });
    }

    let mut labels = Vec::new();
    for (v, ty) in cfg.node_types.iter().enumerate() {
        labels.push(NodeLabels {
            spec: LabelSpec {
                name: format!("{}_community", ty.name),
                node_type: ty.name.clone(),
                num_classes: Some(c),
            },
            values: (0..cfg.num_snapshots)
                .map(|_| communities[v].iter().enumerate().map(|(i, &k)| (i, k as f64)).collect())
                .collect(),
        });
        let into: Vec<usize> = (0..cfg.relations.len()).filter(|&r| index(&cfg.relations[r].dst) == v).collect();
        labels.push(NodeLabels {
            spec: LabelSpec { name: format!("{}_degree", ty.name), node_type: ty.name.clone(), num_classes: None },
            values: snapshots
                .iter()
                .map(|snap| {
                    let mut deg = vec![0usize; ty.count];
                    for &r in &into {
                        for &(_, j) in &snap.edges[r] {
                            deg[j] += 1;
                        }
                    }
                    deg.into_iter().enumerate().map(|(i, k)| (i, k as f64)).collect()
                })
                .collect(),
        });
    }

    let graph = HTGraph {
        node_types: cfg
            .node_types
            .iter()
            .map(|t| NodeType {
                name: t.name.clone(),
                count: t.count,
                feature_dim: t.feature_dim,
                description: t.description.clone(),
            })
            .collect(),
        relation_types: cfg
            .relations
            .iter()
            .map(|r| RelationType { name: r.name.clone(), src: r.src.clone(), dst: r.dst.clone() })
            .collect(),
        snapshots,
        labels,
    };
    graph.validate("synthetic graph")?;
    Ok(Synthetic { graph, communities })
}
