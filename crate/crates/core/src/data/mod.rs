//! Heterogeneous temporal graphs: the in-memory model, the on-disk dataset
//! format, adjacency normalization, temporal splitting and a seeded synthetic
//! generator.
//!
//! A graph is a sequence of snapshots over a fixed set of node types and
//! relation types. Node identity is stable across snapshots: every type has
//! the same node count at every timestamp, and a node that is absent at some
//! timestamp is represented by an all-zero feature row.

mod io;
mod normalize;
mod split;
mod synth;

pub use io::{load_dataset, write_dataset};
pub use normalize::{normalize_adjacency, Normalization};
pub use split::{split_temporal, TemporalSplit};
pub use synth::{generate_synthetic, SynthConfig, SynthRelation, SynthType, Synthetic};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Prefix of the identity relations added by [`HTGraph::add_self_relations`].
pub const SELF_PREFIX: &str = "self_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub description: String,
}

/// A typed edge set from `src` nodes to `dst` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationType {
    pub name: String,
    pub src: String,
    pub dst: String,
}

impl RelationType {
    pub fn is_self(&self) -> bool {
        self.src == self.dst && self.name == format!("{SELF_PREFIX}{}", self.dst)
    }
}

/// Declaration of a per-node label series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub name: String,
    pub node_type: String,
    /// Present for class labels; absent for real-valued targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

/// Labels of one node type over time: `values[t]` lists `(node, value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    pub spec: LabelSpec,
    pub values: Vec<Vec<(usize, f64)>>,
}

/// One timestamp: `edges[r]` holds `(src, dst)` pairs of relation `r`,
/// `features[v]` the `count × feature_dim` matrix of node type `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub edges: Vec<Vec<(usize, usize)>>,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HTGraph {
    pub node_types: Vec<NodeType>,
    pub relation_types: Vec<RelationType>,
    pub snapshots: Vec<Snapshot>,
    pub labels: Vec<NodeLabels>,
}

impl HTGraph {
    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|r| r.name == name)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.spec.name == name)
    }

    /// `(src_type, dst_type)` indices of relation `r`.
    pub fn endpoints(&self, r: usize) -> (usize, usize) {
        let rel = &self.relation_types[r];
        let src = self.type_index(&rel.src).expect("validated relation endpoint");
        let dst = self.type_index(&rel.dst).expect("validated relation endpoint");
        (src, dst)
    }

    /// Indices of the relations whose destination is node type `v`, in
    /// declaration order.
    pub fn relations_into(&self, v: usize) -> Vec<usize> {
        let name = &self.node_types[v].name;
        (0..self.relation_types.len())
            .filter(|&r| &self.relation_types[r].dst == name)
            .collect()
    }

    /// Checks every structural invariant; `origin` is used in error messages.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let err = |msg: String| Error::dataset(origin, msg);
        if self.node_types.is_empty() {
            return Err(err("no node types declared".into()));
        }
        if self.node_types.len() + self.relation_types.len() < 2 {
            return Err(err(
                "a heterogeneous graph needs at least two node or relation types in total".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for t in &self.node_types {
            if !seen.insert(t.name.as_str()) {
                return Err(err(format!("duplicate node type '{}'", t.name)));
            }
            if t.count == 0 {
                return Err(err(format!("node type '{}' has count 0", t.name)));
            }
            if t.feature_dim == 0 {
                return Err(err(format!("node type '{}' has feature_dim 0", t.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.relation_types {
            if !seen.insert(r.name.as_str()) {
                return Err(err(format!("duplicate relation '{}'", r.name)));
            }
            for end in [&r.src, &r.dst] {
                if self.type_index(end).is_none() {
                    return Err(err(format!("relation '{}' references unknown type '{end}'", r.name)));
                }
            }
        }
        if self.snapshots.is_empty() {
            return Err(err("graph has no snapshots".into()));
        }
        for (t, snap) in self.snapshots.iter().enumerate() {
            if snap.features.len() != self.node_types.len() {
                return Err(err(format!("snapshot {t}: expected {} feature matrices", self.node_types.len())));
            }
            for (v, (ty, x)) in self.node_types.iter().zip(&snap.features).enumerate() {
                if x.shape() != [ty.count, ty.feature_dim] {
                    return Err(err(format!(
                        "snapshot {t}: features of '{}' have shape {:?}, expected [{}, {}]",
                        self.node_types[v].name,
                        x.shape(),
                        ty.count,
                        ty.feature_dim
                    )));
                }
            }
            if snap.edges.len() != self.relation_types.len() {
                return Err(err(format!("snapshot {t}: expected {} edge lists", self.relation_types.len())));
            }
            for (r, edges) in snap.edges.iter().enumerate() {
                let (s, d) = self.endpoints(r);
                let (ns, nd) = (self.node_types[s].count, self.node_types[d].count);
                for &(i, j) in edges {
                    if i >= ns || j >= nd {
                        return Err(err(format!(
                            "index out of range: snapshot {t}, relation '{}': edge ({i}, {j}) outside {ns}x{nd}",
                            self.relation_types[r].name
                        )));
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for l in &self.labels {
            if !seen.insert(l.spec.name.as_str()) {
                return Err(err(format!("duplicate label set '{}'", l.spec.name)));
            }
            let v = self
                .type_index(&l.spec.node_type)
                .ok_or_else(|| err(format!("label '{}' references unknown type '{}'", l.spec.name, l.spec.node_type)))?;
            if l.values.len() != self.snapshots.len() {
                return Err(err(format!("label '{}' must cover every snapshot", l.spec.name)));
            }
            for (t, vals) in l.values.iter().enumerate() {
                for &(node, y) in vals {
                    if node >= self.node_types[v].count {
                        return Err(err(format!("label '{}' snapshot {t}: node {node} out of range", l.spec.name)));
                    }
                    if let Some(c) = l.spec.num_classes {
                        if y < 0.0 || y.fract() != 0.0 || y as usize >= c {
                            return Err(err(format!(
                                "label '{}' snapshot {t}: class {y} not in [0, {c})",
                                l.spec.name
                            )));
                        }
                    } else if !y.is_finite() {
                        return Err(err(format!("label '{}' snapshot {t}: non-finite target", l.spec.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends an identity relation `self_<type>` for every node type that
    /// does not have one yet, so every type has at least one incoming relation.
    pub fn add_self_relations(&mut self) {
        for v in 0..self.node_types.len() {
            let ty = self.node_types[v].clone();
            let name = format!("{SELF_PREFIX}{}", ty.name);
            if self.relation_index(&name).is_some() {
                continue;
            }
            self.relation_types.push(RelationType {
                name,
                src: ty.name.clone(),
                dst: ty.name.clone(),
            });
            let identity: Vec<_> = (0..ty.count).map(|i| (i, i)).collect();
            for snap in &mut self.snapshots {
                snap.edges.push(identity.clone());
            }
        }
    }

    /// Copy of the graph restricted to snapshots `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> HTGraph {
        HTGraph {
            node_types: self.node_types.clone(),
            relation_types: self.relation_types.clone(),
            snapshots: self.snapshots[range.clone()].to_vec(),
            labels: self
                .labels
                .iter()
                .map(|l| NodeLabels {
                    spec: l.spec.clone(),
                    values: l.values[range.clone()].to_vec(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> HTGraph {
        let feats = |n: usize, f: usize| Tensor::zeros(&[n, f]);
        HTGraph {
            node_types: vec![
                NodeType { name: "a".into(), count: 3, feature_dim: 2, description: String::new() },
                NodeType { name: "b".into(), count: 2, feature_dim: 1, description: String::new() },
            ],
            relation_types: vec![RelationType { name: "ab".into(), src: "a".into(), dst: "b".into() }],
            snapshots: (0..2)
                .map(|_| Snapshot { edges: vec![vec![(0, 1), (2, 0)]], features: vec![feats(3, 2), feats(2, 1)] })
                .collect(),
            labels: vec![],
        }
    }

    #[test]
    fn self_relation_is_identity_and_idempotent() {
        let mut g = tiny();
        g.add_self_relations();
        let r = g.relation_index("self_a").unwrap();
        assert!(g.relation_types[r].is_self());
        for snap in &g.snapshots {
            assert_eq!(snap.edges[r], vec![(0, 0), (1, 1), (2, 2)]);
        }
        let before = g.clone();
        g.add_self_relations();
        assert_eq!(g, before);
        g.validate("tiny").unwrap();
    }

    #[test]
    fn single_type_without_relations_gets_self() {
        let mut g = HTGraph {
            node_types: vec![NodeType { name: "x".into(), count: 2, feature_dim: 1, description: String::new() }],
            relation_types: vec![],
            snapshots: vec![Snapshot { edges: vec![], features: vec![Tensor::zeros(&[2, 1])] }],
            labels: vec![],
        };
        g.add_self_relations();
        assert_eq!(g.relations_into(0).len(), 1);
        assert_eq!(g.relation_types[0].name, "self_x");
    }

    #[test]
    fn validate_rejects_out_of_range_edge() {
        let mut g = tiny();
        g.snapshots[1].edges[0].push((5, 0));
        let msg = g.validate("m").unwrap_err().to_string();
        assert!(msg.contains("snapshot 1") && msg.contains("'ab'"), "{msg}");
    }

    #[test]
    fn validate_rejects_homogeneous_static_graph() {
        let mut g = tiny();
        g.node_types.truncate(1);
        g.relation_types.clear();
        for s in &mut g.snapshots {
            s.edges.clear();
            s.features.truncate(1);
        }
        assert!(g.validate("m").is_err());
    }
}
