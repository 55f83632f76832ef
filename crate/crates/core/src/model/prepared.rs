use std::rc::Rc;

use crate::data::{normalize_adjacency, HTGraph, Normalization};
use crate::error::Result;
use crate::tensor::{SparseMatrix, Tensor};

/// A relation as seen by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationInfo {
    pub name: String,
    pub src: usize,
    pub dst: usize,
}

/// Shapes and wiring of a graph, independent of its snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub type_names: Vec<String>,
    pub counts: Vec<usize>,
    pub feature_dims: Vec<usize>,
    pub relations: Vec<RelationInfo>,
    /// `incoming[v]` lists the relations whose destination is `v`.
    pub incoming: Vec<Vec<usize>>,
}

impl Schema {
    pub fn from_graph(graph: &HTGraph) -> Schema {
        let relations: Vec<RelationInfo> = (0..graph.relation_types.len())
            .map(|r| {
                let (src, dst) = graph.endpoints(r);
                RelationInfo { name: graph.relation_types[r].name.clone(), src, dst }
            })
            .collect();
        Schema {
            type_names: graph.node_types.iter().map(|t| t.name.clone()).collect(),
            counts: graph.node_types.iter().map(|t| t.count).collect(),
            feature_dims: graph.node_types.iter().map(|t| t.feature_dim).collect(),
            incoming: (0..graph.node_types.len()).map(|v| graph.relations_into(v)).collect(),
            relations,
        }
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }
}

/// A graph with self relations added and per-snapshot adjacency matrices
/// normalized once, ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: HTGraph,
    pub schema: Schema,
    /// `adjacency[r][t]`, `n_dst × n_src`.
    adjacency: Vec<Vec<Rc<SparseMatrix>>>,
    /// `edges[r][t]` as `(dst, src)` sorted by destination.
    edges: Vec<Vec<Rc<[(usize, usize)]>>>,
}

impl PreparedGraph {
    pub fn new(graph: &HTGraph) -> Result<Self> {
        let mut graph = graph.clone();
        graph.add_self_relations();
        let schema = Schema::from_graph(&graph);
        let mut adjacency = Vec::with_capacity(schema.relations.len());
        let mut edges = Vec::with_capacity(schema.relations.len());
        for (r, rel) in schema.relations.iter().enumerate() {
            let kind = Normalization::default_for(rel.src == rel.dst);
            let mut per_t = Vec::with_capacity(graph.num_snapshots());
            let mut per_t_edges = Vec::with_capacity(graph.num_snapshots());
            for snap in &graph.snapshots {
                let a = normalize_adjacency(&snap.edges[r], schema.counts[rel.dst], schema.counts[rel.src], kind)?;
                let pairs: Vec<(usize, usize)> = a.triplets().into_iter().map(|(d, s, _)| (d, s)).collect();
                per_t.push(Rc::new(a));
                per_t_edges.push(pairs.into());
            }
            adjacency.push(per_t);
            edges.push(per_t_edges);
        }
        Ok(PreparedGraph { graph, schema, adjacency, edges })
    }

    pub fn num_snapshots(&self) -> usize {
        self.graph.num_snapshots()
    }

    pub fn adjacency(&self, r: usize, t: usize) -> &Rc<SparseMatrix> {
        &self.adjacency[r][t]
    }

    pub fn edges(&self, r: usize, t: usize) -> &[(usize, usize)] {
        &self.edges[r][t]
    }

    pub fn features(&self, v: usize, t: usize) -> &Tensor {
        &self.graph.snapshots[t].features[v]
    }
}
