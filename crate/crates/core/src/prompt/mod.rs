//! Node-type prompts, type-embedding providers and the initial attention
//! coefficients derived from type embeddings.
//!
//! Only one prompt per node type is ever embedded, so the provider cost is
//! independent of graph size. Three providers exist: a precomputed table on
//! disk, a remote embedding service speaking the common
//! `{model, input} -> {data: [{embedding}]}` JSON shape, and a deterministic
//! offline fallback that derives a pseudo-embedding from a hash of the prompt.

mod cache;
mod init;
mod provider;

pub use cache::{embed_dataset, EmbeddingCache, EmbeddingTable, TypeEmbedding};
pub use init::{init_attention, init_coefficients};
pub use provider::{
    fnv1a64, EmbeddingProvider, FallbackProvider, FileProvider, ProviderConfig, RemoteProvider, SplitMix64,
    DEFAULT_LLM_DIM,
};

use crate::data::NodeType;

/// Instruction appended to every type prompt.
pub const INSTRUCTION: &str = "Summarize what a node of this type represents, which attributes describe \
it, and how it relates to other node types. Answer in the format: \
\"Summary: <one sentence> | Attributes: <comma-separated list> | Relations: <comma-separated list>\".";

/// A rendered prompt for one node type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypePrompt {
    pub node_type: String,
    pub text: String,
}

impl TypePrompt {
    /// Hex content hash of the prompt text.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.text.as_bytes()))
    }
}

/// Description used for types whose manifest entry has none.
pub fn stub_description(name: &str) -> String {
    format!("Nodes of type {name} in a heterogeneous temporal graph.")
}

/// Renders the prompt of a node type: an introduction paragraph carrying the
/// type's description, followed by [`INSTRUCTION`].
pub fn build_prompt(ty: &NodeType) -> TypePrompt {
    let description = if ty.description.trim().is_empty() {
        stub_description(&ty.name)
    } else {
        ty.description.trim().to_string()
    };
    TypePrompt {
        node_type: ty.name.clone(),
        text: format!("Node type \"{}\". {description}\n\n{INSTRUCTION}", ty.name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(name: &str, description: &str) -> NodeType {
        NodeType { name: name.into(), count: 1, feature_dim: 1, description: description.into() }
    }

    #[test]
    fn description_is_spliced_before_the_instruction() {
        let p = build_prompt(&ty("paper", "Academic papers."));
        assert_eq!(p.text, format!("Node type \"paper\". Academic papers.\n\n{INSTRUCTION}"));
        assert!(p.text.ends_with(INSTRUCTION));
    }

    #[test]
    fn empty_description_uses_stub() {
        let p = build_prompt(&ty("venue", "  "));
        assert!(p.text.contains("Nodes of type venue in a heterogeneous temporal graph."));
    }

    #[test]
    fn rendering_is_pure() {
        let a = build_prompt(&ty("author", "Writers."));
        let b = build_prompt(&ty("author", "Writers."));
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), build_prompt(&ty("author", "Readers.")).hash());
    }
}
