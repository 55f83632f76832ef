//! Alternatives to each component of the primary model, and the decoupled
//! spatial-then-temporal baseline used for comparison.
//!
//! The variant semantics here are concrete constructions:
//!
//! * init `random` draws `uniform(0, 1)` scores per relation and normalizes
//!   them with a softmax per destination type; `average` is `1/|R(v)|`;
//!   `zero` starts every chain from the zero state.
//! * attention `projected` scores each relation with a scorer owned by one
//!   window position and shared by all relations; nothing is carried across
//!   time. `self` replaces the recurrent chain with causal dot-product
//!   attention over per-snapshot mean representations. `gated` mixes the
//!   previous coefficient with a fresh score through a sigmoid gate. `lstm`
//!   swaps the GRU cell for an LSTM cell.
//! * aggregation `gcn` adds a relation weight before the activation, `gat`
//!   uses learned per-edge attention, and `none` hands every relation the
//!   destination's own representation.

mod attention;
mod baseline;
mod gat;

pub use attention::{gated_step, projected_score, self_attention_scores, static_relation_attention};
pub use baseline::DecoupledBaseline;
pub use gat::gat_aggregate;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::softmax_values;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Llm,
    Random,
    Average,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Dynamic,
    Projected,
    #[serde(rename = "self")]
    SelfAttention,
    Gated,
    Lstm,
}

impl AttentionKind {
    /// Whether the variant evolves a state seeded by the initial coefficients.
    pub fn uses_init(self) -> bool {
        matches!(self, AttentionKind::Dynamic | AttentionKind::Gated | AttentionKind::Lstm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    #[default]
    Simplified,
    Gcn,
    Gat,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantConfig {
    pub init: InitKind,
    pub attention: AttentionKind,
    pub aggregation: AggregationKind,
}

impl VariantConfig {
    pub fn all() -> Vec<VariantConfig> {
        let mut out = Vec::new();
        for init in [InitKind::Llm, InitKind::Random, InitKind::Average, InitKind::Zero] {
            for attention in [
                AttentionKind::Dynamic,
                AttentionKind::Projected,
                AttentionKind::SelfAttention,
                AttentionKind::Gated,
                AttentionKind::Lstm,
            ] {
                for aggregation in
                    [AggregationKind::Simplified, AggregationKind::Gcn, AggregationKind::Gat, AggregationKind::None]
                {
                    out.push(VariantConfig { init, attention, aggregation });
                }
            }
        }
        out
    }
}

/// Constant initial coefficients for the non-LLM init kinds.
///
/// `sizes[v]` is `|R(v)|`; the result holds one vector of that length per
/// type. Returns `None` for [`InitKind::Llm`], which is computed on the tape.
pub fn variant_init(kind: InitKind, sizes: &[usize], seed: u64) -> Option<Vec<Vec<f64>>> {
    match kind {
        InitKind::Llm => None,
        InitKind::Average => Some(sizes.iter().map(|&m| vec![1.0 / m as f64; m]).collect()),
        InitKind::Zero => Some(sizes.iter().map(|&m| vec![0.0; m]).collect()),
        InitKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(
                sizes
                    .iter()
                    .map(|&m| {
                        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                        softmax_values(&raw)
                    })
                    .collect(),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_is_uniform() {
        let e = variant_init(InitKind::Average, &[3], 0).unwrap();
        assert_eq!(e, vec![vec![1.0 / 3.0; 3]]);
    }

    #[test]
    fn zero_is_zero_and_llm_is_deferred() {
        assert_eq!(variant_init(InitKind::Zero, &[2, 1], 0).unwrap(), vec![vec![0.0, 0.0], vec![0.0]]);
        assert!(variant_init(InitKind::Llm, &[2], 0).is_none());
    }

    #[test]
    fn random_is_seeded_distribution() {
        let a = variant_init(InitKind::Random, &[4, 2], 7).unwrap();
        let b = variant_init(InitKind::Random, &[4, 2], 7).unwrap();
        assert_eq!(a, b);
        for v in &a {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_ne!(a, variant_init(InitKind::Random, &[4, 2], 8).unwrap());
    }

    #[test]
    fn variant_names_parse() {
        let v: VariantConfig =
            serde_json::from_str(r#"{"init":"zero","attention":"self","aggregation":"none"}"#).unwrap();
        assert_eq!(v.attention, AttentionKind::SelfAttention);
        assert_eq!(VariantConfig::all().len(), 80);
        assert!(serde_json::from_str::<VariantConfig>(r#"{"attention":"transformer"}"#).is_err());
    }
}
