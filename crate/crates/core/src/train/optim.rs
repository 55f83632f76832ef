use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the parameters directly, not through the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers of every updated parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of every parameter present in `grads`.
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)
/// ```
///
/// Gradients are checked before anything is modified.
pub fn adam_step(
    ps: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, gr) in grads {
        let t = ps
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter '{name}'")))?;
        if t.numel() != gr.len() {
            return Err(Error::Dimension(format!("gradient of '{name}' has {} entries", gr.len())));
        }
        if let Some(i) = gr.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of '{name}' at index {i} is {}", gr[i])));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (name, gr) in grads {
        let theta = ps.get_mut(name).expect("checked above").data_mut();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; gr.len()], vec![0.0; gr.len()]));
        for i in 0..gr.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gr[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            theta[i] -= cfg.lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::tensor::Tensor;

    fn one(theta: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("x", Tensor::vector(vec![theta]));
        ps
    }

    fn grad(g: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("x".to_string(), vec![g])])
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut ps = one(0.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        adam_step(&mut ps, &grad(1.0), &mut AdamState::new(), &cfg).unwrap();
        let delta = ps.get("x").unwrap().data()[0];
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((delta + 0.0999999990).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = one(0.7);
        let mut st = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut ps, &grad(0.0), &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(ps.get("x").unwrap().data()[0], 0.7);
    }

    #[test]
    fn ten_steps_on_a_parabola_match_scalar_oracle() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut ps = one(1.0);
        let mut st = AdamState::new();
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for k in 1..=10 {
            let gr = 2.0 * ps.get("x").unwrap().data()[0];
            adam_step(&mut ps, &grad(gr), &mut st, &cfg).unwrap();
            let g = 2.0 * th;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            th -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((ps.get("x").unwrap().data()[0] - th).abs() < 1e-12, "step {k}");
        }
        assert!(th.abs() < 1.0);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut ps = one(2.0);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..AdamConfig::default() };
        adam_step(&mut ps, &grad(0.0), &mut AdamState::new(), &cfg).unwrap();
        assert!((ps.get("x").unwrap().data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut ps = one(1.0);
        let msg = adam_step(&mut ps, &grad(f64::NAN), &mut AdamState::new(), &AdamConfig::default())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("'x'"), "{msg}");
        assert_eq!(ps.get("x").unwrap().data()[0], 1.0);
    }

    proptest! {
        #[test]
        fn zero_learning_rate_is_identity(theta in -10.0..10.0f64, g in -10.0..10.0f64, wd in 0.0..1.0f64) {
            let mut ps = one(theta);
            let cfg = AdamConfig { lr: 0.0, weight_decay: wd, ..AdamConfig::default() };
            adam_step(&mut ps, &grad(g), &mut AdamState::new(), &cfg).unwrap();
            prop_assert_eq!(ps.get("x").unwrap().data()[0], theta);
        }
    }
}
