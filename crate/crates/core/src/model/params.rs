use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    /// Inserts a tensor drawn from `uniform(-1/√fan_in, 1/√fan_in)`.
    pub fn insert_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    /// Places every parameter on `g`; names matching `frozen` become constants.
    pub fn bind(&self, g: &mut Graph, frozen: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if frozen(name) { g.constant(t.clone()) } else { g.leaf(t.clone().with_grad()) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Copies values from `other` for every shared name with equal shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &mut self.params {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter '{name}'")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?} in checkpoint, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        if let Some(extra) = other.names().find(|n| !self.contains(n)) {
            return Err(Error::Checkpoint(format!("checkpoint has unknown parameter '{extra}'")));
        }
        Ok(())
    }
}

/// Parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("model has no parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradient of every parameter after [`Graph::backward`]; parameters
    /// the loss does not depend on get zeros.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let n = g.value(v).numel();
                (name.clone(), g.grad(v).map_or_else(|| vec![0.0; n], <[f64]>::to_vec))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamStore::new();
        p.insert_uniform("w", &[16, 4], 16, &mut rng);
        assert!(p.get("w").unwrap().data().iter().all(|x| x.abs() <= 0.25));
        assert_eq!(p.count(), 64);
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::scalar(2.0));
        p.insert("b", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let bound = p.bind(&mut g, |n| n == "b");
        let y = g.mul(bound.get("a").unwrap(), bound.get("b").unwrap()).unwrap();
        g.backward(y).unwrap();
        let grads = bound.grads(&g);
        assert_eq!(grads["a"], vec![3.0]);
        assert_eq!(grads["b"], vec![0.0]);
    }

    #[test]
    fn load_from_checks_names_and_shapes() {
        let mut a = ParamStore::new();
        a.insert("x", Tensor::zeros(&[2]));
        let mut b = ParamStore::new();
        b.insert("x", Tensor::vector(vec![1.0, 2.0]));
        a.load_from(&b).unwrap();
        assert_eq!(a.get("x").unwrap().data(), &[1.0, 2.0]);
        b.insert("y", Tensor::scalar(0.0));
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::new();
        c.insert("x", Tensor::zeros(&[3]));
        assert!(a.load_from(&c).is_err());
    }
}
