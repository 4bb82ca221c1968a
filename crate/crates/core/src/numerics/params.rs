use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with matching gradient slots, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Parameter>,
}

/// Tape handles for every entry of a [`ParameterSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.into(), Parameter { value, grad });
    }

    /// Inserts a tensor drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, -bound, bound, rng));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.var(p.value.clone())))
            .collect();
        Bindings { vars }
    }

    /// Copies gradients out of `grads`; parameters the loss never reached get zeros.
    pub fn load_grads(&mut self, grads: &Gradients, bindings: &Bindings) {
        for (name, p) in self.entries.iter_mut() {
            match bindings.try_get(name).and_then(|v| grads.get(v)) {
                Some(g) => p.grad.data_mut().copy_from_slice(g.data()),
                None => p.grad.data_mut().fill(0.0),
            }
        }
    }
}

/// Runs the reverse sweep from `loss` and fills the gradient slots of `params`.
pub fn backward(loss: Var, tape: &Tape, params: &mut ParameterSet, bindings: &Bindings) -> Result<()> {
    let grads = tape.backward(loss)?;
    params.load_grads(&grads, bindings);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut params = ParameterSet::new();
        params.insert("used", Tensor::vector(vec![1.0, 2.0]));
        params.insert("unused", Tensor::vector(vec![5.0]));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let sq = tape.mul(b.get("used"), b.get("used")).unwrap();
        let loss = tape.sum(sq);
        backward(loss, &tape, &mut params, &b).unwrap();
        assert_eq!(params.grad("used").unwrap().data(), &[2.0, 4.0]);
        assert_eq!(params.grad("unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn grad_shape_tracks_value_shape() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::zeros(&[3, 2]));
        assert_eq!(params.grad("w").unwrap().shape(), &[3, 2]);
        assert!(params.set_value("w", Tensor::zeros(&[2, 3])).is_err());
    }
}
