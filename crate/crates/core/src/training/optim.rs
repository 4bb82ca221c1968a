use std::f64::consts::PI;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{ParameterSet, Tensor};

/// RMSProp: `a ← ρ·a + (1−ρ)·g²`, `p ← p − lr·g / (√a + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    accum: IndexMap<String, Tensor>,
}

impl RmsProp {
    pub fn new(rho: f64, eps: f64) -> Self {
        RmsProp {
            rho,
            eps,
            accum: IndexMap::new(),
        }
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accum.get(name)
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
        }
        let (rho, eps) = (self.rho, self.eps);
        for (name, p) in params.iter_mut() {
            let acc = self
                .accum
                .entry(name.to_owned())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            if acc.shape() != p.value.shape() {
                return Err(Error::shape("rmsprop", acc.shape(), p.value.shape()));
            }
            for ((v, &g), a) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(acc.data_mut())
            {
                *a = rho * *a + (1.0 - rho) * g * g;
                *v -= lr * g / (a.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing with warm restarts over a fixed number of cycles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalraSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub cycles: usize,
}

impl CalraSchedule {
    pub fn cycle_length(&self) -> f64 {
        self.epochs as f64 / self.cycles.max(1) as f64
    }

    /// Rate at a (possibly fractional) position in epochs.
    pub fn lr_at(&self, position: f64) -> f64 {
        let t = self.cycle_length();
        let t_cur = position % t;
        self.lr_at_fraction(t_cur / t)
    }

    /// Rate at fraction `0 ≤ u ≤ 1` of a cycle; `u = 1` is the cycle's end,
    /// the floor reached just before the next restart.
    pub fn lr_at_fraction(&self, u: f64) -> f64 {
        let w = 0.5 * (1.0 + (PI * u).cos());
        (self.lr_min * (1.0 - w) + self.lr_max * w).clamp(self.lr_min, self.lr_max)
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr_at(epoch as f64)
    }
}
