//! Adam with decoupled weight decay.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, state: BTreeMap::new() }
    }

    pub fn from_parts(config: AdamConfig, step: u64, state: BTreeMap<String, Moments<T>>) -> Self {
        Adam { config, step, state }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &BTreeMap<String, Moments<T>> {
        &self.state
    }

    /// Updates every named parameter from its gradient slot, then zeroes the
    /// slots. Fails without touching anything if a gradient is missing.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>, lr: f64) -> Result<()>
    where
        T: 'a,
    {
        let params: Vec<(String, &mut Tensor<T>)> = params.into_iter().collect();
        let missing: Vec<&str> = params.iter().filter(|(_, p)| p.grad().is_none()).map(|(n, _)| n.as_str()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingGradient(missing.join(", ")));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - num_traits::Float::powi(c.beta1, t));
        let bc2 = T::lit(1.0 - num_traits::Float::powi(c.beta2, t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (eps, lr_t, decay) = (T::lit(c.eps), T::lit(lr), T::lit(lr * c.weight_decay));
        for (name, p) in params {
            let grad = p.take_grad().unwrap_or_default();
            let n = p.numel();
            let mom = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| Moments { first: vec![T::zero(); n], second: vec![T::zero(); n] });
            let data = p.data_mut();
            for i in 0..n {
                let g = grad[i];
                mom.first[i] = b1 * mom.first[i] + (T::one() - b1) * g;
                mom.second[i] = b2 * mom.second[i] + (T::one() - b2) * g * g;
                let mhat = mom.first[i] / bc1;
                let vhat = mom.second[i] / bc2;
                data[i] = data[i] - lr_t * mhat / (vhat.sqrt() + eps) - decay * data[i];
            }
            let mut grad = grad;
            grad.fill(T::zero());
            p.set_grad(grad);
        }
        Ok(())
    }
}
