use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut impl Params, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut missing = None;
        model.visit_mut("", &mut |name, p| {
            let Some(g) = grads.get(name) else {
                missing.get_or_insert_with(|| name.to_string());
                return;
            };
            let m = ms.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
            let v = vs.entry(name.to_string()).or_insert_with(|| vec![0.0; p.numel()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * clip;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
        });
        match missing {
            Some(n) => Err(Error::InvalidArgument(format!("no gradient for parameter {n}"))),
            None => Ok(()),
        }
    }
}
