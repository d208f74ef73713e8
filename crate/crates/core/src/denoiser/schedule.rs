use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentStack;
use crate::tensor::Tensor;

/// Linear-beta diffusion schedule; `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(skip)]
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let frac = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self {
            steps,
            beta_start,
            beta_end,
            alpha_bar,
        }
    }

    /// Rebuilds the table after deserialization.
    pub fn rebuilt(&self) -> Self {
        Self::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("timestep {t} outside 0..={}", self.steps)))
    }
}

/// `sqrt(ab) z0 + sqrt(1 - ab) eps`.
pub fn add_noise_ab(z0: &Tensor, eps: &Tensor, ab: f64) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            what: "noise".into(),
            expected: z0.shape().to_vec(),
            found: eps.shape().to_vec(),
        });
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

pub fn add_noise(z0: &LatentStack, t: usize, eps: &LatentStack, sched: &NoiseSchedule) -> Result<LatentStack> {
    let ab = sched.alpha_bar(t)?;
    LatentStack::new(add_noise_ab(z0.tensor(), eps.tensor(), ab)?, z0.ring().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_monotone() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        for t in 1..=1000 {
            let (a, b) = (s.alpha_bar(t - 1).unwrap(), s.alpha_bar(t).unwrap());
            assert!(b < a && b > 0.0);
        }
        assert!(s.alpha_bar(1001).is_err());
    }

    #[test]
    fn add_noise_examples() {
        let z = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let e = Tensor::new(vec![3], vec![0.3, 0.1, -1.0]).unwrap();
        assert_eq!(add_noise_ab(&z, &e, 1.0).unwrap(), z);
        assert_eq!(add_noise_ab(&z, &e, 0.0).unwrap(), e);
        let q = add_noise_ab(&z, &e, 0.25).unwrap();
        for i in 0..3 {
            let want = 0.5 * z.data()[i] + 0.75f64.sqrt() * e.data()[i];
            assert!((q.data()[i] - want).abs() < 1e-15);
        }
    }
}
