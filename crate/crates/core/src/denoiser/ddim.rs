use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, NoiseSchedule, Plan, TextEmbedding};
use crate::error::{Error, Result};
use crate::geometry::ViewRing;
use crate::latent::LatentStack;
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance: f64,
    pub seed: u64,
    /// Clamp the clean-latent estimate to `[-1, 1]` at every step.
    pub clip_x0: bool,
    pub deterministic: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 7.5,
            seed: 0,
            clip_x0: true,
            deterministic: false,
        }
    }
}

/// Conditional and unconditional noise predictions.
pub trait EpsModel: Sync {
    fn eps(&self, zt: &Tensor, t: usize, conditional: bool) -> Result<Tensor>;
}

/// `eu + s (ec - eu)`.
pub fn cfg_combine(eu: &Tensor, ec: &Tensor, s: f64) -> Tensor {
    let data = eu.data().iter().zip(ec.data()).map(|(u, c)| u + s * (c - u)).collect();
    Tensor::from_parts(eu.shape().to_vec(), data)
}

/// Descending sub-schedule `[T, ..., T/steps]`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!("need 1 <= steps <= {total}, got {steps}")));
    }
    Ok((1..=steps).rev().map(|k| k * total / steps).collect())
}

/// One deterministic update from `ab_t` to `ab_prev`.
pub fn ddim_step(zt: &Tensor, eps: &Tensor, ab_t: f64, ab_prev: f64, clip_x0: bool) -> Tensor {
    let (st, nt) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sp, np) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let data = zt
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| {
            let mut x0 = (z - nt * e) / st;
            if clip_x0 {
                x0 = x0.clamp(-1.0, 1.0);
            }
            sp * x0 + np * e
        })
        .collect();
    Tensor::from_parts(zt.shape().to_vec(), data)
}

/// Full guided sampling loop starting from `z_init`.
pub fn ddim_loop(
    model: &impl EpsModel,
    sched: &NoiseSchedule,
    z_init: Tensor,
    steps: usize,
    guidance: f64,
    clip_x0: bool,
) -> Result<Tensor> {
    let ts = ddim_timesteps(sched.steps, steps)?;
    let mut z = z_init;
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let (ec, eu) = par::join(|| model.eps(&z, t, true), || model.eps(&z, t, false));
        let eps = cfg_combine(&eu?, &ec?, guidance);
        z = ddim_step(&z, &eps, sched.alpha_bar(t)?, sched.alpha_bar(t_prev)?, clip_x0);
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("sampler diverged at t={t}")));
        }
    }
    Ok(z)
}

struct Guided<'a> {
    model: &'a Denoiser,
    plan: Plan,
    cond: TextEmbedding,
    uncond: TextEmbedding,
}

impl EpsModel for Guided<'_> {
    fn eps(&self, zt: &Tensor, t: usize, conditional: bool) -> Result<Tensor> {
        let text = if conditional { &self.cond } else { &self.uncond };
        self.model.predict_tokens(&self.plan, zt, t, text, false)
    }
}

/// Samples a latent stack for `prompt` on `ring`.
pub fn ddim_sample(model: &Denoiser, ring: &ViewRing, prompt: &str, cfg: &SampleConfig) -> Result<LatentStack> {
    let c = &model.config;
    let guided = Guided {
        model,
        plan: Plan::new(c, ring, cfg.deterministic)?,
        cond: model.text_encoder().encode(prompt)?,
        uncond: model.text_encoder().null(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = Tensor::randn(&[c.views, c.height * c.width, c.latent_channels], 1.0, &mut rng);
    let out = ddim_loop(&guided, &c.schedule, z, cfg.steps, cfg.guidance, cfg.clip_x0)?;
    LatentStack::from_tokens(&out, ring.clone())
}
