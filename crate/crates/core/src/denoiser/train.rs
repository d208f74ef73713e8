use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::RngState;
use super::ddim::EpsModel;
use super::schedule::NoiseSchedule;
use super::optim::Adam;
use super::schedule::add_noise_ab;
use super::{Denoiser, DenoiserVars, Plan, TextEmbedding};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::latent::LatentStack;
use crate::par;
use crate::params::{Binder, Params};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 2,
            lr: 3e-3,
            lr_final: 1e-4,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Cosine decay from `lr` to `lr_final`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// One element of a training batch.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub t: usize,
    /// Noise in token layout `[f, HW, lc]`.
    pub eps: Tensor,
    pub null_text: bool,
}

pub struct StepOutput {
    pub loss: f64,
    pub mode_2d: bool,
    pub grads: BTreeMap<String, Tensor>,
}

/// Mean squared error between predicted and true noise for one sample.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<'t>(
    model: &Denoiser,
    vars: &DenoiserVars<'t>,
    plan: &Plan,
    z0: &Tensor,
    sample: &TrainSample,
    text: &TextEmbedding,
    mode_2d: bool,
    tape: &'t Tape,
) -> Result<Var<'t>> {
    let ab = model.config.schedule.alpha_bar(sample.t)?;
    let zt = add_noise_ab(z0, &sample.eps, ab)?;
    let pred = model.forward_var(vars, plan, tape.leaf(zt), sample.t, text, mode_2d)?;
    Ok(pred.sub(tape.leaf(sample.eps.clone()))?.square().mean())
}

/// The same objective for any noise predictor, on plain tensors.
pub fn noise_prediction_loss(model: &impl EpsModel, sched: &NoiseSchedule, z0: &Tensor, sample: &TrainSample) -> Result<f64> {
    let zt = add_noise_ab(z0, &sample.eps, sched.alpha_bar(sample.t)?)?;
    let pred = model.eps(&zt, sample.t, !sample.null_text)?;
    if pred.shape() != sample.eps.shape() {
        return Err(Error::ShapeMismatch {
            what: "noise prediction".into(),
            expected: sample.eps.shape().to_vec(),
            found: pred.shape().to_vec(),
        });
    }
    let sq: f64 = pred.data().iter().zip(sample.eps.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / pred.numel() as f64)
}

/// Draws a batch from `rng`, evaluates every sample on its own tape (in
/// parallel when enabled) and averages losses and gradients.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    model: &Denoiser,
    plan: &Plan,
    z0: &Tensor,
    text: &TextEmbedding,
    null: &TextEmbedding,
    batch: usize,
    rng: &mut impl Rng,
    deterministic: bool,
) -> Result<StepOutput> {
    let cfg = &model.config;
    let mode_2d = rng.random::<f64>() < cfg.p_2d;
    let samples: Vec<TrainSample> = (0..batch.max(1))
        .map(|_| {
            let t = rng.random_range(1..=cfg.schedule.steps);
            let eps = Tensor::from_fn(z0.shape(), |_| rng.sample::<f64, _>(StandardNormal));
            let null_text = rng.random::<f64>() < cfg.p_drop;
            TrainSample { t, eps, null_text }
        })
        .collect();

    let shards: Vec<Result<(f64, Vec<f64>)>> = par::map_indexed(samples.len(), |i| {
        let s = &samples[i];
        let tape = Tape::new();
        let mut binder = Binder::new(&tape);
        let vars = model.bind(&mut binder);
        let txt = if s.null_text { null } else { text };
        let loss = training_loss(model, &vars, plan, z0, s, txt, mode_2d, &tape)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at t={} (mode_2d={mode_2d}, null_text={})",
                s.t, s.null_text
            )));
        }
        let grads = tape.backward(loss)?;
        let mut flat = Vec::new();
        for (_, v) in binder.bound() {
            flat.extend_from_slice(grads.wrt(*v).data());
        }
        Ok((value, flat))
    });
    let mut losses = Vec::with_capacity(shards.len());
    let mut parts = Vec::with_capacity(shards.len());
    for r in shards {
        let (l, g) = r?;
        losses.push(l);
        parts.push(g);
    }
    let n = losses.len() as f64;
    let loss = losses.iter().sum::<f64>() / n;
    let flat = par::sum_vectors(parts, deterministic);

    let mut grads = BTreeMap::new();
    let mut off = 0;
    model.visit("", &mut |name, p| {
        let len = p.numel();
        let data = flat[off..off + len].iter().map(|g| g / n).collect();
        grads.insert(name.to_string(), Tensor::from_parts(p.shape().to_vec(), data));
        off += len;
    });
    Ok(StepOutput { loss, mode_2d, grads })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Mean of the last (up to) 50 step losses.
    pub final_loss: f64,
    pub rng: RngState,
}

pub const LOSS_WINDOW: usize = 50;

pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(losses.len());
    let mut acc = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        acc += l;
        if i >= window {
            acc -= losses[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Trains `model` on a single latent stack with one prompt.
pub fn train(
    model: &mut Denoiser,
    z0: &LatentStack,
    prompt: &str,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let plan = Plan::new(&model.config, z0.ring(), cfg.deterministic)?;
    let text = model.text_encoder().encode(prompt)?;
    let null = model.text_encoder().null();
    let tokens = z0.to_tokens();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let out = training_step(model, &plan, &tokens, &text, &null, cfg.batch, &mut rng, cfg.deterministic)?;
        adam.step(model, &out.grads, cfg.lr_at(step))?;
        losses.push(out.loss);
        on_step(step, out.loss);
    }
    let tail = &losses[losses.len().saturating_sub(LOSS_WINDOW)..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(TrainReport {
        losses,
        final_loss,
        rng: RngState::capture(cfg.seed, &rng),
    })
}
