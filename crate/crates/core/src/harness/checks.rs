use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_many, GradCheckReport};
use crate::denoiser::{training_loss, Denoiser, ModelConfig, Plan, TrainSample};
use crate::error::Result;
use crate::params::{Binder, Params};
use crate::tensor::Tensor;

/// Finite-difference check of the full noise-prediction loss of the
/// miniature denoiser (two views, 4x4 latents, 8 channels, every operator on)
/// with respect to all of its parameters.
pub fn gradcheck_miniature(seed: u64, eps: f64, tol: f64, max_entries: Option<usize>) -> Result<GradCheckReport> {
    let cfg = ModelConfig::miniature();
    let ring = cfg.ring()?;
    let model = Denoiser::new(cfg.clone(), seed)?;
    let plan = Plan::new(&cfg, &ring, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let shape = [cfg.views, cfg.height * cfg.width, cfg.latent_channels];
    let z0 = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
    let sample = TrainSample {
        t: 400,
        eps: Tensor::randn(&shape, 1.0, &mut rng),
        null_text: false,
    };
    let text = model.text_encoder().encode("a red box")?;
    let params: Vec<Tensor> = model.named().into_iter().map(|(_, t)| t).collect();
    grad_check_many(
        |tape, vars| {
            let v = model.bind(&mut Binder::replay(tape, vars));
            training_loss(&model, &v, &plan, &z0, &sample, &text, false, tape)
        },
        &params,
        eps,
        tol,
        max_entries,
    )
}
