//! Toy multiview latent denoiser.

mod checkpoint;
mod ddim;
mod optim;
mod schedule;
mod text;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, RngState, CHECKPOINT_VERSION};
pub use ddim::{cfg_combine, ddim_loop, ddim_sample, ddim_step, ddim_timesteps, EpsModel, SampleConfig};
pub use optim::Adam;
pub use schedule::{add_noise, add_noise_ab, NoiseSchedule};
pub use text::{prompt_template, TextEmbedding, ToyTextEncoder, NULL_TOKEN};
pub use train::{
    moving_average, noise_prediction_loss, train, training_loss, training_step, StepOutput, TrainConfig, TrainReport, TrainSample, LOSS_WINDOW,
};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    adjacent_attention_var, air_attention_var, cross_attention_var, score_map_var, trajectory_attention_var,
    trajectory_table, AirConfig, AttentionParams, AttentionVars, ScoreMapper, ScoreMapperVars,
};
use crate::autodiff::{RowIndex, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::ViewRing;
use crate::latent::LatentStack;
use crate::params::{join_name, tensor_params, Binder, Params};
use crate::ssm::{glance_passes_var, ScanKernel, ScanOrder, ScanStrategy, SsmParams, SsmVars};
use crate::tensor::Tensor;

/// Which cross-view operators run inside each block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleFlags {
    pub aa: bool,
    pub dr: bool,
    pub rg: bool,
    pub air: bool,
}

impl ModuleFlags {
    pub const ALL: ModuleFlags = ModuleFlags {
        aa: true,
        dr: true,
        rg: true,
        air: true,
    };
    pub const AA_ONLY: ModuleFlags = ModuleFlags {
        aa: true,
        dr: false,
        rg: false,
        air: false,
    };
    pub const NONE: ModuleFlags = ModuleFlags {
        aa: false,
        dr: false,
        rg: false,
        air: false,
    };

    /// `"aa+dr+rg+air"`-style label; `"none"` when empty.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.aa, "aa"), (self.dr, "dr"), (self.rg, "rg"), (self.air, "air")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl std::str::FromStr for ModuleFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = ModuleFlags::NONE;
        if s.trim() == "none" {
            return Ok(f);
        }
        for part in s.split('+').map(str::trim) {
            match part {
                "aa" => f.aa = true,
                "dr" => f.dr = true,
                "rg" => f.rg = true,
                "air" => f.air = true,
                other => return Err(Error::InvalidArgument(format!("unknown module {other:?} in stack {s:?}"))),
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub latent_channels: usize,
    pub height: usize,
    pub width: usize,
    pub views: usize,
    pub text_dim: usize,
    pub vocab: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub state_dim: usize,
    pub score_hidden: usize,
    pub air: AirConfig,
    pub scan: ScanStrategy,
    pub scan_chunk: usize,
    pub modules: ModuleFlags,
    pub p_2d: f64,
    pub p_drop: f64,
    pub guidance: f64,
    pub schedule: NoiseSchedule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 24,
            blocks: 1,
            latent_channels: 3,
            height: 8,
            width: 8,
            views: 12,
            text_dim: 16,
            vocab: 257,
            embed_dim: 32,
            heads: 1,
            state_dim: 8,
            score_hidden: 16,
            air: AirConfig::default(),
            scan: ScanStrategy::SpiralBidirectional,
            scan_chunk: 64,
            modules: ModuleFlags::ALL,
            p_2d: 0.4,
            p_drop: 0.1,
            guidance: 7.5,
            schedule: NoiseSchedule::default(),
        }
    }
}

impl ModelConfig {
    /// Two views of 4x4 latents with 8 channels.
    pub fn miniature() -> Self {
        Self {
            channels: 8,
            views: 2,
            height: 4,
            width: 4,
            text_dim: 6,
            embed_dim: 8,
            state_dim: 3,
            score_hidden: 5,
            scan_chunk: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, p) in [("p_2d", self.p_2d), ("p_drop", self.p_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.guidance >= 0.0) {
            return bad(format!("guidance must be >= 0, got {}", self.guidance));
        }
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("{} heads do not split {} channels", self.heads, self.channels));
        }
        if self.views == 0 || self.height == 0 || self.width == 0 || self.latent_channels == 0 {
            return bad("views and latent extents must be positive".into());
        }
        if self.vocab < 2 || self.text_dim == 0 || self.embed_dim == 0 || self.state_dim == 0 {
            return bad("vocab >= 2 and positive embedding sizes required".into());
        }
        self.air.validate(self.height, self.width)?;
        Ok(())
    }

    pub fn ring(&self) -> Result<ViewRing> {
        ViewRing::new(self.views, self.width, self.height)
    }

    pub fn kernel(&self, deterministic: bool) -> ScanKernel {
        ScanKernel {
            chunk: self.scan_chunk,
            exact_carry: deterministic,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

tensor_params!(Mlp => MlpVars { w1, b1, w2, b2 });

impl Mlp {
    fn init(i: usize, h: usize, o: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: Tensor::randn(&[i, h], 1.0 / (i as f64).sqrt(), rng),
            b1: Tensor::zeros(&[h]),
            w2: Tensor::randn(&[h, o], 1.0 / (h as f64).sqrt(), rng),
            b2: Tensor::zeros(&[o]),
        }
    }
}

impl<'t> MlpVars<'t> {
    fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w1)?.add(self.b1)?.silu().matmul(self.w2)?.add(self.b2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

tensor_params!(Linear => LinearVars { w, b });

impl Linear {
    fn init(i: usize, o: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            w: Tensor::randn(&[i, o], std, rng),
            b: Tensor::zeros(&[o]),
        }
    }
}

impl<'t> LinearVars<'t> {
    fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w)?.add(self.b)
    }
}

/// Norm, FiLM from the per-view embedding, SiLU, 3x3 conv; used residually.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub scale_w: Tensor,
    pub scale_b: Tensor,
    pub shift_w: Tensor,
    pub shift_b: Tensor,
    pub conv_w: Tensor,
    pub conv_b: Tensor,
}

tensor_params!(ResBlock => ResBlockVars { scale_w, scale_b, shift_w, shift_b, conv_w, conv_b });

impl ResBlock {
    fn init(c: usize, e: usize, rng: &mut impl Rng) -> Self {
        let s = 0.1 / (e as f64).sqrt();
        Self {
            scale_w: Tensor::randn(&[e, c], s, rng),
            scale_b: Tensor::zeros(&[c]),
            shift_w: Tensor::randn(&[e, c], s, rng),
            shift_b: Tensor::zeros(&[c]),
            conv_w: Tensor::randn(&[9 * c, c], 0.5 / (9.0 * c as f64).sqrt(), rng),
            conv_b: Tensor::zeros(&[c]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub res: ResBlock,
    pub cross: AttentionParams,
    pub aa: AttentionParams,
    pub dr: AttentionParams,
    pub ssm: SsmParams,
    pub score: ScoreMapper,
    pub air: AttentionParams,
}

pub struct BlockVars<'t> {
    pub res: ResBlockVars<'t>,
    pub cross: AttentionVars<'t>,
    pub aa: AttentionVars<'t>,
    pub dr: AttentionVars<'t>,
    pub ssm: SsmVars<'t>,
    pub score: ScoreMapperVars<'t>,
    pub air: AttentionVars<'t>,
}

impl Params for Block {
    type Vars<'t> = BlockVars<'t>;

    fn bind<'t>(&self, b: &mut Binder<'t>) -> BlockVars<'t> {
        BlockVars {
            res: b.scoped("res", |b| self.res.bind(b)),
            cross: b.scoped("cross", |b| self.cross.bind(b)),
            aa: b.scoped("aa", |b| self.aa.bind(b)),
            dr: b.scoped("dr", |b| self.dr.bind(b)),
            ssm: b.scoped("ssm", |b| self.ssm.bind(b)),
            score: b.scoped("score", |b| self.score.bind(b)),
            air: b.scoped("air", |b| self.air.bind(b)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.res.visit(&join_name(prefix, "res"), f);
        self.cross.visit(&join_name(prefix, "cross"), f);
        self.aa.visit(&join_name(prefix, "aa"), f);
        self.dr.visit(&join_name(prefix, "dr"), f);
        self.ssm.visit(&join_name(prefix, "ssm"), f);
        self.score.visit(&join_name(prefix, "score"), f);
        self.air.visit(&join_name(prefix, "air"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.res.visit_mut(&join_name(prefix, "res"), f);
        self.cross.visit_mut(&join_name(prefix, "cross"), f);
        self.aa.visit_mut(&join_name(prefix, "aa"), f);
        self.dr.visit_mut(&join_name(prefix, "dr"), f);
        self.ssm.visit_mut(&join_name(prefix, "ssm"), f);
        self.score.visit_mut(&join_name(prefix, "score"), f);
        self.air.visit_mut(&join_name(prefix, "air"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: ModelConfig,
    pub time_mlp: Mlp,
    pub cam_mlp: Mlp,
    pub stem: Linear,
    pub pos: Tensor,
    pub blocks: Vec<Block>,
    pub head: Linear,
    text: ToyTextEncoder,
}

pub struct DenoiserVars<'t> {
    pub time_mlp: MlpVars<'t>,
    pub cam_mlp: MlpVars<'t>,
    pub stem: LinearVars<'t>,
    pub pos: Var<'t>,
    pub blocks: Vec<BlockVars<'t>>,
    pub head: LinearVars<'t>,
}

impl Params for Denoiser {
    type Vars<'t> = DenoiserVars<'t>;

    fn bind<'t>(&self, b: &mut Binder<'t>) -> DenoiserVars<'t> {
        DenoiserVars {
            time_mlp: b.scoped("time_mlp", |b| self.time_mlp.bind(b)),
            cam_mlp: b.scoped("cam_mlp", |b| self.cam_mlp.bind(b)),
            stem: b.scoped("stem", |b| self.stem.bind(b)),
            pos: b.param("pos", &self.pos),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| b.scoped(&format!("block{i}"), |b| blk.bind(b)))
                .collect(),
            head: b.scoped("head", |b| self.head.bind(b)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.time_mlp.visit(&join_name(prefix, "time_mlp"), f);
        self.cam_mlp.visit(&join_name(prefix, "cam_mlp"), f);
        self.stem.visit(&join_name(prefix, "stem"), f);
        f(&join_name(prefix, "pos"), &self.pos);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.visit(&join_name(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join_name(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.time_mlp.visit_mut(&join_name(prefix, "time_mlp"), f);
        self.cam_mlp.visit_mut(&join_name(prefix, "cam_mlp"), f);
        self.stem.visit_mut(&join_name(prefix, "stem"), f);
        f(&join_name(prefix, "pos"), &mut self.pos);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(&join_name(prefix, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join_name(prefix, "head"), f);
    }
}

/// Frequencies used for the sinusoidal camera features.
pub const CAMERA_FREQS: usize = 4;

/// `[sin k az, cos k az, sin k el, cos k el]` for `k = 1..=CAMERA_FREQS`.
pub fn camera_features(azimuth_deg: f64, elevation_deg: f64) -> Vec<f64> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let mut out = Vec::with_capacity(4 * CAMERA_FREQS);
    for k in 1..=CAMERA_FREQS {
        let k = k as f64;
        out.extend([(k * az).sin(), (k * az).cos(), (k * el).sin(), (k * el).cos()]);
    }
    out
}

/// Standard sinusoidal timestep features of width `dim`.
pub fn timestep_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

fn layer_norm(x: Var<'_>) -> Result<Var<'_>> {
    let xc = x.sub(x.mean_last())?;
    let inv = xc.square().mean_last().add_scalar(1e-5).rsqrt();
    xc.mul(inv)
}

/// Zero-padded 3x3 im2col table over `views` grids of `h x w`, in tap-major
/// order per pixel.
pub fn conv3x3_table(views: usize, h: usize, w: usize) -> Arc<Vec<RowIndex>> {
    let mut idx = Vec::with_capacity(views * h * w * 9);
    for v in 0..views {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        idx.push(
                            (yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64)
                                .then(|| (v * h * w) as u32 + (yy as usize * w + xx as usize) as u32),
                        );
                    }
                }
            }
        }
    }
    Arc::new(idx)
}

/// Index tables that depend only on the ring and the config.
pub struct Plan {
    pub ring: ViewRing,
    conv: Arc<Vec<RowIndex>>,
    trajectory: (Arc<Vec<RowIndex>>, Tensor),
    orders: Vec<ScanOrder>,
    camera: Tensor,
    pub kernel: ScanKernel,
}

impl Plan {
    pub fn new(config: &ModelConfig, ring: &ViewRing, deterministic: bool) -> Result<Self> {
        if ring.views() != config.views || ring.width != config.width || ring.height != config.height {
            return Err(Error::ShapeMismatch {
                what: "ring vs model config".into(),
                expected: vec![config.views, config.height, config.width],
                found: vec![ring.views(), ring.height, ring.width],
            });
        }
        let feats: Vec<f64> = ring
            .azimuths_deg
            .iter()
            .flat_map(|&az| camera_features(az, ring.elevation_deg))
            .collect();
        Ok(Self {
            ring: ring.clone(),
            conv: conv3x3_table(ring.views(), ring.height, ring.width),
            trajectory: trajectory_table(ring)?,
            orders: config.scan.orders(ring.views(), ring.height, ring.width),
            camera: Tensor::from_parts(vec![ring.views(), 4 * CAMERA_FREQS], feats),
            kernel: config.kernel(deterministic),
        })
    }
}

impl Denoiser {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, e, lc) = (config.channels, config.embed_dim, config.latent_channels);
        let hw = config.height * config.width;
        let time_mlp = Mlp::init(e, e, e, &mut rng);
        let cam_mlp = Mlp::init(4 * CAMERA_FREQS, e, e, &mut rng);
        let stem = Linear::init(9 * lc, c, 1.0 / (9.0 * lc as f64).sqrt(), &mut rng);
        let pos = Tensor::randn(&[hw, c], 0.1, &mut rng);
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            blocks.push(Block {
                res: ResBlock::init(c, e, &mut rng),
                cross: AttentionParams::init_cross(c, config.text_dim, config.heads, &mut rng)?,
                aa: AttentionParams::init(c, config.heads, &mut rng)?,
                dr: AttentionParams::init(c, config.heads, &mut rng)?,
                ssm: SsmParams::init(c, config.state_dim, &mut rng),
                score: ScoreMapper::init(c, config.text_dim, config.score_hidden, &mut rng),
                air: AttentionParams::init(c, config.heads, &mut rng)?,
            });
        }
        let head = Linear::init(c, lc, 0.1 / (c as f64).sqrt(), &mut rng);
        let text = ToyTextEncoder::new(config.vocab, config.text_dim);
        Ok(Self {
            config,
            time_mlp,
            cam_mlp,
            stem,
            pos,
            blocks,
            head,
            text,
        })
    }

    pub fn text_encoder(&self) -> &ToyTextEncoder {
        &self.text
    }

    /// Camera embedding `[embed_dim]` for one camera.
    pub fn embed_camera(&self, azimuth_deg: f64, elevation_deg: f64) -> Result<Tensor> {
        let tape = Tape::new();
        let m = self.cam_mlp.bind(&mut Binder::new(&tape));
        let feats = camera_features(azimuth_deg, elevation_deg);
        let x = tape.leaf(Tensor::from_parts(vec![1, feats.len()], feats));
        m.apply(x)?.value().into_reshape(&[self.config.embed_dim])
    }

    /// Noise prediction for tokens `zt [f, H*W, latent_channels]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_var<'t>(
        &self,
        v: &DenoiserVars<'t>,
        plan: &Plan,
        zt: Var<'t>,
        t: usize,
        text: &TextEmbedding,
        mode_2d: bool,
    ) -> Result<Var<'t>> {
        let cfg = &self.config;
        let (f, h, w) = (cfg.views, cfg.height, cfg.width);
        let (hw, c, lc) = (h * w, cfg.channels, cfg.latent_channels);
        if zt.shape() != [f, hw, lc] {
            return Err(Error::ShapeMismatch {
                what: "denoiser input".into(),
                expected: vec![f, hw, lc],
                found: zt.shape(),
            });
        }
        if text.pooled.shape() != [cfg.text_dim] {
            return Err(Error::ShapeMismatch {
                what: "text embedding".into(),
                expected: vec![cfg.text_dim],
                found: text.pooled.shape().to_vec(),
            });
        }
        let tape = zt.tape();
        let tfeat = timestep_features(t, cfg.embed_dim);
        let temb = v.time_mlp.apply(tape.leaf(Tensor::from_parts(vec![1, cfg.embed_dim], tfeat)))?;
        let cemb = v.cam_mlp.apply(tape.leaf(plan.camera.clone()))?;
        let emb = temb.add(cemb)?.silu();

        let mut x = v
            .stem
            .apply(zt.gather_rows(plan.conv.clone(), lc, &[f, hw, 9 * lc])?)?
            .add(v.pos)?;
        let ctx = tape.leaf(text.tokens.clone());
        let pooled = tape.leaf(text.pooled.clone());

        for b in &v.blocks {
            let n = layer_norm(x)?;
            let scale = emb.matmul(b.res.scale_w)?.add(b.res.scale_b)?.reshape(&[f, 1, c])?;
            let shift = emb.matmul(b.res.shift_w)?.add(b.res.shift_b)?.reshape(&[f, 1, c])?;
            let a = n.mul(scale.add_scalar(1.0))?.add(shift)?.silu();
            let conv = a
                .gather_rows(plan.conv.clone(), c, &[f, hw, 9 * c])?
                .matmul(b.res.conv_w)?
                .add(b.res.conv_b)?;
            x = x.add(conv)?;

            x = x.add(cross_attention_var(layer_norm(x)?, ctx, &b.cross)?)?;

            if mode_2d {
                continue;
            }
            let m = cfg.modules;
            if m.aa {
                x = x.add(adjacent_attention_var(layer_norm(x)?, &b.aa)?)?;
            }
            if m.dr {
                x = x.add(trajectory_attention_var(
                    layer_norm(x)?,
                    &plan.ring,
                    &b.dr,
                    Some(&plan.trajectory),
                )?)?;
            }
            if m.rg {
                x = x.add(glance_passes_var(layer_norm(x)?, &b.ssm, &plan.orders, plan.kernel)?)?;
            }
            if m.air {
                let n = layer_norm(x)?;
                let s = score_map_var(n, pooled, &b.score)?;
                x = x.add(air_attention_var(n, s, h, w, cfg.air, &b.air)?)?;
            }
        }
        v.head.apply(layer_norm(x)?)
    }

    /// Plain-tensor noise prediction for a latent stack.
    pub fn denoise(
        &self,
        zt: &LatentStack,
        t: usize,
        text: &TextEmbedding,
        mode_2d: bool,
        deterministic: bool,
    ) -> Result<LatentStack> {
        let plan = Plan::new(&self.config, zt.ring(), deterministic)?;
        let out = self.predict_tokens(&plan, &zt.to_tokens(), t, text, mode_2d)?;
        LatentStack::from_tokens(&out, zt.ring().clone())
    }

    /// Token-layout prediction `[f, HW, lc] -> [f, HW, lc]`.
    pub fn predict_tokens(
        &self,
        plan: &Plan,
        zt: &Tensor,
        t: usize,
        text: &TextEmbedding,
        mode_2d: bool,
    ) -> Result<Tensor> {
        let tape = Tape::new();
        let v = self.bind(&mut Binder::new(&tape));
        Ok(self
            .forward_var(&v, plan, tape.leaf(zt.clone()), t, text, mode_2d)?
            .value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> (Denoiser, ViewRing) {
        let cfg = ModelConfig::miniature();
        let ring = cfg.ring().unwrap();
        (Denoiser::new(cfg, 3).unwrap(), ring)
    }

    fn noise_stack(ring: &ViewRing, seed: u64) -> LatentStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentStack::new(Tensor::randn(&[ring.views(), 3, ring.height, ring.width], 1.0, &mut rng), ring.clone())
            .unwrap()
    }

    #[test]
    fn module_flags_roundtrip() {
        for s in ["aa", "aa+dr", "aa+dr+rg", "aa+dr+rg+air", "none"] {
            assert_eq!(s.parse::<ModuleFlags>().unwrap().label(), s);
        }
        assert!("aa+xx".parse::<ModuleFlags>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.p_2d = 1.5;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            guidance: -1.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn camera_embedding_properties() {
        let (m, _) = mini();
        assert_eq!(m.embed_camera(30.0, 0.0).unwrap(), m.embed_camera(30.0, 0.0).unwrap());
        let a = m.embed_camera(0.0, 0.0).unwrap();
        let b = m.embed_camera(360.0, 0.0).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        let ring = ViewRing::new(12, 8, 8).unwrap();
        let embs: Vec<Tensor> = ring.azimuths_deg.iter().map(|&az| m.embed_camera(az, 0.0).unwrap()).collect();
        for i in 0..12 {
            for j in i + 1..12 {
                assert!(embs[i].max_abs_diff(&embs[j]).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn forward_is_reproducible() {
        let (m, ring) = mini();
        let z = noise_stack(&ring, 1);
        let text = m.text_encoder().encode("a red box").unwrap();
        let a = m.denoise(&z, 500, &text, false, true).unwrap();
        let b = m.denoise(&z, 500, &text, false, true).unwrap();
        assert_eq!(a, b);
        assert!(a.tensor().is_finite());
    }

    #[test]
    fn mode_2d_ignores_other_views() {
        let (m, ring) = mini();
        let z = noise_stack(&ring, 2);
        let text = m.text_encoder().encode("a red box").unwrap();
        let base = m.denoise(&z, 300, &text, true, true).unwrap();
        let mut other = z.tensor().clone();
        let n = 3 * ring.height * ring.width;
        for v in &mut other.data_mut()[n..] {
            *v += 1.0;
        }
        let changed = m.denoise(&LatentStack::new(other, ring.clone()).unwrap(), 300, &text, true, true).unwrap();
        assert_eq!(base.view(0), changed.view(0));
        let full = m.denoise(&z, 300, &text, false, true).unwrap();
        assert_ne!(full.view(0), base.view(0));
    }

    #[test]
    fn binder_order_matches_visit_order() {
        let (m, _) = mini();
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        m.bind(&mut b);
        let bound: Vec<String> = b.bound().iter().map(|(n, _)| n.clone()).collect();
        let visited: Vec<String> = m.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(bound, visited);
    }
}
