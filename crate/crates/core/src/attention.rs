//! Cross-view attention operators on token layout `[f, H*W, C]`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{RowIndex, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{neighborhood, trajectory_window, ViewRing};
use crate::latent::LatentStack;
use crate::params::{tensor_params, Binder, Params};
use crate::tensor::Tensor;

/// Additive score for padded key slots.
pub const MASKED: f64 = -1e30;

/// Per-head projections shared by every view: `wq [heads, C, dh]`,
/// `wk, wv [heads, C_kv, dh]`, `wo [heads, dh, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

tensor_params!(AttentionParams => AttentionVars { wq, wk, wv, wo });

impl AttentionParams {
    /// Self-attention over `channels` with `heads` heads.
    pub fn init(channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::init_cross(channels, channels, heads, rng)
    }

    /// Queries from `channels`, keys and values from `kv_channels`.
    pub fn init_cross(channels: usize, kv_channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "{heads} heads do not split {channels} channels"
            )));
        }
        let dh = channels / heads;
        Ok(Self {
            wq: Tensor::randn(&[heads, channels, dh], 1.0 / (channels as f64).sqrt(), rng),
            wk: Tensor::randn(&[heads, kv_channels, dh], 1.0 / (kv_channels as f64).sqrt(), rng),
            wv: Tensor::randn(&[heads, kv_channels, dh], 1.0 / (kv_channels as f64).sqrt(), rng),
            wo: Tensor::randn(&[heads, dh, channels], 0.5 / (channels as f64).sqrt(), rng),
        })
    }

    pub fn heads(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.wq.shape()[2]
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                what: "attention channels".into(),
                expected: vec![self.channels()],
                found: vec![c],
            });
        }
        Ok(())
    }
}

impl<'t> AttentionVars<'t> {
    fn heads(&self) -> usize {
        self.wq.shape()[0]
    }

    fn dims(w: Var<'t>) -> (usize, usize, usize) {
        let s = w.shape();
        (s[0], s[1], s[2])
    }

    /// Head `h` of a `[heads, rows, cols]` weight as a `[rows, cols]` matrix.
    fn head(w: Var<'t>, h: usize) -> Result<Var<'t>> {
        let (heads, rows, cols) = Self::dims(w);
        if heads == 1 {
            return w.reshape(&[rows, cols]);
        }
        let idx: Vec<RowIndex> = (h * rows..(h + 1) * rows).map(|r| Some(r as u32)).collect();
        w.gather_rows(Arc::new(idx), cols, &[rows, cols])
    }
}

/// `softmax(q k^T / sqrt(d)) v` on plain matrices.
pub fn sdpa(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (&[n, d], &[m, dk], &[mv, _]) = (q.shape(), k.shape(), v.shape()) else {
        return Err(Error::dim(format!(
            "sdpa expects 2-d operands, got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    };
    if d != dk || m != mv {
        return Err(Error::dim(format!(
            "sdpa shapes disagree: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let tape = Tape::new();
    let (q, k, v) = (
        tape.leaf(q.reshape(&[1, n, d])?),
        tape.leaf(k.reshape(&[1, m, d])?),
        tape.leaf(v.clone().into_reshape(&[1, m, v.shape()[1]])?),
    );
    let out = sdpa_var(q, k, v, None)?.value();
    let dv = out.shape()[2];
    out.into_reshape(&[n, dv])
}

/// Batched attention `q [B, n, d]`, `k [B, m, d]`, `v [B, m, dv]` with an
/// optional additive score bias broadcastable to `[B, n, m]`.
pub fn sdpa_var<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let d = *q.shape().last().expect("rank 3");
    let mut s = q.bmm_bt(k)?.scale(1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        s = s.add(b)?;
    }
    s.softmax().bmm(v)
}

fn token_dims(x: Var<'_>) -> Result<(usize, usize, usize)> {
    match x.shape().as_slice() {
        &[f, hw, c] => Ok((f, hw, c)),
        s => Err(Error::dim(format!("tokens must be [f, HW, C], got {s:?}"))),
    }
}

fn rows(idx: impl IntoIterator<Item = usize>) -> Arc<Vec<RowIndex>> {
    Arc::new(idx.into_iter().map(|r| Some(r as u32)).collect())
}

/// Each view attends over the keys and values of itself and both ring
/// neighbors, stacked as `[z^{i-1}, z^i, z^{i+1}]`.
pub fn adjacent_attention_var<'t>(x: Var<'t>, p: &AttentionVars<'t>) -> Result<Var<'t>> {
    let (f, hw, c) = token_dims(x)?;
    let mut out: Option<Var<'t>> = None;
    let idx = rows((0..f).flat_map(|i| {
        let (prev, next) = ((i + f - 1) % f, (i + 1) % f);
        [prev, i, next]
            .into_iter()
            .flat_map(move |v| v * hw..(v + 1) * hw)
    }));
    for h in 0..p.heads() {
        let wq = AttentionVars::head(p.wq, h)?;
        let dh = wq.shape()[1];
        let q = x.matmul(wq)?;
        let k = x.matmul(AttentionVars::head(p.wk, h)?)?;
        let v = x.matmul(AttentionVars::head(p.wv, h)?)?;
        let kc = k.gather_rows(idx.clone(), dh, &[f, 3 * hw, dh])?;
        let vc = v.gather_rows(idx.clone(), dh, &[f, 3 * hw, dh])?;
        let o = sdpa_var(q, kc, vc, None)?.matmul(AttentionVars::head(p.wo, h)?)?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(o)?,
        });
    }
    let out = out.ok_or_else(|| Error::Internal("attention with zero heads".into()))?;
    debug_assert_eq!(out.shape(), vec![f, hw, c]);
    Ok(out)
}

/// Every token attends over a shared context `ctx [T, C_kv]` (prompt tokens).
pub fn cross_attention_var<'t>(x: Var<'t>, ctx: Var<'t>, p: &AttentionVars<'t>) -> Result<Var<'t>> {
    let (f, hw, _) = token_dims(x)?;
    let ctx_shape = ctx.shape();
    let &[t, _] = ctx_shape.as_slice() else {
        return Err(Error::dim(format!("context must be [T, C], got {ctx_shape:?}")));
    };
    let mut out: Option<Var<'t>> = None;
    for h in 0..p.heads() {
        let wq = AttentionVars::head(p.wq, h)?;
        let dh = wq.shape()[1];
        let q = x.matmul(wq)?.reshape(&[1, f * hw, dh])?;
        let k = ctx.matmul(AttentionVars::head(p.wk, h)?)?.reshape(&[1, t, dh])?;
        let v = ctx.matmul(AttentionVars::head(p.wv, h)?)?.reshape(&[1, t, dh])?;
        let o = sdpa_var(q, k, v, None)?
            .reshape(&[f, hw, dh])?
            .matmul(AttentionVars::head(p.wo, h)?)?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(o)?,
        });
    }
    out.ok_or_else(|| Error::Internal("attention with zero heads".into()))
}

/// Key rows (into the flat `[f*H*W]` token list) for one query pixel: the
/// predicted window in the previous view, the own 3x3 block, and the
/// predicted window in the next view.
pub fn trajectory_keys(ring: &ViewRing, view: usize, x: usize, y: usize) -> Result<Vec<usize>> {
    let (w, h) = (ring.width, ring.height);
    let hw = w * h;
    let prev = ring.prev(view);
    let next = ring.next(view);
    let mut keys = Vec::with_capacity(27);
    let d_prev = ring.delta_azimuth(view, prev)?;
    for (c, r) in trajectory_window(x, y, d_prev, w, h) {
        keys.push(prev * hw + r * w + c);
    }
    for (c, r) in neighborhood(x as i64, y as i64, w, h) {
        keys.push(view * hw + r * w + c);
    }
    let d_next = ring.delta_azimuth(view, next)?;
    for (c, r) in trajectory_window(x, y, d_next, w, h) {
        keys.push(next * hw + r * w + c);
    }
    Ok(keys)
}

/// Gather table `[f*HW, 27]` (padded with `None`) and the matching additive mask.
pub fn trajectory_table(ring: &ViewRing) -> Result<(Arc<Vec<RowIndex>>, Tensor)> {
    let (f, hw) = (ring.views(), ring.width * ring.height);
    let mut idx = Vec::with_capacity(f * hw * 27);
    let mut mask = Vec::with_capacity(f * hw * 27);
    for v in 0..f {
        for y in 0..ring.height {
            for x in 0..ring.width {
                let keys = trajectory_keys(ring, v, x, y)?;
                if keys.is_empty() {
                    return Err(Error::Internal(format!("empty key window at view {v} ({x}, {y})")));
                }
                for s in 0..27 {
                    match keys.get(s) {
                        Some(&k) => {
                            idx.push(Some(k as u32));
                            mask.push(0.0);
                        }
                        None => {
                            idx.push(None);
                            mask.push(MASKED);
                        }
                    }
                }
            }
        }
    }
    Ok((Arc::new(idx), Tensor::from_parts(vec![f * hw, 1, 27], mask)))
}

/// Per-pixel attention over rotation-predicted windows in both neighbors.
pub fn trajectory_attention_var<'t>(
    x: Var<'t>,
    ring: &ViewRing,
    p: &AttentionVars<'t>,
    table: Option<&(Arc<Vec<RowIndex>>, Tensor)>,
) -> Result<Var<'t>> {
    let (f, hw, _) = token_dims(x)?;
    if f != ring.views() || hw != ring.width * ring.height {
        return Err(Error::ShapeMismatch {
            what: "tokens vs ring".into(),
            expected: vec![ring.views(), ring.width * ring.height],
            found: vec![f, hw],
        });
    }
    let built;
    let (idx, mask) = match table {
        Some(t) => t,
        None => {
            built = trajectory_table(ring)?;
            &built
        }
    };
    let tape_mask = x.tape().leaf(mask.clone());
    let mut out: Option<Var<'t>> = None;
    for h in 0..p.heads() {
        let wq = AttentionVars::head(p.wq, h)?;
        let dh = wq.shape()[1];
        let q = x.matmul(wq)?.reshape(&[f * hw, 1, dh])?;
        let k = x.matmul(AttentionVars::head(p.wk, h)?)?;
        let v = x.matmul(AttentionVars::head(p.wv, h)?)?;
        let kg = k.gather_rows(idx.clone(), dh, &[f * hw, 27, dh])?;
        let vg = v.gather_rows(idx.clone(), dh, &[f * hw, 27, dh])?;
        let o = sdpa_var(q, kg, vg, Some(tape_mask))?
            .reshape(&[f, hw, dh])?
            .matmul(AttentionVars::head(p.wo, h)?)?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(o)?,
        });
    }
    out.ok_or_else(|| Error::Internal("attention with zero heads".into()))
}

/// Two-layer MLP producing one sigmoid score per token from the token
/// features and a prompt embedding; the first layer is split into its token
/// part `w1_z [C, hidden]` and text part `w1_t [E, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMapper {
    pub w1_z: Tensor,
    pub w1_t: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

tensor_params!(ScoreMapper => ScoreMapperVars { w1_z, w1_t, b1, w2, b2 });

impl ScoreMapper {
    pub fn init(channels: usize, text_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (channels + text_dim) as f64;
        Self {
            w1_z: Tensor::randn(&[channels, hidden], 1.0 / fan_in.sqrt(), rng),
            w1_t: Tensor::randn(&[text_dim, hidden], 1.0 / fan_in.sqrt(), rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::randn(&[hidden, 1], 1.0 / (hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(channels: usize, text_dim: usize, hidden: usize) -> Self {
        Self {
            w1_z: Tensor::zeros(&[channels, hidden]),
            w1_t: Tensor::zeros(&[text_dim, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, 1]),
            b2: Tensor::zeros(&[1]),
        }
    }
}

/// Scores `[f, HW, 1]` in `(0, 1)` for tokens `x [f, HW, C]` and prompt `text [E]`.
pub fn score_map_var<'t>(x: Var<'t>, text: Var<'t>, m: &ScoreMapperVars<'t>) -> Result<Var<'t>> {
    let e = m.w1_t.shape()[0];
    if text.shape() != [e] {
        return Err(Error::ShapeMismatch {
            what: "text embedding".into(),
            expected: vec![e],
            found: text.shape(),
        });
    }
    let zt = x.matmul(m.w1_z)?;
    let tt = text.reshape(&[1, e])?.matmul(m.w1_t)?;
    zt.add(tt)?.add(m.b1)?.silu().matmul(m.w2)?.add(m.b2).map(Var::sigmoid)
}

/// Query and key/value pooling strides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AirConfig {
    pub tau: usize,
    pub rho: usize,
}

impl Default for AirConfig {
    fn default() -> Self {
        Self { tau: 2, rho: 4 }
    }
}

impl AirConfig {
    pub fn new(tau: usize, rho: usize) -> Result<Self> {
        if tau == 0 || rho == 0 || tau > rho {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= tau <= rho, got tau={tau} rho={rho}"
            )));
        }
        Ok(Self { tau, rho })
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        Self::new(self.tau, self.rho)?;
        for s in [self.tau, self.rho] {
            if h % s != 0 || w % s != 0 {
                return Err(Error::InvalidArgument(format!(
                    "stride {s} does not divide {h}x{w}"
                )));
            }
        }
        Ok(())
    }
}

/// `[f, HW, d]` -> pooled `[f, (H/s)(W/s), d]`.
fn pool_tokens<'t>(t: Var<'t>, h: usize, w: usize, s: usize) -> Result<Var<'t>> {
    let (f, _, d) = token_dims(t)?;
    if s == 1 {
        return Ok(t);
    }
    t.transpose_last2()?
        .reshape(&[f, d, h, w])?
        .avg_pool2d(s)?
        .reshape(&[f, d, (h / s) * (w / s)])?
        .transpose_last2()
}

/// Score-weighted, pooled attention of every view against all views.
///
/// Queries are `s * Q` pooled at `tau`, keys and values are `s * K`, `s * V`
/// pooled at `rho` and shared by all views; the result is upsampled
/// bilinearly by `tau`.
pub fn air_attention_var<'t>(
    x: Var<'t>,
    scores: Var<'t>,
    h: usize,
    w: usize,
    cfg: AirConfig,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    let (f, hw, _) = token_dims(x)?;
    if hw != h * w {
        return Err(Error::dim(format!("{hw} tokens per view do not form {h}x{w}")));
    }
    if scores.shape() != [f, hw, 1] {
        return Err(Error::ShapeMismatch {
            what: "score map".into(),
            expected: vec![f, hw, 1],
            found: scores.shape(),
        });
    }
    cfg.validate(h, w)?;
    let (hq, wq_) = (h / cfg.tau, w / cfg.tau);
    let nk = (h / cfg.rho) * (w / cfg.rho);
    let mut out: Option<Var<'t>> = None;
    for head in 0..p.heads() {
        let wq = AttentionVars::head(p.wq, head)?;
        let dh = wq.shape()[1];
        let q = x.matmul(wq)?.mul(scores)?;
        let k = x.matmul(AttentionVars::head(p.wk, head)?)?.mul(scores)?;
        let v = x.matmul(AttentionVars::head(p.wv, head)?)?.mul(scores)?;
        let qp = pool_tokens(q, h, w, cfg.tau)?.reshape(&[1, f * hq * wq_, dh])?;
        let kp = pool_tokens(k, h, w, cfg.rho)?.reshape(&[1, f * nk, dh])?;
        let vp = pool_tokens(v, h, w, cfg.rho)?.reshape(&[1, f * nk, dh])?;
        let a = sdpa_var(qp, kp, vp, None)?.reshape(&[f, hq * wq_, dh])?;
        let up = if cfg.tau == 1 {
            a
        } else {
            a.transpose_last2()?
                .reshape(&[f, dh, hq, wq_])?
                .upsample2d(cfg.tau)?
                .reshape(&[f, dh, hw])?
                .transpose_last2()?
        };
        let o = up.matmul(AttentionVars::head(p.wo, head)?)?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(o)?,
        });
    }
    out.ok_or_else(|| Error::Internal("attention with zero heads".into()))
}

fn run_on_stack(
    stack: &LatentStack,
    params: &AttentionParams,
    op: impl for<'t> FnOnce(Var<'t>, &AttentionVars<'t>) -> Result<Var<'t>>,
) -> Result<LatentStack> {
    params.check_channels(stack.channels())?;
    let tape = Tape::new();
    let p = params.bind(&mut Binder::new(&tape));
    let out = op(tape.leaf(stack.to_tokens()), &p)?;
    LatentStack::from_tokens(&out.value(), stack.ring().clone())
}

/// Attention output (before any residual) of each view over its ring neighbors.
pub fn adjacent_attention(stack: &LatentStack, params: &AttentionParams) -> Result<LatentStack> {
    run_on_stack(stack, params, |x, p| adjacent_attention_var(x, p))
}

pub fn trajectory_attention(stack: &LatentStack, params: &AttentionParams) -> Result<LatentStack> {
    let ring = stack.ring().clone();
    run_on_stack(stack, params, |x, p| trajectory_attention_var(x, &ring, p, None))
}

/// Scores `[f, 1, H, W]`.
pub fn score_map(stack: &LatentStack, text_emb: &Tensor, mapper: &ScoreMapper) -> Result<Tensor> {
    if mapper.w1_z.shape()[0] != stack.channels() {
        return Err(Error::ShapeMismatch {
            what: "score mapper channels".into(),
            expected: vec![mapper.w1_z.shape()[0]],
            found: vec![stack.channels()],
        });
    }
    let tape = Tape::new();
    let m = mapper.bind(&mut Binder::new(&tape));
    let s = score_map_var(tape.leaf(stack.to_tokens()), tape.leaf(text_emb.clone()), &m)?;
    s.value()
        .into_reshape(&[stack.views(), 1, stack.height(), stack.width()])
}

pub fn air_attention(
    stack: &LatentStack,
    scores: &Tensor,
    cfg: AirConfig,
    params: &AttentionParams,
) -> Result<LatentStack> {
    let (f, h, w) = (stack.views(), stack.height(), stack.width());
    if scores.shape() != [f, 1, h, w] {
        return Err(Error::ShapeMismatch {
            what: "score map".into(),
            expected: vec![f, 1, h, w],
            found: scores.shape().to_vec(),
        });
    }
    let s = scores.reshape(&[f, h * w, 1])?;
    run_on_stack(stack, params, |x, p| {
        let sv = x.tape().leaf(s);
        air_attention_var(x, sv, h, w, cfg, p)
    })
}
