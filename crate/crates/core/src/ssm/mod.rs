//! Selective state-space scan over multiview token sequences.

pub mod kernel;
mod order;

pub use kernel::ScanKernel;
pub use order::{center_block_spread, spiral_order, ScanOrder, ScanStrategy};

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{RowIndex, Tape, Var};
use crate::error::{Error, Result};
use crate::latent::LatentStack;
use crate::params::{tensor_params, Binder, Params};
use crate::tensor::Tensor;

/// Selective-scan parameters for `D` channels and `N` state dims.
///
/// `A = -exp(a_log)`; per token `x [D]`:
/// `delta = softplus(x w_delta + b_delta)`, `B = x w_b + b_b`, `C = x w_c + b_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub a_log: Tensor,
    pub w_delta: Tensor,
    pub b_delta: Tensor,
    pub w_b: Tensor,
    pub b_b: Tensor,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

tensor_params!(SsmParams => SsmVars { a_log, w_delta, b_delta, w_b, b_b, w_c, b_c });

impl SsmParams {
    pub fn init(d: usize, n: usize, rng: &mut impl Rng) -> Self {
        let a_log = Tensor::from_fn(&[d, n], |i| ((i % n) as f64 + 1.0).ln());
        let b_delta = Tensor::from_fn(&[d], |_| {
            let dt: f64 = (rng.random_range(0.01f64.ln()..0.1f64.ln())).exp();
            dt.exp_m1().ln()
        });
        let s = 1.0 / (d as f64).sqrt();
        Self {
            a_log,
            w_delta: Tensor::randn(&[d, d], 0.1 * s, rng),
            b_delta,
            w_b: Tensor::randn(&[d, n], s, rng),
            b_b: Tensor::zeros(&[n]),
            w_c: Tensor::randn(&[d, n], s, rng),
            b_c: Tensor::zeros(&[n]),
        }
    }

    /// All-zero weights with constant per-token step, input and output
    /// projections: `delta = softplus(delta_bias)`, `B = b`, `C = c`.
    pub fn constant(d: usize, n: usize, a: f64, delta_bias: f64, b: f64, c: f64) -> Result<Self> {
        if a >= 0.0 {
            return Err(Error::InvalidArgument(format!("state matrix entries must be negative, got {a}")));
        }
        Ok(Self {
            a_log: Tensor::full(&[d, n], (-a).ln()),
            w_delta: Tensor::zeros(&[d, d]),
            b_delta: Tensor::full(&[d], delta_bias),
            w_b: Tensor::zeros(&[d, n]),
            b_b: Tensor::full(&[n], b),
            w_c: Tensor::zeros(&[d, n]),
            b_c: Tensor::full(&[n], c),
        })
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Negative diagonal state matrix `[D, N]`.
    pub fn a(&self) -> Tensor {
        self.a_log.map(|v| -v.exp())
    }

    /// Per-token `(delta [L, D], B [L, N], C [L, N])` computed with plain loops.
    pub fn project(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (d, n) = (self.channels(), self.state_dim());
        let &[l, dx] = x.shape() else {
            return Err(Error::dim(format!("scan input must be [L, D], got {:?}", x.shape())));
        };
        if dx != d {
            return Err(Error::ShapeMismatch {
                what: "scan channels".into(),
                expected: vec![l, d],
                found: x.shape().to_vec(),
            });
        }
        let xs = x.data();
        let affine = |w: &Tensor, bias: &Tensor, out_dim: usize| {
            let mut out = vec![0.0; l * out_dim];
            for t in 0..l {
                for j in 0..out_dim {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += xs[t * d + k] * w.data()[k * out_dim + j];
                    }
                    out[t * out_dim + j] = acc + bias.data()[j];
                }
            }
            out
        };
        let delta: Vec<f64> = affine(&self.w_delta, &self.b_delta, d)
            .into_iter()
            .map(softplus)
            .collect();
        Ok((
            Tensor::from_parts(vec![l, d], delta),
            Tensor::from_parts(vec![l, n], affine(&self.w_b, &self.b_b, n)),
            Tensor::from_parts(vec![l, n], affine(&self.w_c, &self.b_c, n)),
        ))
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// `(exp(delta * a), delta * b)`.
pub fn discretize_zoh(a: f64, b: f64, delta: f64) -> (f64, f64) {
    ((delta * a).exp(), delta * b)
}

/// Strict left-to-right reference scan of `x [L, D]`.
pub fn selective_scan_sequential(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    let (delta, b, c) = params.project(x)?;
    let a = params.a();
    let (l, d, n) = (x.shape()[0], params.channels(), params.state_dim());
    let mut h = vec![0.0; d * n];
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        for dd in 0..d {
            let dt = delta.data()[t * d + dd];
            let xt = x.data()[t * d + dd];
            let mut acc = 0.0;
            for nn in 0..n {
                let (abar, bbar) = discretize_zoh(a.data()[dd * n + nn], b.data()[t * n + nn], dt);
                let i = dd * n + nn;
                h[i] = abar * h[i] + bbar * xt;
                acc += c.data()[t * n + nn] * h[i];
            }
            y[t * d + dd] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![l, d], y))
}

/// Production scan; same contract as [`selective_scan_sequential`].
pub fn selective_scan(x: &Tensor, params: &SsmParams, kernel: ScanKernel) -> Result<Tensor> {
    let tape = Tape::new();
    let p = params.bind(&mut Binder::new(&tape));
    Ok(selective_scan_var(tape.leaf(x.clone()), &p, kernel)?.value())
}

/// Differentiable scan of `x [L, D]`.
pub fn selective_scan_var<'t>(x: Var<'t>, p: &SsmVars<'t>, kernel: ScanKernel) -> Result<Var<'t>> {
    let shape = x.shape();
    let d = p.a_log.shape()[0];
    if shape.len() != 2 || shape[1] != d {
        return Err(Error::ShapeMismatch {
            what: "scan input".into(),
            expected: vec![shape.first().copied().unwrap_or(0), d],
            found: shape,
        });
    }
    let delta = x.matmul(p.w_delta)?.add(p.b_delta)?.softplus();
    let b = x.matmul(p.w_b)?.add(p.b_b)?;
    let c = x.matmul(p.w_c)?.add(p.b_c)?;
    let a = p.a_log.exp().scale(-1.0);
    x.selective_scan(delta, b, c, a, kernel)
}

fn check_order(order: &ScanOrder, f: usize, h: usize, w: usize) -> Result<()> {
    if (order.views, order.height, order.width) != (f, h, w) {
        return Err(Error::ShapeMismatch {
            what: "scan order vs stack".into(),
            expected: vec![order.views, order.height, order.width],
            found: vec![f, h, w],
        });
    }
    Ok(())
}

fn rows(perm: &[usize]) -> Arc<Vec<RowIndex>> {
    Arc::new(perm.iter().map(|&p| Some(p as u32)).collect())
}

/// Flattens the stack into a token sequence `[f*H*W, C]` in `order`.
pub fn sbscan_permute(stack: &LatentStack, order: &ScanOrder) -> Result<Tensor> {
    check_order(order, stack.views(), stack.height(), stack.width())?;
    let c = stack.channels();
    let tok = stack.to_tokens();
    let mut out = Vec::with_capacity(tok.numel());
    for &t in order.inverse() {
        out.extend_from_slice(&tok.data()[t * c..(t + 1) * c]);
    }
    Ok(Tensor::from_parts(vec![order.len(), c], out))
}

/// Inverse of [`sbscan_permute`].
pub fn sbscan_unpermute(seq: &Tensor, order: &ScanOrder, stack_like: &LatentStack) -> Result<LatentStack> {
    check_order(order, stack_like.views(), stack_like.height(), stack_like.width())?;
    let c = stack_like.channels();
    if seq.shape() != [order.len(), c] {
        return Err(Error::ShapeMismatch {
            what: "scan sequence".into(),
            expected: vec![order.len(), c],
            found: seq.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; seq.numel()];
    for (s, &t) in order.inverse().iter().enumerate() {
        out[t * c..(t + 1) * c].copy_from_slice(&seq.data()[s * c..(s + 1) * c]);
    }
    let tokens = Tensor::from_parts(vec![order.views, order.height * order.width, c], out);
    LatentStack::from_tokens(&tokens, stack_like.ring().clone())
}

/// Differentiable multi-pass scan over `tokens [f, HW, C]`: each order's
/// pass is scanned and un-permuted, the passes are averaged and the input is
/// added back.
pub fn rapid_glance_var<'t>(
    tokens: Var<'t>,
    p: &SsmVars<'t>,
    orders: &[ScanOrder],
    kernel: ScanKernel,
) -> Result<Var<'t>> {
    glance_passes_var(tokens, p, orders, kernel)?.add(tokens)
}

/// Mean of the un-permuted scan passes, without the residual.
pub fn glance_passes_var<'t>(
    tokens: Var<'t>,
    p: &SsmVars<'t>,
    orders: &[ScanOrder],
    kernel: ScanKernel,
) -> Result<Var<'t>> {
    let shape = tokens.shape();
    let &[f, hw, c] = shape.as_slice() else {
        return Err(Error::dim(format!("tokens must be [f, HW, C], got {shape:?}")));
    };
    if orders.is_empty() {
        return Err(Error::InvalidArgument("no scan orders".into()));
    }
    let mut acc: Option<Var<'t>> = None;
    for order in orders {
        if order.len() != f * hw || order.views != f {
            return Err(Error::ShapeMismatch {
                what: "scan order vs tokens".into(),
                expected: vec![order.views, order.height * order.width],
                found: vec![f, hw],
            });
        }
        let seq = tokens.gather_rows(rows(order.inverse()), c, &[f * hw, c])?;
        let y = selective_scan_var(seq, p, kernel)?;
        let back = y.gather_rows(rows(order.forward()), c, &[f, hw, c])?;
        acc = Some(match acc {
            None => back,
            Some(a) => a.add(back)?,
        });
    }
    Ok(acc.expect("at least one order").scale(1.0 / orders.len() as f64))
}

/// Scan-based glance over the whole stack with the given strategy.
pub fn rapid_glance(
    stack: &LatentStack,
    params: &SsmParams,
    strategy: ScanStrategy,
    kernel: ScanKernel,
) -> Result<LatentStack> {
    if params.channels() != stack.channels() {
        return Err(Error::ShapeMismatch {
            what: "ssm channels".into(),
            expected: vec![params.channels()],
            found: vec![stack.channels()],
        });
    }
    let tape = Tape::new();
    let p = params.bind(&mut Binder::new(&tape));
    let orders = strategy.orders(stack.views(), stack.height(), stack.width());
    let out = rapid_glance_var(tape.leaf(stack.to_tokens()), &p, &orders, kernel)?;
    LatentStack::from_tokens(&out.value(), stack.ring().clone())
}
