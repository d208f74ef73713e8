//! Selective-scan kernels on flat slices.
//!
//! Layouts: `x, delta: [L, D]`, `b, c: [L, N]`, `a: [D, N]`, states `[L, D, N]`.
//! Recurrence per channel `d` and state `n`:
//! `h_t = exp(delta_t A) h_{t-1} + (delta_t B_t) x_t`, `y_t = sum_n C_t h_t`.

use crate::par;

/// How [`scan_forward`] splits the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanKernel {
    /// Tokens per chunk; chunks are processed independently, then stitched.
    pub chunk: usize,
    /// Compute chunk-boundary states with the exact left-to-right recurrence
    /// instead of composing per-chunk transfer products. Output is then
    /// bit-identical for every chunk size.
    pub exact_carry: bool,
}

impl Default for ScanKernel {
    fn default() -> Self {
        Self {
            chunk: 64,
            exact_carry: false,
        }
    }
}

impl ScanKernel {
    pub fn exact(chunk: usize) -> Self {
        Self {
            chunk,
            exact_carry: true,
        }
    }

    pub fn associative(chunk: usize) -> Self {
        Self {
            chunk,
            exact_carry: false,
        }
    }
}

#[inline]
fn readout(c_t: &[f64], h_t: &[f64], y_t: &mut [f64], n: usize) {
    for (dd, y) in y_t.iter_mut().enumerate() {
        let hs = &h_t[dd * n..(dd + 1) * n];
        let mut acc = 0.0;
        for (cv, hv) in c_t.iter().zip(hs) {
            acc += cv * hv;
        }
        *y = acc;
    }
}

/// Returns `(y [L, D], states [L, D, N])`.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward(
    x: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    l: usize,
    d: usize,
    n: usize,
    kernel: ScanKernel,
) -> (Vec<f64>, Vec<f64>) {
    let chunk = kernel.chunk.max(1);
    let dn = d * n;
    let mut states = vec![0.0; l * dn];
    let mut y = vec![0.0; l * d];

    if kernel.exact_carry {
        let mut h = vec![0.0; dn];
        for t in 0..l {
            step(&mut h, x, delta, b, a, t, d, n);
            states[t * dn..(t + 1) * dn].copy_from_slice(&h);
        }
        par::for_each_chunk_mut(&mut y, chunk * d, |ci, ys| {
            for (k, y_t) in ys.chunks_mut(d).enumerate() {
                let t = ci * chunk + k;
                readout(&c[t * n..(t + 1) * n], &states[t * dn..(t + 1) * dn], y_t, n);
            }
        });
        return (y, states);
    }

    // Phase 1: zero-state local scans and cumulative transfer products per chunk.
    let nchunks = l.div_ceil(chunk);
    let local: Vec<(Vec<f64>, Vec<f64>)> = par::map_indexed(nchunks, |ci| {
        let t0 = ci * chunk;
        let len = chunk.min(l - t0);
        let mut hs = vec![0.0; len * dn];
        let mut ps = vec![0.0; len * dn];
        let mut h = vec![0.0; dn];
        let mut p = vec![1.0; dn];
        for k in 0..len {
            let t = t0 + k;
            for dd in 0..d {
                let dt = delta[t * d + dd];
                let xt = x[t * d + dd];
                for nn in 0..n {
                    let i = dd * n + nn;
                    let abar = (dt * a[i]).exp();
                    let bbar = dt * b[t * n + nn];
                    h[i] = abar * h[i] + bbar * xt;
                    p[i] *= abar;
                }
            }
            hs[k * dn..(k + 1) * dn].copy_from_slice(&h);
            ps[k * dn..(k + 1) * dn].copy_from_slice(&p);
        }
        (hs, ps)
    });
    let mut decay = Vec::with_capacity(l * dn);
    for (ci, (hs, ps)) in local.into_iter().enumerate() {
        let off = ci * chunk * dn;
        states[off..off + hs.len()].copy_from_slice(&hs);
        decay.extend_from_slice(&ps);
    }

    // Phase 2: sequential carry across chunk boundaries.
    let mut carries = vec![vec![0.0; dn]; nchunks];
    for ci in 1..nchunks {
        let end = ci * chunk - 1;
        let (prev, cur) = carries.split_at_mut(ci);
        let carry_in = &prev[ci - 1];
        for i in 0..dn {
            cur[0][i] = states[end * dn + i] + decay[end * dn + i] * carry_in[i];
        }
    }

    // Phase 3: fold carries into every state and read out.
    par::for_each_chunk_mut(&mut states, chunk * dn, |ci, hs| {
        let carry = &carries[ci];
        if ci > 0 {
            for k in 0..hs.len() / dn {
                let t = ci * chunk + k;
                for i in 0..dn {
                    hs[k * dn + i] += decay[t * dn + i] * carry[i];
                }
            }
        }
    });
    par::for_each_chunk_mut(&mut y, chunk * d, |ci, ys| {
        for (k, y_t) in ys.chunks_mut(d).enumerate() {
            let t = ci * chunk + k;
            readout(&c[t * n..(t + 1) * n], &states[t * dn..(t + 1) * dn], y_t, n);
        }
    });
    (y, states)
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn step(h: &mut [f64], x: &[f64], delta: &[f64], b: &[f64], a: &[f64], t: usize, d: usize, n: usize) {
    for dd in 0..d {
        let dt = delta[t * d + dd];
        let xt = x[t * d + dd];
        for nn in 0..n {
            let i = dd * n + nn;
            let abar = (dt * a[i]).exp();
            let bbar = dt * b[t * n + nn];
            h[i] = abar * h[i] + bbar * xt;
        }
    }
}

pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
}

/// Reverse-time adjoint of [`scan_forward`] given the stored states.
#[allow(clippy::too_many_arguments)]
pub fn scan_backward(
    x: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    states: &[f64],
    gy: &[f64],
    l: usize,
    d: usize,
    n: usize,
) -> ScanGrads {
    let dn = d * n;
    let mut g = ScanGrads {
        x: vec![0.0; l * d],
        delta: vec![0.0; l * d],
        b: vec![0.0; l * n],
        c: vec![0.0; l * n],
        a: vec![0.0; dn],
    };
    let mut gh = vec![0.0; dn];
    let zeros = vec![0.0; dn];
    for t in (0..l).rev() {
        let h_t = &states[t * dn..(t + 1) * dn];
        let h_prev = if t > 0 {
            &states[(t - 1) * dn..t * dn]
        } else {
            &zeros[..]
        };
        for dd in 0..d {
            let gyv = gy[t * d + dd];
            let dt = delta[t * d + dd];
            let xt = x[t * d + dd];
            let mut gdelta = 0.0;
            let mut gx = 0.0;
            for nn in 0..n {
                let i = dd * n + nn;
                g.c[t * n + nn] += gyv * h_t[i];
                let total = gh[i] + gyv * c[t * n + nn];
                let abar = (dt * a[i]).exp();
                let bt = b[t * n + nn];
                // through abar = exp(dt * a)
                let ga = total * h_prev[i] * abar;
                gdelta += ga * a[i];
                g.a[i] += ga * dt;
                // through u = dt * b * x
                gdelta += total * bt * xt;
                g.b[t * n + nn] += total * dt * xt;
                gx += total * dt * bt;
                gh[i] = total * abar;
            }
            g.delta[t * d + dd] += gdelta;
            g.x[t * d + dd] += gx;
        }
    }
    g
}
