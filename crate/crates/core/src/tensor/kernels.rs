//! Slice-level numeric kernels shared by [`Tensor`](super::Tensor) and the tape.

use crate::par;

/// Rows of output handled per parallel task in the matmul kernels.
const ROW_BLOCK: usize = 32;
/// Below this many multiply-adds the matmul kernels stay on the calling thread.
const PAR_MIN_WORK: usize = 1 << 16;

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let body = |row0: usize, rows: &mut [f64]| {
        for (r, orow) in rows.chunks_mut(n).enumerate() {
            let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > ROW_BLOCK {
        par::for_each_chunk_mut(out, ROW_BLOCK * n, |ci, rows| body(ci * ROW_BLOCK, rows));
    } else {
        body(0, out);
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let body = |row0: usize, rows: &mut [f64]| {
        for (r, orow) in rows.chunks_mut(n).enumerate() {
            let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                *o += dot(arow, brow);
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > ROW_BLOCK {
        par::for_each_chunk_mut(out, ROW_BLOCK * n, |ci, rows| body(ci * ROW_BLOCK, rows));
    } else {
        body(0, out);
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
///
/// The sum over `m` runs in index order for every output entry.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let body = |p0: usize, rows: &mut [f64]| {
        let np = rows.len() / n;
        for i in 0..m {
            let brow = &b[i * n..(i + 1) * n];
            for r in 0..np {
                let av = a[i * k + p0 + r];
                if av == 0.0 {
                    continue;
                }
                let orow = &mut rows[r * n..(r + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && k > ROW_BLOCK {
        par::for_each_chunk_mut(out, ROW_BLOCK * n, |ci, rows| body(ci * ROW_BLOCK, rows));
    } else {
        body(0, out);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place softmax over consecutive rows of length `len`.
pub fn softmax_rows(data: &mut [f64], len: usize) {
    for row in data.chunks_mut(len) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn avg_pool2d(x: &[f64], outer: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (ho, wo) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f64;
    let mut out = vec![0.0; outer * ho * wo];
    for o in 0..outer {
        let src = &x[o * h * w..(o + 1) * h * w];
        let dst = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for r in 0..ho {
            for c in 0..wo {
                let mut acc = 0.0;
                for dr in 0..s {
                    let row = &src[(r * s + dr) * w + c * s..(r * s + dr) * w + c * s + s];
                    acc += row.iter().sum::<f64>();
                }
                dst[r * wo + c] = acc * inv;
            }
        }
    }
    out
}

pub fn avg_pool2d_backward(g: &[f64], outer: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (ho, wo) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f64;
    let mut out = vec![0.0; outer * h * w];
    for o in 0..outer {
        for r in 0..h {
            for c in 0..w {
                out[o * h * w + r * w + c] = g[o * ho * wo + (r / s) * wo + c / s] * inv;
            }
        }
    }
    out
}

/// Source taps for one axis of half-pixel bilinear upsampling.
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub fn upsample_taps(len: usize, factor: usize) -> Vec<Tap> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

pub fn upsample2d(x: &[f64], outer: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (ty, tx) = (upsample_taps(h, s), upsample_taps(w, s));
    let (ho, wo) = (h * s, w * s);
    let mut out = vec![0.0; outer * ho * wo];
    for o in 0..outer {
        let src = &x[o * h * w..(o + 1) * h * w];
        let dst = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for (r, a) in ty.iter().enumerate() {
            for (c, b) in tx.iter().enumerate() {
                // lerp form keeps constants exact
                let (p00, p01) = (src[a.i0 * w + b.i0], src[a.i0 * w + b.i1]);
                let (p10, p11) = (src[a.i1 * w + b.i0], src[a.i1 * w + b.i1]);
                let top = p00 + b.w1 * (p01 - p00);
                let bot = p10 + b.w1 * (p11 - p10);
                dst[r * wo + c] = top + a.w1 * (bot - top);
            }
        }
    }
    out
}

pub fn upsample2d_backward(g: &[f64], outer: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (ty, tx) = (upsample_taps(h, s), upsample_taps(w, s));
    let (ho, wo) = (h * s, w * s);
    let mut out = vec![0.0; outer * h * w];
    for o in 0..outer {
        let src = &g[o * ho * wo..(o + 1) * ho * wo];
        let dst = &mut out[o * h * w..(o + 1) * h * w];
        for (r, a) in ty.iter().enumerate() {
            for (c, b) in tx.iter().enumerate() {
                let gv = src[r * wo + c];
                dst[a.i0 * w + b.i0] += gv * a.w0 * b.w0;
                dst[a.i0 * w + b.i1] += gv * a.w0 * b.w1;
                dst[a.i1 * w + b.i0] += gv * a.w1 * b.w0;
                dst[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
            }
        }
    }
    out
}
