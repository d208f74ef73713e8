//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use mvdenoise::attention::{sdpa, AttentionParams};
use mvdenoise::geometry::{neighborhood, trajectory_window};
use mvdenoise::tensor::Tensor;
use mvdenoise::LatentStack;

/// Rows `rows` of a `[n, c]` matrix.
pub fn take_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.shape()[1];
    let mut out = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        out.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
    }
    Tensor::new(vec![rows.len(), c], out).unwrap()
}

fn single_head(p: &AttentionParams) -> (Tensor, Tensor, Tensor, Tensor) {
    assert_eq!(p.heads(), 1, "oracles assume one head");
    let c = p.channels();
    let dh = p.head_dim();
    (
        p.wq.reshape(&[c, dh]).unwrap(),
        p.wk.reshape(&[p.wk.shape()[1], dh]).unwrap(),
        p.wv.reshape(&[p.wv.shape()[1], dh]).unwrap(),
        p.wo.reshape(&[dh, c]).unwrap(),
    )
}

/// All tokens of the stack as one `[f*HW, C]` matrix.
pub fn flat_tokens(stack: &LatentStack) -> Tensor {
    let t = stack.to_tokens();
    let s = t.shape().to_vec();
    t.reshape(&[s[0] * s[1], s[2]]).unwrap()
}

/// Writes per-token outputs `[f*HW, C]` back into a stack.
pub fn stack_from_flat(flat: &Tensor, like: &LatentStack) -> LatentStack {
    let (f, hw, c) = (like.views(), like.height() * like.width(), like.channels());
    LatentStack::from_tokens(&flat.reshape(&[f, hw, c]).unwrap(), like.ring().clone()).unwrap()
}

/// Each query row of view `i` attends over an explicit list of key rows.
pub fn attend_rows(x: &Tensor, p: &AttentionParams, query: usize, keys: &[usize]) -> Vec<f64> {
    let (wq, wk, wv, wo) = single_head(p);
    let q = take_rows(x, &[query]).matmul(&wq).unwrap();
    let kv = take_rows(x, keys);
    let k = kv.matmul(&wk).unwrap();
    let v = kv.matmul(&wv).unwrap();
    sdpa(&q, &k, &v).unwrap().matmul(&wo).unwrap().into_data()
}

/// Plain self-attention of every view on its own tokens.
pub fn per_view_self_attention(stack: &LatentStack, p: &AttentionParams) -> LatentStack {
    let x = flat_tokens(stack);
    let hw = stack.height() * stack.width();
    let mut out = Vec::new();
    for v in 0..stack.views() {
        let keys: Vec<usize> = (v * hw..(v + 1) * hw).collect();
        for q in v * hw..(v + 1) * hw {
            out.extend(attend_rows(&x, p, q, &keys));
        }
    }
    stack_from_flat(&Tensor::new(x.shape().to_vec(), out).unwrap(), stack)
}

/// Materializes `[z_{i-1}, z_i, z_{i+1}]` as keys for view `i`.
pub fn adjacent_oracle(stack: &LatentStack, p: &AttentionParams) -> LatentStack {
    let x = flat_tokens(stack);
    let (f, hw) = (stack.views(), stack.height() * stack.width());
    let mut out = Vec::new();
    for v in 0..f {
        let mut keys = Vec::with_capacity(3 * hw);
        for nb in [(v + f - 1) % f, v, (v + 1) % f] {
            keys.extend(nb * hw..(nb + 1) * hw);
        }
        for q in v * hw..(v + 1) * hw {
            out.extend(attend_rows(&x, p, q, &keys));
        }
    }
    stack_from_flat(&Tensor::new(x.shape().to_vec(), out).unwrap(), stack)
}

/// Every query attends over every token of every view.
pub fn dense_all_view_oracle(stack: &LatentStack, p: &AttentionParams) -> LatentStack {
    let x = flat_tokens(stack);
    let n = x.shape()[0];
    let keys: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for q in 0..n {
        out.extend(attend_rows(&x, p, q, &keys));
    }
    stack_from_flat(&Tensor::new(x.shape().to_vec(), out).unwrap(), stack)
}

/// Gathers the two rotated windows and the own block by explicit index lists.
pub fn trajectory_oracle(stack: &LatentStack, p: &AttentionParams) -> LatentStack {
    let x = flat_tokens(stack);
    let ring = stack.ring();
    let (f, h, w) = (stack.views(), stack.height(), stack.width());
    let hw = h * w;
    let mut out = Vec::new();
    for v in 0..f {
        let (prev, next) = ((v + f - 1) % f, (v + 1) % f);
        let dp = ring.delta_azimuth(v, prev).unwrap();
        let dn = ring.delta_azimuth(v, next).unwrap();
        for y in 0..h {
            for xx in 0..w {
                let mut keys = Vec::new();
                keys.extend(trajectory_window(xx, y, dp, w, h).into_iter().map(|(c, r)| prev * hw + r * w + c));
                keys.extend(neighborhood(xx as i64, y as i64, w, h).into_iter().map(|(c, r)| v * hw + r * w + c));
                keys.extend(trajectory_window(xx, y, dn, w, h).into_iter().map(|(c, r)| next * hw + r * w + c));
                out.extend(attend_rows(&x, p, v * hw + y * w + xx, &keys));
            }
        }
    }
    stack_from_flat(&Tensor::new(x.shape().to_vec(), out).unwrap(), stack)
}

/// Scales, pools, attends across all views and upsamples, one step at a time.
pub fn air_oracle(stack: &LatentStack, scores: &Tensor, tau: usize, rho: usize, p: &AttentionParams) -> LatentStack {
    let (wq, wk, wv, wo) = single_head(p);
    let (f, h, w) = (stack.views(), stack.height(), stack.width());
    let hw = h * w;
    let x = flat_tokens(stack);
    let dh = wq.shape()[1];
    let scale = |m: Tensor| -> Tensor {
        Tensor::from_fn(m.shape(), |i| m.data()[i] * scores.data()[i / dh])
    };
    let (q, k, v) = (
        scale(x.matmul(&wq).unwrap()),
        scale(x.matmul(&wk).unwrap()),
        scale(x.matmul(&wv).unwrap()),
    );
    // [f*HW, dh] -> [f, dh, H, W] -> pool -> [f*h'*w', dh]
    let pool = |m: &Tensor, s: usize| -> Tensor {
        let img = Tensor::from_fn(&[f, dh, h, w], |i| {
            let (view, rest) = (i / (dh * hw), i % (dh * hw));
            let (ch, pix) = (rest / hw, rest % hw);
            m.data()[(view * hw + pix) * dh + ch]
        });
        let pooled = img.avg_pool2d(s).unwrap();
        let (ph, pw) = (h / s, w / s);
        Tensor::from_fn(&[f * ph * pw, dh], |i| {
            let (row, ch) = (i / dh, i % dh);
            let (view, pix) = (row / (ph * pw), row % (ph * pw));
            pooled.data()[(view * dh + ch) * ph * pw + pix]
        })
    };
    let (qp, kp, vp) = (pool(&q, tau), pool(&k, rho), pool(&v, rho));
    let att = sdpa(&qp, &kp, &vp).unwrap();
    let (qh, qw) = (h / tau, w / tau);
    let img = Tensor::from_fn(&[f, dh, qh, qw], |i| {
        let (view, rest) = (i / (dh * qh * qw), i % (dh * qh * qw));
        let (ch, pix) = (rest / (qh * qw), rest % (qh * qw));
        att.data()[(view * qh * qw + pix) * dh + ch]
    });
    let up = img.bilinear_upsample2d(tau).unwrap();
    let tokens = Tensor::from_fn(&[f * hw, dh], |i| {
        let (row, ch) = (i / dh, i % dh);
        let (view, pix) = (row / hw, row % hw);
        up.data()[(view * dh + ch) * hw + pix]
    });
    stack_from_flat(&tokens.matmul(&wo).unwrap(), stack)
}
