use crate::data::{ground_truth_correspondence, CorrespondenceMap, RenderedSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            what: "psnr operands".into(),
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        });
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel().max(1) as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Correspondences `i -> i+1` around the ring.
pub fn ring_correspondences(set: &RenderedSet) -> Result<Vec<CorrespondenceMap>> {
    let f = set.views();
    (0..f).map(|i| ground_truth_correspondence(set, i, (i + 1) % f)).collect()
}

/// Correspondences `i+1 -> i` around the ring.
pub fn reverse_ring_correspondences(set: &RenderedSet) -> Result<Vec<CorrespondenceMap>> {
    let f = set.views();
    (0..f).map(|i| ground_truth_correspondence(set, (i + 1) % f, i)).collect()
}

/// Mean RGB distance between corresponded pixels, averaged over the maps
/// that have at least one visible match. `images` is `[f, 3, H, W]`.
pub fn consistency_metric(images: &Tensor, maps: &[CorrespondenceMap]) -> Result<f64> {
    let &[f, 3, h, w] = images.shape() else {
        return Err(Error::dim(format!("expected [f, 3, H, W] images, got {:?}", images.shape())));
    };
    let d = images.data();
    let px = |v: usize, c: usize, r: usize| [0, 1, 2].map(|k| d[((v * 3 + k) * h + r) * w + c]);
    let mut per_pair = Vec::with_capacity(maps.len());
    for m in maps {
        if m.from >= f || m.to >= f {
            return Err(Error::ViewIndex {
                index: m.from.max(m.to),
                len: f,
            });
        }
        if (m.width, m.height) != (w, h) {
            return Err(Error::ShapeMismatch {
                what: "correspondence map vs images".into(),
                expected: vec![h, w],
                found: vec![m.height, m.width],
            });
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for ((c, r), (c2, r2)) in m.pairs() {
            let (a, b) = (px(m.from, c, r), px(m.to, c2, r2));
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            n += 1;
        }
        if n > 0 {
            per_pair.push(sum / n as f64);
        }
    }
    if per_pair.is_empty() {
        return Err(Error::InvalidArgument("no visible correspondences to score".into()));
    }
    Ok(per_pair.iter().sum::<f64>() / per_pair.len() as f64)
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_scene, render_views, Match};
    use crate::geometry::ViewRing;

    fn identity_maps(f: usize, h: usize, w: usize) -> Vec<CorrespondenceMap> {
        (0..f)
            .map(|i| CorrespondenceMap {
                from: i,
                to: (i + 1) % f,
                width: w,
                height: h,
                entries: (0..h * w)
                    .map(|k| {
                        Some(Match {
                            target: Some((k % w, k / w)),
                            x: 0.0,
                            y: 0.0,
                            depth: 0.0,
                        })
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::full(&[2, 2], 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Tensor::full(&[2, 2], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let checker = Tensor::from_fn(&[4, 4], |i| ((i / 4 + i % 4) % 2) as f64);
        let inverse = checker.map(|v| 1.0 - v);
        assert!(psnr(&checker, &inverse).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn identical_views_score_zero() {
        let img = Tensor::from_fn(&[3, 3, 4, 4], |i| ((i % 48) as f64 * 0.37).sin().abs());
        let maps = identity_maps(3, 4, 4);
        assert_eq!(consistency_metric(&img, &maps).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_closed_form() {
        let c = 0.1;
        let img = Tensor::from_fn(&[2, 3, 4, 4], |i| if i < 48 { 0.3 } else { 0.3 + c });
        let maps = identity_maps(2, 4, 4);
        let m = consistency_metric(&img, &maps[..1]).unwrap();
        assert!((m - c * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_renders_are_self_consistent() {
        for seed in 0..5 {
            let set = render_views(&make_scene(seed), &ViewRing::new(12, 32, 32).unwrap());
            let fwd = consistency_metric(&set.images, &ring_correspondences(&set).unwrap()).unwrap();
            let bwd = consistency_metric(&set.images, &reverse_ring_correspondences(&set).unwrap()).unwrap();
            assert!(fwd <= 0.02, "seed {seed}: {fwd}");
            assert!((fwd - bwd).abs() <= 0.005, "seed {seed}: {fwd} vs {bwd}");
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
