mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mvdenoise::attention::{
    adjacent_attention, air_attention, sdpa, trajectory_attention, AirConfig, AttentionParams,
};
use mvdenoise::geometry::ViewRing;
use mvdenoise::tensor::Tensor;
use mvdenoise::LatentStack;

fn stack(f: usize, c: usize, h: usize, w: usize, seed: u64) -> LatentStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentStack::new(Tensor::randn(&[f, c, h, w], 1.0, &mut rng), ViewRing::new(f, w, h).unwrap()).unwrap()
}

fn params(c: usize, seed: u64) -> AttentionParams {
    AttentionParams::init(c, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn adjacent_matches_concat_oracle() {
    let s = stack(4, 4, 2, 2, 1);
    let p = params(4, 2);
    let got = adjacent_attention(&s, &p).unwrap();
    let want = common::adjacent_oracle(&s, &p);
    assert!(got.tensor().max_abs_diff(want.tensor()).unwrap() < 1e-10);
}

#[test]
fn adjacent_single_view_is_self_attention() {
    let s = stack(1, 4, 3, 3, 3);
    let p = params(4, 4);
    let got = adjacent_attention(&s, &p).unwrap();
    let want = common::per_view_self_attention(&s, &p);
    assert!(got.tensor().max_abs_diff(want.tensor()).unwrap() < 1e-12);
}

#[test]
fn trajectory_matches_gather_oracle() {
    let s = stack(4, 4, 8, 8, 5);
    let p = params(4, 6);
    let got = trajectory_attention(&s, &p).unwrap();
    let want = common::trajectory_oracle(&s, &p);
    assert!(got.tensor().max_abs_diff(want.tensor()).unwrap() < 1e-10);
}

#[test]
fn trajectory_on_uniform_features_returns_value() {
    let ring = ViewRing::new(3, 4, 4).unwrap();
    let s = LatentStack::new(Tensor::full(&[3, 4, 4, 4], 0.7), ring).unwrap();
    let p = params(4, 7);
    let got = trajectory_attention(&s, &p).unwrap();
    let tok = got.to_tokens();
    let first = &tok.data()[..4];
    for row in tok.data().chunks(4) {
        for (a, b) in row.iter().zip(first) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn air_matches_step_oracle() {
    let s = stack(4, 4, 8, 8, 8);
    let p = params(4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scores = Tensor::uniform(&[4, 1, 8, 8], 0.2, 1.5, &mut rng);
    let got = air_attention(&s, &scores, AirConfig::new(2, 4).unwrap(), &p).unwrap();
    let want = common::air_oracle(&s, &scores, 2, 4, &p);
    assert!(got.tensor().max_abs_diff(want.tensor()).unwrap() < 1e-10);
}

#[test]
fn air_unit_strides_equal_dense_attention() {
    let s = stack(3, 4, 4, 4, 11);
    let p = params(4, 12);
    let ones = Tensor::full(&[3, 1, 4, 4], 1.0);
    let got = air_attention(&s, &ones, AirConfig::new(1, 1).unwrap(), &p).unwrap();
    let want = common::dense_all_view_oracle(&s, &p);
    assert!(got.tensor().max_abs_diff(want.tensor()).unwrap() < 1e-10);
}

#[test]
fn air_keeps_shape_for_all_strides() {
    let s = stack(2, 4, 8, 8, 13);
    let p = params(4, 14);
    let scores = Tensor::full(&[2, 1, 8, 8], 1.0);
    for (tau, rho) in [(1, 1), (1, 2), (2, 2), (2, 4), (4, 8), (8, 8)] {
        let out = air_attention(&s, &scores, AirConfig::new(tau, rho).unwrap(), &p).unwrap();
        assert_eq!(out.tensor().shape(), s.tensor().shape());
    }
    assert!(AirConfig::new(4, 2).is_err());
}

#[test]
fn duplicated_keys_leave_attention_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let q = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let k = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let v = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let base = sdpa(&q, &k, &v).unwrap();
    for copies in 2..=4 {
        let rep = |t: &Tensor| {
            let mut d = Vec::new();
            for _ in 0..copies {
                d.extend_from_slice(t.data());
            }
            Tensor::new(vec![t.shape()[0] * copies, t.shape()[1]], d).unwrap()
        };
        let out = sdpa(&q, &rep(&k), &rep(&v)).unwrap();
        assert!(out.max_abs_diff(&base).unwrap() < 1e-12);
    }
}

#[test]
fn sdpa_small_cases() {
    let v = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
    let q = Tensor::new(vec![2, 2], vec![5.0, 1.0, -2.0, 0.5]).unwrap();
    let k = Tensor::new(vec![1, 2], vec![0.3, 0.1]).unwrap();
    let out = sdpa(&q, &k, &v).unwrap();
    assert_eq!(out.data(), &[3.0, -1.0, 3.0, -1.0]);

    let k = Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.0, 4.0, 1.0]).unwrap();
    let v = Tensor::new(vec![3, 1], vec![1.0, 2.0, 6.0]).unwrap();
    let out = sdpa(&Tensor::zeros(&[1, 2]), &k, &v).unwrap();
    assert!((out.data()[0] - 3.0).abs() < 1e-15);
}

#[test]
fn view_relabeling_is_equivariant() {
    let s = stack(5, 4, 4, 4, 16);
    let p = params(4, 17);
    for k in 1..5 {
        let rotated = s.rotated(k);
        let aa = adjacent_attention(&rotated, &p).unwrap();
        assert_eq!(aa.tensor(), adjacent_attention(&s, &p).unwrap().rotated(k).tensor());
        let dr = trajectory_attention(&rotated, &p).unwrap();
        assert_eq!(dr.tensor(), trajectory_attention(&s, &p).unwrap().rotated(k).tensor());
    }
}
