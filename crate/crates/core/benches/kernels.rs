use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mvdenoise::data::{default_ring, encode_latents, make_scene, render_views};
use mvdenoise::denoiser::{training_step, Denoiser, ModelConfig, Plan};
use mvdenoise::par;
use mvdenoise::ssm::{selective_scan, ScanKernel, SsmParams};
use mvdenoise::tensor::Tensor;

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = SsmParams::init(24, 8, &mut rng);
    let x = Tensor::randn(&[768, 24], 1.0, &mut rng);
    let mut g = c.benchmark_group("selective_scan");
    for (name, on) in MODES {
        g.bench_function(BenchmarkId::new(name, 768), |b| {
            par::set_parallel(on);
            b.iter(|| selective_scan(black_box(&x), &params, ScanKernel::associative(64)).unwrap())
        });
    }
    g.finish();
    par::set_parallel(true);
}

fn render(c: &mut Criterion) {
    let scene = make_scene(0);
    let ring = default_ring(12).unwrap();
    let mut g = c.benchmark_group("render_views");
    for (name, on) in MODES {
        g.bench_function(name, |b| {
            par::set_parallel(on);
            b.iter(|| render_views(black_box(&scene), &ring))
        });
    }
    g.finish();
    par::set_parallel(true);
}

fn train_step(c: &mut Criterion) {
    let scene = make_scene(0);
    let ring = default_ring(12).unwrap();
    let set = render_views(&scene, &ring);
    let z0 = encode_latents(&set.images, &ring).unwrap();
    let model = Denoiser::new(ModelConfig::default(), 0).unwrap();
    let plan = Plan::new(&model.config, z0.ring(), false).unwrap();
    let text = model.text_encoder().encode(&scene.prompt()).unwrap();
    let null = model.text_encoder().null();
    let tokens = z0.to_tokens();
    let mut g = c.benchmark_group("training_step");
    g.sample_size(10);
    for (name, on) in MODES {
        g.bench_function(name, |b| {
            par::set_parallel(on);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            b.iter(|| training_step(&model, &plan, &tokens, &text, &null, 2, &mut rng, false).unwrap())
        });
    }
    g.finish();
    par::set_parallel(true);
}

criterion_group!(benches, scan, render, train_step);
criterion_main!(benches);
