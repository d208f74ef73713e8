//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mvdenoise::attention::{adjacent_attention, air_attention, trajectory_attention, AirConfig, AttentionParams};
use mvdenoise::data::{ground_truth_correspondence, make_scene, render_views};
use mvdenoise::denoiser::{
    add_noise_ab, ddim_loop, noise_prediction_loss, EpsModel, NoiseSchedule, TrainSample,
};
use mvdenoise::geometry::{trajectory_window, ViewRing};
use mvdenoise::harness::{gradcheck_miniature, read_csv};
use mvdenoise::ssm::{
    center_block_spread, sbscan_permute, sbscan_unpermute, selective_scan, selective_scan_sequential, spiral_order,
    ScanKernel, ScanOrder, ScanStrategy, SsmParams,
};
use mvdenoise::tensor::Tensor;
use mvdenoise::{LatentStack, Result};

const SCAN_TOL: f64 = 1e-10;
const SCAN_BUDGET: Duration = Duration::from_secs(10);
const SELF_ATTN_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-10;
const WINDOW_RATE: f64 = 0.99;
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const NOISE_INV_TOL: f64 = 1e-10;
const DDIM_TOL: f64 = 1e-8;
const LOSS_TARGET: f64 = 0.05;
const TRAIN_STEPS: usize = 2000;
const MAX_TRAIN_STEPS: usize = 20_000;
const RUN_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, r: Result<Outcome>) -> bool {
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_stack(f: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> LatentStack {
    LatentStack::new(
        Tensor::randn(&[f, c, h, w], 1.0, rng),
        ViewRing::new(f, w, h).unwrap(),
    )
    .unwrap()
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let l = 1 + (case * 97 + 13) % 1024;
        let l = if case == 0 { 1024 } else { l };
        let (d, n) = (8, 4);
        let params = SsmParams::init(d, n, &mut rng);
        let x = Tensor::randn(&[l, d], 1.0, &mut rng);
        let chunk = [1, 7, 64, 256][case % 4];
        let kernel = ScanKernel::associative(chunk);
        let fast = selective_scan(&x, &params, kernel)?;
        let slow = selective_scan_sequential(&x, &params)?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    let took = start.elapsed();
    Ok(Outcome {
        pass: worst <= SCAN_TOL && took < SCAN_BUDGET,
        detail: format!("100 cases, max |diff| {worst:.2e} (tol {SCAN_TOL:.0e}), {:.2}s", took.as_secs_f64()),
    })
}

fn criterion_2() -> Result<Outcome> {
    let mut bijective = true;
    for h in 1..=16 {
        for w in 1..=16 {
            let s = spiral_order(h, w);
            let mut seen = vec![false; h * w];
            for &p in &s {
                if p >= h * w || seen[p] {
                    bijective = false;
                } else {
                    seen[p] = true;
                }
            }
            bijective &= s.len() == h * w && seen.iter().all(|&b| b);
        }
    }
    let mut roundtrip = true;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for f in [1, 2, 3, 12] {
        let stack = random_stack(f, 3, 5, 6, &mut rng);
        for strat in ScanStrategy::ALL {
            for order in strat.orders(f, 5, 6) {
                let seq = sbscan_permute(&stack, &order)?;
                let back = sbscan_unpermute(&seq, &order, &stack)?;
                roundtrip &= back == stack;
            }
        }
        let o = ScanOrder::spiral(f, 5, 6, true);
        roundtrip &= (0..o.len()).all(|t| o.inverse()[o.forward()[t]] == t);
    }
    Ok(Outcome {
        pass: bijective && roundtrip,
        detail: format!("bijection 1..=16 squared: {bijective}; bitwise round-trip f in {{1,2,3,12}}: {roundtrip}"),
    })
}

fn criterion_3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = 4;
    let p = AttentionParams::init(c, 1, &mut rng)?;

    let one = Tensor::randn(&[1, c, 3, 3], 1.0, &mut rng);
    let f = 4;
    let same = Tensor::from_fn(&[f, c, 3, 3], |i| one.data()[i % one.numel()]);
    let same = LatentStack::new(same, ViewRing::new(f, 3, 3)?)?;
    let a = adjacent_attention(&same, &p)?
        .tensor()
        .max_abs_diff(common::per_view_self_attention(&same, &p).tensor())?;

    let stack = random_stack(f, c, 4, 4, &mut rng);
    let ones = Tensor::full(&[f, 1, 4, 4], 1.0);
    let b = air_attention(&stack, &ones, AirConfig::new(1, 1)?, &p)?
        .tensor()
        .max_abs_diff(common::dense_all_view_oracle(&stack, &p).tensor())?;

    let stack = random_stack(f, c, 8, 8, &mut rng);
    let t = trajectory_attention(&stack, &p)?
        .tensor()
        .max_abs_diff(common::trajectory_oracle(&stack, &p).tensor())?;

    Ok(Outcome {
        pass: a <= SELF_ATTN_TOL && b <= ORACLE_TOL && t <= ORACLE_TOL,
        detail: format!(
            "(a) identical views vs self-attention {a:.2e} (tol {SELF_ATTN_TOL:.0e}); \
             (b) unit scores, unit strides vs dense {b:.2e}; (c) trajectory vs gather oracle {t:.2e} (tol {ORACLE_TOL:.0e})"
        ),
    })
}

fn criterion_4() -> Result<Outcome> {
    let ring = ViewRing::new(12, 32, 32)?;
    let (mut inside, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let set = render_views(&make_scene(seed), &ring);
        for i in 0..12 {
            for j in [(i + 1) % 12, (i + 11) % 12] {
                let delta = ring.delta_azimuth(i, j)?;
                assert!((delta.abs() - 30.0).abs() < 1e-9);
                let map = ground_truth_correspondence(&set, i, j)?;
                for row in 0..32 {
                    for col in 0..32 {
                        let Some(m) = map.get(col, row) else { continue };
                        let Some(target) = m.target else { continue };
                        if (m.depth * delta.to_radians().sin()).abs() > 1.0 {
                            continue;
                        }
                        total += 1;
                        inside += trajectory_window(col, row, delta, 32, 32).contains(&target) as usize;
                    }
                }
            }
        }
    }
    let rate = inside as f64 / total.max(1) as f64;
    Ok(Outcome {
        pass: total > 0 && rate >= WINDOW_RATE,
        detail: format!("{inside}/{total} = {:.4} inside window (need >= {WINDOW_RATE})", rate),
    })
}

fn criterion_5() -> Result<Outcome> {
    let start = Instant::now();
    let r = gradcheck_miniature(0, GRAD_EPS, GRAD_TOL, None)?;
    let took = start.elapsed();
    Ok(Outcome {
        pass: r.passed && took < GRAD_BUDGET,
        detail: format!(
            "{} entries, max rel err {:.2e} (tol {GRAD_TOL:.0e}), {:.1}s",
            r.checked,
            r.max_rel_err,
            took.as_secs_f64()
        ),
    })
}

struct Oracle(Tensor);

impl EpsModel for Oracle {
    fn eps(&self, _: &Tensor, _: usize, _: bool) -> Result<Tensor> {
        Ok(self.0.clone())
    }
}

fn criterion_6() -> Result<Outcome> {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = [12, 64, 3];
    let z0 = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
    let eps = Tensor::randn(&shape, 1.0, &mut rng);

    let mut inv: f64 = 0.0;
    for t in [1, 10, 250, 500, 750, 999, 1000] {
        let ab = sched.alpha_bar(t)?;
        let zt = add_noise_ab(&z0, &eps, ab)?;
        let rec = Tensor::from_fn(&shape, |i| (zt.data()[i] - (1.0 - ab).sqrt() * eps.data()[i]) / ab.sqrt());
        inv = inv.max(rec.max_abs_diff(&z0)?);
    }

    let zt = add_noise_ab(&z0, &eps, sched.alpha_bar(sched.steps)?)?;
    let out = ddim_loop(&Oracle(eps.clone()), &sched, zt, 1, 7.5, false)?;
    let ddim = out.max_abs_diff(&z0)?;

    let mut loss: f64 = 0.0;
    for t in [1, 500, 1000] {
        let s = TrainSample {
            t,
            eps: eps.clone(),
            null_text: false,
        };
        loss = loss.max(noise_prediction_loss(&Oracle(eps.clone()), &sched, &z0, &s)?);
    }
    Ok(Outcome {
        pass: inv <= NOISE_INV_TOL && ddim <= DDIM_TOL && loss == 0.0,
        detail: format!(
            "noise inversion {inv:.2e} (tol {NOISE_INV_TOL:.0e}); one-step DDIM {ddim:.2e} (tol {DDIM_TOL:.0e}); oracle loss {loss}"
        ),
    })
}

/// `gen-data` then the ablation; returns the output directory and wall time.
fn run_pipeline(root: &Path, name: &str) -> Result<(std::path::PathBuf, Duration)> {
    let out = root.join(name);
    let bin = env!("CARGO_BIN_EXE_mvd");
    let start = Instant::now();
    let steps = TRAIN_STEPS.to_string();
    let runs: [&[&str]; 2] = [
        &["gen-data", "--seed", "0", "--views", "12", "--resolution", "32"],
        &[
            "ablate",
            "--seed",
            "0",
            "--stack",
            "aa,aa+dr+rg+air",
            "--scan",
            "spiral-bidirectional,spatial-first-bidirectional",
            "--train-steps",
            &steps,
            "--steps",
            "50",
            "--guidance",
            "7.5",
            "--sample-seeds",
            "3",
        ],
    ];
    for args in runs {
        let st = Command::new(bin)
            .arg("--out")
            .arg(&out)
            .args(args)
            .env("MV_TEST_DETERMINISTIC", "1")
            .output()
            .map_err(|e| mvdenoise::Error::Internal(format!("spawn mvd: {e}")))?;
        if !st.status.success() {
            return Err(mvdenoise::Error::Internal(format!(
                "mvd {} failed ({}): {}",
                args[0],
                st.status,
                String::from_utf8_lossy(&st.stderr)
            )));
        }
    }
    Ok((out, start.elapsed()))
}

fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|s| s.to_str()), Some("csv" | "ppm")) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn main() {
    println!("acceptance: running criteria 1-9");
    let mut all = true;
    all &= report("1", "scan oracle equivalence", criterion_1());
    all &= report("2", "spiral bijection and permutation round-trip", criterion_2());
    all &= report("3", "attention reductions", criterion_3());
    all &= report("4", "rotation window guarantee", criterion_4());
    all &= report("5", "gradient integrity", criterion_5());
    all &= report("6", "diffusion identities", criterion_6());

    let tmp = tempfile::tempdir().expect("temp dir");
    let first = run_pipeline(tmp.path(), "a");
    let rows = first
        .as_ref()
        .map_err(|e| mvdenoise::Error::Internal(e.to_string()))
        .and_then(|(dir, _)| read_csv(dir.join("ablation.csv")));

    all &= report(
        "7",
        "overfit and ablation trend",
        (|| {
            let (_, took) = first.as_ref().map_err(|e| mvdenoise::Error::Internal(e.to_string()))?;
            let rows = rows.as_ref().map_err(|e| mvdenoise::Error::Internal(e.to_string()))?;
            let find = |stack: &str| {
                rows.iter()
                    .find(|r| r.stack == stack && r.scan_strategy == "spiral-bidirectional")
                    .ok_or_else(|| mvdenoise::Error::Internal(format!("no row for {stack}")))
            };
            let (aa, full) = (find("aa")?, find("aa+dr+rg+air")?);
            let (ca, cf) = (aa.consistency.unwrap_or(f64::NAN), full.consistency.unwrap_or(f64::NAN));
            let (la, lf) = (aa.train_loss.unwrap_or(f64::NAN), full.train_loss.unwrap_or(f64::NAN));
            Ok(Outcome {
                pass: cf < ca && la < LOSS_TARGET && lf < LOSS_TARGET && TRAIN_STEPS <= MAX_TRAIN_STEPS && *took < RUN_BUDGET,
                detail: format!(
                    "consistency full {cf:.4} vs aa-only {ca:.4}; loss full {lf:.4}, aa-only {la:.4} (< {LOSS_TARGET}); \
                     {TRAIN_STEPS} steps, pipeline {:.0}s",
                    took.as_secs_f64()
                ),
            })
        })(),
    );

    all &= report(
        "8",
        "scan strategy ablation",
        (|| {
            let rows = rows.as_ref().map_err(|e| mvdenoise::Error::Internal(e.to_string()))?;
            let has = |scan: &str| rows.iter().any(|r| r.stack == "aa+dr+rg+air" && r.scan_strategy == scan && r.consistency.is_some());
            let (sp, sf) = (has("spiral-bidirectional"), has("spatial-first-bidirectional"));
            let rm: Vec<usize> = (0..64).collect();
            let (a, b) = (center_block_spread(&spiral_order(8, 8), 8, 8, 4), center_block_spread(&rm, 8, 8, 4));
            Ok(Outcome {
                pass: sp && sf && a < b,
                detail: format!("rows: spiral {sp}, spatial-first {sf}; center-block spread spiral {a:.3} < row-major {b:.3}"),
            })
        })(),
    );

    all &= report(
        "9",
        "deterministic artifacts",
        (|| {
            let (dir_a, _) = first.as_ref().map_err(|e| mvdenoise::Error::Internal(e.to_string()))?;
            let (dir_b, _) = run_pipeline(tmp.path(), "b")?;
            let (a, b) = (artifact_bytes(dir_a), artifact_bytes(&dir_b));
            let ppm = a.keys().filter(|k| k.ends_with(".ppm")).count();
            Ok(Outcome {
                pass: !a.is_empty() && ppm > 0 && a == b,
                detail: format!("{} files ({} PPM) compared, identical: {}", a.len(), ppm, a == b),
            })
        })(),
    );

    if !all {
        std::process::exit(1);
    }
}
