use std::path::Path;
use std::process::{Command, Output};

fn mvd(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvd"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("MV_TEST_DETERMINISTIC", "1")
        .output()
        .expect("spawn mvd")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

const TINY: &[&str] = &["--channels", "8", "--train-steps", "3", "--steps", "2", "--sample-seeds", "1"];

#[test]
fn gen_data_writes_twelve_views() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mvd(dir.path(), &["gen-data", "--seed", "0", "--views", "12"]));
    let d = dir.path().join("data");
    for i in 0..12 {
        assert!(d.join(format!("view_{i:02}.mvt")).is_file());
        assert!(d.join(format!("depth_{i:02}.mvt")).is_file());
    }
    assert!(d.join("manifest.json").is_file());
}

#[test]
fn train_sample_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&mvd(p, &["gen-data", "--views", "4", "--resolution", "16"]));
    let mut train = vec!["train"];
    train.extend_from_slice(TINY);
    ok(&mvd(p, &train));
    assert!(p.join("checkpoint/manifest.json").is_file());
    let csv = std::fs::read_to_string(p.join("train.csv")).unwrap();
    assert!(csv.starts_with("run_id,stack,scan_strategy,seed,step,train_loss,consistency,psnr_vs_gt"));
    assert_eq!(csv.lines().count(), 4);

    ok(&mvd(p, &["sample", "--steps", "2", "--guidance", "7.5"]));
    for i in 0..4 {
        let img = std::fs::read(p.join(format!("samples/view_{i:02}.ppm"))).unwrap();
        assert!(img.starts_with(b"P6\n16 16\n255\n"));
    }
    assert!(p.join("samples/manifest.json").is_file());

    let mut eval = vec!["eval"];
    eval.extend_from_slice(TINY);
    ok(&mvd(p, &eval));
    assert_eq!(std::fs::read_to_string(p.join("eval.csv")).unwrap().lines().count(), 2);
}

#[test]
fn ablation_writes_one_row_per_stack() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&mvd(p, &["gen-data", "--views", "3", "--resolution", "16"]));
    let mut args = vec!["ablate", "--stack", "aa,aa+dr,aa+dr+rg,aa+dr+rg+air"];
    args.extend_from_slice(TINY);
    ok(&mvd(p, &args));
    let text = std::fs::read_to_string(p.join("ablation.csv")).unwrap();
    let stacks: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(stacks, ["aa", "aa+dr", "aa+dr+rg", "aa+dr+rg+air"]);
    assert!(p.join("run.json").is_file());
}

#[test]
fn gradcheck_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvd(dir.path(), &["gradcheck", "--max-entries", "3"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let usage = mvd(p, &["ablate", "--stack", "aa+xx"]);
    let missing = mvd(p, &["sample"]);
    let bad_res = mvd(p, &["gen-data", "--resolution", "30"]);
    let codes: Vec<i32> = [&usage, &missing, &bad_res].iter().map(|o| o.status.code().unwrap()).collect();
    assert!(codes.iter().all(|&c| c != 0), "{codes:?}");
    assert_eq!(codes[0], 2);
    assert_ne!(codes[1], codes[2]);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing file"));

    ok(&mvd(p, &["gen-data", "--views", "2", "--resolution", "8"]));
    let v = p.join("data/view_01.mvt");
    let bytes = std::fs::read(&v).unwrap();
    std::fs::write(&v, &bytes[..bytes.len() / 2]).unwrap();
    let corrupt = mvd(p, &["train", "--train-steps", "1", "--channels", "8"]);
    assert!(!corrupt.status.success());
    assert_ne!(corrupt.status.code(), missing.status.code());
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("view_01.mvt"));
}
