use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mvdenoise::data::{
    decode_latents, default_ring, make_scene, render_views, write_dataset, DatasetManifest, MANIFEST_FILE,
};
use mvdenoise::denoiser::{ddim_sample, load_checkpoint, save_checkpoint, ModuleFlags};
use mvdenoise::harness::{
    ablate, evaluate, gradcheck_miniature, train_model, write_csv, write_json, write_views, MetricsRow, RunConfig,
    RunManifest, TrainingSet,
};
use mvdenoise::par;
use mvdenoise::ssm::ScanStrategy;
use mvdenoise::{Error, Result};

#[derive(Parser)]
#[command(name = "mvd", about = "Toy multiview latent denoiser")]
struct Cli {
    /// Root directory for every input and output path.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Fixed reduction orders everywhere (also set by MV_TEST_DETERMINISTIC=1).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a seeded scene on the camera ring.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        views: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "checkpoint")]
        checkpoint: PathBuf,
    },
    /// DDIM sampling from a checkpoint; writes one PPM per view.
    Sample {
        #[arg(long, default_value = "checkpoint")]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7.5)]
        guidance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        samples: PathBuf,
    },
    /// Finite-difference check of the miniature denoiser.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Entries perturbed per parameter tensor (all when omitted).
        #[arg(long)]
        max_entries: Option<usize>,
    },
    /// Consistency and PSNR of checkpoint samples against the dataset.
    Eval {
        #[arg(long, default_value = "checkpoint")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Comma-separated module stacks, e.g. aa,aa+dr,aa+dr+rg,aa+dr+rg+air
        #[arg(long, value_delimiter = ',', default_value = "aa,aa+dr,aa+dr+rg,aa+dr+rg+air")]
        stack: Vec<ModuleFlags>,
        #[arg(long, value_delimiter = ',', default_value = "spiral-bidirectional")]
        scan: Vec<ScanStrategy>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "aa+dr+rg+air")]
    modules: ModuleFlags,
    #[arg(long = "scan-strategy", default_value = "spiral-bidirectional")]
    scan_strategy: ScanStrategy,
    #[arg(long, default_value_t = 24)]
    channels: usize,
    #[arg(long = "train-steps", default_value_t = 2000)]
    train_steps: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 7.5)]
    guidance: f64,
    #[arg(long = "sample-seeds", default_value_t = 3)]
    sample_seeds: usize,
}

impl RunArgs {
    fn config(&self, deterministic: bool) -> RunConfig {
        RunConfig {
            seed: self.seed,
            modules: self.modules,
            scan: self.scan_strategy,
            channels: self.channels,
            train_steps: self.train_steps,
            batch: self.batch,
            lr: self.lr,
            sample_steps: self.steps,
            guidance: self.guidance,
            sample_seeds: self.sample_seeds,
            deterministic,
        }
    }
}

#[derive(Serialize)]
struct SampleManifest<'a> {
    prompt: &'a str,
    steps: usize,
    guidance: f64,
    seed: u64,
    checkpoint: &'a Path,
    azimuths_deg: &'a [f64],
    images: Vec<String>,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out;
    let deterministic = cli.deterministic || par::deterministic_from_env();
    mkdir(&root)?;
    match cli.cmd {
        Cmd::GenData {
            seed,
            views,
            resolution,
            data,
        } => {
            if resolution % 4 != 0 {
                return Err(Error::InvalidArgument(format!("resolution {resolution} is not a multiple of 4")));
            }
            let ring = default_ring(views)?.with_resolution(resolution, resolution);
            let scene = make_scene(seed);
            let set = render_views(&scene, &ring);
            let m: DatasetManifest = write_dataset(&set, root.join(&data))?;
            write_json(root.join(&data).join("scene.json"), &scene)?;
            println!("wrote {} views of \"{}\" to {}", m.views, scene.prompt(), root.join(&data).display());
        }
        Cmd::Train { run, data, checkpoint } => {
            let cfg = run.config(deterministic);
            let ts = TrainingSet::load(root.join(&data))?;
            let mut rows = Vec::with_capacity(cfg.train_steps);
            let (model, report) = train_model(&ts, &cfg, |step, loss| {
                rows.push(MetricsRow {
                    train_loss: Some(loss),
                    ..MetricsRow::for_run(&cfg, step)
                });
                if step % 100 == 0 {
                    eprintln!("step {step:>6} loss {loss:.5}");
                }
            })?;
            save_checkpoint(&root.join(&checkpoint), &model, cfg.train_steps, report.rng.clone())?;
            write_csv(root.join("train.csv"), &rows)?;
            write_json(
                root.join("run.json"),
                &RunManifest {
                    command: "train".into(),
                    config: cfg,
                    data: Some(data),
                    checkpoint: Some(checkpoint),
                    artifacts: vec!["train.csv".into()],
                },
            )?;
            println!("final loss {:.5}", report.final_loss);
        }
        Cmd::Sample {
            checkpoint,
            prompt,
            data,
            steps,
            guidance,
            seed,
            samples,
        } => {
            let (model, _) = load_checkpoint(&root.join(&checkpoint))?;
            let prompt = match prompt {
                Some(p) => p,
                None => {
                    let m = mvdenoise::data::read_manifest(root.join(&data))?;
                    make_scene(m.seed).prompt()
                }
            };
            let ring = model.config.ring()?;
            let cfg = mvdenoise::denoiser::SampleConfig {
                steps,
                guidance,
                seed,
                deterministic,
                ..Default::default()
            };
            let z = ddim_sample(&model, &ring, &prompt, &cfg)?;
            let images = decode_latents(&z)?;
            let dir = root.join(&samples);
            let files = write_views(&dir, &images)?;
            write_json(
                dir.join(MANIFEST_FILE),
                &SampleManifest {
                    prompt: &prompt,
                    steps,
                    guidance,
                    seed,
                    checkpoint: &checkpoint,
                    azimuths_deg: &ring.azimuths_deg,
                    images: files,
                },
            )?;
            println!("wrote {} views to {}", ring.views(), dir.display());
        }
        Cmd::Gradcheck {
            seed,
            eps,
            tol,
            max_entries,
        } => {
            let r = gradcheck_miniature(seed, eps, tol, max_entries)?;
            println!(
                "checked {} entries, max relative error {:.3e} (tolerance {tol:.1e})",
                r.checked, r.max_rel_err
            );
            if !r.passed {
                return Err(Error::Invariant(format!(
                    "gradient check failed: {:.3e} > {tol:.1e}",
                    r.max_rel_err
                )));
            }
        }
        Cmd::Eval { checkpoint, data, run } => {
            let cfg = run.config(deterministic);
            let (model, meta) = load_checkpoint(&root.join(&checkpoint))?;
            let ts = TrainingSet::load(root.join(&data))?;
            let ev = evaluate(&model, &ts, &cfg)?;
            let row = MetricsRow {
                consistency: Some(ev.consistency),
                psnr_vs_gt: Some(ev.psnr),
                stack: meta.config.modules.label(),
                scan_strategy: meta.config.scan.name().into(),
                ..MetricsRow::for_run(&cfg, meta.step)
            };
            write_csv(root.join("eval.csv"), std::slice::from_ref(&row))?;
            println!("consistency {:.5} psnr {:.3} dB", ev.consistency, ev.psnr);
        }
        Cmd::Ablate { run, data, stack, scan } => {
            let cfg = run.config(deterministic);
            let ts = TrainingSet::load(root.join(&data))?;
            let rows = ablate(&ts, &cfg, &stack, &scan, &root, |m| eprintln!("{m}"))?;
            for r in &rows {
                println!(
                    "{} loss {:.5} consistency {:.5}",
                    r.run_id,
                    r.train_loss.unwrap_or(f64::NAN),
                    r.consistency.unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
