use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{consistency_metric, median, psnr, ring_correspondences};
use super::ppm::write_views;
use crate::data::{decode_latents, encode_latents, make_scene, read_dataset, CorrespondenceMap, RenderedSet};
use crate::denoiser::{ddim_sample, train, Denoiser, ModelConfig, ModuleFlags, SampleConfig, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::ssm::ScanStrategy;
use crate::tensor::Tensor;

pub const CSV_HEADER: [&str; 8] = [
    "run_id",
    "stack",
    "scan_strategy",
    "seed",
    "step",
    "train_loss",
    "consistency",
    "psnr_vs_gt",
];

/// Everything that determines a training and sampling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub modules: ModuleFlags,
    pub scan: ScanStrategy,
    pub channels: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub sample_steps: usize,
    pub guidance: f64,
    /// Number of sampling seeds; the reported consistency is their median.
    pub sample_seeds: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            modules: ModuleFlags::ALL,
            scan: ScanStrategy::SpiralBidirectional,
            channels: 24,
            train_steps: 2000,
            batch: 2,
            lr: 3e-3,
            sample_steps: 50,
            guidance: 7.5,
            sample_seeds: 3,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, set: &RenderedSet) -> ModelConfig {
        let lat = set.ring.with_resolution(set.ring.width / 4, set.ring.height / 4);
        ModelConfig {
            channels: self.channels,
            views: lat.views(),
            height: lat.height,
            width: lat.width,
            modules: self.modules,
            scan: self.scan,
            guidance: self.guidance,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            deterministic: self.deterministic,
            ..TrainConfig::default()
        }
    }

    pub fn sample_config(&self, k: usize) -> SampleConfig {
        SampleConfig {
            steps: self.sample_steps,
            guidance: self.guidance,
            seed: self.seed.wrapping_mul(1000).wrapping_add(k as u64),
            deterministic: self.deterministic,
            ..SampleConfig::default()
        }
    }

    pub fn run_id(&self) -> String {
        format!("{}_{}_s{}", self.modules.label(), self.scan.name(), self.seed)
    }
}

/// One CSV line; metric columns left empty when not measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub stack: String,
    pub scan_strategy: String,
    pub seed: u64,
    pub step: usize,
    pub train_loss: Option<f64>,
    pub consistency: Option<f64>,
    pub psnr_vs_gt: Option<f64>,
}

impl MetricsRow {
    pub fn for_run(cfg: &RunConfig, step: usize) -> Self {
        Self {
            run_id: cfg.run_id(),
            stack: cfg.modules.label(),
            scan_strategy: cfg.scan.name().into(),
            seed: cfg.seed,
            step,
            train_loss: None,
            consistency: None,
            psnr_vs_gt: None,
        }
    }
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        return Error::Internal("csv io error".into());
    }
    Error::CorruptPayload {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Serializes `value` as pretty JSON to `path`.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Echo of the invocation written next to every run's artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub artifacts: Vec<String>,
}

/// Dataset plus the caption of the scene it was rendered from.
pub struct TrainingSet {
    pub set: RenderedSet,
    pub prompt: String,
    pub maps: Vec<CorrespondenceMap>,
}

impl TrainingSet {
    pub fn new(set: RenderedSet) -> Result<Self> {
        let prompt = make_scene(set.seed).prompt();
        let maps = ring_correspondences(&set)?;
        Ok(Self { set, prompt, maps })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_dataset(dir)?)
    }
}

pub fn train_model(
    data: &TrainingSet,
    cfg: &RunConfig,
    on_step: impl FnMut(usize, f64),
) -> Result<(Denoiser, TrainReport)> {
    let mcfg = cfg.model_config(&data.set);
    let mut model = Denoiser::new(mcfg, cfg.seed)?;
    let z0 = encode_latents(&data.set.images, &data.set.ring)?;
    let report = train(&mut model, &z0, &data.prompt, &cfg.train_config(), on_step)?;
    if !report.final_loss.is_finite() {
        return Err(Error::NonFinite(format!("final training loss {}", report.final_loss)));
    }
    Ok((model, report))
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub consistency: f64,
    pub psnr: f64,
    /// `(consistency, psnr)` per sampling seed.
    pub per_seed: Vec<(f64, f64)>,
    /// Decoded images `[f, 3, H, W]` from the first sampling seed.
    pub images: Tensor,
}

/// Samples `cfg.sample_seeds` stacks, decodes them to image resolution and
/// scores them against the ground-truth renders and correspondences.
pub fn evaluate(model: &Denoiser, data: &TrainingSet, cfg: &RunConfig) -> Result<Evaluation> {
    let ring = &data.set.ring;
    let lat_ring = ring.with_resolution(model.config.width, model.config.height);
    let mut per_seed = Vec::with_capacity(cfg.sample_seeds);
    let mut first = None;
    for k in 0..cfg.sample_seeds.max(1) {
        let z = ddim_sample(model, &lat_ring, &data.prompt, &cfg.sample_config(k))?;
        let img = decode_latents(&z)?;
        if !img.is_finite() {
            return Err(Error::NonFinite("decoded sample".into()));
        }
        let c = consistency_metric(&img, &data.maps)?;
        let p = psnr(&img, &data.set.images)?;
        per_seed.push((c, p));
        first.get_or_insert(img);
    }
    let cs: Vec<f64> = per_seed.iter().map(|x| x.0).collect();
    let ps: Vec<f64> = per_seed.iter().map(|x| x.1).collect();
    Ok(Evaluation {
        consistency: median(&cs),
        psnr: median(&ps),
        per_seed,
        images: first.expect("at least one sample"),
    })
}

/// The distinct runs of an ablation grid. Stacks without the scan operator do
/// not depend on the scan strategy and run once, under the first strategy.
pub fn ablation_grid(base: &RunConfig, stacks: &[ModuleFlags], scans: &[ScanStrategy]) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &modules in stacks {
        let used: &[ScanStrategy] = if modules.rg { scans } else { &scans[..scans.len().min(1)] };
        for &scan in used {
            out.push(RunConfig {
                modules,
                scan,
                ..base.clone()
            });
        }
    }
    out
}

/// Trains and evaluates every grid point; writes `ablation.csv`, one PPM
/// directory per run under `runs/`, and `run.json` into `out`.
pub fn ablate(
    data: &TrainingSet,
    base: &RunConfig,
    stacks: &[ModuleFlags],
    scans: &[ScanStrategy],
    out: &Path,
    mut log: impl FnMut(&str),
) -> Result<Vec<MetricsRow>> {
    if stacks.is_empty() || scans.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one stack and one scan".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut artifacts = vec!["ablation.csv".to_string()];
    for cfg in ablation_grid(base, stacks, scans) {
        log(&format!("training {}", cfg.run_id()));
        let (model, report) = train_model(data, &cfg, |_, _| {})?;
        let ev = evaluate(&model, data, &cfg)?;
        let dir = out.join("runs").join(cfg.run_id());
        for name in write_views(&dir, &ev.images)? {
            artifacts.push(format!("runs/{}/{name}", cfg.run_id()));
        }
        log(&format!(
            "{}: loss {:.4} consistency {:.4} psnr {:.2}",
            cfg.run_id(),
            report.final_loss,
            ev.consistency,
            ev.psnr
        ));
        rows.push(MetricsRow {
            train_loss: Some(report.final_loss),
            consistency: Some(ev.consistency),
            psnr_vs_gt: Some(ev.psnr),
            ..MetricsRow::for_run(&cfg, cfg.train_steps)
        });
    }
    write_csv(out.join("ablation.csv"), &rows)?;
    write_json(
        out.join("run.json"),
        &RunManifest {
            command: "ablate".into(),
            config: base.clone(),
            data: None,
            checkpoint: None,
            artifacts,
        },
    )?;
    Ok(rows)
}
