//! Metrics, image dumps and the train / sample / ablate pipeline behind `mvd`.

mod checks;
mod metrics;
mod ppm;
mod run;

pub use checks::gradcheck_miniature;
pub use metrics::{
    consistency_metric, median, psnr, reverse_ring_correspondences, ring_correspondences, PSNR_CAP,
};
pub use ppm::{ppm_bytes, write_ppm, write_views};
pub use run::{
    ablate, ablation_grid, evaluate, read_csv, train_model, write_csv, write_json, Evaluation, MetricsRow,
    RunConfig, RunManifest, TrainingSet, CSV_HEADER,
};
