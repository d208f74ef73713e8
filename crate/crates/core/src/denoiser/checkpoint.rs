use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, ModelConfig};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{read_mvt, write_mvt, Dtype};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Position of a seeded ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("bad rng word position {:?}: {e}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub step: usize,
    pub rng: RngState,
    pub params: Vec<String>,
}

fn file_name(param: &str) -> String {
    format!("{param}.mvt")
}

pub fn save_checkpoint(dir: &Path, model: &Denoiser, step: usize, rng: RngState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    let mut err = None;
    model.visit("", &mut |name, t| {
        names.push(name.to_string());
        if err.is_none() {
            if let Err(e) = write_mvt(&dir.join(file_name(name)), t, Dtype::F64) {
                err = Some(e);
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        step,
        rng,
        params: names,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a checkpoint; any missing tensor or shape mismatch is an error.
pub fn load_checkpoint(dir: &Path) -> Result<(Denoiser, CheckpointMeta)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path,
            expected: CHECKPOINT_VERSION,
            found: meta.version,
        });
    }
    meta.config.schedule = meta.config.schedule.rebuilt();
    let mut model = Denoiser::new(meta.config.clone(), 0)?;
    let mut values = BTreeMap::new();
    for name in &meta.params {
        let t = read_mvt(&dir.join(file_name(name)))?;
        values.insert(name.clone(), t);
    }
    model.load_named(&values)?;
    Ok((model, meta))
}
