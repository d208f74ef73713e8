use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ViewRing;
use crate::tensor::{read_mvt, write_mvt, Dtype, Tensor};

use super::render::RenderedSet;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(rename = "f")]
    pub views: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub elevation_deg: f64,
    pub distance: f64,
    pub azimuths_deg: Vec<f64>,
    pub image_files: Vec<String>,
    pub depth_files: Vec<String>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn for_set(set: &RenderedSet) -> Self {
        let f = set.views();
        Self {
            version: DATASET_VERSION,
            views: f,
            width: set.ring.width,
            height: set.ring.height,
            elevation_deg: set.ring.elevation_deg,
            distance: set.ring.distance,
            azimuths_deg: set.ring.azimuths_deg.clone(),
            image_files: (0..f).map(|i| format!("view_{i:02}.mvt")).collect(),
            depth_files: (0..f).map(|i| format!("depth_{i:02}.mvt")).collect(),
            seed: set.seed,
        }
    }

    fn ring(&self) -> ViewRing {
        ViewRing {
            azimuths_deg: self.azimuths_deg.clone(),
            elevation_deg: self.elevation_deg,
            distance: self.distance,
            width: self.width,
            height: self.height,
        }
    }
}

/// Writes `manifest.json` plus one `.mvt` per image and depth map.
pub fn write_dataset(set: &RenderedSet, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = DatasetManifest::for_set(set);
    let (h, w) = (m.height, m.width);
    for i in 0..m.views {
        let img = Tensor::new(vec![3, h, w], set.images.data()[i * 3 * h * w..(i + 1) * 3 * h * w].to_vec())?;
        write_mvt(dir.join(&m.image_files[i]), &img, Dtype::F64)?;
        let dep = Tensor::new(vec![h, w], set.depth.data()[i * h * w..(i + 1) * h * w].to_vec())?;
        write_mvt(dir.join(&m.depth_files[i]), &dep, Dtype::F64)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

fn load_tensor(path: PathBuf, expected: &[usize]) -> Result<Tensor> {
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let t = read_mvt(&path)?;
    if t.shape() != expected {
        return Err(Error::ShapeMismatch {
            what: path.display().to_string(),
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(t)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if m.version != DATASET_VERSION {
        return Err(Error::Version {
            path,
            expected: DATASET_VERSION,
            found: m.version,
        });
    }
    for (what, len) in [
        ("azimuths_deg", m.azimuths_deg.len()),
        ("image_files", m.image_files.len()),
        ("depth_files", m.depth_files.len()),
    ] {
        if len != m.views {
            return Err(Error::ShapeMismatch {
                what: format!("{what} entries vs manifest view count"),
                expected: vec![m.views],
                found: vec![len],
            });
        }
    }
    Ok(m)
}

/// Inverse of [`write_dataset`].
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<RenderedSet> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let (h, w) = (m.height, m.width);
    let mut images = Vec::with_capacity(m.views * 3 * h * w);
    let mut depth = Vec::with_capacity(m.views * h * w);
    for i in 0..m.views {
        images.extend_from_slice(load_tensor(dir.join(&m.image_files[i]), &[3, h, w])?.data());
        depth.extend_from_slice(load_tensor(dir.join(&m.depth_files[i]), &[h, w])?.data());
    }
    Ok(RenderedSet {
        images: Tensor::new(vec![m.views, 3, h, w], images)?,
        depth: Tensor::new(vec![m.views, h, w], depth)?,
        ring: m.ring(),
        seed: m.seed,
    })
}
