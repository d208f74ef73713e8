//! Seeded toy scenes, an orthographic renderer, exact cross-view
//! correspondences, and on-disk datasets.

mod correspondence;
mod dataset;
mod render;
mod scene;

pub use correspondence::{ground_truth_correspondence, CorrespondenceMap, Match, DEPTH_TOLERANCE};
pub use dataset::{read_dataset, read_manifest, write_dataset, DatasetManifest, DATASET_VERSION, MANIFEST_FILE};
pub use render::{pixel_scale, render_views, CameraFrame, RenderedSet, BACKGROUND_DEPTH, HALF_EXTENT};
pub use scene::{make_scene, Primitive, SceneSpec, Shape, BOUND, PALETTE};

use crate::error::{Error, Result};
use crate::geometry::ViewRing;
use crate::latent::LatentStack;
use crate::tensor::Tensor;

/// Image pixels per latent pixel along each axis.
pub const LATENT_FACTOR: usize = 4;

/// Images `[f, 3, H, W]` in `[0, 1]` to latents `[f, 3, H/4, W/4]` in `[-1, 1]`.
pub fn encode_latents(images: &Tensor, ring: &ViewRing) -> Result<LatentStack> {
    let pooled = images.avg_pool2d(LATENT_FACTOR)?;
    let lat_ring = ring.with_resolution(ring.width / LATENT_FACTOR, ring.height / LATENT_FACTOR);
    LatentStack::new(pooled.map(|v| 2.0 * v - 1.0), lat_ring)
}

/// Latents back to images at 4x resolution, clamped to `[0, 1]`.
pub fn decode_latents(stack: &LatentStack) -> Result<Tensor> {
    if stack.channels() != 3 {
        return Err(Error::ShapeMismatch {
            what: "decoded latent channels".into(),
            expected: vec![3],
            found: vec![stack.channels()],
        });
    }
    let up = stack.tensor().map(|v| (v + 1.0) / 2.0).bilinear_upsample2d(LATENT_FACTOR)?;
    Ok(up.map(|v| v.clamp(0.0, 1.0)))
}

/// Ring of `views` cameras at 32x32, the default training resolution.
pub fn default_ring(views: usize) -> Result<ViewRing> {
    ViewRing::new(views, 32, 32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_roundtrip_on_constant_images() {
        let ring = ViewRing::new(2, 8, 8).unwrap();
        let img = Tensor::full(&[2, 3, 8, 8], 0.25);
        let z = encode_latents(&img, &ring).unwrap();
        assert_eq!(z.tensor().shape(), &[2, 3, 2, 2]);
        assert!(z.tensor().data().iter().all(|&v| v == -0.5));
        assert_eq!(decode_latents(&z).unwrap(), img);
    }
}
