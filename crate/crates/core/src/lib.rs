//! Toy multiview latent denoiser with cross-view consistency operators.

pub mod attention;
pub mod data;
pub mod autodiff;
pub mod denoiser;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod latent;
pub mod par;
pub mod params;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::ViewRing;
pub use latent::LatentStack;
pub use tensor::Tensor;
