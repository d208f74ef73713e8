use crate::error::{Error, Result};
use crate::geometry::ViewRing;
use crate::tensor::Tensor;

/// Per-view latent features `[f, C, H, W]` together with the camera ring.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStack {
    data: Tensor,
    ring: ViewRing,
}

impl LatentStack {
    pub fn new(data: Tensor, ring: ViewRing) -> Result<Self> {
        let &[f, _, h, w] = data.shape() else {
            return Err(Error::dim(format!(
                "latent stack must be [f, C, H, W], got {:?}",
                data.shape()
            )));
        };
        if f != ring.views() || h != ring.height || w != ring.width {
            return Err(Error::ShapeMismatch {
                what: "latent stack vs ring".into(),
                expected: vec![ring.views(), data.shape()[1], ring.height, ring.width],
                found: data.shape().to_vec(),
            });
        }
        Ok(Self { data, ring })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn ring(&self) -> &ViewRing {
        &self.ring
    }

    pub fn views(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// Token-major layout `[f, H*W, C]` used inside the operators.
    pub fn to_tokens(&self) -> Tensor {
        let (f, c, hw) = (self.views(), self.channels(), self.height() * self.width());
        let src = self.data.data();
        let mut out = vec![0.0; src.len()];
        for v in 0..f {
            for ch in 0..c {
                for p in 0..hw {
                    out[v * hw * c + p * c + ch] = src[v * c * hw + ch * hw + p];
                }
            }
        }
        Tensor::from_parts(vec![f, hw, c], out)
    }

    /// Inverse of [`to_tokens`](Self::to_tokens).
    pub fn from_tokens(tokens: &Tensor, ring: ViewRing) -> Result<Self> {
        let &[f, hw, c] = tokens.shape() else {
            return Err(Error::dim(format!(
                "tokens must be [f, HW, C], got {:?}",
                tokens.shape()
            )));
        };
        if hw != ring.width * ring.height {
            return Err(Error::dim(format!(
                "{hw} tokens per view do not match ring {}x{}",
                ring.height, ring.width
            )));
        }
        let src = tokens.data();
        let mut out = vec![0.0; src.len()];
        for v in 0..f {
            for p in 0..hw {
                for ch in 0..c {
                    out[v * c * hw + ch * hw + p] = src[v * hw * c + p * c + ch];
                }
            }
        }
        let data = Tensor::from_parts(vec![f, c, ring.height, ring.width], out);
        Self::new(data, ring)
    }

    /// View `i` as `[C, H, W]`.
    pub fn view(&self, i: usize) -> Tensor {
        let n = self.channels() * self.height() * self.width();
        Tensor::from_parts(
            vec![self.channels(), self.height(), self.width()],
            self.data.data()[i * n..(i + 1) * n].to_vec(),
        )
    }

    /// Cyclic relabeling: new view `i` is old view `(i + k) mod f`.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.channels() * self.height() * self.width();
        let mut d = self.data.data().to_vec();
        d.rotate_left((k % self.views()) * n);
        Self {
            data: Tensor::from_parts(self.data.shape().to_vec(), d),
            ring: self.ring.rotated(k),
        }
    }
}
