//! Dense row-major `f64` arrays and the handful of kernels built on them.

mod io;
pub(crate) mod kernels;

pub use io::{read_mvt, read_mvt_bytes, write_mvt, write_mvt_bytes, Dtype, MVT_MAGIC};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(f).collect())
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest elementwise absolute difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                what: "max_abs_diff".into(),
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Standard product of `[m, k]` and `[k, n]` matrices.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape.as_slice(), rhs.shape.as_slice()) else {
            return Err(Error::dim(format!(
                "matmul expects 2-d operands, got {:?} x {:?}",
                self.shape, rhs.shape
            )));
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dims differ: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&self.data, &rhs.data, &mut out, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        if inner == 1 {
            kernels::softmax_rows(&mut out, len);
        } else {
            let mut lane = vec![0.0; len];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    for (j, v) in lane.iter_mut().enumerate() {
                        *v = out[base + j * inner];
                    }
                    kernels::softmax_rows(&mut lane, len);
                    for (j, v) in lane.iter().enumerate() {
                        out[base + j * inner] = *v;
                    }
                }
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Mean over non-overlapping `stride x stride` windows of the last two axes.
    pub fn avg_pool2d(&self, stride: usize) -> Result<Tensor> {
        let (outer, h, w) = self.spatial_dims("avg_pool2d")?;
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::dim(format!(
                "avg_pool2d stride {stride} must divide spatial dims {h}x{w}"
            )));
        }
        let out = kernels::avg_pool2d(&self.data, outer, h, w, stride);
        let mut shape = self.shape.clone();
        let nd = shape.len();
        shape[nd - 2] = h / stride;
        shape[nd - 1] = w / stride;
        Ok(Tensor::from_parts(shape, out))
    }

    /// Bilinear upsampling of the last two axes by an integer factor
    /// (half-pixel centers, edges clamped).
    pub fn bilinear_upsample2d(&self, factor: usize) -> Result<Tensor> {
        let (outer, h, w) = self.spatial_dims("bilinear_upsample2d")?;
        if factor < 1 {
            return Err(Error::InvalidArgument(
                "upsample factor must be >= 1".into(),
            ));
        }
        let out = kernels::upsample2d(&self.data, outer, h, w, factor);
        let mut shape = self.shape.clone();
        let nd = shape.len();
        shape[nd - 2] = h * factor;
        shape[nd - 1] = w * factor;
        Ok(Tensor::from_parts(shape, out))
    }

    fn spatial_dims(&self, op: &str) -> Result<(usize, usize, usize)> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::dim(format!(
                "{op} needs at least 2 dims, got {:?}",
                self.shape
            )));
        }
        let (h, w) = (self.shape[nd - 2], self.shape[nd - 1]);
        Ok((self.numel() / (h * w), h, w))
    }
}
