use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary P6 encoding of a `[3, H, W]` image in `[0, 1]`.
pub fn ppm_bytes(image: &Tensor) -> Result<Vec<u8>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::dim(format!("ppm expects [3, H, W], got {:?}", image.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    out.reserve(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            let v = d[c * h * w + p];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("pixel value {v}")));
            }
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ppm_bytes(image)?).map_err(|e| Error::io(path, e))
}

/// Writes `view_%02d.ppm` for every view of `[f, 3, H, W]` into `dir`.
pub fn write_views(dir: impl AsRef<Path>, images: &Tensor) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let &[f, 3, h, w] = images.shape() else {
        return Err(Error::dim(format!("expected [f, 3, H, W], got {:?}", images.shape())));
    };
    let n = 3 * h * w;
    let mut names = Vec::with_capacity(f);
    for v in 0..f {
        let img = Tensor::new(vec![3, h, w], images.data()[v * n..(v + 1) * n].to_vec())?;
        let name = format!("view_{v:02}.ppm");
        write_ppm(dir.join(&name), &img)?;
        names.push(name);
    }
    Ok(names)
}
