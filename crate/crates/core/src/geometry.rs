//! Camera ring and rotation-induced pixel correspondences.
//!
//! Pixel `k` spans `[k, k + 1)` with its center at `k + 0.5`; the rotation
//! axis sits at `W / 2`. Depth `d` is measured in pixels, positive toward the
//! camera, zero on the plane through the axis. Rotating the camera by `Δα`
//! about the vertical axis moves a point's column as
//! `x' = (x - W/2) cos Δα + W/2 - d sin Δα` and leaves its row unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRing {
    pub azimuths_deg: Vec<f64>,
    pub elevation_deg: f64,
    pub distance: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewRing {
    /// `views` azimuths uniform on `[0, 360)`, starting at 0 (front view).
    pub fn new(views: usize, width: usize, height: usize) -> Result<Self> {
        if views == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "ring needs views, width, height >= 1 (got {views}, {width}, {height})"
            )));
        }
        Ok(Self {
            azimuths_deg: (0..views).map(|i| i as f64 * 360.0 / views as f64).collect(),
            elevation_deg: 0.0,
            distance: 2.0,
            width,
            height,
        })
    }

    pub fn with_elevation(mut self, elevation_deg: f64) -> Self {
        self.elevation_deg = elevation_deg;
        self
    }

    /// Same cameras at another image resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    /// Relabels views so that new view `i` is old view `(i + k) mod f`.
    pub fn rotated(&self, k: usize) -> Self {
        let mut r = self.clone();
        r.azimuths_deg.rotate_left(k % self.views());
        r
    }

    pub fn views(&self) -> usize {
        self.azimuths_deg.len()
    }

    pub fn prev(&self, i: usize) -> usize {
        (i + self.views() - 1) % self.views()
    }

    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.views()
    }

    /// Signed minimal angle from view `i` to view `j`, in `(-180, 180]`.
    pub fn delta_azimuth(&self, i: usize, j: usize) -> Result<f64> {
        let f = self.views();
        for idx in [i, j] {
            if idx >= f {
                return Err(Error::ViewIndex { index: idx, len: f });
            }
        }
        let mut d = (self.azimuths_deg[j] - self.azimuths_deg[i]).rem_euclid(360.0);
        if d > 180.0 {
            d -= 360.0;
        }
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCorrespondence {
    pub x: f64,
    pub y: f64,
    pub delta_deg: f64,
    pub depth: f64,
    pub x_rot: f64,
    pub y_rot: f64,
}

impl PixelCorrespondence {
    pub fn predict(x: f64, y: f64, delta_deg: f64, depth: f64, width: usize) -> Self {
        Self {
            x,
            y,
            delta_deg,
            depth,
            x_rot: project_rotated_x(x, delta_deg, depth, width),
            y_rot: y,
        }
    }
}

/// Column after rotating by `delta_deg` a point at column `x` and pixel depth `d`.
pub fn project_rotated_x(x: f64, delta_deg: f64, d: f64, width: usize) -> f64 {
    let a = delta_deg.to_radians();
    let half = width as f64 / 2.0;
    (x - half) * a.cos() + half - d * a.sin()
}

/// Depth-free variant of [`project_rotated_x`].
pub fn project_rotated_x_simplified(x: f64, delta_deg: f64, width: usize) -> f64 {
    let a = delta_deg.to_radians();
    let half = width as f64 / 2.0;
    (x - half) * a.cos() + half
}

/// Rounds half away from zero.
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

/// Window center `(col, row)` in the rotated view for source pixel `(x, y)`.
pub fn window_center(x: usize, y: usize, delta_deg: f64, width: usize) -> (i64, i64) {
    let xc = project_rotated_x_simplified(x as f64 + 0.5, delta_deg, width);
    (round_half_away(xc - 0.5), y as i64)
}

/// The 3x3 neighborhood (clipped to the image) around the predicted pixel in
/// the rotated view, in row-major order.
pub fn trajectory_window(
    x: usize,
    y: usize,
    delta_deg: f64,
    width: usize,
    height: usize,
) -> Vec<(usize, usize)> {
    let (cx, cy) = window_center(x, y, delta_deg, width);
    neighborhood(cx, cy, width, height)
}

/// Clipped 3x3 block around `(cx, cy)`, row-major.
pub fn neighborhood(cx: i64, cy: i64, width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (c, r) = (cx + dx, cy + dy);
            if c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height {
                out.push((c as usize, r as usize));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_azimuth_examples() {
        let ring = ViewRing::new(12, 32, 32).unwrap();
        assert_eq!(ring.delta_azimuth(0, 1).unwrap(), 30.0);
        assert_eq!(ring.delta_azimuth(11, 0).unwrap(), 30.0);
        assert_eq!(ring.delta_azimuth(0, 6).unwrap(), 180.0);
        assert_eq!(ring.delta_azimuth(1, 0).unwrap(), -30.0);
        assert!(matches!(
            ring.delta_azimuth(0, 12),
            Err(Error::ViewIndex { index: 12, len: 12 })
        ));
    }

    #[test]
    fn rotated_ring_keeps_adjacent_deltas() {
        let ring = ViewRing::new(12, 8, 8).unwrap();
        let rot = ring.rotated(5);
        for i in 0..12 {
            assert_eq!(rot.delta_azimuth(i, rot.next(i)).unwrap(), 30.0);
        }
    }

    #[test]
    fn projection_examples() {
        for a in [0.0, 17.0, -90.0, 180.0] {
            assert_eq!(project_rotated_x(16.0, a, 0.0, 32), 16.0);
            assert_eq!(project_rotated_x_simplified(16.0, a, 32), 16.0);
        }
        assert_eq!(project_rotated_x(7.25, 0.0, 0.0, 32), 7.25);
        assert_eq!(project_rotated_x_simplified(7.25, 0.0, 32), 7.25);

        let expect3 = 8.0 * 3f64.sqrt() / 2.0 + 16.0 - 1.0;
        assert!((project_rotated_x(24.0, 30.0, 2.0, 32) - expect3).abs() < 1e-12);
        assert!((project_rotated_x(24.0, 30.0, 2.0, 32) - 21.928_203_230_275_51).abs() < 1e-12);
        assert!((project_rotated_x_simplified(24.0, 30.0, 32) - 22.928_203_230_275_51).abs() < 1e-12);
    }

    #[test]
    fn window_examples() {
        let w = trajectory_window(5, 5, 0.0, 32, 32);
        assert_eq!(w.len(), 9);
        assert!(w.contains(&(4, 4)) && w.contains(&(6, 6)));

        let corner = trajectory_window(0, 0, 0.0, 32, 32);
        assert_eq!(corner, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);

        let w = trajectory_window(24, 7, 30.0, 32, 32);
        let cols: Vec<usize> = w.iter().map(|p| p.0).take(3).collect();
        let rows: Vec<usize> = w.iter().map(|p| p.1).step_by(3).collect();
        assert_eq!(cols, vec![22, 23, 24]);
        assert_eq!(rows, vec![6, 7, 8]);
    }

    proptest! {
        #[test]
        fn eq3_reduces_to_eq4_at_zero_depth(x in -100.0f64..100.0, a in -360.0f64..360.0, w in 1usize..128) {
            prop_assert_eq!(project_rotated_x(x, a, 0.0, w), project_rotated_x_simplified(x, a, w));
        }

        #[test]
        fn depth_shift_is_d_sin(x in 0.0f64..64.0, a in -180.0f64..180.0, d in -20.0f64..20.0) {
            let diff = project_rotated_x(x, a, d, 64) - project_rotated_x_simplified(x, a, 64);
            prop_assert!((diff.abs() - (d * a.to_radians().sin()).abs()).abs() < 1e-12);
        }

        #[test]
        fn window_size_bounds(x in 0usize..32, y in 0usize..32, a in -180.0f64..180.0) {
            let w = trajectory_window(x, y, a, 32, 32);
            prop_assert!((4..=9).contains(&w.len()));
        }

        #[test]
        fn window_mirror_symmetry(x in 0usize..32, y in 0usize..32, a in -180.0f64..180.0) {
            let width = 32;
            let xc = project_rotated_x_simplified(x as f64 + 0.5, a, width) - 0.5;
            // skip rounding ties
            prop_assume!((xc.fract().abs() - 0.5).abs() > 1e-9);
            let w1 = trajectory_window(x, y, a, width, 32);
            let w2 = trajectory_window(width - 1 - x, y, -a, width, 32);
            let mut mirrored: Vec<(usize, usize)> = w2.iter().map(|&(c, r)| (width - 1 - c, r)).collect();
            mirrored.sort_by_key(|&(c, r)| (r, c));
            prop_assert_eq!(w1, mirrored);
        }
    }
}
