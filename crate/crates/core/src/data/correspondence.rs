use crate::error::{Error, Result};

use super::render::{pixel_scale, CameraFrame, RenderedSet};

/// Occlusion tolerance on depth, in pixels.
pub const DEPTH_TOLERANCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// Target `(col, row)` in view `j`, or `None` when occluded or off-image.
    pub target: Option<(usize, usize)>,
    /// Continuous column and row of the reprojected surface point in view `j`.
    pub x: f64,
    pub y: f64,
    /// Source depth in pixels.
    pub depth: f64,
}

/// Per-pixel map from view `i` to view `j`; background source pixels are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    pub from: usize,
    pub to: usize,
    pub width: usize,
    pub height: usize,
    pub entries: Vec<Option<Match>>,
}

impl CorrespondenceMap {
    pub fn get(&self, col: usize, row: usize) -> Option<&Match> {
        self.entries[row * self.width + col].as_ref()
    }

    /// `((col, row), (col', row'))` for every visible correspondence.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), (usize, usize))> + '_ {
        self.entries.iter().enumerate().filter_map(move |(idx, m)| {
            let t = m.as_ref()?.target?;
            Some(((idx % self.width, idx / self.width), t))
        })
    }
}

/// Reprojects the surface point under each foreground pixel of view `i`
/// into view `j` and keeps it when view `j` sees that same surface.
pub fn ground_truth_correspondence(set: &RenderedSet, i: usize, j: usize) -> Result<CorrespondenceMap> {
    let f = set.views();
    for idx in [i, j] {
        if idx >= f {
            return Err(Error::ViewIndex { index: idx, len: f });
        }
    }
    let ring = &set.ring;
    let (h, w) = (ring.height, ring.width);
    let scale = pixel_scale(w);
    let fi = CameraFrame::new(ring.azimuths_deg[i], ring.elevation_deg);
    let fj = CameraFrame::new(ring.azimuths_deg[j], ring.elevation_deg);
    let mut entries = vec![None; h * w];
    for row in 0..h {
        for col in 0..w {
            if !set.is_foreground(i, row, col) {
                continue;
            }
            let depth = set.depth_at(i, row, col);
            if i == j {
                entries[row * w + col] = Some(Match {
                    target: Some((col, row)),
                    x: col as f64 + 0.5,
                    y: row as f64 + 0.5,
                    depth,
                });
                continue;
            }
            let u = (col as f64 + 0.5 - w as f64 / 2.0) / scale;
            let v = (h as f64 / 2.0 - (row as f64 + 0.5)) / scale;
            let p = fi.unproject(u, v, depth / scale);
            let (uj, vj, dj) = fj.project(p);
            let x = w as f64 / 2.0 + uj * scale;
            let y = h as f64 / 2.0 - vj * scale;
            let (cx, ry) = (x.floor(), y.floor());
            let target = (cx >= 0.0 && ry >= 0.0 && cx < w as f64 && ry < h as f64)
                .then(|| (cx as usize, ry as usize))
                .filter(|&(c, r)| {
                    set.is_foreground(j, r, c) && (set.depth_at(j, r, c) - dj * scale).abs() <= DEPTH_TOLERANCE
                });
            entries[row * w + col] = Some(Match { target, x, y, depth });
        }
    }
    Ok(CorrespondenceMap {
        from: i,
        to: j,
        width: w,
        height: h,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render::render_views;
    use crate::data::scene::make_scene;
    use crate::geometry::{project_rotated_x, ViewRing};

    fn set(seed: u64) -> RenderedSet {
        render_views(&make_scene(seed), &ViewRing::new(12, 32, 32).unwrap())
    }

    #[test]
    fn self_map_is_identity() {
        let s = set(1);
        let m = ground_truth_correspondence(&s, 4, 4).unwrap();
        for ((c, r), t) in m.pairs() {
            assert_eq!((c, r), t);
        }
        assert!(m.pairs().count() > 0);
    }

    #[test]
    fn matches_rotation_formula() {
        let (mut ok, mut total) = (0usize, 0usize);
        for seed in 0..5 {
            let s = set(seed);
            let m = ground_truth_correspondence(&s, 0, 1).unwrap();
            for row in 0..32 {
                for col in 0..32 {
                    let Some(e) = m.get(col, row) else { continue };
                    let xp = project_rotated_x(col as f64 + 0.5, 30.0, e.depth, 32);
                    assert!((xp - e.x).abs() < 1e-9);
                    assert!((e.y - (row as f64 + 0.5)).abs() < 1e-9);
                    if let Some((c, _)) = e.target {
                        total += 1;
                        ok += ((c as f64 + 0.5 - xp).abs() <= 1.0) as usize;
                    }
                }
            }
        }
        assert!(total > 0 && ok == total);
    }

    #[test]
    fn out_of_range_view() {
        assert!(matches!(
            ground_truth_correspondence(&set(0), 0, 12),
            Err(Error::ViewIndex { .. })
        ));
    }

    #[test]
    fn round_trip_returns_home() {
        let s = set(2);
        let fwd = ground_truth_correspondence(&s, 3, 4).unwrap();
        let bwd = ground_truth_correspondence(&s, 4, 3).unwrap();
        let (mut ok, mut n) = (0usize, 0usize);
        for ((c, r), (c2, r2)) in fwd.pairs() {
            if let Some((c3, r3)) = bwd.get(c2, r2).and_then(|m| m.target) {
                n += 1;
                ok += (c3.abs_diff(c) <= 1 && r3.abs_diff(r) <= 1) as usize;
            }
        }
        assert!(n > 0 && ok as f64 >= 0.99 * n as f64, "{ok}/{n}");
    }
}
