use crate::geometry::ViewRing;
use crate::par;
use crate::tensor::Tensor;

use super::scene::{SceneSpec, Shape};

/// Depth written for background pixels.
pub const BACKGROUND_DEPTH: f64 = -1e9;

/// World half-width visible across the image.
pub const HALF_EXTENT: f64 = 0.75;

/// Pixels per world unit for an image `width` pixels wide.
pub fn pixel_scale(width: usize) -> f64 {
    width as f64 / (2.0 * HALF_EXTENT)
}

/// Orthonormal frame of one camera: `right`, `up`, and `back` (unit vector
/// from the origin toward the camera).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub back: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl CameraFrame {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let (t, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let back = [t.sin() * e.cos(), e.sin(), t.cos() * e.cos()];
        let right = [t.cos(), 0.0, -t.sin()];
        Self {
            right,
            up: cross(back, right),
            back,
        }
    }

    /// Screen coordinates `(u, v, d)` of a world point, in world units.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        (dot(p, self.right), dot(p, self.up), dot(p, self.back))
    }

    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [0, 1, 2].map(|k| u * self.right[k] + v * self.up[k] + d * self.back[k])
    }
}

/// Rendered views: images `[f, 3, H, W]` in `[0, 1]`, depth `[f, H, W]` in
/// pixels (positive toward the camera, [`BACKGROUND_DEPTH`] off-object).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSet {
    pub images: Tensor,
    pub depth: Tensor,
    pub ring: ViewRing,
    pub seed: u64,
}

impl RenderedSet {
    pub fn views(&self) -> usize {
        self.ring.views()
    }

    pub fn is_foreground(&self, view: usize, row: usize, col: usize) -> bool {
        let (h, w) = (self.ring.height, self.ring.width);
        self.depth.data()[(view * h + row) * w + col] > BACKGROUND_DEPTH
    }

    pub fn depth_at(&self, view: usize, row: usize, col: usize) -> f64 {
        let (h, w) = (self.ring.height, self.ring.width);
        self.depth.data()[(view * h + row) * w + col]
    }

    pub fn rgb(&self, view: usize, row: usize, col: usize) -> [f64; 3] {
        let (h, w) = (self.ring.height, self.ring.width);
        let d = self.images.data();
        [0, 1, 2].map(|c| d[((view * 3 + c) * h + row) * w + col])
    }
}

/// Ray parameter of the first hit along `o + t * dir`, if any.
fn intersect(shape: &Shape, o: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    match *shape {
        Shape::Box { center, half } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..3 {
                let (lo, hi) = (center[k] - half[k], center[k] + half[k]);
                if dir[k].abs() < 1e-15 {
                    if o[k] < lo || o[k] > hi {
                        return None;
                    }
                    continue;
                }
                let (a, b) = ((lo - o[k]) / dir[k], (hi - o[k]) / dir[k]);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
            (t0 <= t1 && t0 > 0.0).then_some(t0)
        }
        Shape::Sphere { center, radius } => {
            let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
            let b = dot(oc, dir);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > 0.0).then_some(t)
        }
    }
}

/// One view: `(rgb [3, H, W], depth [H, W])`.
fn render_one(scene: &SceneSpec, frame: &CameraFrame, ring: &ViewRing) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (ring.height, ring.width);
    let scale = pixel_scale(w);
    let dir = frame.back.map(|v| -v);
    let mut rgb = vec![0.0; 3 * h * w];
    let mut depth = vec![BACKGROUND_DEPTH; h * w];
    for row in 0..h {
        let v = (h as f64 / 2.0 - (row as f64 + 0.5)) / scale;
        for col in 0..w {
            let u = (col as f64 + 0.5 - w as f64 / 2.0) / scale;
            let origin = frame.unproject(u, v, ring.distance);
            let mut best: Option<(f64, usize)> = None;
            for (k, prim) in scene.primitives.iter().enumerate() {
                if let Some(t) = intersect(&prim.shape, origin, dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, k));
                    }
                }
            }
            let idx = row * w + col;
            let color = match best {
                Some((t, k)) => {
                    depth[idx] = (ring.distance - t) * scale;
                    let py = origin[1] + t * dir[1];
                    let tint = 1.0 - 0.3 * py;
                    let base = scene.primitives[k].color;
                    [0, 1, 2].map(|c| {
                        let bg = scene.background[c];
                        (bg - (bg - base[c]) * tint).clamp(0.0, 1.0)
                    })
                }
                None => scene.background,
            };
            for c in 0..3 {
                rgb[c * h * w + idx] = color[c];
            }
        }
    }
    (rgb, depth)
}

/// Orthographic ray-cast of every ring view; the nearest surface wins.
pub fn render_views(scene: &SceneSpec, ring: &ViewRing) -> RenderedSet {
    let (f, h, w) = (ring.views(), ring.height, ring.width);
    let views = par::map_indexed(f, |i| {
        let frame = CameraFrame::new(ring.azimuths_deg[i], ring.elevation_deg);
        render_one(scene, &frame, ring)
    });
    let mut images = Vec::with_capacity(f * 3 * h * w);
    let mut depth = Vec::with_capacity(f * h * w);
    for (rgb, d) in views {
        images.extend(rgb);
        depth.extend(d);
    }
    RenderedSet {
        images: Tensor::new(vec![f, 3, h, w], images).expect("image shape"),
        depth: Tensor::new(vec![f, h, w], depth).expect("depth shape"),
        ring: ring.clone(),
        seed: scene.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{make_scene, Primitive};

    fn single(shape: Shape, color: [f64; 3]) -> SceneSpec {
        SceneSpec {
            seed: 0,
            primitives: vec![Primitive {
                shape,
                color_name: "x".into(),
                color,
            }],
            background: [1.0; 3],
        }
    }

    #[test]
    fn frame_is_orthonormal_and_right_handed() {
        for (az, el) in [(0.0, 0.0), (30.0, 0.0), (217.0, 20.0)] {
            let fr = CameraFrame::new(az, el);
            for (a, b) in [(fr.right, fr.up), (fr.up, fr.back), (fr.right, fr.back)] {
                assert!(dot(a, b).abs() < 1e-14);
            }
            for a in [fr.right, fr.up, fr.back] {
                assert!((dot(a, a) - 1.0).abs() < 1e-14);
            }
        }
        let fr = CameraFrame::new(0.0, 0.0);
        assert_eq!(fr.up, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn background_colored_primitive_is_invisible() {
        let s = single(
            Shape::Box {
                center: [0.0; 3],
                half: [0.2; 3],
            },
            [1.0; 3],
        );
        let set = render_views(&s, &ViewRing::new(12, 32, 32).unwrap());
        assert!(set.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn centered_sphere_silhouettes_match() {
        let s = single(
            Shape::Sphere {
                center: [0.0; 3],
                radius: 0.3,
            },
            [0.2, 0.4, 0.6],
        );
        let set = render_views(&s, &ViewRing::new(12, 32, 32).unwrap());
        for v in 1..12 {
            for r in 0..32 {
                for c in 0..32 {
                    assert_eq!(set.is_foreground(v, r, c), set.is_foreground(0, r, c));
                }
            }
        }
    }

    #[test]
    fn offset_box_follows_circular_orbit() {
        let (r, size) = (0.3, 0.1);
        let s = single(
            Shape::Box {
                center: [r, 0.0, 0.0],
                half: [size; 3],
            },
            [0.0; 3],
        );
        let ring = ViewRing::new(12, 32, 32).unwrap();
        let set = render_views(&s, &ring);
        let scale = pixel_scale(32);
        for v in 0..12 {
            let (mut sum, mut n) = (0.0, 0.0);
            for row in 0..32 {
                for col in 0..32 {
                    if set.is_foreground(v, row, col) {
                        sum += col as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            let theta = ring.azimuths_deg[v].to_radians();
            let expect = 16.0 + r * theta.cos() * scale;
            assert!((sum / n - expect).abs() <= 1.0, "view {v}: {} vs {expect}", sum / n);
        }
    }

    #[test]
    fn depth_flips_sign_at_opposite_azimuth() {
        let s = make_scene(3);
        let ring = ViewRing::new(2, 32, 32).unwrap();
        let set = render_views(&s, &ring);
        let fr = [CameraFrame::new(0.0, 0.0), CameraFrame::new(180.0, 0.0)];
        let p = [0.2, -0.1, 0.3];
        assert!((fr[0].project(p).2 + fr[1].project(p).2).abs() < 1e-15);
        assert!(set.depth.data().iter().all(|d| d.is_finite()));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = make_scene(11);
        let ring = ViewRing::new(12, 32, 32).unwrap();
        assert_eq!(render_views(&s, &ring), render_views(&s, &ring));
    }
}
