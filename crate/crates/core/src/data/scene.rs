use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BOUND: f64 = 0.5;

pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [0.85, 0.15, 0.15]),
    ("green", [0.15, 0.7, 0.2]),
    ("blue", [0.15, 0.3, 0.85]),
    ("yellow", [0.9, 0.8, 0.1]),
    ("purple", [0.55, 0.2, 0.7]),
    ("orange", [0.95, 0.5, 0.1]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Box { center, half } => (
                [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
                [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
            ),
            Shape::Sphere { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
        }
    }

    fn noun(&self) -> &'static str {
        match self {
            Shape::Box { .. } => "box",
            Shape::Sphere { .. } => "sphere",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color_name: String,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl SceneSpec {
    /// Whether every primitive lies inside `[-0.5, 0.5]^3`.
    pub fn within_bounds(&self) -> bool {
        self.primitives.iter().all(|p| {
            let (lo, hi) = p.shape.bounds();
            lo.iter().all(|&v| v >= -BOUND) && hi.iter().all(|&v| v <= BOUND)
        })
    }

    /// Caption such as `"a red box and a blue sphere"`.
    pub fn prompt(&self) -> String {
        let parts: Vec<String> = self
            .primitives
            .iter()
            .map(|p| format!("a {} {}", p.color_name, p.shape.noun()))
            .collect();
        match parts.len() {
            0 => "an empty scene".into(),
            1 => parts[0].clone(),
            n => format!("{} and {}", parts[..n - 1].join(", "), parts[n - 1]),
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// 1 to 4 seeded boxes and spheres inside the unit box, on a white background.
pub fn make_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=4);
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let (color_name, color) = PALETTE[rng.random_range(0..PALETTE.len())];
        let shape = if rng.random_bool(0.5) {
            let half = [
                round6(rng.random_range(0.08..0.22)),
                round6(rng.random_range(0.08..0.22)),
                round6(rng.random_range(0.08..0.22)),
            ];
            let center = [0, 1, 2].map(|i| round6(rng.random_range(-BOUND + half[i]..=BOUND - half[i])));
            Shape::Box { center, half }
        } else {
            let radius = round6(rng.random_range(0.1..0.25));
            let center = [0, 1, 2].map(|_| round6(rng.random_range(-BOUND + radius..=BOUND - radius)));
            Shape::Sphere { center, radius }
        };
        primitives.push(Primitive {
            shape,
            color_name: color_name.to_string(),
            color,
        });
    }
    SceneSpec {
        seed,
        primitives,
        background: [1.0, 1.0, 1.0],
    }
}
