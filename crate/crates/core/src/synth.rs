//! Synthetic benchmark data: images of randomly placed colored convex shapes
//! on a contrasting background, with exact ground-truth partitions and
//! optional Gaussian noise. Deterministic for a fixed seed, so test suites
//! can regenerate the corpus instead of committing image files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forest::derive_seed;
use crate::pipeline::add_gaussian_noise;
use crate::segmentation::{connected_components, Image, Segmentation};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 30,
            width: 128,
            height: 128,
            min_shapes: 3,
            max_shapes: 6,
            noise_variance: 0.001,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthItem {
    pub name: String,
    pub image: Image,
    /// Exact partition: one region per visible shape fragment plus background.
    pub gt: Segmentation,
}

enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        angle: f64,
    },
    Rectangle {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        angle: f64,
    },
    Triangle {
        points: [(f64, f64); 3],
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, angle } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * angle.cos() + dy * angle.sin();
                let v = -dx * angle.sin() + dy * angle.cos();
                (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
            }
            Shape::Rectangle { cx, cy, a, b, angle } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * angle.cos() + dy * angle.sin();
                let v = -dx * angle.sin() + dy * angle.cos();
                u.abs() <= *a && v.abs() <= *b
            }
            Shape::Triangle { points } => {
                let sign = |p: (f64, f64), q: (f64, f64)| {
                    (x - q.0) * (p.1 - q.1) - (p.0 - q.0) * (y - q.1)
                };
                let d1 = sign(points[0], points[1]);
                let d2 = sign(points[1], points[2]);
                let d3 = sign(points[2], points[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Shape {
    let cx = rng.random_range(0.2 * w..0.8 * w);
    let cy = rng.random_range(0.2 * h..0.8 * h);
    let r = w.min(h);
    let a = rng.random_range(0.10 * r..0.28 * r);
    let b = rng.random_range(0.10 * r..0.28 * r);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    match rng.random_range(0..3) {
        0 => Shape::Ellipse { cx, cy, a, b, angle },
        1 => Shape::Rectangle { cx, cy, a, b, angle },
        _ => {
            let mut point = || {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let rr = rng.random_range(0.6..1.4) * a.max(b);
                (cx + rr * t.cos(), cy + rr * t.sin())
            };
            Shape::Triangle {
                points: [point(), point(), point()],
            }
        }
    }
}

/// Colors with pairwise RGB distance at least 0.3, found by rejection.
fn distinct_colors(rng: &mut ChaCha8Rng, count: usize) -> Vec<[f64; 3]> {
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(count);
    while colors.len() < count {
        let candidate = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        let ok = colors.iter().all(|c| {
            let d2: f64 = c
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= 0.3
        });
        if ok {
            colors.push(candidate);
        }
    }
    colors
}

pub fn generate(config: &SynthConfig) -> Vec<SynthItem> {
    (0..config.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
            let w = config.width;
            let h = config.height;
            let shape_count = rng.random_range(config.min_shapes..=config.max_shapes);
            let colors = distinct_colors(&mut rng, shape_count + 1);
            let shapes: Vec<Shape> = (0..shape_count)
                .map(|_| random_shape(&mut rng, w as f64, h as f64))
                .collect();

            let mut labels = vec![0u32; w * h];
            let mut samples = vec![0.0f64; w * h * 3];
            for y in 0..h {
                for x in 0..w {
                    let idx = y * w + x;
                    // Later shapes paint over earlier ones.
                    let mut owner = 0usize;
                    for (s, shape) in shapes.iter().enumerate() {
                        if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                            owner = s + 1;
                        }
                    }
                    labels[idx] = owner as u32;
                    samples[idx * 3..idx * 3 + 3].copy_from_slice(&colors[owner]);
                }
            }
            // Overpainting can split shapes and the background into several
            // connected fragments; the exact ground truth separates them.
            let gt = connected_components(w, h, &labels).expect("valid label map");
            let clean = Image::new(w, h, 3, samples).expect("valid samples");
            let image = add_gaussian_noise(
                &clean,
                config.noise_variance,
                derive_seed(config.seed, 1000 + i as u64),
            )
            .expect("non-negative variance");
            SynthItem {
                name: format!("synth{i:03}"),
                image,
                gt,
            }
        })
        .collect()
}
