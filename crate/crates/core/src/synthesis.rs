//! Seeded synthetic fields: labeled feature datasets with multi-view plant
//! structure, and rendered field images with exact plant masks.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ClassId, Dataset, Pose, Sample};
use crate::raster::Mask;
use crate::{Error, Result};

/// One generating class: plant centers are drawn from an isotropic
/// Gaussian around `mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub mean: Vec<f64>,
    pub stddev: f64,
    pub n_plants: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewCount {
    Fixed(usize),
    /// Uniform over the inclusive range.
    Range(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ClassSpec>,
    pub views_per_plant: ViewCount,
    /// Standard deviation of the per-view jitter around the plant center.
    pub view_jitter: f64,
    pub seed: u64,
    /// Field width and length in meters.
    pub field_extent: (f64, f64),
}

impl SynthSpec {
    /// Three well-separated 2-D blobs of 50 single-view plants each, with
    /// centers `30 * sigma` apart.
    pub fn three_blobs(sigma: f64, seed: u64) -> Self {
        let s = 30.0 * sigma;
        let h = s * 3f64.sqrt() / 2.0;
        Self {
            classes: [[0.0, 0.0], [s, 0.0], [s / 2.0, h]]
                .iter()
                .map(|m| ClassSpec {
                    mean: m.to_vec(),
                    stddev: sigma,
                    n_plants: 50,
                })
                .collect(),
            views_per_plant: ViewCount::Fixed(1),
            view_jitter: 0.0,
            seed,
            field_extent: (10.0, 10.0),
        }
    }

    /// Four classes with the plant counts of the reference field survey
    /// (33, 27, 49, 3 plants, 2 to 5 views each). Classes 0 and 1 overlap.
    pub fn field_survey(dim: usize, spread: f64, jitter: f64, seed: u64) -> Self {
        let axis = |j: usize, scale: f64| -> Vec<f64> {
            (0..dim).map(|i| if i == j { scale } else { 0.0 }).collect()
        };
        let overlap = axis(0, 2.0 * spread)
            .iter()
            .zip(axis(1, 1.0 * spread))
            .map(|(a, b)| a + b)
            .collect();
        Self {
            classes: vec![
                ClassSpec { mean: axis(0, 2.0 * spread), stddev: spread, n_plants: 33 },
                ClassSpec { mean: overlap, stddev: spread, n_plants: 27 },
                ClassSpec { mean: axis(2, 12.0 * spread), stddev: spread, n_plants: 49 },
                ClassSpec { mean: axis(3 % dim, -12.0 * spread), stddev: spread, n_plants: 3 },
            ],
            views_per_plant: ViewCount::Range(2, 5),
            view_jitter: jitter,
            seed,
            field_extent: (20.0, 12.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidConfig("need at least one class of dimension >= 1".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.mean.len() });
            }
            if c.n_plants == 0 {
                return Err(Error::InvalidConfig(format!("class {i} has no plants")));
            }
            if !(c.stddev >= 0.0) {
                return Err(Error::InvalidConfig(format!("class {i} stddev must be >= 0")));
            }
        }
        if !(self.view_jitter >= 0.0) {
            return Err(Error::InvalidConfig("view_jitter must be >= 0".into()));
        }
        match self.views_per_plant {
            ViewCount::Fixed(0) => Err(Error::InvalidConfig("views_per_plant must be >= 1".into())),
            ViewCount::Range(lo, hi) if lo == 0 || lo > hi => {
                Err(Error::InvalidConfig(format!("bad view range {lo}..={hi}")))
            }
            _ => Ok(()),
        }
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated stddev")
}

/// Generates a labeled dataset. Sample ids count up from 0, plant groups
/// are plant indices, labels are class indices.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_plants: usize = spec.classes.iter().map(|c| c.n_plants).sum();

    // Plants interleave across planter rows; slot order is shuffled so that
    // classes mix spatially.
    let rows = (n_plants as f64).sqrt().ceil() as usize;
    let per_row = n_plants.div_ceil(rows);
    let (fw, fl) = spec.field_extent;
    let (dx, dy) = (fw / per_row as f64, fl / rows as f64);
    let mut slots: Vec<usize> = (0..n_plants).collect();
    slots.shuffle(&mut rng);

    let jitter = normal(spec.view_jitter);
    let pose_jitter = normal(0.02);
    let mut samples = Vec::new();
    let mut plant = 0u64;
    for (class, c) in spec.classes.iter().enumerate() {
        let spread = normal(c.stddev);
        for _ in 0..c.n_plants {
            let center: Vec<f64> = c.mean.iter().map(|m| m + spread.sample(&mut rng)).collect();
            let slot = slots[plant as usize];
            let base = Pose {
                x: ((slot % per_row) as f64 + 0.5) * dx,
                y: ((slot / per_row) as f64 + 0.5) * dy,
            };
            let views = match spec.views_per_plant {
                ViewCount::Fixed(v) => v,
                ViewCount::Range(lo, hi) => rng.random_range(lo..=hi),
            };
            for _ in 0..views {
                let features = center.iter().map(|m| m + jitter.sample(&mut rng)).collect();
                let pose = Pose {
                    x: base.x + pose_jitter.sample(&mut rng),
                    y: base.y + pose_jitter.sample(&mut rng),
                };
                samples.push(Sample {
                    id: samples.len() as u64,
                    plant_group: plant,
                    features,
                    label: Some(class as ClassId),
                    pose: Some(pose),
                });
            }
            plant += 1;
        }
    }
    Dataset::new(samples)
}

/// Parameters for rendered synthetic field images.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldImageSpec {
    pub width: u32,
    pub height: u32,
    pub n_images: usize,
    pub plants_per_image: usize,
    /// Semi-axis range of the elliptical plants, in pixels.
    pub radius_range: (f64, f64),
    /// Per-channel Gaussian noise standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for FieldImageSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            n_images: 4,
            plants_per_image: 6,
            radius_range: (12.0, 30.0),
            noise_std: 8.0,
            seed: 0,
        }
    }
}

const SOIL: [f64; 3] = [120.0, 88.0, 58.0];
const LEAF: [f64; 3] = [62.0, 142.0, 48.0];

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (px, py) = (x - self.cx, y - self.cy);
        let u = px * self.cos + py * self.sin;
        let v = -px * self.sin + py * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Renders green elliptical plants on noisy brown soil. Returns each image
/// with its exact plant mask. Plants never overlap and keep a 4 px margin
/// from each other when space allows.
pub fn generate_field_images(spec: &FieldImageSpec) -> Vec<(RgbImage, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = normal(spec.noise_std.max(0.0));
    let (rmin, rmax) = spec.radius_range;
    (0..spec.n_images)
        .map(|_| {
            let mut plants: Vec<(Ellipse, [f64; 3])> = Vec::new();
            for _ in 0..spec.plants_per_image {
                for _attempt in 0..200 {
                    let a = rng.random_range(rmin..=rmax);
                    let b = rng.random_range(rmin.max(a * 0.5)..=a);
                    let margin = a + 2.0;
                    if 2.0 * margin >= spec.width.min(spec.height) as f64 {
                        break;
                    }
                    let cx = rng.random_range(margin..spec.width as f64 - margin);
                    let cy = rng.random_range(margin..spec.height as f64 - margin);
                    let free = plants.iter().all(|(e, _)| {
                        let d = ((e.cx - cx).powi(2) + (e.cy - cy).powi(2)).sqrt();
                        d > e.a + a + 4.0
                    });
                    if free {
                        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                        let tint: f64 = rng.random_range(-15.0..15.0);
                        let color = [LEAF[0] + tint * 0.5, LEAF[1] + tint, LEAF[2] + tint * 0.3];
                        plants.push((Ellipse { cx, cy, a, b, cos: theta.cos(), sin: theta.sin() }, color));
                        break;
                    }
                }
            }
            let mut img = RgbImage::new(spec.width, spec.height);
            let mut mask = Mask::new(spec.width, spec.height);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let plant = plants.iter().find(|(e, _)| e.contains(px, py));
                    let base = match plant {
                        Some((_, c)) => {
                            mask.set(x, y, true);
                            *c
                        }
                        None => SOIL,
                    };
                    let px = base.map(|c| (c + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
                    img.put_pixel(x, y, Rgb(px));
                }
            }
            (img, mask)
        })
        .collect()
}
