use image::RgbImage;
use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::color::rgb_to_pixel_feature;
use crate::raster::Mask;
use crate::{Error, Result};

const RIDGE: f64 = 1e-6;
const MIN_PLANT_PIXELS: usize = 7;

/// Full-covariance Gaussian over `[H, S, u, v, a, b]` plus the
/// log-likelihood threshold separating plant from background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PixelModelParams", into = "PixelModelParams")]
pub struct PixelModel {
    mean: Vector6<f64>,
    covariance: Matrix6<f64>,
    log_threshold: f64,
    // Inverse Cholesky factor and log-normalizer, derived from `covariance`.
    l_inv: Matrix6<f64>,
    log_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PixelModelParams {
    mean: [f64; 6],
    covariance: [[f64; 6]; 6],
    log_threshold: f64,
}

impl TryFrom<PixelModelParams> for PixelModel {
    type Error = Error;

    fn try_from(p: PixelModelParams) -> Result<Self> {
        let cov = Matrix6::from_fn(|i, j| p.covariance[i][j]);
        PixelModel::new(Vector6::from(p.mean), cov, p.log_threshold)
    }
}

impl From<PixelModel> for PixelModelParams {
    fn from(m: PixelModel) -> Self {
        let mut covariance = [[0.0; 6]; 6];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m.covariance[(i, j)];
            }
        }
        Self {
            mean: m.mean.into(),
            covariance,
            log_threshold: m.log_threshold,
        }
    }
}

impl PixelModel {
    pub fn new(mean: Vector6<f64>, covariance: Matrix6<f64>, log_threshold: f64) -> Result<Self> {
        if !log_threshold.is_finite() {
            return Err(Error::PixelModel("threshold must be finite".into()));
        }
        let chol = covariance
            .cholesky()
            .ok_or_else(|| Error::PixelModel("covariance is not positive definite".into()))?;
        let l = chol.l();
        let l_inv = l
            .try_inverse()
            .ok_or_else(|| Error::PixelModel("singular Cholesky factor".into()))?;
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (log_det + 6.0 * (2.0 * std::f64::consts::PI).ln());
        if !log_norm.is_finite() {
            return Err(Error::PixelModel("degenerate covariance".into()));
        }
        Ok(Self {
            mean,
            covariance,
            log_threshold,
            l_inv,
            log_norm,
        })
    }

    pub fn mean(&self) -> &Vector6<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    pub fn with_threshold(&self, log_threshold: f64) -> Result<Self> {
        Self::new(self.mean, self.covariance, log_threshold)
    }

    pub fn log_likelihood(&self, feature: &[f64; 6]) -> f64 {
        let d = Vector6::from(*feature) - self.mean;
        let y = self.l_inv * d;
        self.log_norm - 0.5 * y.norm_squared()
    }

    pub fn log_likelihood_rgb(&self, rgb: [u8; 3]) -> f64 {
        self.log_likelihood(&rgb_to_pixel_feature(rgb[0], rgb[1], rgb[2]).to_array())
    }

    /// Per-pixel log-likelihood map, row-major.
    pub fn log_likelihood_map(&self, image: &RgbImage) -> Vec<f64> {
        image.pixels().map(|p| self.log_likelihood_rgb(p.0)).collect()
    }

    /// Pixels whose log-likelihood reaches the threshold.
    pub fn threshold(&self, image: &RgbImage) -> Mask {
        let map = self.log_likelihood_map(image);
        let w = image.width() as usize;
        Mask::from_fn(image.width(), image.height(), |x, y| {
            map[(y as usize) * w + x as usize] >= self.log_threshold
        })
    }
}

/// Threshold candidates: `points` values evenly spaced between two
/// percentiles of the training log-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGrid {
    pub points: usize,
    pub low_percentile: f64,
    pub high_percentile: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            points: 200,
            low_percentile: 1.0,
            high_percentile: 99.0,
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Per-pixel precision/recall F1 of `predicted` against `truth`.
pub fn pixel_f1(predicted: &Mask, truth: &Mask) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for y in 0..truth.height() {
        for x in 0..truth.width() {
            match (predicted.get(x, y), truth.get(x, y)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    f1(tp, fp, fn_)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Fits the plant-pixel Gaussian on annotated images and picks the grid
/// threshold with the best per-pixel F1 on the same images (lowest
/// threshold on ties).
pub fn train_pixel_model(examples: &[(RgbImage, Mask)], grid: ThresholdGrid) -> Result<PixelModel> {
    if examples.is_empty() {
        return Err(Error::PixelModel("no training images".into()));
    }
    if grid.points == 0 {
        return Err(Error::PixelModel("empty threshold grid".into()));
    }
    let mut plant: Vec<[f64; 6]> = Vec::new();
    for (img, mask) in examples {
        if (img.width(), img.height()) != (mask.width(), mask.height()) {
            return Err(Error::PixelModel("image and mask sizes differ".into()));
        }
        for (x, y) in mask.pixels() {
            let p = img.get_pixel(x, y).0;
            plant.push(rgb_to_pixel_feature(p[0], p[1], p[2]).to_array());
        }
    }
    if plant.len() < MIN_PLANT_PIXELS {
        return Err(Error::PixelModel(format!(
            "need at least {MIN_PLANT_PIXELS} plant pixels, got {}",
            plant.len()
        )));
    }
    // Moments are accumulated in a canonical order so the fit does not
    // depend on pixel order, bit for bit.
    plant.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = plant.len() as f64;
    let mean = plant
        .iter()
        .fold(Vector6::zeros(), |acc, f| acc + Vector6::from(*f))
        / n;
    let mut cov = plant.iter().fold(Matrix6::zeros(), |acc, f| {
        let d = Vector6::from(*f) - mean;
        acc + d * d.transpose()
    }) / n;
    for i in 0..6 {
        cov[(i, i)] += RIDGE;
    }
    let model = PixelModel::new(mean, cov, 0.0)
        .map_err(|_| Error::PixelModel("plant pixels are rank deficient".into()))?;

    let mut plant_ll = Vec::new();
    let mut soil_ll = Vec::new();
    for (img, mask) in examples {
        for (x, y, p) in img.enumerate_pixels() {
            let ll = model.log_likelihood_rgb(p.0);
            if mask.get(x, y) {
                plant_ll.push(ll);
            } else {
                soil_ll.push(ll);
            }
        }
    }
    let mut all: Vec<f64> = plant_ll.iter().chain(&soil_ll).copied().collect();
    all.sort_by(f64::total_cmp);
    plant_ll.sort_by(f64::total_cmp);
    soil_ll.sort_by(f64::total_cmp);
    let lo = percentile(&all, grid.low_percentile);
    let hi = percentile(&all, grid.high_percentile);
    let at_or_above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&v| v < t);

    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..grid.points {
        let t = if grid.points == 1 {
            lo
        } else if i + 1 == grid.points {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (grid.points - 1) as f64
        };
        let tp = at_or_above(&plant_ll, t);
        let fp = at_or_above(&soil_ll, t);
        let score = f1(tp, fp, plant_ll.len() - tp);
        if score > best.1 {
            best = (t, score);
        }
    }
    model.with_threshold(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn two_tone(w: u32, h: u32) -> (RgbImage, Mask) {
        let mask = Mask::from_fn(w, h, |x, y| x > 4 && x < 15 && y > 4 && y < 15);
        let img = RgbImage::from_fn(w, h, |x, y| {
            if mask.get(x, y) {
                Rgb([40, 160, 40])
            } else if (x + y) % 2 == 0 {
                Rgb([120, 90, 60])
            } else {
                Rgb([110, 80, 50])
            }
        });
        (img, mask)
    }

    #[test]
    fn single_color_plants_are_separable() {
        let ex = two_tone(20, 20);
        let model = train_pixel_model(std::slice::from_ref(&ex), ThresholdGrid::default()).unwrap();
        assert_eq!(pixel_f1(&model.threshold(&ex.0), &ex.1), 1.0);
    }

    #[test]
    fn pixel_order_does_not_matter() {
        let (img, mask) = two_tone(20, 20);
        // Same pixels, transposed layout.
        let t_img = RgbImage::from_fn(20, 20, |x, y| *img.get_pixel(y, x));
        let t_mask = Mask::from_fn(20, 20, |x, y| mask.get(y, x));
        let a = train_pixel_model(&[(img, mask)], ThresholdGrid::default()).unwrap();
        let b = train_pixel_model(&[(t_img, t_mask)], ThresholdGrid::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_plant_pixels() {
        let img = RgbImage::from_pixel(4, 4, Rgb([10, 200, 10]));
        let mask = Mask::from_fn(4, 4, |x, y| x == 0 && y < 3);
        assert!(matches!(
            train_pixel_model(&[(img, mask)], ThresholdGrid::default()),
            Err(Error::PixelModel(_))
        ));
    }

    #[test]
    fn rejects_non_pd_covariance() {
        assert!(PixelModel::new(Vector6::zeros(), Matrix6::zeros(), 0.0).is_err());
        assert!(PixelModel::new(Vector6::zeros(), Matrix6::identity(), f64::NAN).is_err());
    }
}
