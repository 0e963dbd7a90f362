//! Hand-crafted plant descriptors (shape plus excess-green statistics) and
//! assembly of normalized feature matrices.

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset, PlantGroup, Pose, Sample, SampleId};
use crate::raster::Mask;
use crate::segmentation::{contour_length, DetectionRegion};
use crate::{Error, Result};

/// Excess-green intensities over a mask, rescaled to `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExgRaster {
    mask: Mask,
    values: Vec<f64>,
}

impl ExgRaster {
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        self.mask
            .get(x, y)
            .then(|| self.values[(y * self.mask.width() + x) as usize])
    }

    /// Masked values in raster order.
    pub fn values(&self) -> Vec<f64> {
        self.mask.pixels().map(|(x, y)| self.values[(y * self.mask.width() + x) as usize]).collect()
    }
}

/// `2g − r − b` on chromaticity-normalized RGB; black pixels give 0.
pub fn raw_excess_green(rgb: [u8; 3]) -> f64 {
    let sum = rgb.iter().map(|&c| c as f64).sum::<f64>();
    if sum == 0.0 {
        return 0.0;
    }
    let [r, g, b] = rgb.map(|c| c as f64 / sum);
    2.0 * g - r - b
}

fn rescale(raw: &mut [f64]) {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in raw.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range * 255.0 } else { 0.0 };
    }
}

/// Excess green over `mask`, which must match the image size.
pub fn excess_green(image: &RgbImage, mask: &Mask) -> Result<ExgRaster> {
    if image.dimensions() != (mask.width(), mask.height()) {
        return Err(Error::InvalidConfig(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let pixels: Vec<(u32, u32)> = mask.pixels().collect();
    let mut raw: Vec<f64> = pixels.iter().map(|&(x, y)| raw_excess_green(image.get_pixel(x, y).0)).collect();
    rescale(&mut raw);
    let mut values = vec![0.0; (mask.width() * mask.height()) as usize];
    for (&(x, y), v) in pixels.iter().zip(raw) {
        values[(y * mask.width() + x) as usize] = v;
    }
    Ok(ExgRaster { mask: mask.clone(), values })
}

/// Shape and reflectance descriptor of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcfVector {
    pub perimeter: f64,
    pub area: f64,
    pub skeleton_length: f64,
    pub compactness: f64,
    pub convexity: f64,
    pub skeleton_per_perimeter: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub kurtosis: f64,
    pub skewness: f64,
}

impl HcfVector {
    pub const NAMES: [&'static str; 14] = [
        "perimeter",
        "area",
        "skeleton_length",
        "compactness",
        "convexity",
        "skeleton_per_perimeter",
        "min",
        "max",
        "range",
        "mean",
        "median",
        "stddev",
        "kurtosis",
        "skewness",
    ];

    /// Fields that grow with image scale.
    pub const SCALE_DEPENDENT: [&'static str; 3] = ["perimeter", "area", "skeleton_length"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.perimeter,
            self.area,
            self.skeleton_length,
            self.compactness,
            self.convexity,
            self.skeleton_per_perimeter,
            self.min,
            self.max,
            self.range,
            self.mean,
            self.median,
            self.stddev,
            self.kurtosis,
            self.skewness,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 14 {
            return Err(Error::DimensionMismatch { expected: 14, got: v.len() });
        }
        Ok(Self {
            perimeter: v[0],
            area: v[1],
            skeleton_length: v[2],
            compactness: v[3],
            convexity: v[4],
            skeleton_per_perimeter: v[5],
            min: v[6],
            max: v[7],
            range: v[8],
            mean: v[9],
            median: v[10],
            stddev: v[11],
            kurtosis: v[12],
            skewness: v[13],
        })
    }

    /// The 11 entries left after dropping the scale-dependent ones.
    pub fn scale_robust(&self) -> Vec<f64> {
        self.to_vec()[3..].to_vec()
    }
}

/// Summary statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    /// Excess kurtosis; 0 for zero variance.
    pub kurtosis: f64,
    /// 0 for zero variance.
    pub skewness: f64,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(Moments {
        min: sorted[0],
        max: sorted[m - 1],
        mean,
        median,
        stddev: m2.sqrt(),
        kurtosis,
        skewness,
    })
}

/// Zhang–Suen thinning; keeps 8-connectivity of the foreground.
pub fn skeletonize(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut cur = mask.clone();
    let at = |m: &Mask, x: i64, y: i64| m.get_signed(x, y) as u8;
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !cur.get(x as u32, y as u32) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&cur, x, y - 1),
                        at(&cur, x + 1, y - 1),
                        at(&cur, x + 1, y),
                        at(&cur, x + 1, y + 1),
                        at(&cur, x, y + 1),
                        at(&cur, x - 1, y + 1),
                        at(&cur, x - 1, y),
                        at(&cur, x - 1, y - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    let keep = if pass == 0 {
                        p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0
                    } else {
                        p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0
                    };
                    if (2..=6).contains(&b) && a == 1 && keep {
                        remove.push((x as u32, y as u32));
                    }
                }
            }
            changed |= !remove.is_empty();
            for (x, y) in remove {
                cur.set(x, y, false);
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Area of the convex hull of all pixel squares (corner lattice points).
pub fn convex_hull_area(mask: &Mask) -> f64 {
    let mut pts: Vec<(i64, i64)> = Vec::new();
    for y in 0..mask.height() {
        let row: Vec<u32> = (0..mask.width()).filter(|&x| mask.get(x, y)).collect();
        if let (Some(&lo), Some(&hi)) = (row.first(), row.last()) {
            let (lo, hi, y) = (lo as i64, hi as i64 + 1, y as i64);
            pts.extend([(lo, y), (lo, y + 1), (hi, y), (hi, y + 1)]);
        }
    }
    let hull = monotone_chain(pts);
    let twice: i64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

fn monotone_chain(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum region size accepted by [`extract_hcf`].
pub const MIN_REGION_PX: usize = 4;

pub fn extract_hcf(region: &DetectionRegion, image: &RgbImage) -> Result<HcfVector> {
    let area = region.mask.count();
    if area < MIN_REGION_PX {
        return Err(Error::DegenerateRegion(area));
    }
    let perimeter = contour_length(&region.contour);
    if perimeter <= 0.0 {
        return Err(Error::DegenerateRegion(area));
    }
    let (ox, oy) = (region.bbox.x0, region.bbox.y0);
    if ox + region.mask.width() > image.width() || oy + region.mask.height() > image.height() {
        return Err(Error::InvalidConfig("region lies outside the image".into()));
    }
    let mut exg: Vec<f64> = region
        .mask
        .pixels()
        .map(|(x, y)| raw_excess_green(image.get_pixel(x + ox, y + oy).0))
        .collect();
    rescale(&mut exg);
    let stats = moments(&exg)?;

    let area_f = area as f64;
    let skeleton_length = skeletonize(&region.mask).count() as f64;
    Ok(HcfVector {
        perimeter,
        area: area_f,
        skeleton_length,
        compactness: 4.0 * std::f64::consts::PI * area_f / (perimeter * perimeter),
        convexity: area_f / convex_hull_area(&region.mask),
        skeleton_per_perimeter: skeleton_length / perimeter,
        min: stats.min,
        max: stats.max,
        range: stats.max - stats.min,
        mean: stats.mean,
        median: stats.median,
        stddev: stats.stddev,
        kurtosis: stats.kurtosis,
        skewness: stats.skewness,
    })
}

/// Which feature blocks make up a sample vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSetSpec {
    Hcf,
    HcfScaleRobust,
    /// Opaque vectors loaded from the named source.
    External(String),
    Concat(Vec<FeatureSetSpec>),
}

impl FeatureSetSpec {
    pub fn validate(&self) -> Result<()> {
        if let Self::Concat(parts) = self {
            if parts.len() < 2 {
                return Err(Error::InvalidConfig("concat needs at least two parts".into()));
            }
            parts.iter().try_for_each(Self::validate)?;
        }
        Ok(())
    }

    /// Parses `hcf`, `hcf-scale-robust`, `external:<name>` or a `+`-joined
    /// list of those.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        let one = |p: &str| match p {
            "hcf" => Ok(Self::Hcf),
            "hcf-scale-robust" => Ok(Self::HcfScaleRobust),
            _ => match p.strip_prefix("external:") {
                Some(name) if !name.is_empty() => Ok(Self::External(name.to_string())),
                _ => Err(Error::InvalidConfig(format!("unknown feature set `{p}`"))),
            },
        };
        let spec = if parts.len() == 1 {
            one(parts[0])?
        } else {
            Self::Concat(parts.into_iter().map(one).collect::<Result<_>>()?)
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Identity and ground truth of a sample whose features are assembled later.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub id: SampleId,
    pub plant_group: PlantGroup,
    pub label: Option<ClassId>,
    pub pose: Option<Pose>,
}

/// Everything a feature matrix can be built from.
#[derive(Debug, Clone, Default)]
pub struct FeatureSources {
    pub hcf: BTreeMap<SampleId, HcfVector>,
    pub external: BTreeMap<String, BTreeMap<SampleId, Vec<f64>>>,
}

/// Scales `v` to unit L2 norm; a zero vector stays zero.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

fn block(spec: &FeatureSetSpec, id: SampleId, sources: &FeatureSources, out: &mut Vec<f64>) -> Option<()> {
    match spec {
        FeatureSetSpec::Hcf => out.extend(l2_normalize(&sources.hcf.get(&id)?.to_vec())),
        FeatureSetSpec::HcfScaleRobust => out.extend(l2_normalize(&sources.hcf.get(&id)?.scale_robust())),
        FeatureSetSpec::External(name) => out.extend(l2_normalize(sources.external.get(name)?.get(&id)?)),
        FeatureSetSpec::Concat(parts) => {
            for p in parts {
                block(p, id, sources, out)?;
            }
        }
    }
    Some(())
}

/// One normalized row per sample. Each block is normalized on its own and
/// concatenation does not renormalize.
pub fn build_feature_matrix(samples: &[SampleMeta], spec: &FeatureSetSpec, sources: &FeatureSources) -> Result<Dataset> {
    spec.validate()?;
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(samples.len());
    for meta in samples {
        let mut features = Vec::new();
        if block(spec, meta.id, sources, &mut features).is_none() {
            missing.push(meta.id);
            continue;
        }
        rows.push(Sample {
            id: meta.id,
            plant_group: meta.plant_group,
            features,
            label: meta.label,
            pose: meta.pose,
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    Dataset::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;
    use image::Rgb;

    fn region(mask: Mask) -> DetectionRegion {
        DetectionRegion::from_mask(&mask, (0, 0)).unwrap()
    }

    fn disk(r: f64) -> Mask {
        let size = (2.0 * r) as u32 + 6;
        let c = size as f64 / 2.0;
        Mask::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            dx * dx + dy * dy <= r * r
        })
    }

    fn green(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([40, 160, 40]))
    }

    #[test]
    fn exg_extremes() {
        assert_eq!(raw_excess_green([0, 255, 0]), 2.0);
        assert!(raw_excess_green([90, 90, 90]).abs() < 1e-15);
        assert_eq!(raw_excess_green([0, 0, 0]), 0.0);
    }

    #[test]
    fn exg_rescales_over_mask() {
        let mut img = RgbImage::from_pixel(3, 1, Rgb([90, 90, 90]));
        img.put_pixel(1, 0, Rgb([0, 200, 0]));
        img.put_pixel(2, 0, Rgb([255, 0, 0]));
        let mask = Mask::from_fn(3, 1, |x, _| x < 2);
        let exg = excess_green(&img, &mask).unwrap();
        assert_eq!(exg.get(0, 0), Some(0.0));
        assert_eq!(exg.get(1, 0), Some(255.0));
        assert_eq!(exg.get(2, 0), None);
    }

    #[test]
    fn exg_constant_color_is_zero() {
        let exg = excess_green(&green(4, 4), &Mask::from_fn(4, 4, |_, _| true)).unwrap();
        assert!(exg.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exg_empty_mask() {
        assert!(matches!(excess_green(&green(2, 2), &Mask::new(2, 2)), Err(Error::EmptyMask)));
    }

    #[test]
    fn disk_shape() {
        let m = disk(50.0);
        let h = extract_hcf(&region(m.clone()), &green(m.width(), m.height())).unwrap();
        assert!((0.85..=1.05).contains(&h.compactness), "{}", h.compactness);
        assert!(h.convexity >= 0.95 && h.convexity <= 1.0, "{}", h.convexity);
        assert_eq!(h.range, 0.0);
        assert_eq!(h.stddev, 0.0);
        assert_eq!(h.kurtosis, 0.0);
        assert_eq!(h.skewness, 0.0);
    }

    #[test]
    fn bar_shape() {
        let m = Mask::from_fn(110, 10, |x, y| (5..105).contains(&x) && (3..7).contains(&y));
        let h = extract_hcf(&region(m), &green(110, 10)).unwrap();
        assert!(h.compactness < 0.3);
        assert!((85.0..=115.0).contains(&h.skeleton_length), "{}", h.skeleton_length);
        assert_eq!(h.convexity, 1.0);
        assert_eq!(h.area, 400.0);
    }

    #[test]
    fn tiny_region_rejected() {
        let m = Mask::from_fn(4, 4, |x, y| x < 3 && y == 0);
        assert!(matches!(extract_hcf(&region(m), &green(4, 4)), Err(Error::DegenerateRegion(3))));
    }

    #[test]
    fn hull_of_l_shape() {
        // 2x2 block plus a tail: corners span (0,0)-(3,2) minus one triangle.
        let m = Mask::from_fn(3, 2, |x, y| x < 2 || y == 1);
        assert_eq!(convex_hull_area(&m), 5.5);
    }

    #[test]
    fn moments_match_direct_formulas() {
        let v = [1.0, 2.0, 2.0, 3.0, 9.0];
        let s = moments(&v).unwrap();
        assert_eq!(s.median, 2.0);
        assert_eq!(s.mean, 3.4);
        let var = v.iter().map(|x| (x - 3.4) * (x - 3.4)).sum::<f64>() / 5.0;
        assert!((s.stddev - var.sqrt()).abs() < 1e-12);
        assert_eq!(moments(&[1.0, 4.0]).unwrap().median, 2.5);
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(l2_normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    fn meta(id: u64) -> SampleMeta {
        SampleMeta { id, plant_group: id, label: None, pose: None }
    }

    #[test]
    fn concat_keeps_block_norms() {
        let mut sources = FeatureSources::default();
        sources.external.insert("a".into(), [(0, vec![3.0, 4.0])].into());
        sources.external.insert("b".into(), [(0, vec![0.0, 5.0, 0.0])].into());
        let spec = FeatureSetSpec::parse("external:a+external:b").unwrap();
        let d = build_feature_matrix(&[meta(0)], &spec, &sources).unwrap();
        assert_eq!(d.samples()[0].features, vec![0.6, 0.8, 0.0, 1.0, 0.0]);
        let norm = d.samples()[0].features.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scale_robust_has_eleven_dims() {
        let h = HcfVector::from_slice(&(1..=14).map(f64::from).collect::<Vec<_>>()).unwrap();
        let mut sources = FeatureSources::default();
        sources.hcf.insert(7, h);
        let full = build_feature_matrix(&[meta(7)], &FeatureSetSpec::Hcf, &sources).unwrap();
        let robust = build_feature_matrix(&[meta(7)], &FeatureSetSpec::HcfScaleRobust, &sources).unwrap();
        assert_eq!(full.dim(), 14);
        assert_eq!(robust.dim(), 11);
        assert_eq!(h.scale_robust()[0], 4.0);
    }

    #[test]
    fn missing_ids_are_listed() {
        let sources = FeatureSources::default();
        let err = build_feature_matrix(&[meta(1), meta(2)], &FeatureSetSpec::Hcf, &sources).unwrap_err();
        assert!(matches!(err, Error::MissingFeatures(ids) if ids == vec![1, 2]));
    }

    #[test]
    fn parse_rejects_unknown() {
        assert!(FeatureSetSpec::parse("dcnn").is_err());
        assert!(FeatureSetSpec::parse("external:").is_err());
        assert_eq!(FeatureSetSpec::parse("hcf").unwrap(), FeatureSetSpec::Hcf);
        assert!(FeatureSetSpec::Concat(vec![FeatureSetSpec::Hcf]).validate().is_err());
    }

    #[test]
    fn translation_invariant() {
        let m = disk(12.0);
        let (w, h) = (m.width() + 30, m.height() + 20);
        let img_a = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 200) as u8 + 20, (y * 13 % 200) as u8 + 30, 50]));
        let img_b = RgbImage::from_fn(w, h, |x, y| {
            if x >= 17 && y >= 9 { *img_a.get_pixel(x - 17, y - 9) } else { Rgb([0, 0, 0]) }
        });
        let a = DetectionRegion::from_mask(&m, (0, 0)).unwrap();
        let b = DetectionRegion::from_mask(&m, (17, 9)).unwrap();
        assert_eq!(b.bbox, BBox { x0: a.bbox.x0 + 17, y0: a.bbox.y0 + 9, x1: a.bbox.x1 + 17, y1: a.bbox.y1 + 9 });
        assert_eq!(extract_hcf(&a, &img_a).unwrap(), extract_hcf(&b, &img_b).unwrap());
    }
}
