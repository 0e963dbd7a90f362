//! Plant detection: a color-space Gaussian scores every pixel, the
//! thresholded map is cleaned by erosions and dilations, and nearby
//! components are merged into detection regions.

mod color;
mod contour;
mod model;
mod morphology;

use image::RgbImage;

pub use color::{rgb_to_hs, rgb_to_pixel_feature, rgb_to_xyz, xyz_to_lab, xyz_to_luv, PixelFeature};
pub use contour::{connected_components, contour_length, trace_outer_border, Component};
pub use model::{pixel_f1, train_pixel_model, PixelModel, ThresholdGrid};
pub use morphology::{dilate, erode, open};

use crate::raster::{BBox, Mask};

/// A segmented plant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRegion {
    /// Region pixels, cropped to `bbox`.
    pub mask: Mask,
    pub bbox: BBox,
    /// Outer border of the region's largest component, absolute coordinates.
    pub contour: Vec<(u32, u32)>,
    pub area_px: usize,
}

impl DetectionRegion {
    /// Builds a region from a full-size or cropped mask placed at `origin`.
    pub fn from_mask(mask: &Mask, origin: (u32, u32)) -> Option<Self> {
        let comps = connected_components(mask);
        let largest = comps.iter().max_by(|a, b| a.area.cmp(&b.area).then(b.bbox.y0.cmp(&a.bbox.y0)))?;
        let bbox = mask.bbox()?;
        Some(Self {
            mask: mask.crop(&bbox),
            bbox: BBox {
                x0: bbox.x0 + origin.0,
                y0: bbox.y0 + origin.1,
                x1: bbox.x1 + origin.0,
                y1: bbox.y1 + origin.1,
            },
            contour: largest
                .contour
                .iter()
                .map(|&(x, y)| (x + origin.0, y + origin.1))
                .collect(),
            area_px: mask.count(),
        })
    }
}

/// Post-threshold cleanup and grouping settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentParams {
    pub n_erode: usize,
    pub n_dilate: usize,
    /// Components smaller than this are dropped before merging.
    pub min_area: usize,
    /// Regions whose boxes are at most this many pixels apart are merged.
    pub merge_dist: u32,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            n_erode: 2,
            n_dilate: 2,
            min_area: 400,
            merge_dist: 20,
        }
    }
}

/// Thresholded and cleaned plant mask for a whole image.
pub fn foreground(image: &RgbImage, model: &PixelModel, params: &SegmentParams) -> Mask {
    open(&model.threshold(image), params.n_erode, params.n_dilate)
}

pub fn segment(image: &RgbImage, model: &PixelModel, params: &SegmentParams) -> Vec<DetectionRegion> {
    let cleaned = foreground(image, model, params);
    let comps: Vec<Component> = connected_components(&cleaned)
        .into_iter()
        .filter(|c| c.area >= params.min_area)
        .collect();

    // Greedy transitive merging on growing boxes; groups keep the order of
    // their first component.
    let mut groups: Vec<(BBox, Vec<usize>)> =
        comps.iter().enumerate().map(|(i, c)| (c.bbox, vec![i])).collect();
    loop {
        let pair = (0..groups.len()).find_map(|i| {
            (i + 1..groups.len())
                .find(|&j| groups[i].0.gap(&groups[j].0) <= params.merge_dist)
                .map(|j| (i, j))
        });
        let Some((i, j)) = pair else { break };
        let (bj, mut mj) = groups.remove(j);
        groups[i].0 = groups[i].0.union(&bj);
        groups[i].1.append(&mut mj);
    }

    groups
        .into_iter()
        .map(|(bbox, members)| {
            let mut mask = Mask::new(bbox.width(), bbox.height());
            for &m in &members {
                let c = &comps[m];
                for (x, y) in c.mask.pixels() {
                    mask.set(x + c.bbox.x0 - bbox.x0, y + c.bbox.y0 - bbox.y0, true);
                }
            }
            let largest = members
                .iter()
                .map(|&m| &comps[m])
                .max_by(|a, b| a.area.cmp(&b.area).then(b.bbox.y0.cmp(&a.bbox.y0)))
                .expect("non-empty group");
            DetectionRegion {
                area_px: mask.count(),
                contour: largest.contour.clone(),
                mask,
                bbox,
            }
        })
        .collect()
}
