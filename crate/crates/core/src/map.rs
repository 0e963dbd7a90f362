//! SVG field maps: one marker per observation, colored by cluster.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::{ClassId, Pose, SampleId};
use crate::partition::{ClusterId, Partition};
use crate::{Error, Result};

/// Colors assigned to clusters in ascending id order, cycling.
pub const PALETTE: [&str; 12] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666", "#1f78b4",
    "#b2df8a", "#fb9a99", "#cab2d6",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub sample: SampleId,
    pub pose: Pose,
    pub cluster: ClusterId,
    pub label: Option<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    entries: Vec<MapEntry>,
    palette: BTreeMap<ClusterId, &'static str>,
    /// Pixels per meter.
    scale: f64,
}

pub const DEFAULT_SCALE: f64 = 40.0;

impl FieldMap {
    /// Entries are sorted by sample id; the palette covers every cluster id
    /// that appears.
    pub fn new(mut entries: Vec<MapEntry>, scale: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("a field map needs at least one entry".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("map scale must be > 0, got {scale}")));
        }
        entries.sort_by_key(|e| e.sample);
        if let Some(w) = entries.windows(2).find(|w| w[0].sample == w[1].sample) {
            return Err(Error::DuplicateSample(w[0].sample));
        }
        let mut palette = BTreeMap::new();
        for e in &entries {
            palette.insert(e.cluster, "");
        }
        for (i, color) in palette.values_mut().enumerate() {
            *color = PALETTE[i % PALETTE.len()];
        }
        Ok(Self { entries, palette, scale })
    }

    /// Joins a partition with poses; samples without a pose are skipped.
    pub fn from_partition(
        partition: &Partition,
        poses: &BTreeMap<SampleId, Pose>,
        labels: Option<&BTreeMap<SampleId, ClassId>>,
        scale: f64,
    ) -> Result<Self> {
        let entries = partition
            .assignment()
            .iter()
            .filter_map(|(&sample, &cluster)| {
                poses.get(&sample).map(|&pose| MapEntry {
                    sample,
                    pose,
                    cluster,
                    label: labels.and_then(|l| l.get(&sample).copied()),
                })
            })
            .collect();
        Self::new(entries, scale)
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn palette(&self) -> &BTreeMap<ClusterId, &'static str> {
        &self.palette
    }

    pub fn color(&self, cluster: ClusterId) -> Option<&'static str> {
        self.palette.get(&cluster).copied()
    }
}

const MARGIN: f64 = 20.0;
const MARKER_RADIUS: f64 = 4.0;
const LEGEND_WIDTH: f64 = 150.0;
const LEGEND_ROW: f64 = 18.0;

/// Renders an SVG 1.1 document. North (+y) points up.
pub fn render_map(map: &FieldMap) -> String {
    let xs = map.entries.iter().map(|e| e.pose.x);
    let ys = map.entries.iter().map(|e| e.pose.y);
    let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (min_y, max_y) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let field_w = (max_x - min_x) * map.scale + 2.0 * MARGIN;
    let field_h = (max_y - min_y) * map.scale + 2.0 * MARGIN;
    let legend_h = MARGIN + LEGEND_ROW * (map.palette.len() as f64 + 1.0);
    let width = field_w + LEGEND_WIDTH;
    let height = field_h.max(legend_h);

    let mut sizes: BTreeMap<ClusterId, usize> = BTreeMap::new();
    for e in &map.entries {
        *sizes.entry(e.cluster).or_default() += 1;
    }

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{width:.2}" height="{height:.2}" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r#"<g id="markers">"#);
    for e in &map.entries {
        let cx = MARGIN + (e.pose.x - min_x) * map.scale;
        let cy = MARGIN + (max_y - e.pose.y) * map.scale;
        let label = e.label.map_or(String::new(), |l| format!(" label {l}"));
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{MARKER_RADIUS}" fill="{}"><title>sample {} cluster {}{label}</title></circle>"#,
            map.palette[&e.cluster], e.sample, e.cluster
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g id="legend" font-family="sans-serif" font-size="12">"#);
    let lx = field_w + 10.0;
    let _ = writeln!(svg, r#"<text x="{lx:.2}" y="{:.2}">cluster (size)</text>"#, MARGIN);
    for (row, (k, color)) in map.palette.iter().enumerate() {
        let y = MARGIN + LEGEND_ROW * (row as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{MARKER_RADIUS}" fill="{color}"/><text x="{:.2}" y="{:.2}">{k} ({})</text>"#,
            lx + MARKER_RADIUS,
            y - MARKER_RADIUS,
            lx + 3.0 * MARKER_RADIUS,
            y,
            sizes[k]
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(sample: SampleId, x: f64, cluster: ClusterId) -> MapEntry {
        MapEntry { sample, pose: Pose { x, y: 1.0 }, cluster, label: None }
    }

    #[test]
    fn single_entry() {
        let svg = render_map(&FieldMap::new(vec![entry(0, 0.0, 5)], DEFAULT_SCALE).unwrap());
        assert_eq!(svg.matches("<title>").count(), 1);
        assert!(svg.contains("5 (1)"));
        assert!(svg.contains(PALETTE[0]));
    }

    #[test]
    fn palette_follows_cluster_order() {
        let map = FieldMap::new(vec![entry(0, 0.0, 9), entry(1, 0.1, 2), entry(2, 0.2, 4)], DEFAULT_SCALE).unwrap();
        assert_eq!(map.color(2), Some(PALETTE[0]));
        assert_eq!(map.color(4), Some(PALETTE[1]));
        assert_eq!(map.color(9), Some(PALETTE[2]));
    }

    #[test]
    fn only_palette_colors() {
        let entries = (0..30).map(|i| entry(i, i as f64, i as usize)).collect();
        let svg = render_map(&FieldMap::new(entries, DEFAULT_SCALE).unwrap());
        for fill in svg.split("fill=\"").skip(1).map(|s| &s[..7]) {
            assert!(fill == "#ffffff" || PALETTE.contains(&fill), "{fill}");
        }
    }

    #[test]
    fn empty_map_rejected() {
        assert!(FieldMap::new(Vec::new(), DEFAULT_SCALE).is_err());
    }
}
