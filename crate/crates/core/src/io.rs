//! Delimited-text file formats shared by the pipeline stages.
//!
//! | file        | columns                                         |
//! |-------------|-------------------------------------------------|
//! | features    | `sample_id,plant_id[,label],f0..f{d-1}`         |
//! | poses       | `sample_id,x_m,y_m`                             |
//! | labels      | `sample_id,label`                               |
//! | assignment  | `sample_id,cluster_id`                          |
//! | regions     | `image_id,region_id,x0,y0,x1,y1,area_px`        |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{ClassId, Dataset, Pose, Sample, SampleId};
use crate::partition::ClusterId;
use crate::raster::BBox;
use crate::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Header plus records with their 1-based line numbers.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        if header.iter().all(String::is_empty) {
            return Err(parse_err(path, 1, "missing header row"));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    fn expect_columns(&self, names: &[&str]) -> Result<()> {
        if self.header.len() < names.len() || self.header.iter().zip(names).any(|(h, n)| h != n) {
            return Err(parse_err(
                &self.path,
                1,
                format!("expected header `{}`, found `{}`", names.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    fn field<T: FromStr>(&self, line: u64, row: &[String], col: usize) -> Result<T> {
        let raw = &row[col];
        raw.parse()
            .map_err(|_| parse_err(&self.path, line, format!("column `{}`: cannot parse `{raw}`", self.header[col])))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn check_unique(path: &Path, seen: &mut BTreeMap<SampleId, u64>, id: SampleId, line: u64) -> Result<()> {
    if let Some(first) = seen.insert(id, line) {
        return Err(parse_err(path, line, format!("sample {id} already listed on line {first}")));
    }
    Ok(())
}

/// Reads a feature file. Empty label cells leave the sample unlabeled.
pub fn read_features(path: &Path) -> Result<Dataset> {
    let t = Table::read(path)?;
    t.expect_columns(&["sample_id", "plant_id"])?;
    let has_label = t.header.get(2).is_some_and(|h| h == "label");
    let first_feature = if has_label { 3 } else { 2 };
    for (j, h) in t.header[first_feature..].iter().enumerate() {
        if *h != format!("f{j}") {
            return Err(parse_err(path, 1, format!("expected column `f{j}`, found `{h}`")));
        }
    }
    let dim = t.header.len() - first_feature;
    if dim == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    let mut seen = BTreeMap::new();
    let mut samples = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let (line, row) = (*line, row.as_slice());
        if row.len() != t.header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", t.header.len(), row.len())));
        }
        let id: SampleId = t.field(line, row, 0)?;
        check_unique(path, &mut seen, id, line)?;
        let features = (first_feature..row.len())
            .map(|c| t.field::<f64>(line, row, c))
            .collect::<Result<Vec<_>>>()?;
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(path, line, format!("non-finite value in f{j}")));
        }
        let label = if has_label && !row[2].is_empty() {
            Some(t.field::<ClassId>(line, row, 2)?)
        } else {
            None
        };
        samples.push(Sample {
            id,
            plant_group: t.field(line, row, 1)?,
            features,
            label,
            pose: None,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(path, 1, "no samples"));
    }
    Dataset::new(samples)
}

/// Writes a feature file; a label column is emitted when any sample has one.
pub fn write_features(path: &Path, data: &Dataset) -> Result<()> {
    let labeled = data.samples().iter().any(|s| s.label.is_some());
    let mut out = String::from("sample_id,plant_id");
    if labeled {
        out.push_str(",label");
    }
    for j in 0..data.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for s in data.samples() {
        out.push_str(&format!("{},{}", s.id, s.plant_group));
        if labeled {
            out.push(',');
            if let Some(l) = s.label {
                out.push_str(&l.to_string());
            }
        }
        for v in &s.features {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

fn read_id_map<T: FromStr>(path: &Path, columns: &[&str]) -> Result<BTreeMap<SampleId, T>> {
    let t = Table::read(path)?;
    t.expect_columns(columns)?;
    let mut seen = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        if row.len() != 2 {
            return Err(parse_err(path, *line, format!("expected 2 fields, found {}", row.len())));
        }
        let id: SampleId = t.field(*line, row, 0)?;
        check_unique(path, &mut seen, id, *line)?;
        out.insert(id, t.field(*line, row, 1)?);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<SampleId, ClassId>> {
    read_id_map(path, &["sample_id", "label"])
}

pub fn write_labels(path: &Path, labels: &BTreeMap<SampleId, ClassId>) -> Result<()> {
    let mut out = String::from("sample_id,label\n");
    for (id, l) in labels {
        out.push_str(&format!("{id},{l}\n"));
    }
    write_file(path, &out)
}

pub fn read_assignment(path: &Path) -> Result<BTreeMap<SampleId, ClusterId>> {
    read_id_map(path, &["sample_id", "cluster_id"])
}

pub fn write_assignment(path: &Path, assignment: &BTreeMap<SampleId, ClusterId>) -> Result<()> {
    let mut out = String::from("sample_id,cluster_id\n");
    for (id, k) in assignment {
        out.push_str(&format!("{id},{k}\n"));
    }
    write_file(path, &out)
}

pub fn read_poses(path: &Path) -> Result<BTreeMap<SampleId, Pose>> {
    let t = Table::read(path)?;
    t.expect_columns(&["sample_id", "x_m", "y_m"])?;
    let mut seen = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        if row.len() != 3 {
            return Err(parse_err(path, *line, format!("expected 3 fields, found {}", row.len())));
        }
        let id: SampleId = t.field(*line, row, 0)?;
        check_unique(path, &mut seen, id, *line)?;
        let pose = Pose { x: t.field(*line, row, 1)?, y: t.field(*line, row, 2)? };
        if !(pose.x.is_finite() && pose.y.is_finite()) {
            return Err(parse_err(path, *line, "non-finite pose"));
        }
        out.insert(id, pose);
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &BTreeMap<SampleId, Pose>) -> Result<()> {
    let mut out = String::from("sample_id,x_m,y_m\n");
    for (id, p) in poses {
        out.push_str(&format!("{id},{:?},{:?}\n", p.x, p.y));
    }
    write_file(path, &out)
}

/// One detection record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionRecord {
    pub image_id: u64,
    pub region_id: u64,
    pub bbox: BBox,
    pub area_px: usize,
}

pub fn read_regions(path: &Path) -> Result<Vec<RegionRecord>> {
    let t = Table::read(path)?;
    t.expect_columns(&["image_id", "region_id", "x0", "y0", "x1", "y1", "area_px"])?;
    t.rows
        .iter()
        .map(|(line, row)| {
            if row.len() != 7 {
                return Err(parse_err(path, *line, format!("expected 7 fields, found {}", row.len())));
            }
            let bbox = BBox {
                x0: t.field(*line, row, 2)?,
                y0: t.field(*line, row, 3)?,
                x1: t.field(*line, row, 4)?,
                y1: t.field(*line, row, 5)?,
            };
            if bbox.x0 > bbox.x1 || bbox.y0 > bbox.y1 {
                return Err(parse_err(path, *line, "inverted bounding box"));
            }
            Ok(RegionRecord {
                image_id: t.field(*line, row, 0)?,
                region_id: t.field(*line, row, 1)?,
                bbox,
                area_px: t.field(*line, row, 6)?,
            })
        })
        .collect()
}

pub fn write_regions(path: &Path, regions: &[RegionRecord]) -> Result<()> {
    let mut out = String::from("image_id,region_id,x0,y0,x1,y1,area_px\n");
    for r in regions {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.image_id, r.region_id, r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1, r.area_px
        ));
    }
    write_file(path, &out)
}

/// Writes text, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write_file(path, contents)
}
