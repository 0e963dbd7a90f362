//! Batch orchestration: ingestion, feature assembly, clustering,
//! evaluation and artifact writing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::Serialize;

use crate::affinity::{cluster_ap, ApConfig, ApStats, Preference};
use crate::clustering::{cluster_diarization, cluster_hierarchical, ClusterConfig, InitMode, RunStats};
use crate::dataset::{ClassId, Dataset, Pose, Sample, SampleId};
use crate::dpgmm::{cluster_dpgmm, DpgmmConfig, DpgmmStats};
use crate::evaluation::{dscore, DScoreReport, LabeledPartition};
use crate::features::{build_feature_matrix, extract_hcf, FeatureSetSpec, FeatureSources, HcfVector, SampleMeta};
use crate::io::{self, RegionRecord};
use crate::map::{render_map, FieldMap, DEFAULT_SCALE};
use crate::partition::Partition;
use crate::raster::Mask;
use crate::segmentation::{segment, DetectionRegion, PixelModel, SegmentParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Hierarchical,
    HierarchicalLocked,
    Diarization,
    DiarizationLocked,
    Dpgmm,
    Ap,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Self::Hierarchical,
        Self::HierarchicalLocked,
        Self::Diarization,
        Self::DiarizationLocked,
        Self::Dpgmm,
        Self::Ap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hierarchical => "hierarchical",
            Self::HierarchicalLocked => "hierarchical-locked",
            Self::Diarization => "diarization",
            Self::DiarizationLocked => "diarization-locked",
            Self::Dpgmm => "dpgmm",
            Self::Ap => "ap",
        }
    }

    pub fn is_locked(self) -> bool {
        matches!(self, Self::HierarchicalLocked | Self::DiarizationLocked)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

/// Everything one pipeline run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Feature file; also the source of sample ids, plant groups and labels.
    pub features: PathBuf,
    /// `None` uses the feature file's vectors unchanged.
    pub feature_set: Option<FeatureSetSpec>,
    /// HCF file for `hcf` feature sets; defaults to `features`.
    pub hcf: Option<PathBuf>,
    /// Named external feature files; unknown names are read as paths.
    pub external: BTreeMap<String, PathBuf>,
    pub labels: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub lambda: f64,
    pub max_inner_iters: usize,
    pub alpha: f64,
    pub sweeps: usize,
    pub init_clusters: usize,
    pub seed: u64,
    pub ap: ApConfig,
    pub map_scale: f64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, features: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let dp = DpgmmConfig::default();
        let cl = ClusterConfig::default();
        Self {
            algorithm,
            features: features.into(),
            feature_set: None,
            hcf: None,
            external: BTreeMap::new(),
            labels: None,
            poses: None,
            out_dir: out_dir.into(),
            lambda: cl.lambda,
            max_inner_iters: cl.max_inner_iters,
            alpha: dp.alpha,
            sweeps: dp.sweeps,
            init_clusters: dp.init_clusters,
            seed: dp.seed,
            ap: ApConfig::default(),
            map_scale: DEFAULT_SCALE,
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let locked = self.algorithm.is_locked();
        ClusterConfig {
            lambda: self.lambda,
            max_inner_iters: self.max_inner_iters,
            locking: locked,
            init_mode: if locked { InitMode::PerPlantGroup } else { InitMode::PerImage },
        }
    }

    pub fn dpgmm_config(&self) -> DpgmmConfig {
        DpgmmConfig {
            alpha: self.alpha,
            sweeps: self.sweeps,
            seed: self.seed,
            prior: None,
            init_clusters: self.init_clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            Algorithm::Dpgmm => self.dpgmm_config().validate(1)?,
            Algorithm::Ap => self.ap.validate()?,
            _ => self.cluster_config().validate()?,
        }
        if let Some(spec) = &self.feature_set {
            spec.validate()?;
        }
        if !(self.map_scale > 0.0 && self.map_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("map_scale must be > 0, got {}", self.map_scale)));
        }
        Ok(())
    }
}

/// Engine diagnostics, tagged by engine family.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RunMeta {
    Agglomerative(RunStats),
    Dpgmm(DpgmmStats),
    Ap(ApStats),
}

fn external_vectors(path: &Path) -> Result<BTreeMap<SampleId, Vec<f64>>> {
    Ok(io::read_features(path)?
        .samples()
        .iter()
        .map(|s| (s.id, s.features.clone()))
        .collect())
}

fn collect_externals(spec: &FeatureSetSpec, out: &mut Vec<String>) {
    match spec {
        FeatureSetSpec::External(name) => out.push(name.clone()),
        FeatureSetSpec::Concat(parts) => parts.iter().for_each(|p| collect_externals(p, out)),
        _ => {}
    }
}

fn needs_hcf(spec: &FeatureSetSpec) -> bool {
    match spec {
        FeatureSetSpec::Hcf | FeatureSetSpec::HcfScaleRobust => true,
        FeatureSetSpec::External(_) => false,
        FeatureSetSpec::Concat(parts) => parts.iter().any(needs_hcf),
    }
}

/// Reads the feature file, assembles the requested feature set and attaches
/// labels and poses from their optional files.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let base = io::read_features(&config.features)?;
    let data = match &config.feature_set {
        None => base,
        Some(spec) => {
            let mut sources = FeatureSources::default();
            if needs_hcf(spec) {
                let path = config.hcf.as_ref().unwrap_or(&config.features);
                for (id, v) in external_vectors(path)? {
                    sources.hcf.insert(id, HcfVector::from_slice(&v)?);
                }
            }
            let mut names = Vec::new();
            collect_externals(spec, &mut names);
            for name in names {
                let path = config.external.get(&name).cloned().unwrap_or_else(|| PathBuf::from(&name));
                sources.external.insert(name, external_vectors(&path)?);
            }
            let metas: Vec<SampleMeta> = base
                .samples()
                .iter()
                .map(|s| SampleMeta { id: s.id, plant_group: s.plant_group, label: s.label, pose: s.pose })
                .collect();
            build_feature_matrix(&metas, spec, &sources)?
        }
    };
    let labels = config.labels.as_deref().map(io::read_labels).transpose()?;
    let poses = config.poses.as_deref().map(io::read_poses).transpose()?;
    attach(data, labels.as_ref(), poses.as_ref())
}

/// Overrides labels and poses of samples found in the given maps.
pub fn attach(
    data: Dataset,
    labels: Option<&BTreeMap<SampleId, ClassId>>,
    poses: Option<&BTreeMap<SampleId, Pose>>,
) -> Result<Dataset> {
    if labels.is_none() && poses.is_none() {
        return Ok(data);
    }
    let samples: Vec<Sample> = data
        .samples()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Some(&l) = labels.and_then(|m| m.get(&s.id)) {
                s.label = Some(l);
            }
            if let Some(&p) = poses.and_then(|m| m.get(&s.id)) {
                s.pose = Some(p);
            }
            s
        })
        .collect();
    Dataset::new(samples)
}

/// Runs the configured engine and checks the locking invariant for locked
/// algorithms.
pub fn cluster(data: &Dataset, config: &RunConfig) -> Result<(Partition, RunMeta)> {
    let (partition, meta) = match config.algorithm {
        Algorithm::Hierarchical | Algorithm::HierarchicalLocked => {
            let run = cluster_hierarchical(data, &config.cluster_config())?;
            (run.partition, RunMeta::Agglomerative(run.stats))
        }
        Algorithm::Diarization | Algorithm::DiarizationLocked => {
            let run = cluster_diarization(data, &config.cluster_config())?;
            (run.partition, RunMeta::Agglomerative(run.stats))
        }
        Algorithm::Dpgmm => {
            let run = cluster_dpgmm(data, &config.dpgmm_config())?;
            (run.partition, RunMeta::Dpgmm(run.stats))
        }
        Algorithm::Ap => {
            let run = cluster_ap(data, &config.ap)?;
            (run.partition, RunMeta::Ap(run.stats))
        }
    };
    partition.validate(data)?;
    if config.algorithm.is_locked() {
        check_locking(&partition, data)?;
    }
    Ok((partition, meta))
}

pub fn check_locking(partition: &Partition, data: &Dataset) -> Result<()> {
    let split = partition.split_groups(data);
    if split.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("plant groups split across clusters: {split:?}")))
    }
}

/// DScore report when every sample is labeled.
pub fn evaluate(partition: &Partition, data: &Dataset) -> Result<Option<DScoreReport>> {
    match data.labels() {
        Some(labels) => Ok(Some(dscore(&LabeledPartition::from_partition(partition, &labels)?)?)),
        None => Ok(None),
    }
}

pub fn field_map(partition: &Partition, data: &Dataset, scale: f64) -> Result<Option<FieldMap>> {
    let poses: BTreeMap<SampleId, Pose> =
        data.samples().iter().filter_map(|s| s.pose.map(|p| (s.id, p))).collect();
    if poses.is_empty() {
        return Ok(None);
    }
    let labels: BTreeMap<SampleId, ClassId> =
        data.samples().iter().filter_map(|s| s.label.map(|l| (s.id, l))).collect();
    Ok(Some(FieldMap::from_partition(partition, &poses, Some(&labels), scale)?))
}

fn keyed<K: ToString, V: Clone>(m: &BTreeMap<K, V>) -> BTreeMap<String, V> {
    m.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn toml_table(value: impl Serialize) -> toml::Table {
    toml::Table::try_from(value).expect("report sections serialize to tables")
}

/// Structured text report: run summary, config echo, cluster sizes, engine
/// diagnostics and, with labels, the evaluation.
pub fn report(
    config: &RunConfig,
    data: &Dataset,
    partition: &Partition,
    meta: &RunMeta,
    evaluation: Option<&DScoreReport>,
) -> String {
    let mut root = toml::Table::new();

    let mut run = toml::Table::new();
    run.insert("algorithm".into(), config.algorithm.name().into());
    run.insert("n_samples".into(), (data.len() as i64).into());
    run.insert("dim".into(), (data.dim() as i64).into());
    run.insert("n_clusters".into(), (partition.n_clusters() as i64).into());
    run.insert("n_plant_groups".into(), (data.plant_groups().len() as i64).into());
    run.insert("split_plant_groups".into(), (partition.split_groups(data).len() as i64).into());
    root.insert("run".into(), run.into());

    let mut cfg = toml::Table::new();
    cfg.insert("features".into(), config.features.display().to_string().into());
    if let Some(spec) = &config.feature_set {
        cfg.insert("feature_set".into(), feature_set_string(spec).into());
    }
    cfg.insert("seed".into(), (config.seed as i64).into());
    match config.algorithm {
        Algorithm::Dpgmm => {
            cfg.insert("alpha".into(), config.alpha.into());
            cfg.insert("sweeps".into(), (config.sweeps as i64).into());
            cfg.insert("init_clusters".into(), (config.init_clusters as i64).into());
        }
        Algorithm::Ap => {
            cfg.insert("damping".into(), config.ap.damping.into());
            cfg.insert("max_iters".into(), (config.ap.max_iters as i64).into());
            cfg.insert("convergence_window".into(), (config.ap.convergence_window as i64).into());
            let pref = match config.ap.preference {
                Preference::Median => toml::Value::from("median"),
                Preference::Value(v) => v.into(),
            };
            cfg.insert("preference".into(), pref);
            cfg.insert("adaptive_damping".into(), config.ap.adaptive_damping.into());
        }
        _ => {
            let cc = config.cluster_config();
            cfg.insert("lambda".into(), cc.lambda.into());
            cfg.insert("max_inner_iters".into(), (cc.max_inner_iters as i64).into());
            cfg.insert("locking".into(), cc.locking.into());
        }
    }
    root.insert("config".into(), cfg.into());

    let sizes: BTreeMap<String, i64> = keyed(&partition.sizes()).into_iter().map(|(k, v)| (k, v as i64)).collect();
    root.insert("cluster_sizes".into(), toml_table(sizes).into());

    let stats = match meta {
        RunMeta::Dpgmm(s) => {
            let mut t = toml::Table::new();
            t.insert("sweeps".into(), (s.clusters_per_sweep.len() as i64).into());
            t.insert(
                "clusters_per_sweep".into(),
                s.clusters_per_sweep.iter().map(|&c| c as i64).collect::<Vec<_>>().into(),
            );
            t.insert("max_normalization_error".into(), s.max_normalization_error.into());
            t.insert("sizes_consistent".into(), s.sizes_consistent.into());
            t
        }
        RunMeta::Agglomerative(s) => toml_table(s),
        RunMeta::Ap(s) => toml_table(s),
    };
    root.insert("stats".into(), stats.into());

    if let Some(ev) = evaluation {
        root.insert("evaluation".into(), evaluation_table(ev).into());
    }
    toml::to_string(&root).expect("report serializes")
}

fn evaluation_table(ev: &DScoreReport) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("dscore".into(), ev.dscore.into());
    t.insert("n_clusters".into(), (ev.n_clusters as i64).into());
    t.insert("per_class".into(), toml_table(keyed(&ev.per_class_scores)).into());
    let mapping: BTreeMap<String, i64> = keyed(&ev.cluster_to_class).into_iter().map(|(k, v)| (k, v as i64)).collect();
    t.insert("cluster_to_class".into(), toml_table(mapping).into());
    if let Some(p) = &ev.pairwise {
        t.insert("pairwise".into(), toml_table(p).into());
    }
    t
}

/// Report holding only an `[evaluation]` section.
pub fn evaluation_report(ev: &DScoreReport) -> String {
    let mut root = toml::Table::new();
    root.insert("evaluation".into(), evaluation_table(ev).into());
    toml::to_string(&root).expect("report serializes")
}

pub fn feature_set_string(spec: &FeatureSetSpec) -> String {
    match spec {
        FeatureSetSpec::Hcf => "hcf".into(),
        FeatureSetSpec::HcfScaleRobust => "hcf-scale-robust".into(),
        FeatureSetSpec::External(name) => format!("external:{name}"),
        FeatureSetSpec::Concat(parts) => parts.iter().map(feature_set_string).collect::<Vec<_>>().join("+"),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub partition: Partition,
    pub meta: RunMeta,
    pub evaluation: Option<DScoreReport>,
    pub map: Option<FieldMap>,
    pub assignment_path: PathBuf,
    pub report_path: PathBuf,
    pub map_path: Option<PathBuf>,
}

pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const MAP_FILE: &str = "map.svg";

/// Full run; writes `assignment.csv`, `report.toml` and, with poses,
/// `map.svg` into the output directory.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let data = load_dataset(config)?;
    let (partition, meta) = cluster(&data, config)?;
    let evaluation = evaluate(&partition, &data)?;
    let map = field_map(&partition, &data, config.map_scale)?;

    let assignment_path = config.out_dir.join(ASSIGNMENT_FILE);
    io::write_assignment(&assignment_path, partition.assignment())?;
    let report_path = config.out_dir.join(REPORT_FILE);
    io::write_text(&report_path, &report(config, &data, &partition, &meta, evaluation.as_ref()))?;
    let map_path = match &map {
        Some(m) => {
            let p = config.out_dir.join(MAP_FILE);
            io::write_text(&p, &render_map(m))?;
            Some(p)
        }
        None => None,
    };
    Ok(RunOutput { partition, meta, evaluation, map, assignment_path, report_path, map_path })
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(image_err(path))?.to_rgb8())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(Mask::from_gray(&image::open(path).map_err(image_err(path))?.to_luma8()))
}

pub fn write_png(path: &Path, img: &image::DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(image_err(path))
}

/// Image files (`png`, `ppm`, `pgm`, `pnm`) in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|source| Error::Io { path: dir.to_path_buf(), source })?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pgm" | "pnm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads `images/*` with the same-named `masks/*` under `dir`.
pub fn read_training_set(dir: &Path) -> Result<Vec<(RgbImage, Mask)>> {
    list_images(&dir.join("images"))?
        .into_iter()
        .map(|p| {
            let mask_path = dir.join("masks").join(p.file_name().expect("listed file"));
            Ok((read_rgb(&p)?, read_mask(&mask_path)?))
        })
        .collect()
}

pub fn region_mask_path(dir: &Path, image_id: u64, region_id: u64) -> PathBuf {
    dir.join("masks").join(format!("{image_id:04}_{region_id:03}.png"))
}

pub const REGIONS_FILE: &str = "regions.csv";

/// Segments every image in `images`, writing `regions.csv` and cropped
/// region masks under `out_dir`. Image ids follow sorted file order.
pub fn segment_images(images: &Path, model: &PixelModel, params: &SegmentParams, out_dir: &Path) -> Result<Vec<RegionRecord>> {
    let mut records = Vec::new();
    for (image_id, path) in list_images(images)?.into_iter().enumerate() {
        let img = read_rgb(&path)?;
        for (region_id, region) in segment(&img, model, params).into_iter().enumerate() {
            let rec = RegionRecord {
                image_id: image_id as u64,
                region_id: region_id as u64,
                bbox: region.bbox,
                area_px: region.area_px,
            };
            write_png(
                &region_mask_path(out_dir, rec.image_id, rec.region_id),
                &image::DynamicImage::ImageLuma8(region.mask.to_gray()),
            )?;
            records.push(rec);
        }
    }
    io::write_regions(&out_dir.join(REGIONS_FILE), &records)?;
    Ok(records)
}

/// Computes HCF vectors for segmented regions. Sample ids follow region
/// order and each region is its own plant group.
pub fn extract_features(images: &Path, regions_dir: &Path) -> Result<Dataset> {
    let image_paths = list_images(images)?;
    let records = io::read_regions(&regions_dir.join(REGIONS_FILE))?;
    let mut samples = Vec::with_capacity(records.len());
    let mut cache: Option<(u64, RgbImage)> = None;
    for (i, rec) in records.iter().enumerate() {
        if cache.as_ref().map(|c| c.0) != Some(rec.image_id) {
            let path = image_paths.get(rec.image_id as usize).ok_or_else(|| {
                Error::InvalidConfig(format!("region references missing image {}", rec.image_id))
            })?;
            cache = Some((rec.image_id, read_rgb(path)?));
        }
        let img = &cache.as_ref().expect("loaded above").1;
        let mask = read_mask(&region_mask_path(regions_dir, rec.image_id, rec.region_id))?;
        let region = DetectionRegion::from_mask(&mask, (rec.bbox.x0, rec.bbox.y0))
            .ok_or(Error::DegenerateRegion(0))?;
        let hcf = extract_hcf(&region, img)?;
        samples.push(Sample::new(i as u64, i as u64, hcf.to_vec()));
    }
    Dataset::new(samples)
}

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const POSES_FILE: &str = "poses.csv";

/// Writes `features.csv`, plus `labels.csv` and `poses.csv` for whatever
/// labels and poses the samples carry.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    io::write_features(&dir.join(FEATURES_FILE), data)?;
    let labels: BTreeMap<SampleId, ClassId> =
        data.samples().iter().filter_map(|s| s.label.map(|l| (s.id, l))).collect();
    if !labels.is_empty() {
        io::write_labels(&dir.join(LABELS_FILE), &labels)?;
    }
    let poses: BTreeMap<SampleId, Pose> = data.samples().iter().filter_map(|s| s.pose.map(|p| (s.id, p))).collect();
    if !poses.is_empty() {
        io::write_poses(&dir.join(POSES_FILE), &poses)?;
    }
    Ok(())
}

/// Writes `images/NNNN.png` and the matching `masks/NNNN.png`.
pub fn write_image_set(pairs: &[(RgbImage, Mask)], dir: &Path) -> Result<()> {
    for (i, (img, mask)) in pairs.iter().enumerate() {
        let name = format!("{i:04}.png");
        write_png(&dir.join("images").join(&name), &image::DynamicImage::ImageRgb8(img.clone()))?;
        write_png(&dir.join("masks").join(&name), &image::DynamicImage::ImageLuma8(mask.to_gray()))?;
    }
    Ok(())
}

pub fn save_pixel_model(path: &Path, model: &PixelModel) -> Result<()> {
    let text = toml::to_string(model).map_err(|e| Error::PixelModel(e.to_string()))?;
    io::write_text(path, &text)
}

pub fn load_pixel_model(path: &Path) -> Result<PixelModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1) as u64),
        msg: e.message().to_string(),
    })
}
