//! `weedscout` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 internal
//! invariant violation.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use weedscout::affinity::{ApConfig, Preference};
use weedscout::dataset::Dataset;
use weedscout::evaluation::{dscore, LabeledPartition};
use weedscout::features::FeatureSetSpec;
use weedscout::io;
use weedscout::map::{render_map, FieldMap, DEFAULT_SCALE};
use weedscout::partition::Partition;
use weedscout::pipeline::{self, Algorithm, RunConfig, RunMeta};
use weedscout::segmentation::{train_pixel_model, SegmentParams, ThresholdGrid};
use weedscout::synthesis::{generate, generate_field_images, FieldImageSpec, SynthSpec};
use weedscout::Error;

#[derive(Parser, Debug)]
#[command(name = "weedscout", version, about = "Unsupervised plant clustering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled dataset or field images.
    Synth(SynthArgs),
    /// Segment plant regions from field images.
    Segment(SegmentArgs),
    /// Compute hand-crafted features for segmented regions.
    Extract(ExtractArgs),
    /// Cluster a feature file and write the assignment.
    Cluster(ClusterArgs),
    /// Score an assignment against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Render an assignment as an SVG field map.
    Map(MapArgs),
    /// Cluster, evaluate and map in one go.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    ThreeBlobs,
    FieldSurvey,
    Images,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "three-blobs")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blob standard deviation (three-blobs).
    #[arg(long, default_value_t = 3e-4)]
    sigma: f64,
    /// Feature dimension (field-survey).
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Plant spread within a class (field-survey).
    #[arg(long, default_value_t = 3e-4)]
    spread: f64,
    /// Per-view jitter (field-survey).
    #[arg(long, default_value_t = 6e-4)]
    jitter: f64,
    #[arg(long, default_value_t = 4)]
    n_images: usize,
    #[arg(long, default_value_t = 6)]
    plants_per_image: usize,
    /// Per-channel noise standard deviation (images).
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Directory of input images.
    #[arg(long)]
    images: PathBuf,
    /// Trained pixel model.
    #[arg(long, conflicts_with = "train", required_unless_present = "train")]
    model: Option<PathBuf>,
    /// Training directory with `images/` and `masks/`.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Where to save a freshly trained model.
    #[arg(long, requires = "train")]
    save_model: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n_erode: usize,
    #[arg(long, default_value_t = 2)]
    n_dilate: usize,
    #[arg(long, default_value_t = 400)]
    min_area: usize,
    #[arg(long, default_value_t = 20)]
    merge_dist: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    images: PathBuf,
    /// Output directory of `segment`.
    #[arg(long)]
    regions: PathBuf,
    /// Feature file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct EngineArgs {
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Algorithm,
    #[arg(long)]
    features: PathBuf,
    /// `hcf`, `hcf-scale-robust`, `external:<name>`, or a `+`-joined list.
    /// Without it the feature file is used as is.
    #[arg(long, value_parser = parse_feature_set)]
    feature_set: Option<FeatureSetSpec>,
    #[arg(long)]
    hcf: Option<PathBuf>,
    /// External feature source, `name=path`. Repeatable.
    #[arg(long, value_parser = parse_external)]
    external: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    max_inner_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    sweeps: usize,
    #[arg(long, default_value_t = 300)]
    init_clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 15)]
    convergence_window: usize,
    /// `median` or a number.
    #[arg(long, default_value = "median", value_parser = parse_preference)]
    preference: Preference,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    adaptive_damping: bool,
}

impl EngineArgs {
    fn run_config(&self, out_dir: PathBuf) -> RunConfig {
        let mut c = RunConfig::new(self.algorithm, &self.features, out_dir);
        c.feature_set = self.feature_set.clone();
        c.hcf = self.hcf.clone();
        c.external = self.external.iter().cloned().collect();
        c.lambda = self.lambda;
        c.max_inner_iters = self.max_inner_iters;
        c.alpha = self.alpha;
        c.sweeps = self.sweeps;
        c.init_clusters = self.init_clusters;
        c.seed = self.seed;
        c.ap = ApConfig {
            damping: self.damping,
            max_iters: self.max_iters,
            convergence_window: self.convergence_window,
            preference: self.preference,
            adaptive_damping: self.adaptive_damping,
        };
        c
    }
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Assignment file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    assignment: PathBuf,
    /// Label file; alternatively, a feature file with a label column.
    #[arg(long, required_unless_present = "features")]
    labels: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Pixels per meter.
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    map_scale: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_feature_set(s: &str) -> Result<FeatureSetSpec, String> {
    FeatureSetSpec::parse(s).map_err(|e| e.to_string())
}

fn parse_external(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected name=path")?;
    if name.is_empty() || path.is_empty() {
        return Err("expected name=path".into());
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_preference(s: &str) -> Result<Preference, String> {
    if s == "median" {
        return Ok(Preference::Median);
    }
    s.parse::<f64>()
        .map(Preference::Value)
        .map_err(|_| format!("expected `median` or a number, got `{s}`"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 1,
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    // Later occurrences of a flag replace earlier ones, so command-line
    // values override config-file values.
    let parsed = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> weedscout::Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Extract(a) => {
            let data = pipeline::extract_features(&a.images, &a.regions)?;
            io::write_features(&a.out, &data)?;
            println!("{} regions -> {}", data.len(), a.out.display());
            Ok(())
        }
        Command::Cluster(a) => cluster(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Map(a) => map(a),
        Command::Run(a) => run(a),
    }
}

fn synth(a: SynthArgs) -> weedscout::Result<()> {
    let spec = match a.preset {
        Preset::Images => {
            let spec = FieldImageSpec {
                n_images: a.n_images,
                plants_per_image: a.plants_per_image,
                noise_std: a.noise,
                seed: a.seed,
                ..FieldImageSpec::default()
            };
            let pairs = generate_field_images(&spec);
            pipeline::write_image_set(&pairs, &a.out)?;
            println!("{} images -> {}", pairs.len(), a.out.display());
            return Ok(());
        }
        Preset::ThreeBlobs => SynthSpec::three_blobs(a.sigma, a.seed),
        Preset::FieldSurvey => SynthSpec::field_survey(a.dim, a.spread, a.jitter, a.seed),
    };
    let data = generate(&spec)?;
    pipeline::write_dataset(&data, &a.out)?;
    println!("{} samples -> {}", data.len(), a.out.display());
    Ok(())
}

fn segment(a: SegmentArgs) -> weedscout::Result<()> {
    let model = match (&a.model, &a.train) {
        (Some(path), _) => pipeline::load_pixel_model(path)?,
        (None, Some(dir)) => {
            let m = train_pixel_model(&pipeline::read_training_set(dir)?, ThresholdGrid::default())?;
            if let Some(path) = &a.save_model {
                pipeline::save_pixel_model(path, &m)?;
            }
            m
        }
        (None, None) => unreachable!("clap requires one of --model/--train"),
    };
    let params = SegmentParams {
        n_erode: a.n_erode,
        n_dilate: a.n_dilate,
        min_area: a.min_area,
        merge_dist: a.merge_dist,
    };
    let regions = pipeline::segment_images(&a.images, &model, &params, &a.out)?;
    println!("{} regions -> {}", regions.len(), a.out.display());
    Ok(())
}

fn cluster(a: ClusterArgs) -> weedscout::Result<()> {
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = a.engine.run_config(out_dir);
    cfg.validate()?;
    let data = pipeline::load_dataset(&cfg)?;
    let (partition, meta) = pipeline::cluster(&data, &cfg)?;
    io::write_assignment(&a.out, partition.assignment())?;
    if let Some(path) = &a.report {
        let ev = pipeline::evaluate(&partition, &data)?;
        io::write_text(path, &pipeline::report(&cfg, &data, &partition, &meta, ev.as_ref()))?;
    }
    summarize(&partition, &meta);
    Ok(())
}

fn summarize(partition: &Partition, meta: &RunMeta) {
    let extra = match meta {
        RunMeta::Agglomerative(s) => format!("{} merges", s.merges_accepted),
        RunMeta::Dpgmm(s) => format!("{} sweeps", s.clusters_per_sweep.len()),
        RunMeta::Ap(s) => format!("{} iterations, converged {}", s.iterations, s.converged),
    };
    println!("{} samples in {} clusters ({extra})", partition.assignment().len(), partition.n_clusters());
}

fn evaluate(a: EvaluateArgs) -> weedscout::Result<()> {
    let assignment = io::read_assignment(&a.assignment)?;
    let labels = match (&a.labels, &a.features) {
        (Some(path), _) => io::read_labels(path)?,
        (None, Some(path)) => io::read_features(path)?
            .labels()
            .ok_or_else(|| Error::InvalidConfig(format!("{} has unlabeled samples", path.display())))?,
        (None, None) => unreachable!("clap requires --labels or --features"),
    };
    let report = dscore(&LabeledPartition::new(assignment, &labels)?)?;
    let text = pipeline::evaluation_report(&report);
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn map(a: MapArgs) -> weedscout::Result<()> {
    let assignment = io::read_assignment(&a.assignment)?;
    let poses = io::read_poses(&a.poses)?;
    let labels = a.labels.as_deref().map(io::read_labels).transpose()?;
    let samples: Vec<_> = assignment
        .keys()
        .filter(|id| poses.contains_key(id))
        .map(|&id| weedscout::dataset::Sample::new(id, id, vec![0.0]))
        .collect();
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no assigned sample has a pose".into()));
    }
    let data = Dataset::new(samples)?;
    let kept = assignment.into_iter().filter(|(id, _)| poses.contains_key(id)).collect();
    let partition = Partition::from_assignment(&data, kept)?;
    let m = FieldMap::from_partition(&partition, &poses, labels.as_ref(), a.scale)?;
    io::write_text(&a.out, &render_map(&m))?;
    println!("{} markers -> {}", m.entries().len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> weedscout::Result<()> {
    let mut cfg = a.engine.run_config(a.out.clone());
    cfg.labels = a.labels;
    cfg.poses = a.poses;
    cfg.map_scale = a.map_scale;
    let out = pipeline::run(&cfg)?;
    summarize(&out.partition, &out.meta);
    if let Some(ev) = &out.evaluation {
        println!("dscore {:.4}", ev.dscore);
    }
    Ok(())
}
