//! The `satdeblur` command-line tool.
//!
//! ```text
//! satdeblur synth  --procedural 8 --out fixtures
//! satdeblur deblur --input fixtures --out restored --map naive_threshold --prior hyper_laplacian
//! satdeblur eval   --results restored --fixtures fixtures --out report.json
//! satdeblur ablate --fixtures fixtures --variant unit --variant naive_threshold --out table.json
//! ```
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Every run writes the resolved settings as JSON next to its
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    EstimatorChoice, LatentMap, MapKind, PriorKind, DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_PRIOR_CAP,
    DEFAULT_SHARPNESS, DEFAULT_THRESHOLD,
};
use crate::image::{edge_taper, Image, Kernel, Shape};
use crate::io::{read_image, read_kernel, read_sdbf, write_atomic, write_image, write_kernel, write_sdbf};
use crate::metrics::{MetricReport, MetricSummary};
use crate::nn::load_weights;
use crate::solver::{
    solve_with_reference, Reference, SolverConfig, SolverTrace, DEFAULT_CLAMP_CEILING, DEFAULT_ITERATIONS,
};
use crate::synth::{derive_seed, night_scene, synth_pair, NoiseModel, SynthConfig, SynthMeta};

pub const BLURRY_FILE: &str = "blurry.png";
pub const GT_FILE: &str = "gt.png";
pub const KERNEL_FILE: &str = "kernel.txt";
pub const MAP_GT_FILE: &str = "map_gt.sdbf";
pub const META_FILE: &str = "meta.json";
pub const DEBLURRED_FILE: &str = "deblurred.png";
pub const TRACE_FILE: &str = "trace.jsonl";

const DEFAULT_SEED: u64 = 42;
const DEFAULT_SCENE_SIZE: usize = 64;
const MAX_CANDIDATES_PER_PAIR: u64 = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "satdeblur",
    version,
    about = "Non-blind deblurring of saturated images"
)]
pub struct Cli {
    /// TOML settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-image jobs.
    #[arg(long, short = 'j', global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate saturated blurry fixtures.
    Synth(SynthArgs),
    /// Restore one image or every pair in a fixture directory.
    Deblur(DeblurArgs),
    /// Score restored images against ground truth.
    Eval(EvalArgs),
    /// Compare estimator variants over a fixture directory.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Sharp source images or directories of them.
    #[arg(long = "input", value_name = "PATH", conflicts_with = "procedural")]
    pub inputs: Vec<PathBuf>,
    /// Generate this many procedural night scenes instead of reading sources.
    #[arg(long, value_name = "N")]
    pub procedural: Option<usize>,
    /// Side length of procedural scenes.
    #[arg(long)]
    pub size: Option<usize>,
    /// Channels of procedural scenes (1 or 3).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Skip procedural candidates whose clipped fraction is below this.
    #[arg(long)]
    pub min_clipped: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub threshold: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub enlarge: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub kernel_size: Option<Vec<usize>>,
    /// `none`, `gaussian:SIGMA` or `poisson:PEAK`.
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// `unit`, `naive_threshold[:V]`, `smooth_clip[:A]`, `ratio_oracle`,
    /// `binary_mask` or `men_cnn`.
    #[arg(long)]
    pub map: Option<String>,
    /// `none`, `hyper_laplacian[:LAMBDA[:ALPHA]]` or `pen_cnn`.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long, short = 'q')]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub prior_cap: Option<f64>,
    /// Leave the latent image unclamped between iterations.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long)]
    pub clamp_ceiling: Option<f64>,
    #[arg(long)]
    pub men_weights: Option<PathBuf>,
    #[arg(long)]
    pub pen_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    /// A blurry image, or a fixture directory for batch mode.
    #[arg(long)]
    pub input: PathBuf,
    /// Blur kernel file (single-image mode).
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Reference map for the oracle maps (single-image mode).
    #[arg(long)]
    pub map_gt: Option<PathBuf>,
    /// Output image, or output directory in batch mode.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-iteration trace as JSON lines.
    #[arg(long)]
    pub trace: bool,
    /// Taper image borders before solving.
    #[arg(long)]
    pub edge_taper: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Restored image (single mode).
    #[arg(long, requires = "reference", conflicts_with_all = ["results", "fixtures"])]
    pub estimate: Option<PathBuf>,
    /// Ground-truth image (single mode).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Directory written by `deblur` in batch mode.
    #[arg(long, requires = "fixtures")]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub fixtures: PathBuf,
    /// `MAP[+PRIOR]`, repeatable or comma-separated.
    #[arg(long = "variant", value_delimiter = ',', required = true)]
    pub variants: Vec<String>,
    /// JSON table path; an aligned text table is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    jobs: Option<usize>,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    map: Option<String>,
    prior: Option<String>,
    iterations: Option<usize>,
    prior_cap: Option<f64>,
    clamp: Option<bool>,
    clamp_ceiling: Option<f64>,
    men_weights: Option<PathBuf>,
    pen_weights: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    seed: Option<u64>,
    threshold: Option<(f64, f64)>,
    enlarge: Option<(f64, f64)>,
    kernel_size: Option<(usize, usize)>,
    noise: Option<NoiseModel>,
    size: Option<usize>,
    channels: Option<usize>,
    min_clipped: Option<f64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Solver settings after merging file and flags.
#[derive(Clone, Debug, Serialize)]
pub struct SolverOptions {
    pub map: String,
    pub prior: String,
    pub iterations: usize,
    pub prior_cap: f64,
    pub clamp: bool,
    pub clamp_ceiling: f64,
    pub men_weights: Option<PathBuf>,
    pub pen_weights: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            map: "naive_threshold".into(),
            prior: "hyper_laplacian".into(),
            iterations: DEFAULT_ITERATIONS,
            prior_cap: DEFAULT_PRIOR_CAP,
            clamp: true,
            clamp_ceiling: DEFAULT_CLAMP_CEILING,
            men_weights: None,
            pen_weights: None,
        }
    }
}

impl SolverOptions {
    fn resolve(file: SolverSection, flags: &SolverArgs) -> Self {
        let d = SolverOptions::default();
        SolverOptions {
            map: flags.map.clone().or(file.map).unwrap_or(d.map),
            prior: flags.prior.clone().or(file.prior).unwrap_or(d.prior),
            iterations: flags.iterations.or(file.iterations).unwrap_or(d.iterations),
            prior_cap: flags.prior_cap.or(file.prior_cap).unwrap_or(d.prior_cap),
            clamp: if flags.no_clamp {
                false
            } else {
                file.clamp.unwrap_or(d.clamp)
            },
            clamp_ceiling: flags
                .clamp_ceiling
                .or(file.clamp_ceiling)
                .unwrap_or(d.clamp_ceiling),
            men_weights: flags.men_weights.clone().or(file.men_weights),
            pen_weights: flags.pen_weights.clone().or(file.pen_weights),
        }
    }

    /// Checks every field, then loads network weights when a CNN is selected.
    pub fn build(&self, map: &str, prior: &str) -> Result<SolverConfig> {
        let map = parse_map(map, self.men_weights.as_deref())?;
        let prior = parse_prior(prior, self.pen_weights.as_deref())?;
        let mut estimators = EstimatorChoice::new(map, prior);
        estimators.prior_cap = self.prior_cap;
        let cfg = SolverConfig {
            iterations: self.iterations,
            estimators,
            clamp_output: self.clamp,
            clamp_ceiling: self.clamp_ceiling,
            ..Default::default()
        };
        cfg.validate().map_err(as_config)?;
        Ok(cfg)
    }

    fn solver_config(&self) -> Result<SolverConfig> {
        self.build(&self.map, &self.prior)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    }
}

fn split_spec(spec: &str) -> (&str, Vec<&str>) {
    let mut parts = spec.trim().split(':');
    let name = parts.next().unwrap_or_default();
    (name, parts.collect())
}

fn parse_number(spec: &str, field: &str, text: &str) -> Result<f64> {
    text.parse()
        .map_err(|_| Error::Config(format!("{spec}: {field} {text:?} is not a number")))
}

fn weights_path<'a>(path: Option<&'a Path>, what: &str, flag: &str) -> Result<&'a Path> {
    path.ok_or_else(|| Error::Config(format!("{what} needs a weights file ({flag})")))
}

/// Parses a map name such as `naive_threshold:0.85`.
pub fn parse_map(spec: &str, men_weights: Option<&Path>) -> Result<MapKind> {
    let (name, args) = split_spec(spec);
    let arg = |i: usize, field: &str, default: f64| -> Result<f64> {
        args.get(i).map_or(Ok(default), |t| parse_number(spec, field, t))
    };
    let max_args = match name {
        "naive_threshold" | "smooth_clip" => 1,
        _ => 0,
    };
    if args.len() > max_args {
        return Err(Error::Config(format!("map {spec:?} has too many parameters")));
    }
    Ok(match name {
        "unit" => MapKind::Unit,
        "naive_threshold" => MapKind::NaiveThreshold {
            v: arg(0, "threshold", DEFAULT_THRESHOLD)?,
        },
        "smooth_clip" => MapKind::SmoothClip {
            a: arg(0, "sharpness", DEFAULT_SHARPNESS)?,
        },
        "ratio_oracle" => MapKind::RatioOracle,
        "binary_mask" => MapKind::BinaryMask,
        "men_cnn" => {
            let path = weights_path(men_weights, "men_cnn", "--men-weights")?;
            MapKind::men(&load_weights(path)?)?
        }
        _ => return Err(Error::Config(format!("unknown map {spec:?}"))),
    })
}

/// Parses a prior name such as `hyper_laplacian:0.003:0.8`.
pub fn parse_prior(spec: &str, pen_weights: Option<&Path>) -> Result<PriorKind> {
    let (name, args) = split_spec(spec);
    let max_args = if name == "hyper_laplacian" { 2 } else { 0 };
    if args.len() > max_args {
        return Err(Error::Config(format!("prior {spec:?} has too many parameters")));
    }
    Ok(match name {
        "none" => PriorKind::None,
        "hyper_laplacian" => {
            let lambda = args
                .first()
                .map_or(Ok(DEFAULT_LAMBDA), |t| parse_number(spec, "lambda", t))?;
            let alpha = args
                .get(1)
                .map_or(Ok(DEFAULT_ALPHA), |t| parse_number(spec, "alpha", t))?;
            PriorKind::HyperLaplacian { lambda, alpha }
        }
        "pen_cnn" => {
            let path = weights_path(pen_weights, "pen_cnn", "--pen-weights")?;
            PriorKind::pen(&load_weights(path)?)?
        }
        _ => return Err(Error::Config(format!("unknown prior {spec:?}"))),
    })
}

/// `MAP[+PRIOR]`, prior defaulting to `none`.
fn split_variant(variant: &str) -> (&str, &str) {
    match variant.split_once('+') {
        Some((m, p)) => (m.trim(), p.trim()),
        None => (variant.trim(), "none"),
    }
}

fn parse_noise(spec: &str) -> Result<NoiseModel> {
    let (name, args) = split_spec(spec);
    let one = |field: &str| -> Result<f64> {
        match args[..] {
            [t] => parse_number(spec, field, t),
            _ => Err(Error::Config(format!("noise {spec:?} needs exactly one {field}"))),
        }
    };
    match name {
        "none" if args.is_empty() => Ok(NoiseModel::None),
        "gaussian" => Ok(NoiseModel::Gaussian { sigma: one("sigma")? }),
        "poisson" => Ok(NoiseModel::Poisson { peak: one("peak")? }),
        _ => Err(Error::Config(format!("unknown noise model {spec:?}"))),
    }
}

fn pair_of<T: Copy>(v: &Option<Vec<T>>) -> Option<(T, T)> {
    v.as_ref().map(|v| (v[0], v[1]))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match jobs {
        Some(0) => return Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => create_dir(dir),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialising {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn snapshot_path(out: &Path, stem: &str) -> PathBuf {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    dir.join(format!("{stem}_config.json"))
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let jobs = cli.jobs.or(file.jobs);
    match cli.command {
        Command::Synth(args) => cmd_synth(&args, file.synth, jobs),
        Command::Deblur(args) => {
            let opts = SolverOptions::resolve(file.solver, &args.solver);
            cmd_deblur(&args, &opts, jobs)
        }
        Command::Eval(args) => cmd_eval(&args),
        Command::Ablate(args) => {
            let opts = SolverOptions::resolve(file.solver, &args.solver);
            cmd_ablate(&args, &opts, jobs)
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Clone, Debug, Serialize)]
struct SynthSnapshot {
    #[serde(flatten)]
    config: SynthConfig,
    source: SourceKind,
    min_clipped: f64,
    jobs: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum SourceKind {
    Files {
        paths: Vec<PathBuf>,
    },
    Procedural {
        count: usize,
        size: usize,
        channels: usize,
    },
}

#[derive(Serialize)]
struct PairMeta<'a> {
    pair: &'a str,
    source: String,
    height: usize,
    width: usize,
    channels: usize,
    #[serde(flatten)]
    meta: &'a SynthMeta,
}

fn collect_sources(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension()
                            .and_then(|e| e.to_str())
                            .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("sdbf"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_synth(args: &SynthArgs, file: SynthSection, jobs: Option<usize>) -> Result<()> {
    let noise = match &args.noise {
        Some(s) => parse_noise(s)?,
        None => file.noise.unwrap_or(NoiseModel::None),
    };
    let d = SynthConfig::default();
    let config = SynthConfig {
        threshold: pair_of(&args.threshold).or(file.threshold).unwrap_or(d.threshold),
        enlarge: pair_of(&args.enlarge).or(file.enlarge).unwrap_or(d.enlarge),
        kernel_size: pair_of(&args.kernel_size)
            .or(file.kernel_size)
            .unwrap_or(d.kernel_size),
        noise,
        seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
    };
    config.validate()?;
    let min_clipped = args.min_clipped.or(file.min_clipped).unwrap_or(0.0);
    if !(0.0..=1.0).contains(&min_clipped) {
        return Err(Error::Config(format!(
            "min_clipped {min_clipped} must lie in [0, 1]"
        )));
    }

    let source = match args.procedural {
        Some(count) => {
            let size = args.size.or(file.size).unwrap_or(DEFAULT_SCENE_SIZE);
            let channels = args.channels.or(file.channels).unwrap_or(1);
            if channels != 1 && channels != 3 {
                return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
            }
            if count == 0 {
                return Err(Error::Config("--procedural needs at least one scene".into()));
            }
            if size < config.kernel_size.1 {
                return Err(Error::Config(format!(
                    "scene size {size} is smaller than the largest kernel {}",
                    config.kernel_size.1
                )));
            }
            SourceKind::Procedural {
                count,
                size,
                channels,
            }
        }
        None => {
            let paths = collect_sources(&args.inputs)?;
            if paths.is_empty() {
                return Err(Error::Config(
                    "no source images (use --input or --procedural)".into(),
                ));
            }
            SourceKind::Files { paths }
        }
    };

    // read every source before the first write
    let sharp: Vec<(String, Image)> = match &source {
        SourceKind::Files { paths } => paths
            .iter()
            .map(|p| {
                let img = read_image(p)?;
                if !img.is_observed_range() {
                    return Err(Error::InvalidImage(format!(
                        "{}: values outside [0, 1]",
                        p.display()
                    )));
                }
                Ok((p.display().to_string(), img))
            })
            .collect::<Result<_>>()?,
        SourceKind::Procedural { .. } => Vec::new(),
    };

    let pool = thread_pool(jobs)?;
    create_dir(&args.out)?;
    let count = match &source {
        SourceKind::Files { paths } => paths.len(),
        SourceKind::Procedural { count, .. } => *count,
    };
    pool.install(|| {
        (0..count).into_par_iter().try_for_each(|index| {
            let name = pair_name(index);
            let (label, pair) = match &source {
                SourceKind::Files { .. } => {
                    let (label, img) = &sharp[index];
                    let cfg = SynthConfig {
                        seed: derive_seed(config.seed, index as u64),
                        ..config.clone()
                    };
                    (label.clone(), synth_pair(img, &cfg)?)
                }
                SourceKind::Procedural { size, channels, .. } => {
                    procedural_pair(&config, index, Shape::new(*size, *size, *channels), min_clipped)?
                }
            };
            let dir = args.out.join(&name);
            create_dir(&dir)?;
            write_image(&pair.blurry, &dir.join(BLURRY_FILE))?;
            write_image(&pair.gt, &dir.join(GT_FILE))?;
            write_kernel(&pair.kernel, &dir.join(KERNEL_FILE))?;
            write_sdbf(pair.map_gt.image(), &dir.join(MAP_GT_FILE))?;
            let s = pair.blurry.shape();
            let meta = PairMeta {
                pair: &name,
                source: label,
                height: s.height,
                width: s.width,
                channels: s.channels,
                meta: &pair.meta,
            };
            write_json(&meta, &dir.join(META_FILE))?;
            log::info!("{name}: clipped fraction {:.3}", pair.meta.clipped_fraction);
            Ok::<_, Error>(())
        })
    })?;
    let snapshot = SynthSnapshot {
        config,
        source,
        min_clipped,
        jobs,
    };
    write_json(&snapshot, &args.out.join("synth_config.json"))
}

pub fn pair_name(index: usize) -> String {
    format!("pair_{index:04}")
}

/// Procedural pair `index`. Candidates are drawn from a per-pair seed
/// sequence until one clips at least `min_clipped` of its samples.
fn procedural_pair(
    config: &SynthConfig,
    index: usize,
    shape: Shape,
    min_clipped: f64,
) -> Result<(String, crate::synth::SynthPair)> {
    let base = derive_seed(config.seed, index as u64);
    for attempt in 0..MAX_CANDIDATES_PER_PAIR {
        let seed = derive_seed(base, attempt);
        let scene = night_scene(shape, seed);
        let cfg = SynthConfig {
            seed: derive_seed(seed, u64::MAX),
            ..config.clone()
        };
        let pair = synth_pair(&scene, &cfg)?;
        if pair.meta.clipped_fraction >= min_clipped {
            return Ok((format!("procedural:{seed}"), pair));
        }
    }
    Err(Error::Config(format!(
        "no procedural candidate reached clipped fraction {min_clipped} in {MAX_CANDIDATES_PER_PAIR} draws"
    )))
}

// ---------------------------------------------------------------- fixtures

/// One pair read back from a fixture directory.
pub struct Fixture {
    pub name: String,
    pub blurry: Image,
    pub gt: Image,
    pub kernel: Kernel,
    pub map_gt: Option<LatentMap>,
}

fn is_fixture(dir: &Path) -> bool {
    dir.join(BLURRY_FILE).is_file() && dir.join(KERNEL_FILE).is_file()
}

/// Pair directories under `root`, sorted by name.
pub fn fixture_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_fixture(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("{} contains no fixtures", root.display())));
    }
    Ok(dirs)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_fixture(dir: &Path) -> Result<Fixture> {
    let map_path = dir.join(MAP_GT_FILE);
    let map_gt = if map_path.is_file() {
        Some(LatentMap::new(read_sdbf(&map_path)?)?)
    } else {
        None
    };
    Ok(Fixture {
        name: dir_name(dir),
        blurry: read_image(&dir.join(BLURRY_FILE))?,
        gt: read_image(&dir.join(GT_FILE))?,
        kernel: read_kernel(&dir.join(KERNEL_FILE))?,
        map_gt,
    })
}

fn run_solver(
    b: &Image,
    k: &Kernel,
    cfg: &SolverConfig,
    map_gt: Option<&LatentMap>,
) -> Result<(Image, SolverTrace)> {
    solve_with_reference(b, k, cfg, map_gt.map(|map| Reference { map }))
}

// ---------------------------------------------------------------- deblur

#[derive(Serialize)]
struct DeblurSnapshot<'a> {
    input: &'a Path,
    kernel: Option<&'a Path>,
    map_gt: Option<&'a Path>,
    trace: bool,
    edge_taper: bool,
    jobs: Option<usize>,
    solver: &'a SolverOptions,
}

fn cmd_deblur(args: &DeblurArgs, opts: &SolverOptions, jobs: Option<usize>) -> Result<()> {
    let mut cfg = opts.solver_config()?;
    cfg.record_trace = args.trace;
    let snapshot = DeblurSnapshot {
        input: &args.input,
        kernel: args.kernel.as_deref(),
        map_gt: args.map_gt.as_deref(),
        trace: args.trace,
        edge_taper: args.edge_taper,
        jobs,
        solver: opts,
    };
    if args.input.is_dir() {
        let dirs = fixture_dirs(&args.input)?;
        let pool = thread_pool(jobs)?;
        create_dir(&args.out)?;
        pool.install(|| {
            dirs.par_iter().try_for_each(|dir| {
                let fx = load_fixture(dir)?;
                let blurry = prepare(fx.blurry, &fx.kernel, args.edge_taper)?;
                let (out, trace) = run_solver(&blurry, &fx.kernel, &cfg, fx.map_gt.as_ref())?;
                let dst = args.out.join(&fx.name);
                create_dir(&dst)?;
                write_image(&out, &dst.join(DEBLURRED_FILE))?;
                if args.trace {
                    write_trace(&trace, &dst.join(TRACE_FILE))?;
                }
                log::info!("{}: done", fx.name);
                Ok::<_, Error>(())
            })
        })?;
        write_json(&snapshot, &args.out.join("deblur_config.json"))
    } else {
        let kernel_path = args
            .kernel
            .as_deref()
            .ok_or_else(|| Error::Config("--kernel is required for a single image".into()))?;
        let kernel = read_kernel(kernel_path)?;
        let blurry = prepare(read_image(&args.input)?, &kernel, args.edge_taper)?;
        let map_gt = args
            .map_gt
            .as_deref()
            .map(|p| read_image(p).and_then(LatentMap::new))
            .transpose()?;
        let (out, trace) = run_solver(&blurry, &kernel, &cfg, map_gt.as_ref())?;
        create_parent(&args.out)?;
        write_image(&out, &args.out)?;
        if args.trace {
            write_trace(&trace, &args.out.with_extension("trace.jsonl"))?;
        }
        write_json(&snapshot, &snapshot_path(&args.out, "deblur"))
    }
}

fn prepare(blurry: Image, kernel: &Kernel, taper: bool) -> Result<Image> {
    if taper {
        edge_taper(&blurry, kernel)
    } else {
        Ok(blurry)
    }
}

fn write_trace(trace: &SolverTrace, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

// ---------------------------------------------------------------- eval

#[derive(Serialize)]
struct PairScore {
    pair: String,
    #[serde(flatten)]
    restored: MetricReport,
    blurry: MetricReport,
}

#[derive(Serialize)]
struct EvalReport {
    pairs: Vec<PairScore>,
    restored: MetricSummary,
    blurry: MetricSummary,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let value = match (&args.estimate, &args.reference, &args.results, &args.fixtures) {
        (Some(est), Some(reference), None, None) => {
            let report = MetricReport::evaluate(&read_image(est)?, &read_image(reference)?)?;
            serde_json::to_value(report)
        }
        (None, None, Some(results), Some(fixtures)) => {
            let pairs = fixture_dirs(fixtures)?
                .iter()
                .map(|dir| {
                    let name = dir_name(dir);
                    let gt = read_image(&dir.join(GT_FILE))?;
                    let blurry = read_image(&dir.join(BLURRY_FILE))?;
                    let est = read_image(&results.join(&name).join(DEBLURRED_FILE))?;
                    Ok(PairScore {
                        restored: MetricReport::evaluate(&est, &gt)?,
                        blurry: MetricReport::evaluate(&blurry, &gt)?,
                        pair: name,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = EvalReport {
                restored: MetricSummary::from_reports(pairs.iter().map(|p| &p.restored)),
                blurry: MetricSummary::from_reports(pairs.iter().map(|p| &p.blurry)),
                pairs,
            };
            serde_json::to_value(report)
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --estimate and --reference, or --results and --fixtures".into(),
            ))
        }
    }
    .map_err(|e| Error::Config(format!("serialising report: {e}")))?;
    match &args.out {
        Some(path) => {
            create_parent(path)?;
            write_json(&value, path)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- ablate

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Serialize)]
struct AblateSnapshot<'a> {
    fixtures: &'a Path,
    variants: &'a [String],
    jobs: Option<usize>,
    solver: &'a SolverOptions,
}

/// Runs every variant over `fixtures` and returns one row per variant.
pub fn ablate(fixtures: &[Fixture], variants: &[(String, SolverConfig)]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|(label, cfg)| {
            let reports = fixtures
                .par_iter()
                .map(|fx| {
                    let (out, _) = run_solver(&fx.blurry, &fx.kernel, cfg, fx.map_gt.as_ref())?;
                    MetricReport::evaluate(&out, &fx.gt)
                })
                .collect::<Result<Vec<_>>>()?;
            let s = MetricSummary::from_reports(&reports);
            Ok(AblationRow {
                variant: label.clone(),
                count: s.count,
                mean_psnr: s.mean_psnr,
                mean_ssim: s.mean_ssim,
            })
        })
        .collect()
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.variant.len())
        .chain(["variant".len()])
        .max()
        .unwrap_or(7);
    let mut s = format!(
        "{:<width$}  {:>5}  {:>10}  {:>8}\n",
        "variant", "n", "psnr_db", "ssim"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>5}  {:>10.4}  {:>8.4}\n",
            r.variant, r.count, r.mean_psnr, r.mean_ssim
        ));
    }
    s
}

fn cmd_ablate(args: &AblateArgs, opts: &SolverOptions, jobs: Option<usize>) -> Result<()> {
    let variants = args
        .variants
        .iter()
        .map(|v| {
            let (map, prior) = split_variant(v);
            let cfg = opts.build(map, prior)?;
            Ok((cfg.estimators.label(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = thread_pool(jobs)?;
    let fixtures = pool.install(|| {
        fixture_dirs(&args.fixtures)?
            .par_iter()
            .map(|d| load_fixture(d))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = pool.install(|| ablate(&fixtures, &variants))?;
    let table = format_table(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        create_parent(out)?;
        write_json(&rows, out)?;
        write_atomic(&out.with_extension("txt"), table.as_bytes())?;
        let snapshot = AblateSnapshot {
            fixtures: &args.fixtures,
            variants: &args.variants,
            jobs,
            solver: opts,
        };
        write_json(&snapshot, &snapshot_path(out, "ablate"))?;
    }
    Ok(())
}
