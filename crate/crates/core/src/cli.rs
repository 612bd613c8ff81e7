//! Command implementations behind the `gated` binary.
//!
//! Each `cmd_*` function is a plain library call so that the pipeline can be driven
//! (and tested) in-process; the binary only parses flags, sizes the thread pool and
//! maps [`CliError`] to an exit code.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::domain::{GatedStack, Raster};
use crate::error::Error;
use crate::estimate::{estimate_depth, LmOptions};
use crate::io;
use crate::metrics::{completeness, depth_metrics, GroundTruth, MetricsReport, DEFAULT_MAX_RANGE_M};
use crate::profile::{FittedProfiles, ProfileConfig, ProfileSet};
use crate::simulate::{
    add_noise, gen_scene, render_slices, sample_lidar, subtract_ambient, Layout, LidarPattern, NoiseParams,
    RenderOptions, SceneSpec,
};

pub const DEPTH_GT_FILE: &str = "depth_gt.bin";
pub const ALBEDO_GT_FILE: &str = "albedo_gt.bin";
pub const SPARSE_GT_FILE: &str = "sparse_gt.csv";
pub const DEPTH_PRED_FILE: &str = "depth_pred.bin";
pub const ALBEDO_PRED_FILE: &str = "albedo_pred.bin";
pub const RESIDUAL_FILE: &str = "residual.bin";
pub const MASK_FILE: &str = "mask.png";

/// Environment variable overriding the worker thread count (0 = one per core).
pub const THREADS_ENV: &str = "GATED_THREADS";

/// Depth range of the benchmark scene.
pub const BENCH_DEPTH_RANGE: (f64, f64) = (15.0, 75.0);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(Error),
    /// Nothing meaningful to compute (e.g. no evaluable points): exit 3.
    #[error(transparent)]
    Protocol(Error),
    #[error(transparent)]
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Protocol(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ZeroEvaluatedPoints | Error::InvalidPrediction { .. } | Error::EmptyMask => {
                CliError::Protocol(e)
            }
            _ => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config<T>(r: crate::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Config)
}

#[derive(Debug, Parser)]
#[command(name = "gated", version, about = "Gated-imaging simulation and least-squares depth reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize slice profiles from a pulse/gate configuration and fit Chebyshev series.
    Profile(ProfileArgs),
    /// Generate a scene, render a gated stack and write ground truth.
    Simulate(SimulateArgs),
    /// Per-pixel least-squares depth and albedo from a gated stack.
    Estimate(EstimateArgs),
    /// Score a depth prediction against dense or sparse ground truth.
    Evaluate(EvaluateArgs),
    /// Throughput of the render and estimate paths.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// Profile configuration JSON.
    pub config: PathBuf,
    #[arg(long, default_value_t = crate::profile::DEFAULT_DEGREE)]
    pub fit_degree: usize,
    /// Fitted profiles JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// `a,b,seed` or `a=..,b=..,seed=..` (keyed form: `b` and `seed` default to 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseArg(pub NoiseParams);

impl FromStr for NoiseArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let mut params = NoiseParams { a: f64::NAN, b: 0.0, seed: 0 };
        let float = |field: &str, v: &str| v.parse::<f64>().map_err(|_| format!("{field}: {v:?} is not a number"));
        let seed = |v: &str| v.parse::<u64>().map_err(|_| format!("seed: {v:?} is not an unsigned integer"));
        if parts.iter().any(|p| p.contains('=')) {
            for p in parts {
                let (k, v) = p.split_once('=').ok_or_else(|| format!("expected key=value, got {p:?}"))?;
                match k.trim() {
                    "a" => params.a = float("a", v.trim())?,
                    "b" => params.b = float("b", v.trim())?,
                    "seed" => params.seed = seed(v.trim())?,
                    other => return Err(format!("unknown noise field {other:?}")),
                }
            }
            if params.a.is_nan() {
                return Err("a: missing".into());
            }
        } else {
            let [a, b, s] = parts[..] else {
                return Err(format!("expected a,b,seed, got {s:?}"));
            };
            params = NoiseParams { a: float("a", a)?, b: float("b", b)?, seed: seed(s)? };
        }
        params.validate().map_err(|e| e.to_string())?;
        Ok(NoiseArg(params))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scene JSON: a scene spec plus optional `ambient_level` (DN) and `lidar` pattern.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub profiles: PathBuf,
    /// Sensor noise; omitted means a noiseless, quantized render.
    #[arg(long)]
    pub noise: Option<NoiseArg>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Scene file accepted by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(flatten)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub ambient_level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<LidarPattern>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Directory holding slice_{1,2,3}.png and optionally ambient.png.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub profiles: PathBuf,
    /// LM options as inline JSON or a path to a JSON file; missing keys keep defaults.
    #[arg(long)]
    pub lm_opts: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Dense depth (`.bin` + header) or sparse points (`.csv`).
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluation mask PNG; defaults to the prediction's valid pixels.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_RANGE_M)]
    pub max_range: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub report: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSize {
    pub width: usize,
    pub height: usize,
}

impl FromStr for FrameSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let dim = |v: &str| match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("{v:?} is not a positive integer")),
        };
        Ok(FrameSize { width: dim(w)?, height: dim(h)? })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "1280x720")]
    pub size: FrameSize,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Reads LM options from inline JSON (`{...}`) or a file path.
pub fn parse_lm_opts(arg: Option<&str>) -> CliResult<LmOptions> {
    let opts: LmOptions = match arg {
        None => LmOptions::default(),
        Some(s) if s.trim_start().starts_with('{') => {
            serde_json::from_str(s).map_err(|e| CliError::Usage(format!("--lm-opts: {e}")))?
        }
        Some(path) => config(io::read_json(path))?,
    };
    config(opts.validate())?;
    Ok(opts)
}

fn load_profiles(path: &Path) -> CliResult<ProfileSet> {
    config(io::read_profiles(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSummary {
    pub residuals: [f64; 3],
}

pub fn cmd_profile(args: &ProfileArgs) -> CliResult<ProfileSummary> {
    let cfg: ProfileConfig = config(io::read_json(&args.config))?;
    let (set, residuals) = config(cfg.fit(args.fit_degree))?;
    io::write_json(&args.out, &FittedProfiles::from_set(&set, Some(residuals)))?;
    Ok(ProfileSummary { residuals })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub width: usize,
    pub height: usize,
    pub valid_depth: usize,
    pub sparse_points: usize,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SimulateSummary> {
    let scene: SceneFile = config(io::read_json(&args.scene))?;
    if !(scene.ambient_level >= 0.0 && scene.ambient_level <= crate::MAX_DN) {
        return Err(CliError::Config(Error::invalid(
            "ambient_level",
            format!("{} must lie in [0, {}]", scene.ambient_level, crate::MAX_DN),
        )));
    }
    let profiles = load_profiles(&args.profiles)?;
    let (depth, albedo) = config(gen_scene(&scene.scene))?;
    let (w, h) = depth.dims();
    let pattern = scene
        .lidar
        .unwrap_or_else(|| LidarPattern::for_frame(h, scene.scene.seed));
    let sparse = config(sample_lidar(&depth, &pattern))?;

    let mut opts = RenderOptions {
        ambient_level: scene.ambient_level,
        quantize: args.noise.is_none(),
        clamp_to_domain: false,
    };
    let render = |opts: RenderOptions| match render_slices(&depth, &albedo, &profiles, opts) {
        Err(e @ Error::OutOfDomain { .. }) => Err(CliError::Config(e)),
        r => Ok(r?),
    };
    let mut stack = match args.noise {
        None => render(opts)?,
        Some(NoiseArg(params)) => {
            opts.quantize = false;
            let mut clean = render(opts)?;
            // The dark frame is always captured, even when there is no ambient light.
            clean.ambient.get_or_insert_with(|| Raster::filled(w, h, 0.0));
            add_noise(&clean, &params)?
        }
    };
    stack.ambient.get_or_insert_with(|| Raster::filled(w, h, 0.0));

    io::write_stack(&args.out, &stack)?;
    io::write_depth(args.out.join(DEPTH_GT_FILE), &depth)?;
    io::write_albedo(args.out.join(ALBEDO_GT_FILE), &albedo)?;
    io::write_sparse(args.out.join(SPARSE_GT_FILE), &sparse)?;
    Ok(SimulateSummary {
        width: w,
        height: h,
        valid_depth: depth.valid_count(),
        sparse_points: sparse.samples().len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub pixels: usize,
    pub illuminated: usize,
    /// Completeness against `depth_gt.bin` in the input directory, when present.
    pub completeness: Option<f64>,
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<EstimateSummary> {
    let profiles = load_profiles(&args.profiles)?;
    let opts = parse_lm_opts(args.lm_opts.as_deref())?;
    let stack = config(io::read_stack(&args.input, profiles.delays_ns(), io::ReadMode::Strict))?;
    let stack: GatedStack = if stack.ambient.is_some() {
        subtract_ambient(&stack, true)?
    } else {
        stack
    };
    let est = estimate_depth(&stack, &profiles, &opts)?;

    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    io::write_depth(args.out.join(DEPTH_PRED_FILE), &est.depth)?;
    io::write_albedo(args.out.join(ALBEDO_PRED_FILE), &est.albedo)?;
    io::write_float_raster(
        args.out.join(RESIDUAL_FILE),
        &est.residual.map(|&v| v as f32),
        "DN^2",
        None,
    )?;
    io::write_mask(args.out.join(MASK_FILE), &est.illuminated)?;

    let gt_path = args.input.join(DEPTH_GT_FILE);
    let completeness = if gt_path.exists() {
        let gt = config(io::read_depth(&gt_path))?;
        Some(completeness(GroundTruth::Dense(&gt), &est.illuminated, DEFAULT_MAX_RANGE_M)?)
    } else {
        None
    };
    Ok(EstimateSummary {
        pixels: est.illuminated.len(),
        illuminated: est.illuminated.count(),
        completeness,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<MetricsReport> {
    if !(args.max_range > 0.0) {
        return Err(CliError::Usage(format!("--max-range {} must be > 0", args.max_range)));
    }
    let pred = config(io::read_depth(&args.pred))?;
    let (w, h) = pred.dims();
    let mask = match &args.mask {
        Some(p) => config(io::read_mask(p))?,
        None => pred.valid_mask(),
    };
    let is_sparse = args.gt.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let report = if is_sparse {
        let gt = config(io::read_sparse(&args.gt, w, h))?;
        depth_metrics(&pred, GroundTruth::Sparse(&gt), &mask, args.max_range)?
    } else {
        let gt = config(io::read_depth(&args.gt))?;
        depth_metrics(&pred, GroundTruth::Dense(&gt), &mask, args.max_range)?
    };
    Ok(report)
}

/// Timing of one pipeline stage over the benchmark repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub seconds: Vec<f64>,
    pub median_seconds: f64,
    /// `None` when the stage finished below timer resolution.
    pub median_pixels_per_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStages {
    pub render: StageTiming,
    pub noise: StageTiming,
    pub estimate: StageTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub pixels: usize,
    pub repeat: usize,
    pub threads: usize,
    pub stages: BenchStages,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stage(seconds: Vec<f64>, pixels: usize) -> StageTiming {
    let median_seconds = median(&seconds);
    StageTiming {
        median_pixels_per_second: (median_seconds > 0.0).then(|| pixels as f64 / median_seconds),
        median_seconds,
        seconds,
    }
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<BenchReport> {
    if args.repeat == 0 {
        return Err(CliError::Usage("--repeat must be >= 1".into()));
    }
    let FrameSize { width, height } = args.size;
    let (profiles, _) = ProfileConfig::default().fit(crate::profile::DEFAULT_DEGREE)?;
    let (depth, albedo) = gen_scene(&SceneSpec {
        layout: Layout::Road,
        depth_range: BENCH_DEPTH_RANGE,
        albedo_range: (0.3, 1.0),
        width,
        height,
        seed: args.seed,
        steps: 4,
    })?;
    let noise = NoiseParams { a: 4.0, b: 25.0, seed: args.seed };
    let opts = RenderOptions { ambient_level: 50.0, ..RenderOptions::default() };
    let lm = LmOptions::default();

    let (mut t_render, mut t_noise, mut t_estimate) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..args.repeat {
        let t = Instant::now();
        let clean = render_slices(&depth, &albedo, &profiles, opts)?;
        t_render.push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        let noisy = add_noise(&clean, &noise)?;
        t_noise.push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        let frame = subtract_ambient(&noisy, true)?;
        estimate_depth(&frame, &profiles, &lm)?;
        t_estimate.push(t.elapsed().as_secs_f64());
    }
    let pixels = width * height;
    Ok(BenchReport {
        width,
        height,
        pixels,
        repeat: args.repeat,
        threads: rayon::current_num_threads(),
        stages: BenchStages {
            render: stage(t_render, pixels),
            noise: stage(t_noise, pixels),
            estimate: stage(t_estimate, pixels),
        },
    })
}

/// Parses `GATED_THREADS`; unset or empty means automatic.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={s:?} is not a thread count"))),
    }
}

/// Runs a parsed command, printing its human/JSON output to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Profile(args) => {
            let s = cmd_profile(&args)?;
            for (i, r) in s.residuals.iter().enumerate() {
                println!("slice {}: rms fit residual {r:.6e}", i + 1);
            }
            println!("wrote {}", args.out.display());
        }
        Command::Simulate(args) => {
            let s = cmd_simulate(&args)?;
            println!(
                "{}x{} frame, {} valid depth pixels, {} sparse points -> {}",
                s.width,
                s.height,
                s.valid_depth,
                s.sparse_points,
                args.out.display()
            );
        }
        Command::Estimate(args) => {
            let s = cmd_estimate(&args)?;
            println!(
                "illuminated: {} of {} pixels ({:.1}%)",
                s.illuminated,
                s.pixels,
                100.0 * s.illuminated as f64 / s.pixels as f64
            );
            if let Some(c) = s.completeness {
                println!("completeness: {c:.1}%");
            }
        }
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            match args.report {
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
                ReportFormat::Table => print!("{}", report.to_table()),
            }
        }
        Command::Bench(args) => {
            let report = cmd_bench(&args)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_forms() {
        let p = NoiseArg::from_str("4,25,7").unwrap().0;
        assert_eq!((p.a, p.b, p.seed), (4.0, 25.0, 7));
        let p = NoiseArg::from_str("a=2, seed=3").unwrap().0;
        assert_eq!((p.a, p.b, p.seed), (2.0, 0.0, 3));
        let e = NoiseArg::from_str("a=-1").unwrap_err();
        assert!(e.contains("a:"), "{e}");
        assert!(NoiseArg::from_str("4,-1,0").unwrap_err().contains("b:"));
        assert!(NoiseArg::from_str("4,25").is_err());
        assert!(NoiseArg::from_str("c=1").is_err());
    }

    #[test]
    fn frame_size() {
        assert_eq!(FrameSize::from_str("1280x720").unwrap(), FrameSize { width: 1280, height: 720 });
        assert!(FrameSize::from_str("0x5").is_err());
        assert!(FrameSize::from_str("12").is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::ZeroEvaluatedPoints).exit_code(), 3);
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::from(Error::EmptyGrid).exit_code(), 1);
    }

    #[test]
    fn lm_opts_inline() {
        let o = parse_lm_opts(Some(r#"{"max_iterations": 5}"#)).unwrap();
        assert_eq!(o.max_iterations, 5);
        assert_eq!(o.init_grid_step_m, LmOptions::default().init_grid_step_m);
        assert!(matches!(parse_lm_opts(Some("{nope")), Err(CliError::Usage(_))));
    }
}
