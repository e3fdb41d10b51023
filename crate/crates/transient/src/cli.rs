//! Command-line front end. Angles on the command line are in degrees.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use transient_core::estimate::{
    estimate_plane_abs, estimate_plane_abs_with_albedo, estimate_plane_theoretical_with, Z0Rule,
};
use transient_core::metrics::{berhu, depth_metrics, BERHU_C, DEFAULT_THRESHOLDS};
use transient_core::render::{render_plane_soft, render_plane_with_albedo};
use transient_core::spad::{
    correct_pileup_coates, estimate_transient_lowflux, simulate_asynchronous_spad,
    simulate_synchronous_spad,
};
use transient_core::sweep::{Noise, SweepConfig, SweepReport};
use transient_core::{
    AbsConfig, AcquisitionMode, DepthMetrics, PlaneEstimate, PlaneParams, RenderSettings,
    SensorConfig, TransientHistogram,
};

use crate::io::{self, HistogramData, HistogramFile, Metadata, SCHEMA_VERSION};
use crate::parallel;

/// Background flux of the default sweep configuration.
pub const SWEEP_BKG_FLUX: f64 = 1e-5;
/// Default noiseless laser photons per cycle of each sweep cell.
pub const SWEEP_TARGET_FLUX: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "transient", version, about = "Render, acquire and invert transient histograms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a uniform plane into a transient histogram.
    RenderPlane(RenderPlaneArgs),
    /// Monte-Carlo render of a TKDM depth map.
    RenderDepth(RenderDepthArgs),
    /// Simulate SPAD acquisition of a transient histogram.
    SpadSim(SpadSimArgs),
    /// Estimate plane distance and tilt from a transient histogram.
    EstimatePlane(EstimatePlaneArgs),
    /// Compare the closed-form and AbS estimators over a (Z0, tilt) grid.
    Sweep(SweepArgs),
    /// Depth error metrics between two TKDM depth maps.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Sensor configuration JSON; defaults to the built-in configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<SensorConfig> {
        Ok(match &self.config {
            Some(p) => io::read_config(p)?,
            None => SensorConfig::default(),
        })
    }
}

#[derive(Debug, Args)]
pub struct RenderPlaneArgs {
    /// Distance along the optical axis (m).
    #[arg(long)]
    pub z0: f64,
    /// Plane tilt (deg).
    #[arg(long)]
    pub theta_n: f64,
    /// Plane normal azimuth (deg); does not affect the histogram.
    #[arg(long, default_value_t = 0.0)]
    pub phi_n: f64,
    #[arg(long, default_value_t = 1.0)]
    pub albedo: f64,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Use the differentiable soft-binned renderer.
    #[arg(long)]
    pub soft: bool,
    /// Soft-binning width (bins).
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 128)]
    pub angular_resolution: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderDepthArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 1_000_000)]
    pub rays: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FluxEstimator {
    Lowflux,
    Coates,
}

#[derive(Debug, Args)]
pub struct SpadSimArgs {
    /// Transient histogram to acquire.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub cycles: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Sync)]
    pub mode: ModeArg,
    /// Dead time after a detection (bins); asynchronous mode only.
    #[arg(long, default_value_t = 0)]
    pub dead_time_bins: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also estimate the flux from the counts.
    #[arg(long, value_enum, requires = "estimate_out")]
    pub estimate: Option<FluxEstimator>,
    /// Where the flux estimate is written.
    #[arg(long, requires = "estimate")]
    pub estimate_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Theoretical,
    Abs,
    /// AbS with an additional per-bin albedo factor.
    AbsAlbedo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Z0RuleArg {
    Peak,
    SupportCenter,
}

#[derive(Debug, Args)]
pub struct AbsArgs {
    /// Low-pass DFT coefficients in the loss.
    #[arg(long)]
    pub k: Option<usize>,
    /// Initial gradient step.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Edge threshold as a fraction of the peak above the floor.
    #[arg(long)]
    pub threshold_frac: Option<f64>,
}

impl AbsArgs {
    fn build(&self) -> AbsConfig {
        let d = AbsConfig::default();
        AbsConfig {
            k_coeffs: self.k.unwrap_or(d.k_coeffs),
            step_size: self.step.unwrap_or(d.step_size),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            threshold_frac: self.threshold_frac.unwrap_or(d.threshold_frac),
            ..d
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimatePlaneArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Sensor configuration JSON; defaults to the snapshot stored in the
    /// histogram file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Abs)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = Z0RuleArg::Peak)]
    pub z0_rule: Z0RuleArg,
    #[command(flatten)]
    pub abs: AbsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Inclusive grid `a:b:n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("expected a:b:n, got `{s}`"));
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("invalid number `{t}` in `{s}`"));
        let count: usize = n.parse().map_err(|_| format!("invalid count `{n}` in `{s}`"))?;
        if count == 0 {
            return Err("grid count must be at least 1".into());
        }
        Ok(Self {
            start: num(a)?,
            end: num(b)?,
            count,
        })
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Plane distances `a:b:n` (m).
    #[arg(long, default_value = "0.5:9.5:10")]
    pub z0_grid: Grid,
    /// Plane tilts `a:b:n` (deg).
    #[arg(long, default_value = "5:45:10")]
    pub theta_grid: Grid,
    /// SPAD cycles per measurement.
    #[arg(long, default_value_t = 100_000, conflicts_with = "noiseless")]
    pub cycles: u64,
    /// Feed renders to the estimators without SPAD noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Runs per cell.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First run seed; runs use consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sensor configuration JSON; defaults to the built-in configuration
    /// with a small background flux.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noiseless laser photons per cycle in every cell.
    #[arg(long, default_value_t = SWEEP_TARGET_FLUX, conflicts_with = "fixed_power")]
    pub target_flux: f64,
    /// Use the configured laser power in every cell instead.
    #[arg(long)]
    pub fixed_power: bool,
    #[arg(long, default_value_t = 128)]
    pub angular_resolution: usize,
    #[command(flatten)]
    pub abs: AbsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-cell errors as CSV.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON envelope of command outputs other than histograms.
#[derive(Debug, Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: T,
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit<T: Serialize>(out: Option<&Path>, kind: &str, body: T) -> Result<()> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    };
    emit_text(out, &io::to_json_string(&doc))
}

fn seed_or_random(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => (rand::random(), true),
    }
}

fn render_plane_cmd(a: &RenderPlaneArgs) -> Result<()> {
    let config = a.config.load()?;
    let plane = PlaneParams::new(a.z0, a.theta_n.to_radians(), a.phi_n.to_radians())?;
    let settings = RenderSettings {
        angular_resolution: a.angular_resolution,
        soft_sigma_bins: a.sigma,
        ..Default::default()
    };
    let hist = if a.soft {
        if a.albedo != 1.0 {
            bail!("--albedo is not supported with --soft");
        }
        render_plane_soft(&plane, &config, &settings)?.flux
    } else {
        render_plane_with_albedo(&plane, a.albedo, &config, &settings)?
    };
    let file = HistogramFile::transient(hist)
        .with_config(config)
        .with_metadata(Metadata {
            command: Some("render-plane".into()),
            ..Default::default()
        });
    emit_text(a.out.as_deref(), &file.to_json())
}

fn render_depth_cmd(a: &RenderDepthArgs) -> Result<()> {
    let config = a.config.load()?;
    let scene = io::read_depth_map(&a.scene)?;
    let (seed, seed_generated) = seed_or_random(a.seed);
    let settings = RenderSettings {
        mc_rays: a.rays,
        seed,
        ..Default::default()
    };
    let r = parallel::render_depth_map(&scene, &config, &settings)?;
    let file = HistogramFile::transient(r.histogram)
        .with_config(config)
        .with_metadata(Metadata {
            command: Some("render-depth".into()),
            seed: Some(seed),
            seed_generated,
            missed_rays: Some(r.missed_rays),
            total_rays: Some(r.total_rays),
        });
    emit_text(a.out.as_deref(), &file.to_json())
}

fn read_transient(path: &Path) -> Result<(TransientHistogram, Option<SensorConfig>)> {
    let file = HistogramFile::read(path)?;
    match file.data {
        HistogramData::Transient(h) => Ok((h, file.config)),
        HistogramData::Spad { .. } => bail!(
            "{}: expected a transient histogram; convert SPAD counts with `spad-sim --estimate`",
            path.display()
        ),
    }
}

fn spad_sim_cmd(a: &SpadSimArgs) -> Result<()> {
    let (hist, config) = read_transient(&a.input)?;
    let (seed, seed_generated) = seed_or_random(a.seed);
    let spad = match a.mode {
        ModeArg::Sync => {
            if a.dead_time_bins != 0 {
                bail!("--dead-time-bins only applies to --mode async");
            }
            simulate_synchronous_spad(&hist, a.cycles, seed)?
        }
        ModeArg::Async => simulate_asynchronous_spad(&hist, a.cycles, a.dead_time_bins, seed)?,
    };
    let meta = Metadata {
        command: Some("spad-sim".into()),
        seed: Some(seed),
        seed_generated,
        ..Default::default()
    };
    let estimate = match a.estimate {
        None => None,
        Some(FluxEstimator::Lowflux) => Some(estimate_transient_lowflux(&spad, hist.bin_time_s)),
        Some(FluxEstimator::Coates) => {
            if spad.mode != AcquisitionMode::Synchronous {
                bail!("Coates correction needs synchronous counts");
            }
            Some(correct_pileup_coates(&spad, hist.bin_time_s)?)
        }
    };
    let with_config = |f: HistogramFile| match &config {
        Some(c) => f.with_config(c.clone()),
        None => f,
    };
    if let (Some(est), Some(path)) = (estimate, &a.estimate_out) {
        with_config(HistogramFile::transient(est))
            .with_metadata(meta.clone())
            .write(path)?;
    }
    let file = with_config(HistogramFile::spad(spad, hist.bin_time_s)).with_metadata(meta);
    emit_text(a.out.as_deref(), &file.to_json())
}

#[derive(Debug, Serialize)]
struct EstimateBody {
    #[serde(flatten)]
    estimate: PlaneEstimate,
    theta_n_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    albedo: Option<Vec<f64>>,
}

fn estimate_plane_cmd(a: &EstimatePlaneArgs) -> Result<()> {
    let (hist, snapshot) = read_transient(&a.input)?;
    let config = match (&a.config, snapshot) {
        (Some(p), _) => io::read_config(p)?,
        (None, Some(c)) => c,
        (None, None) => bail!(
            "{}: no sensor configuration stored in the file; pass --config",
            a.input.display()
        ),
    };
    let rel = (hist.bin_time_s - config.bin_time_s).abs() / config.bin_time_s;
    if rel > 1e-9 {
        bail!(
            "histogram bin time {} s does not match configuration {} s",
            hist.bin_time_s,
            config.bin_time_s
        );
    }
    let abs = a.abs.build();
    let rule = match a.z0_rule {
        Z0RuleArg::Peak => Z0Rule::Peak,
        Z0RuleArg::SupportCenter => Z0Rule::SupportCenter,
    };
    let (estimate, albedo) = match a.method {
        MethodArg::Theoretical => (
            estimate_plane_theoretical_with(&hist, &config, abs.threshold_frac, rule)?,
            None,
        ),
        MethodArg::Abs => (estimate_plane_abs(&hist, &config, &abs)?, None),
        MethodArg::AbsAlbedo => {
            let (e, alb) = estimate_plane_abs_with_albedo(&hist, &config, &abs)?;
            (e, Some(alb))
        }
    };
    let theta_n_deg = estimate.theta_n_rad.to_degrees();
    emit(
        a.out.as_deref(),
        "plane_estimate",
        EstimateBody {
            estimate,
            theta_n_deg,
            albedo,
        },
    )
}

/// Sweep described by the arguments, with run seeds `base, base + 1, ...`.
pub fn sweep_config(a: &SweepArgs, base: u64) -> Result<SweepConfig> {
    let config = match &a.config {
        Some(p) => io::read_config(p)?,
        None => SensorConfig::default().with_bkg_flux(SWEEP_BKG_FLUX),
    };
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok(SweepConfig {
        z0_values: a.z0_grid.values(),
        theta_values: a.theta_grid.values().into_iter().map(f64::to_radians).collect(),
        config,
        render: RenderSettings {
            angular_resolution: a.angular_resolution,
            ..Default::default()
        },
        noise: if a.noiseless {
            Noise::Noiseless
        } else {
            Noise::Spad { cycles: a.cycles }
        },
        target_signal_flux: (!a.fixed_power).then_some(a.target_flux),
        abs: a.abs.build(),
        seeds: (0..a.seeds).map(|i| base.wrapping_add(i)).collect(),
    })
}

/// One CSV row per cell; unavailable errors are left empty.
pub fn plot_data_csv(report: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "z0_m",
        "theta_deg",
        "valid",
        "theoretical_z0_mae_m",
        "theoretical_theta_mae_deg",
        "abs_z0_mae_m",
        "abs_theta_mae_deg",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.cells {
        w.write_record([
            c.z0_m.to_string(),
            c.theta_rad.to_degrees().to_string(),
            c.is_valid().to_string(),
            opt(c.mae_theoretical.map(|e| e.z0_m)),
            opt(c.mae_theoretical.map(|e| e.theta_rad.to_degrees())),
            opt(c.mae_abs.map(|e| e.z0_m)),
            opt(c.mae_abs.map(|e| e.theta_rad.to_degrees())),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Debug, Serialize)]
struct SweepBody {
    #[serde(flatten)]
    report: SweepReport,
    seed_generated: bool,
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let (seed, seed_generated) = seed_or_random(a.seed);
    let sweep = sweep_config(a, seed)?;
    let report = parallel::run_sweep(&sweep)?;
    if let Some(p) = &a.emit_plot_data {
        io::write_text(p, &plot_data_csv(&report)?)?;
    }
    emit(
        a.out.as_deref(),
        "sweep_report",
        SweepBody {
            report,
            seed_generated,
        },
    )
}

#[derive(Debug, Serialize)]
struct MetricsBody {
    #[serde(flatten)]
    metrics: DepthMetrics,
    berhu_c: f64,
    /// Mean BerHu loss of `pred - gt` over valid pixels.
    berhu_mean: f64,
    valid_pixels: usize,
}

fn metrics_cmd(a: &MetricsArgs) -> Result<()> {
    let pred = io::read_depth_map(&a.pred)?;
    let gt = io::read_depth_map(&a.gt)?;
    if (pred.width, pred.height) != (gt.width, gt.height) {
        bail!(
            "depth maps differ in size: {}x{} vs {}x{}",
            pred.width,
            pred.height,
            gt.width,
            gt.height
        );
    }
    let metrics = depth_metrics(&pred.depth, &gt.depth, &DEFAULT_THRESHOLDS)?;
    let residuals: Vec<f64> = pred
        .depth
        .iter()
        .zip(&gt.depth)
        .filter(|(_, y)| y.is_finite() && **y > 0.0)
        .map(|(p, y)| p - y)
        .collect();
    let berhu_mean =
        residuals.iter().map(|&r| berhu(r, BERHU_C)).sum::<f64>() / residuals.len() as f64;
    emit(
        a.out.as_deref(),
        "depth_metrics",
        MetricsBody {
            metrics,
            berhu_c: BERHU_C,
            berhu_mean,
            valid_pixels: residuals.len(),
        },
    )
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::RenderPlane(a) => render_plane_cmd(a),
        Command::RenderDepth(a) => render_depth_cmd(a),
        Command::SpadSim(a) => spad_sim_cmd(a),
        Command::EstimatePlane(a) => estimate_plane_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Numerical failures come from the core; everything else (usage, files,
/// schemas, preconditions) is a validation error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err.chain().any(|e| {
        let core = e.downcast_ref::<transient_core::Error>().or_else(|| match e.downcast_ref() {
            Some(io::IoError::Invalid { source, .. }) => Some(source),
            _ => None,
        });
        core.is_some_and(transient_core::Error::is_numerical)
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Diagnostics go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return EXIT_VALIDATION;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            exit_code(&e)
        }
    }
}
