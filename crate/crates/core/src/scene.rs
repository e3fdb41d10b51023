//! Shared domain types: sensor configuration, histograms, planar and
//! depth-map scenes, and the mapping between bins and distances.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use libm::{cos, exp, floor, sin, sqrt, tan};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative slack when checking `n_bins == floor(1 / (f * bin_time))`, so a
/// configuration built as `bin_time = 1 / (f * N)` is not rejected over a
/// rounding error in the last place.
const BIN_COUNT_SLACK: f64 = 1e-9;

/// Discrete, unit-sum kernel modelling a laser pulse of finite width.
///
/// Index `len / 2` is the kernel center (zero delay).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct PulseKernel(Vec<f64>);

impl PulseKernel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("pulse kernel is empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("pulse kernel weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pulse kernel must sum to 1"));
        }
        Ok(Self(weights))
    }

    /// Gaussian pulse with standard deviation `sigma_bins`, truncated at
    /// four standard deviations and renormalized.
    pub fn gaussian(sigma_bins: f64) -> Result<Self> {
        if !(sigma_bins > 0.0) || !sigma_bins.is_finite() {
            return Err(Error::invalid("gaussian pulse width must be positive"));
        }
        let half = libm::ceil(4.0 * sigma_bins) as usize;
        let mut w: Vec<f64> = (0..=2 * half)
            .map(|j| {
                let d = j as f64 - half as f64;
                exp(-d * d / (2.0 * sigma_bins * sigma_bins))
            })
            .collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
        Ok(Self(w))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn center(&self) -> usize {
        self.0.len() / 2
    }
}

/// Laser and sensor parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensorConfig {
    /// Laser repetition frequency (Hz).
    pub rep_rate_hz: f64,
    /// Time-bin width (s).
    pub bin_time_s: f64,
    pub n_bins: usize,
    /// Full cone angle of the illumination (rad).
    pub fov_rad: f64,
    /// Photons emitted per laser pulse.
    pub photons_per_pulse: f64,
    /// Background photons per bin per laser cycle.
    pub bkg_flux: f64,
    /// `None` models Dirac pulses.
    #[cfg_attr(feature = "serde", serde(default))]
    pub pulse_kernel: Option<PulseKernel>,
}

impl Default for SensorConfig {
    /// 512 bins over a 10 m range (about 130 ps bins at about 15 MHz) with a
    /// 20 degree illumination cone.
    fn default() -> Self {
        Self::from_range(10.0, 512, 20f64.to_radians())
    }
}

impl SensorConfig {
    /// Configuration with `n_bins` bins spanning an unambiguous range of
    /// `range_m` meters.
    pub fn from_range(range_m: f64, n_bins: usize, fov_rad: f64) -> Self {
        let rep_rate_hz = SPEED_OF_LIGHT / (2.0 * range_m);
        Self {
            rep_rate_hz,
            bin_time_s: 1.0 / (rep_rate_hz * n_bins as f64),
            n_bins,
            fov_rad,
            photons_per_pulse: 1.0,
            bkg_flux: 0.0,
            pulse_kernel: None,
        }
    }

    pub fn with_fov(mut self, fov_rad: f64) -> Self {
        self.fov_rad = fov_rad;
        self
    }

    pub fn with_photons_per_pulse(mut self, photons: f64) -> Self {
        self.photons_per_pulse = photons;
        self
    }

    pub fn with_bkg_flux(mut self, bkg: f64) -> Self {
        self.bkg_flux = bkg;
        self
    }

    pub fn with_pulse_kernel(mut self, kernel: Option<PulseKernel>) -> Self {
        self.pulse_kernel = kernel;
        self
    }

    /// Unambiguous range `c / 2f` (m).
    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.rep_rate_hz)
    }

    /// Distance covered by one bin, `c * bin_time / 2` (m).
    pub fn bin_depth(&self) -> f64 {
        SPEED_OF_LIGHT * self.bin_time_s / 2.0
    }

    /// Far edge of the last bin. Never exceeds [`max_range`](Self::max_range)
    /// by more than rounding.
    pub fn histogram_range(&self) -> f64 {
        self.n_bins as f64 * self.bin_depth()
    }

    /// Solid angle of the illumination cone (sr).
    pub fn cone_solid_angle(&self) -> f64 {
        2.0 * PI * (1.0 - cos(self.fov_rad / 2.0))
    }

    /// Radiometric constant `Phi_laser / (4 pi^2 (1 - cos(fov/2)))`; a patch
    /// with adjusted albedo `a` at distance `r` subtending `dOmega` adds
    /// `radiometric_scale * a / r^4 * dOmega` to its bin.
    pub fn radiometric_scale(&self) -> f64 {
        self.photons_per_pulse / (4.0 * PI * PI * (1.0 - cos(self.fov_rad / 2.0)))
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_config(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// A single broken [`SensorConfig`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    NoBins,
    NonPositiveRepRate,
    NonPositiveBinTime,
    BinCountMismatch { expected: usize, actual: usize },
    FovOutOfRange(f64),
    NonPositivePhotons(f64),
    NegativeBackground(f64),
    InvalidPulseKernel,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoBins => write!(f, "n_bins must be ≥ 1"),
            Self::NonPositiveRepRate => write!(f, "rep_rate_hz must be positive and finite"),
            Self::NonPositiveBinTime => write!(f, "bin_time_s must be positive and finite"),
            Self::BinCountMismatch { expected, actual } => write!(
                f,
                "n_bins must equal floor(1 / (rep_rate_hz * bin_time_s)) = {expected}, got {actual}"
            ),
            Self::FovOutOfRange(v) => write!(f, "fov_rad must lie in (0, pi), got {v}"),
            Self::NonPositivePhotons(v) => write!(f, "photons_per_pulse must be positive, got {v}"),
            Self::NegativeBackground(v) => write!(f, "bkg_flux must be nonnegative, got {v}"),
            Self::InvalidPulseKernel => {
                write!(f, "pulse_kernel must be nonnegative and sum to 1")
            }
        }
    }
}

/// Every invariant `config` violates; empty when the configuration is valid.
pub fn validate_config(config: &SensorConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    if config.n_bins == 0 {
        out.push(ConfigViolation::NoBins);
    }
    let rate_ok = config.rep_rate_hz.is_finite() && config.rep_rate_hz > 0.0;
    let bin_ok = config.bin_time_s.is_finite() && config.bin_time_s > 0.0;
    if !rate_ok {
        out.push(ConfigViolation::NonPositiveRepRate);
    }
    if !bin_ok {
        out.push(ConfigViolation::NonPositiveBinTime);
    }
    if rate_ok && bin_ok && config.n_bins > 0 {
        let ratio = 1.0 / (config.rep_rate_hz * config.bin_time_s);
        let expected = floor(ratio * (1.0 + BIN_COUNT_SLACK)) as usize;
        if expected != config.n_bins {
            out.push(ConfigViolation::BinCountMismatch {
                expected,
                actual: config.n_bins,
            });
        }
    }
    if !(config.fov_rad > 0.0 && config.fov_rad < PI) {
        out.push(ConfigViolation::FovOutOfRange(config.fov_rad));
    }
    if !(config.photons_per_pulse > 0.0 && config.photons_per_pulse.is_finite()) {
        out.push(ConfigViolation::NonPositivePhotons(config.photons_per_pulse));
    }
    if !(config.bkg_flux >= 0.0 && config.bkg_flux.is_finite()) {
        out.push(ConfigViolation::NegativeBackground(config.bkg_flux));
    }
    if let Some(k) = &config.pulse_kernel {
        let sum: f64 = k.weights().iter().sum();
        if k.is_empty() || k.weights().iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            out.push(ConfigViolation::InvalidPulseKernel);
        }
    }
    out
}

/// 1-based bin whose distance interval `[(i-1) d, i d)` contains `r`.
pub fn bin_of_distance(r: f64, config: &SensorConfig) -> Result<usize> {
    let max = config.max_range().min(config.histogram_range());
    if !(r >= 0.0 && r < config.max_range()) {
        return Err(Error::DistanceOutOfRange { distance: r, max });
    }
    let i = floor(r / config.bin_depth()) as usize + 1;
    if i > config.n_bins {
        return Err(Error::DistanceOutOfRange { distance: r, max });
    }
    Ok(i)
}

/// Center distance of 1-based bin `i`.
pub fn distance_of_bin(i: usize, config: &SensorConfig) -> Result<f64> {
    if i == 0 || i > config.n_bins {
        return Err(Error::BinOutOfRange {
            index: i,
            n_bins: config.n_bins,
        });
    }
    Ok((i as f64 - 0.5) * config.bin_depth())
}

/// Mean photon flux per bin per laser cycle.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransientHistogram {
    pub flux: Vec<f64>,
    pub bin_time_s: f64,
}

impl TransientHistogram {
    pub fn new(flux: Vec<f64>, bin_time_s: f64) -> Result<Self> {
        if flux.is_empty() {
            return Err(Error::invalid("histogram has no bins"));
        }
        if let Some(i) = flux.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(alloc::format!(
                "histogram bin {} is negative or non-finite",
                i + 1
            )));
        }
        Ok(Self { flux, bin_time_s })
    }

    pub fn zeros(config: &SensorConfig) -> Self {
        Self {
            flux: vec![0.0; config.n_bins],
            bin_time_s: config.bin_time_s,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.flux.len()
    }

    pub fn total(&self) -> f64 {
        self.flux.iter().sum()
    }

    /// Histogram with every bin multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            flux: self.flux.iter().map(|v| v * factor).collect(),
            bin_time_s: self.bin_time_s,
        }
    }
}

/// Plane hypothesis: intercept with the optical axis and normal direction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlaneParams {
    /// Distance at which the plane crosses the optical axis (m).
    pub z0_m: f64,
    /// Angle between the plane normal and the optical axis (rad).
    pub theta_n_rad: f64,
    /// Azimuth of the plane normal about the optical axis (rad).
    pub phi_n_rad: f64,
}

impl PlaneParams {
    pub fn new(z0_m: f64, theta_n_rad: f64, phi_n_rad: f64) -> Result<Self> {
        let p = Self {
            z0_m,
            theta_n_rad,
            phi_n_rad,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z0_m > 0.0 && self.z0_m.is_finite()) {
            return Err(Error::invalid("plane z0 must be positive"));
        }
        if !(self.theta_n_rad >= 0.0 && self.theta_n_rad < PI / 2.0) {
            return Err(Error::invalid("plane tilt must lie in [0, pi/2)"));
        }
        if !(self.phi_n_rad >= 0.0 && self.phi_n_rad < 2.0 * PI) {
            return Err(Error::invalid("plane azimuth must lie in [0, 2 pi)"));
        }
        Ok(())
    }

    /// Unit normal, pointing away from the sensor.
    pub fn normal(&self) -> [f64; 3] {
        let (st, ct) = (sin(self.theta_n_rad), cos(self.theta_n_rad));
        [st * cos(self.phi_n_rad), st * sin(self.phi_n_rad), ct]
    }

    /// Distance to the plane along a ray at polar angle `gamma` from the
    /// optical axis, in the plane containing the axis and the normal.
    /// Negative `gamma` tilts the ray towards the normal (nearer points).
    pub fn distance_at(&self, gamma: f64) -> f64 {
        self.z0_m * cos(self.theta_n_rad) / cos(gamma + self.theta_n_rad)
    }
}

/// Gridded depth and albedo seen through a pinhole camera at the origin
/// looking down +z.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMapScene {
    pub width: usize,
    pub height: usize,
    /// Row-major, top-left origin; z coordinate of each pixel (m).
    pub depth: Vec<f64>,
    /// Row-major albedo in `[0, 1]`.
    pub albedo: Vec<f64>,
    /// Full horizontal field of view of the grid (rad).
    pub fov_rad: f64,
}

impl DepthMapScene {
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        albedo: Vec<f64>,
        fov_rad: f64,
    ) -> Result<Self> {
        let scene = Self {
            width,
            height,
            depth,
            albedo,
            fov_rad,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("depth map must have at least one pixel"));
        }
        let n = self.width * self.height;
        if self.depth.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.depth.len(),
            });
        }
        if self.albedo.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.albedo.len(),
            });
        }
        if self.depth.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid("depths must be positive and finite"));
        }
        if self.albedo.iter().any(|a| !(*a >= 0.0 && *a <= 1.0)) {
            return Err(Error::invalid("albedos must lie in [0, 1]"));
        }
        if !(self.fov_rad > 0.0 && self.fov_rad < PI) {
            return Err(Error::invalid("depth map fov must lie in (0, pi)"));
        }
        Ok(())
    }

    /// Depth map of a plane, sampled at pixel centers.
    pub fn from_plane(
        plane: &PlaneParams,
        width: usize,
        height: usize,
        fov_rad: f64,
        albedo: f64,
    ) -> Result<Self> {
        plane.validate()?;
        let n = plane.normal();
        let offset = plane.z0_m * n[2];
        let mut depth = Vec::with_capacity(width * height);
        let pitch = 2.0 * tan(fov_rad / 2.0) / width as f64;
        for row in 0..height {
            for col in 0..width {
                let (x, y) = pixel_center(col, row, width, height, pitch);
                let denom = n[0] * x + n[1] * y + n[2];
                if !(denom > 0.0) {
                    return Err(Error::invalid("plane is not visible across the whole depth map"));
                }
                depth.push(offset / denom);
            }
        }
        Self::new(width, height, depth, vec![albedo; width * height], fov_rad)
    }

    /// Width of one pixel on the `z = 1` image plane.
    pub fn pixel_pitch(&self) -> f64 {
        2.0 * tan(self.fov_rad / 2.0) / self.width as f64
    }

    /// Pixel hit by a ray with direction `dir`, if any.
    pub fn pixel_of_direction(&self, dir: [f64; 3]) -> Option<(usize, usize)> {
        if !(dir[2] > 0.0) {
            return None;
        }
        let pitch = self.pixel_pitch();
        let u = dir[0] / dir[2] / pitch + self.width as f64 / 2.0;
        let v = self.height as f64 / 2.0 - dir[1] / dir[2] / pitch;
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (col, row) = (floor(u) as usize, floor(v) as usize);
        (col < self.width && row < self.height).then_some((col, row))
    }

    fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn depth_at(&self, col: usize, row: usize) -> f64 {
        self.depth[self.index(col, row)]
    }

    pub fn albedo_at(&self, col: usize, row: usize) -> f64 {
        self.albedo[self.index(col, row)]
    }

    fn point(&self, col: usize, row: usize) -> [f64; 3] {
        let (x, y) = pixel_center(col, row, self.width, self.height, self.pixel_pitch());
        let z = self.depth_at(col, row);
        [x * z, y * z, z]
    }

    /// Cosine between the surface normal at a pixel and the sensor axis,
    /// clamped at zero.
    ///
    /// Normals come from central differences of the back-projected depth
    /// grid (one-sided on the border) and are oriented towards the sensor.
    pub fn normal_cosine(&self, col: usize, row: usize) -> f64 {
        let (c0, c1) = (col.saturating_sub(1), (col + 1).min(self.width - 1));
        let (r0, r1) = (row.saturating_sub(1), (row + 1).min(self.height - 1));
        let along_col = if c0 == c1 {
            // A single column carries no slope information across it.
            [1.0, 0.0, 0.0]
        } else {
            sub(self.point(c1, row), self.point(c0, row))
        };
        let along_row = if r0 == r1 {
            [0.0, -1.0, 0.0]
        } else {
            sub(self.point(col, r1), self.point(col, r0))
        };
        let mut n = cross(along_col, along_row);
        let len = sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        if !(len > 0.0) {
            return 0.0;
        }
        n.iter_mut().for_each(|v| *v /= len);
        let p = self.point(col, row);
        if n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > 0.0 {
            n.iter_mut().for_each(|v| *v = -*v);
        }
        (-n[2]).max(0.0)
    }
}

fn pixel_center(col: usize, row: usize, width: usize, height: usize, pitch: f64) -> (f64, f64) {
    let x = (col as f64 + 0.5 - width as f64 / 2.0) * pitch;
    let y = (height as f64 / 2.0 - row as f64 - 0.5) * pitch;
    (x, y)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AcquisitionMode {
    /// Detector gated with the laser; bin N+1 counts empty cycles.
    Synchronous,
    /// Free-running detector with timestamps folded back onto the period.
    Asynchronous,
}

/// Photon counts accumulated over `cycles` laser periods.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpadHistogram {
    /// `N + 1` entries in synchronous mode (last = cycles without a
    /// detection), `N` in asynchronous mode.
    pub counts: Vec<u64>,
    pub cycles: u64,
    pub mode: AcquisitionMode,
}

impl SpadHistogram {
    pub fn new(counts: Vec<u64>, cycles: u64, mode: AcquisitionMode) -> Result<Self> {
        if cycles == 0 {
            return Err(Error::invalid("cycles must be at least 1"));
        }
        if counts.is_empty() {
            return Err(Error::invalid("SPAD histogram has no bins"));
        }
        if mode == AcquisitionMode::Synchronous {
            if counts.len() < 2 {
                return Err(Error::invalid("synchronous SPAD histogram needs N + 1 bins"));
            }
            let total: u64 = counts.iter().sum();
            if total != cycles {
                return Err(Error::invalid(alloc::format!(
                    "synchronous counts sum to {total}, expected {cycles} cycles"
                )));
            }
        }
        Ok(Self {
            counts,
            cycles,
            mode,
        })
    }

    /// Number of time bins, excluding the synchronous no-detection bin.
    pub fn n_bins(&self) -> usize {
        match self.mode {
            AcquisitionMode::Synchronous => self.counts.len() - 1,
            AcquisitionMode::Asynchronous => self.counts.len(),
        }
    }

    pub fn time_bins(&self) -> &[u64] {
        &self.counts[..self.n_bins()]
    }
}
