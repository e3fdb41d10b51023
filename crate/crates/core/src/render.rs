//! Forward rendering of transient histograms.
//!
//! Every visible patch contributes
//! `Phi_laser * albedo_hat / (4 pi^2 (1 - cos(fov/2)) r^4)` per unit solid
//! angle to the bin containing its distance `r`, where `albedo_hat` is the
//! albedo times the cosine between the patch normal and the sensor axis.
//! Planes are integrated on a deterministic polar grid of directions;
//! depth maps are integrated by Monte-Carlo ray sampling.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{ceil, cos, exp, floor, sin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{DepthMapScene, PlaneParams, PulseKernel, SensorConfig, TransientHistogram};

/// Soft-binning kernels are cut off where the Gaussian drops below about
/// 1e-16 of its peak, so bins entering or leaving the window never make
/// the render (or its gradient) jump.
pub const SOFT_CUTOFF_SIGMAS: f64 = 8.6;

/// Rays per independently seeded Monte-Carlo chunk.
pub const RAYS_PER_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenderSettings {
    /// Grid samples per angular axis when integrating a plane.
    pub angular_resolution: usize,
    /// Width of the soft-binning Gaussian, in bins.
    pub soft_sigma_bins: f64,
    pub mc_rays: u64,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            angular_resolution: 128,
            soft_sigma_bins: 0.5,
            mc_rays: 1_000_000,
            seed: 0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.angular_resolution < 16 {
            return Err(Error::invalid("angular_resolution must be at least 16"));
        }
        if !(self.soft_sigma_bins > 0.0 && self.soft_sigma_bins.is_finite()) {
            return Err(Error::invalid("soft_sigma_bins must be positive"));
        }
        if self.mc_rays == 0 {
            return Err(Error::invalid("mc_rays must be at least 1"));
        }
        Ok(())
    }
}

/// Soft-binned render and its derivatives with respect to the plane tilt
/// and axis intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftRenderOutput {
    pub flux: TransientHistogram,
    pub grad_theta: Vec<f64>,
    pub grad_z0: Vec<f64>,
}

/// One quadrature node on the illumination cone.
#[derive(Debug, Clone, Copy)]
struct ConeSample {
    cos_polar: f64,
    sin_polar: f64,
    cos_azimuth: f64,
    polar: f64,
    azimuth: f64,
    solid_angle: f64,
}

/// Polar quadrature over the cone, expressed relative to the azimuth of
/// the plane normal.
///
/// Ring `k` sits at `k * h` (`h = (fov/2) / (R - 1)`) and owns the band
/// between the neighbouring midpoints, so the outer ring lies exactly on
/// the cone boundary and the nearest and farthest plane points are always
/// sampled. The integrand only depends on the cosine of the relative
/// azimuth, so azimuths cover `[0, pi]` with trapezoid weights and double
/// weight. Because the grid is tied to the plane's own azimuth, the normal
/// azimuth never enters the computation.
fn cone_grid(fov_rad: f64, resolution: usize) -> Vec<ConeSample> {
    let half = fov_rad / 2.0;
    let rings = resolution;
    let spokes = resolution;
    let h = half / (rings - 1) as f64;
    let dbeta = PI / (spokes - 1) as f64;
    let mut out = Vec::with_capacity(rings * spokes);
    for k in 0..rings {
        let polar = k as f64 * h;
        let lo = (polar - h / 2.0).max(0.0);
        let hi = (polar + h / 2.0).min(half);
        let band = 2.0 * PI * (cos(lo) - cos(hi));
        for j in 0..spokes {
            let azimuth = j as f64 * dbeta;
            let frac = if j == 0 || j == spokes - 1 { 0.5 } else { 1.0 } / (spokes - 1) as f64;
            out.push(ConeSample {
                cos_polar: cos(polar),
                sin_polar: sin(polar),
                cos_azimuth: cos(azimuth),
                polar,
                azimuth,
                solid_angle: band * frac,
            });
        }
    }
    out
}

/// Geometry of one grid direction against the plane.
struct Hit {
    r: f64,
    /// Denominator `cos(polar) cos(theta) + sin(polar) sin(theta) cos(azimuth)`.
    denom: f64,
}

fn intersect(
    plane: &PlaneParams,
    cos_t: f64,
    sin_t: f64,
    s: &ConeSample,
    max_range: f64,
) -> Result<Hit> {
    let denom = s.cos_polar * cos_t + s.sin_polar * sin_t * s.cos_azimuth;
    if !(denom > 0.0) {
        return Err(Error::PlaneNotRenderable {
            polar_rad: s.polar,
            azimuth_rad: s.azimuth,
            reason: "ray grazes or misses the plane",
        });
    }
    let r = plane.z0_m * cos_t / denom;
    if !(r < max_range) {
        return Err(Error::PlaneNotRenderable {
            polar_rad: s.polar,
            azimuth_rad: s.azimuth,
            reason: "plane point lies beyond the unambiguous range",
        });
    }
    Ok(Hit { r, denom })
}

fn check_plane_inputs(
    plane: &PlaneParams,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> Result<()> {
    config.validate()?;
    settings.validate()?;
    plane.validate()?;
    if !(plane.theta_n_rad + config.fov_rad / 2.0 < PI / 2.0) {
        return Err(Error::PlaneNotRenderable {
            polar_rad: config.fov_rad / 2.0,
            azimuth_rad: 0.0,
            reason: "plane tilt plus half the field of view reaches 90 degrees",
        });
    }
    Ok(())
}

/// Hard-binned render of a uniform, unit-albedo plane.
pub fn render_plane(
    plane: &PlaneParams,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> Result<TransientHistogram> {
    render_plane_with_albedo(plane, 1.0, config, settings)
}

/// Hard-binned render of a plane with uniform albedo `albedo`.
pub fn render_plane_with_albedo(
    plane: &PlaneParams,
    albedo: f64,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> Result<TransientHistogram> {
    check_plane_inputs(plane, config, settings)?;
    if !(albedo >= 0.0 && albedo.is_finite()) {
        return Err(Error::invalid("albedo must be nonnegative"));
    }
    let (cos_t, sin_t) = (cos(plane.theta_n_rad), sin(plane.theta_n_rad));
    let depth = config.bin_depth();
    let range = config.max_range().min(config.histogram_range());
    let intensity = config.radiometric_scale() * albedo * cos_t;
    let mut flux = vec![0.0; config.n_bins];
    for s in cone_grid(config.fov_rad, settings.angular_resolution) {
        let hit = intersect(plane, cos_t, sin_t, &s, range)?;
        let bin = floor(hit.r / depth) as usize;
        let r2 = hit.r * hit.r;
        flux[bin] += intensity * s.solid_angle / (r2 * r2);
    }
    finish(flux, config)
}

/// Adds the background and applies the pulse kernel.
fn finish(mut laser: Vec<f64>, config: &SensorConfig) -> Result<TransientHistogram> {
    if let Some(k) = &config.pulse_kernel {
        laser = convolve(&laser, k)?;
    }
    laser.iter_mut().for_each(|v| *v += config.bkg_flux);
    TransientHistogram::new(laser, config.bin_time_s)
}

/// Circular convolution of a histogram with a pulse kernel.
pub fn convolve_pulse(hist: &TransientHistogram, kernel: &PulseKernel) -> Result<TransientHistogram> {
    Ok(TransientHistogram {
        flux: convolve(&hist.flux, kernel)?,
        bin_time_s: hist.bin_time_s,
    })
}

fn convolve(x: &[f64], kernel: &PulseKernel) -> Result<Vec<f64>> {
    let n = x.len();
    if kernel.len() > n {
        return Err(Error::invalid("pulse kernel is longer than the histogram"));
    }
    let c = kernel.center();
    let mut out = vec![0.0; n];
    for (i, &v) in x.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (j, &w) in kernel.weights().iter().enumerate() {
            // Shift by j - c, wrapping around the laser period.
            let k = (i + n + j - c) % n;
            out[k] += w * v;
        }
    }
    Ok(out)
}

/// Soft-binned render of a unit-albedo plane with analytic gradients.
///
/// A grid direction at distance `r` spreads its weight over the bin
/// centers `c_i` in proportion to `exp(-(r - c_i)^2 / (2 sigma^2))`,
/// normalized so the deposited mass equals the weight.
pub fn render_plane_soft(
    plane: &PlaneParams,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> Result<SoftRenderOutput> {
    check_plane_inputs(plane, config, settings)?;
    let n = config.n_bins;
    let depth = config.bin_depth();
    let range = config.max_range().min(config.histogram_range());
    let sigma = settings.soft_sigma_bins * depth;
    let inv_var = 1.0 / (sigma * sigma);
    let reach = SOFT_CUTOFF_SIGMAS * sigma;

    let (cos_t, sin_t) = (cos(plane.theta_n_rad), sin(plane.theta_n_rad));
    let tan_t = sin_t / cos_t;
    let z0 = plane.z0_m;
    let intensity = config.radiometric_scale() * cos_t;

    let mut flux = vec![0.0; n];
    let mut grad_theta = vec![0.0; n];
    let mut grad_z0 = vec![0.0; n];
    let mut kern: Vec<f64> = Vec::new();
    let mut dkern: Vec<f64> = Vec::new();

    for s in cone_grid(config.fov_rad, settings.angular_resolution) {
        let Hit { r, denom } = intersect(plane, cos_t, sin_t, &s, range)?;
        let r2 = r * r;
        let w = intensity * s.solid_angle / (r2 * r2);
        let dr_dz0 = r / z0;
        let dr_dtheta = -z0 * s.sin_polar * s.cos_azimuth / (denom * denom);
        let dw_dz0 = -4.0 * w / z0;
        let dw_dtheta = -w * tan_t - 4.0 * w / r * dr_dtheta;

        let first = ceil((r - reach) / depth - 0.5).max(0.0) as usize;
        let last = (floor((r + reach) / depth - 0.5) as usize).min(n - 1);
        if first > last {
            continue;
        }
        kern.clear();
        dkern.clear();
        let (mut sum, mut dsum) = (0.0, 0.0);
        for i in first..=last {
            let d = r - (i as f64 + 0.5) * depth;
            let k = exp(-0.5 * d * d * inv_var);
            let dk = -d * inv_var * k;
            kern.push(k);
            dkern.push(dk);
            sum += k;
            dsum += dk;
        }
        for (off, (&k, &dk)) in kern.iter().zip(&dkern).enumerate() {
            let i = first + off;
            let g = k / sum;
            let dg = (dk - g * dsum) / sum;
            flux[i] += w * g;
            grad_z0[i] += dw_dz0 * g + w * dg * dr_dz0;
            grad_theta[i] += dw_dtheta * g + w * dg * dr_dtheta;
        }
    }

    if let Some(k) = &config.pulse_kernel {
        grad_theta = convolve(&grad_theta, k)?;
        grad_z0 = convolve(&grad_z0, k)?;
    }
    Ok(SoftRenderOutput {
        flux: finish(flux, config)?,
        grad_theta,
        grad_z0,
    })
}

/// Monte-Carlo render of a depth map together with the miss tally.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMapRender {
    pub histogram: TransientHistogram,
    pub missed_rays: u64,
    pub total_rays: u64,
}

/// Partial sums of one Monte-Carlo chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTally {
    pub laser: Vec<f64>,
    pub missed: u64,
}

/// Prepared Monte-Carlo renderer for a depth map.
///
/// Rays are split into chunks of [`RAYS_PER_CHUNK`]; chunk `c` draws from
/// its own ChaCha stream `c` of the settings seed. Summing chunk tallies in
/// chunk order therefore gives the same histogram whether chunks are
/// rendered sequentially or in parallel.
pub struct DepthMapRenderer<'a> {
    scene: &'a DepthMapScene,
    config: &'a SensorConfig,
    settings: RenderSettings,
    cosines: Vec<f64>,
}

impl<'a> DepthMapRenderer<'a> {
    pub fn new(
        scene: &'a DepthMapScene,
        config: &'a SensorConfig,
        settings: &RenderSettings,
    ) -> Result<Self> {
        config.validate()?;
        settings.validate()?;
        scene.validate()?;
        let range = config.max_range().min(config.histogram_range());
        if scene.depth.iter().any(|d| !(*d < range)) {
            return Err(Error::invalid("depth map contains depths beyond the unambiguous range"));
        }
        let mut cosines = Vec::with_capacity(scene.width * scene.height);
        for row in 0..scene.height {
            for col in 0..scene.width {
                cosines.push(scene.normal_cosine(col, row));
            }
        }
        Ok(Self {
            scene,
            config,
            settings: *settings,
            cosines,
        })
    }

    pub fn n_chunks(&self) -> u64 {
        self.settings.mc_rays.div_ceil(RAYS_PER_CHUNK)
    }

    pub fn render_chunk(&self, chunk: u64) -> Result<ChunkTally> {
        let start = chunk * RAYS_PER_CHUNK;
        let rays = RAYS_PER_CHUNK.min(self.settings.mc_rays.saturating_sub(start));
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed);
        rng.set_stream(chunk);

        let config = self.config;
        let cos_half = cos(config.fov_rad / 2.0);
        let depth = config.bin_depth();
        let range = config.max_range().min(config.histogram_range());
        let ray_weight = config.radiometric_scale() * config.cone_solid_angle()
            / self.settings.mc_rays as f64;
        let mut laser = vec![0.0; config.n_bins];
        let mut missed = 0;
        for _ in 0..rays {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let cos_g = 1.0 - u * (1.0 - cos_half);
            let sin_g = libm::sqrt((1.0 - cos_g * cos_g).max(0.0));
            let beta = 2.0 * PI * v;
            let dir = [sin_g * cos(beta), sin_g * sin(beta), cos_g];
            let Some((col, row)) = self.scene.pixel_of_direction(dir) else {
                missed += 1;
                continue;
            };
            let idx = row * self.scene.width + col;
            let r = self.scene.depth[idx] / cos_g;
            if !(r < range) {
                return Err(Error::DistanceOutOfRange {
                    distance: r,
                    max: range,
                });
            }
            let albedo_hat = self.scene.albedo[idx] * self.cosines[idx];
            let r2 = r * r;
            laser[floor(r / depth) as usize] += ray_weight * albedo_hat / (r2 * r2);
        }
        Ok(ChunkTally { laser, missed })
    }

    /// Combines chunk tallies (in chunk order) into the final histogram.
    pub fn finish(&self, tallies: impl IntoIterator<Item = ChunkTally>) -> Result<DepthMapRender> {
        let mut laser = vec![0.0; self.config.n_bins];
        let mut missed = 0;
        for t in tallies {
            laser.iter_mut().zip(&t.laser).for_each(|(a, b)| *a += b);
            missed += t.missed;
        }
        let total = self.settings.mc_rays;
        if 2 * missed > total {
            return Err(Error::TooManyMisses { missed, total });
        }
        Ok(DepthMapRender {
            histogram: finish(laser, self.config)?,
            missed_rays: missed,
            total_rays: total,
        })
    }
}

/// Monte-Carlo render of a depth-map scene.
pub fn render_depth_map(
    scene: &DepthMapScene,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> Result<DepthMapRender> {
    let renderer = DepthMapRenderer::new(scene, config, settings)?;
    let tallies = (0..renderer.n_chunks())
        .map(|c| renderer.render_chunk(c))
        .collect::<Result<Vec<_>>>()?;
    renderer.finish(tallies)
}
