//! Plane recovery from a transient histogram.
//!
//! The distance to a plane along a ray at angle `gamma` from the optical
//! axis is `Z0 cos(theta) / cos(gamma + theta)`. The closed-form estimator
//! reads `Z0` off the histogram peak and inverts that relation at the
//! leading and lagging edges. The analysis-by-synthesis (AbS) estimator
//! refines that guess by gradient descent on a low-pass Fourier distance
//! between a soft-binned render and the measurement.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{atan, cos, sin, sqrt};

use crate::error::{Error, Result};
use crate::fourier::LowPassBasis;
use crate::render::{render_plane_soft, RenderSettings};
use crate::scene::{distance_of_bin, PlaneParams, SensorConfig, TransientHistogram};

/// Smallest `Z0` the optimizer will visit (m).
const MIN_Z0: f64 = 1e-3;
/// Distance kept between the tilt and the visibility limit `pi/2 - fov/2`.
const TILT_MARGIN: f64 = 1e-3;
/// Fraction of the range the far plane point may reach while optimizing.
const RANGE_MARGIN: f64 = 0.999;
/// Tilt steps are scaled down relative to `Z0` steps.
const THETA_STEP_SCALE: f64 = 0.1;
const ALBEDO_MIN: f64 = 0.01;
const ALBEDO_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EstimateMethod {
    Theoretical,
    Abs,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimateDiagnostics {
    /// Normalized AbS loss at the initializer and at the result.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Distances of the leading and lagging edges (m).
    pub edge_distances: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlaneEstimate {
    pub z0_m: f64,
    pub theta_n_rad: f64,
    pub method: EstimateMethod,
    pub diagnostics: EstimateDiagnostics,
}

impl PlaneEstimate {
    /// Plane with zero azimuth; the azimuth is not recoverable.
    pub fn plane(&self) -> PlaneParams {
        PlaneParams {
            z0_m: self.z0_m,
            theta_n_rad: self.theta_n_rad,
            phi_n_rad: 0.0,
        }
    }
}

/// How `Z0` is read off the histogram by the closed-form estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Z0Rule {
    /// Center of the highest bin.
    #[default]
    Peak,
    /// Midpoint between the leading and lagging edges.
    SupportCenter,
}

/// Settings of the analysis-by-synthesis optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AbsConfig {
    /// Number of lowest-frequency Fourier coefficients compared.
    pub k_coeffs: usize,
    /// Initial step; adapted by backtracking.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the normalized-loss gradient norm drops below this.
    pub grad_tol: f64,
    pub soft_sigma_bins: f64,
    pub angular_resolution: usize,
    /// Edge threshold of the closed-form initializer.
    pub threshold_frac: f64,
}

impl Default for AbsConfig {
    fn default() -> Self {
        Self {
            k_coeffs: 64,
            step_size: 0.01,
            max_iters: 500,
            grad_tol: 1e-7,
            soft_sigma_bins: 0.5,
            angular_resolution: 64,
            threshold_frac: 0.1,
        }
    }
}

impl AbsConfig {
    pub fn validate(&self, n_bins: usize) -> Result<()> {
        if self.k_coeffs == 0 || self.k_coeffs > n_bins / 2 + 1 {
            return Err(Error::invalid("k_coeffs must lie in 1..=N/2+1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::invalid("grad_tol must be nonnegative"));
        }
        if !(self.threshold_frac > 0.0 && self.threshold_frac <= 1.0) {
            return Err(Error::invalid("threshold_frac must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Copy with `k_coeffs` clamped to what an `n_bins` histogram supports.
    pub fn clamped_to(mut self, n_bins: usize) -> Self {
        self.k_coeffs = self.k_coeffs.clamp(1, n_bins / 2 + 1);
        self
    }

    fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            angular_resolution: self.angular_resolution,
            soft_sigma_bins: self.soft_sigma_bins,
            ..RenderSettings::default()
        }
    }
}

/// 1-based leading, peak and lagging bins of the main peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeTriple {
    pub leading: usize,
    pub peak: usize,
    pub lagging: usize,
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

/// Finds the main peak and its edges.
///
/// The median bin is taken as the background floor and subtracted. The
/// peak is the highest bin (lowest index on ties); the edges are the ends
/// of the contiguous run of bins around it that stay at or above
/// `threshold_frac` of the peak height.
pub fn detect_edges(hist: &TransientHistogram, threshold_frac: f64) -> Result<EdgeTriple> {
    if !(threshold_frac > 0.0 && threshold_frac <= 1.0) {
        return Err(Error::invalid("threshold_frac must lie in (0, 1]"));
    }
    let floor = median(&hist.flux);
    let signal: Vec<f64> = hist.flux.iter().map(|v| v - floor).collect();
    let mut peak = 0;
    for (i, &v) in signal.iter().enumerate() {
        if v > signal[peak] {
            peak = i;
        }
    }
    if !(signal[peak] > 0.0) {
        return Err(Error::NoSignal);
    }
    let level = threshold_frac * signal[peak];
    let mut leading = peak;
    while leading > 0 && signal[leading - 1] >= level {
        leading -= 1;
    }
    let mut lagging = peak;
    while lagging + 1 < signal.len() && signal[lagging + 1] >= level {
        lagging += 1;
    }
    Ok(EdgeTriple {
        leading: leading + 1,
        peak: peak + 1,
        lagging: lagging + 1,
    })
}

/// Signed tilt solving `distance = z0 cos(t) / cos(gamma + t)` for `t`.
fn signed_tilt(distance: f64, gamma: f64, z0: f64) -> Result<f64> {
    let bad = || Error::NoAngleSolution {
        distance,
        gamma_rad: gamma,
    };
    if !(distance > 0.0 && z0 > 0.0 && distance.is_finite() && z0.is_finite()) {
        return Err(bad());
    }
    if gamma == 0.0 || !(gamma.abs() < PI / 2.0) {
        return Err(bad());
    }
    let t = atan((distance * cos(gamma) - z0) / (distance * sin(gamma)));
    if !(cos(gamma + t) > 0.0) || !t.is_finite() {
        return Err(bad());
    }
    Ok(t)
}

/// Plane tilt seen at distance `distance` along a ray `gamma` radians off
/// the optical axis, for a plane crossing the axis at `z0`.
///
/// The tilt is reported unsigned: mirror-image planes are
/// indistinguishable.
pub fn invert_distance_for_angle(distance: f64, gamma: f64, z0: f64) -> Result<f64> {
    signed_tilt(distance, gamma, z0).map(f64::abs)
}

/// Closed-form plane estimate from the histogram peak and edges.
pub fn estimate_plane_theoretical(
    hist: &TransientHistogram,
    config: &SensorConfig,
    threshold_frac: f64,
) -> Result<PlaneEstimate> {
    estimate_plane_theoretical_with(hist, config, threshold_frac, Z0Rule::Peak)
}

pub fn estimate_plane_theoretical_with(
    hist: &TransientHistogram,
    config: &SensorConfig,
    threshold_frac: f64,
    rule: Z0Rule,
) -> Result<PlaneEstimate> {
    if hist.n_bins() != config.n_bins {
        return Err(Error::LengthMismatch {
            expected: config.n_bins,
            actual: hist.n_bins(),
        });
    }
    let edges = detect_edges(hist, threshold_frac)?;
    let near = distance_of_bin(edges.leading, config)?;
    let far = distance_of_bin(edges.lagging, config)?;
    let z0 = match rule {
        Z0Rule::Peak => distance_of_bin(edges.peak, config)?,
        Z0Rule::SupportCenter => 0.5 * (near + far),
    };
    let half = config.fov_rad / 2.0;
    // The two edges bound the tilt from opposite sides; averaging the
    // signed solutions lets a near-zero tilt cancel instead of doubling.
    let tilts: Vec<f64> = [signed_tilt(near, -half, z0), signed_tilt(far, half, z0)]
        .into_iter()
        .filter_map(|t| t.ok())
        .collect();
    if tilts.is_empty() {
        return Err(Error::NoAngleSolution {
            distance: near,
            gamma_rad: -half,
        });
    }
    let theta = (tilts.iter().sum::<f64>() / tilts.len() as f64).abs();
    let mut diagnostics = EstimateDiagnostics {
        edge_distances: Some((near, far)),
        converged: true,
        ..Default::default()
    };
    if tilts.len() == 1 {
        diagnostics
            .warnings
            .push("only one edge produced a valid tilt".into());
    }
    if edges.lagging == config.n_bins {
        diagnostics
            .warnings
            .push("lagging edge reaches the last bin; the support may wrap around".into());
    }
    Ok(PlaneEstimate {
        z0_m: z0,
        theta_n_rad: theta.min(PI / 2.0 - 1e-12),
        method: EstimateMethod::Theoretical,
        diagnostics,
    })
}

/// Normalized low-pass loss between a soft render and a fixed measurement.
struct Objective<'a> {
    config: &'a SensorConfig,
    settings: RenderSettings,
    basis: LowPassBasis,
    target: Vec<(f64, f64)>,
    /// `1 / sum |F_m(measurement)|^2`.
    norm: f64,
}

/// Loss value with the pieces needed for gradients.
struct Evaluation {
    loss: f64,
    grad_theta: f64,
    grad_z0: f64,
    /// Laser-only soft render (background removed).
    laser: Vec<f64>,
    /// dLoss / dRender, per bin.
    dloss: Vec<f64>,
}

impl<'a> Objective<'a> {
    fn new(hist: &TransientHistogram, config: &'a SensorConfig, abs: &AbsConfig) -> Result<Self> {
        if hist.n_bins() != config.n_bins {
            return Err(Error::LengthMismatch {
                expected: config.n_bins,
                actual: hist.n_bins(),
            });
        }
        let basis = LowPassBasis::new(config.n_bins, abs.k_coeffs)?;
        let target = basis.transform(&hist.flux);
        let energy: f64 = target.iter().map(|(a, b)| a * a + b * b).sum();
        if !(energy > 0.0) {
            return Err(Error::NoSignal);
        }
        Ok(Self {
            config,
            settings: abs.render_settings(),
            basis,
            target,
            norm: 1.0 / energy,
        })
    }

    /// Loss of `albedo[i] * laser[i] + background`, or of the plain render
    /// when `albedo` is `None`.
    fn evaluate(&self, theta: f64, z0: f64, albedo: Option<&[f64]>) -> Result<Evaluation> {
        let plane = PlaneParams {
            z0_m: z0,
            theta_n_rad: theta,
            phi_n_rad: 0.0,
        };
        let out = render_plane_soft(&plane, self.config, &self.settings)?;
        let bkg = self.config.bkg_flux;
        let laser: Vec<f64> = out.flux.flux.iter().map(|v| v - bkg).collect();
        let (render, gt, gz) = match albedo {
            None => (out.flux.flux, out.grad_theta, out.grad_z0),
            Some(a) => (
                laser.iter().zip(a).map(|(l, a)| a * l + bkg).collect(),
                out.grad_theta.iter().zip(a).map(|(g, a)| g * a).collect(),
                out.grad_z0.iter().zip(a).map(|(g, a)| g * a).collect(),
            ),
        };
        let coeffs = self.basis.transform(&render);
        let residual: Vec<(f64, f64)> = coeffs
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a.0 - b.0, a.1 - b.1))
            .collect();
        let loss = self.norm * LowPassBasis::distance(&coeffs, &self.target);
        let dloss: Vec<f64> = self
            .basis
            .residual_gradient(&residual)
            .into_iter()
            .map(|g| g * self.norm)
            .collect();
        let grad_theta = dloss.iter().zip(&gt).map(|(a, b)| a * b).sum();
        let grad_z0 = dloss.iter().zip(&gz).map(|(a, b)| a * b).sum();
        if !(loss.is_finite() && f64::is_finite(grad_theta) && f64::is_finite(grad_z0)) {
            return Err(Error::Diverged {
                iterations: 0,
                initial_loss: f64::NAN,
                final_loss: loss,
            });
        }
        Ok(Evaluation {
            loss,
            grad_theta,
            grad_z0,
            laser,
            dloss,
        })
    }

    fn max_tilt(&self) -> f64 {
        PI / 2.0 - self.config.fov_rad / 2.0 - TILT_MARGIN
    }

    /// Largest `Z0` whose farthest visible point stays inside the range.
    fn max_z0(&self, theta: f64) -> f64 {
        let range = self.config.max_range().min(self.config.histogram_range());
        RANGE_MARGIN * range * cos(theta + self.config.fov_rad / 2.0) / cos(theta)
    }

    fn clamp(&self, theta: f64, z0: f64) -> (f64, f64) {
        let theta = theta.clamp(0.0, self.max_tilt());
        (theta, z0.clamp(MIN_Z0, self.max_z0(theta).max(MIN_Z0)))
    }
}

/// Gradient descent with backtracking: a step that does not lower the loss
/// is retried at half the length, an accepted one lets the next step grow.
/// The returned point is therefore never worse than the initializer.
struct Descent {
    step: f64,
    min_step: f64,
}

const STEP_GROWTH: f64 = 1.5;
const STEP_SHRINK: f64 = 0.5;

impl Descent {
    fn new(step: f64) -> Self {
        Self {
            step,
            min_step: step * 1e-12,
        }
    }
}

/// Gradient-descent refinement of `(theta, Z0)` from a given start.
pub fn refine_plane_abs(
    hist: &TransientHistogram,
    config: &SensorConfig,
    abs: &AbsConfig,
    init_z0: f64,
    init_theta: f64,
) -> Result<PlaneEstimate> {
    config.validate()?;
    let abs = abs.clamped_to(config.n_bins);
    abs.validate(config.n_bins)?;
    let obj = Objective::new(hist, config, &abs)?;

    let (mut theta, mut z0) = obj.clamp(init_theta, init_z0);
    let mut cur = obj.evaluate(theta, z0, None)?;
    let initial_loss = cur.loss;
    let mut descent = Descent::new(abs.step_size);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < abs.max_iters {
        let gnorm = sqrt(cur.grad_theta * cur.grad_theta + cur.grad_z0 * cur.grad_z0);
        if gnorm < abs.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while descent.step >= descent.min_step {
            let (t, z) = obj.clamp(
                theta - descent.step * THETA_STEP_SCALE * cur.grad_theta,
                z0 - descent.step * cur.grad_z0,
            );
            if t == theta && z == z0 {
                break;
            }
            let next = obj.evaluate(t, z, None).map_err(|_| Error::Diverged {
                iterations,
                initial_loss,
                final_loss: cur.loss,
            })?;
            if next.loss < cur.loss {
                (theta, z0, cur) = (t, z, next);
                descent.step *= STEP_GROWTH;
                accepted = true;
                break;
            }
            descent.step *= STEP_SHRINK;
        }
        if !accepted {
            // No descent direction left at any step length.
            converged = true;
            break;
        }
    }

    Ok(PlaneEstimate {
        z0_m: z0,
        theta_n_rad: theta,
        method: EstimateMethod::Abs,
        diagnostics: EstimateDiagnostics {
            initial_loss: Some(initial_loss),
            final_loss: Some(cur.loss),
            iterations,
            converged,
            edge_distances: None,
            warnings: Vec::new(),
        },
    })
}

/// AbS plane estimate initialized by the closed-form estimator.
pub fn estimate_plane_abs(
    hist: &TransientHistogram,
    config: &SensorConfig,
    abs: &AbsConfig,
) -> Result<PlaneEstimate> {
    let init = estimate_plane_theoretical(hist, config, abs.threshold_frac)?;
    let mut est = refine_plane_abs(hist, config, abs, init.z0_m, init.theta_n_rad)?;
    est.diagnostics.edge_distances = init.diagnostics.edge_distances;
    est.diagnostics.warnings = init.diagnostics.warnings;
    Ok(est)
}

/// AbS estimate that also fits a per-bin albedo factor in
/// `[0.01, 1]` multiplying the laser part of the render.
///
/// Starts from [`estimate_plane_abs`] with all factors at 1, then
/// alternates backtracking steps on the geometry and on the factors. The
/// factor step is scaled by the inverse diagonal curvature
/// `2 k laser_i^2 / E` of the low-pass loss.
pub fn estimate_plane_abs_with_albedo(
    hist: &TransientHistogram,
    config: &SensorConfig,
    abs: &AbsConfig,
) -> Result<(PlaneEstimate, Vec<f64>)> {
    let base = estimate_plane_abs(hist, config, abs)?;
    let abs = abs.clamped_to(config.n_bins);
    let obj = Objective::new(hist, config, &abs)?;
    let n = config.n_bins;

    let (mut theta, mut z0) = (base.theta_n_rad, base.z0_m);
    let mut albedo = vec![1.0; n];
    let mut cur = obj.evaluate(theta, z0, Some(&albedo))?;
    let initial_loss = cur.loss;
    let mut geo = Descent::new(abs.step_size);
    let mut alb = Descent::new(1.0);
    let mut iterations = 0;
    let mut converged = false;
    let curvature_scale = 2.0 * abs.k_coeffs as f64 * obj.norm;

    while iterations < abs.max_iters {
        iterations += 1;
        let mut moved = false;

        // Geometry step.
        while geo.step >= geo.min_step {
            let (t, z) = obj.clamp(
                theta - geo.step * THETA_STEP_SCALE * cur.grad_theta,
                z0 - geo.step * cur.grad_z0,
            );
            if t == theta && z == z0 {
                break;
            }
            let next = obj.evaluate(t, z, Some(&albedo))?;
            if next.loss < cur.loss {
                (theta, z0, cur) = (t, z, next);
                geo.step *= STEP_GROWTH;
                moved = true;
                break;
            }
            geo.step *= STEP_SHRINK;
        }

        // Albedo step.
        let peak = cur.laser.iter().cloned().fold(0.0, f64::max);
        let direction: Vec<f64> = cur
            .laser
            .iter()
            .zip(&cur.dloss)
            .map(|(&l, &g)| {
                if l > 1e-6 * peak {
                    g * l / (curvature_scale * l * l)
                } else {
                    0.0
                }
            })
            .collect();
        while alb.step >= alb.min_step {
            let trial: Vec<f64> = albedo
                .iter()
                .zip(&direction)
                .map(|(a, d)| (a - alb.step * d).clamp(ALBEDO_MIN, ALBEDO_MAX))
                .collect();
            if trial == albedo {
                break;
            }
            let next = obj.evaluate(theta, z0, Some(&trial))?;
            if next.loss < cur.loss {
                albedo = trial;
                cur = next;
                alb.step = (alb.step * STEP_GROWTH).min(1.0);
                moved = true;
                break;
            }
            alb.step *= STEP_SHRINK;
        }

        let gnorm = sqrt(cur.grad_theta * cur.grad_theta + cur.grad_z0 * cur.grad_z0);
        if !moved || (gnorm < abs.grad_tol && cur.loss < 1e-14) {
            converged = true;
            break;
        }
    }
    let mut est = base.clone();
    est.z0_m = z0;
    est.theta_n_rad = theta;
    est.diagnostics.initial_loss = Some(initial_loss);
    est.diagnostics.final_loss = Some(cur.loss);
    est.diagnostics.iterations = base.diagnostics.iterations + iterations;
    est.diagnostics.converged = converged;
    Ok((est, albedo))
}
