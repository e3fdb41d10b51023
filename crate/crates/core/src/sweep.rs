//! Parameter sweep comparing the closed-form and AbS plane estimators.
//!
//! Each cell of a `(Z0, theta)` grid is rendered, optionally passed through
//! synchronous SPAD acquisition and the low-flux estimator, and handed to
//! both estimators. Cells are independent and seeded from their grid
//! position, so they can be evaluated in any order or in parallel.

use alloc::vec::Vec;

use crate::estimate::{estimate_plane_theoretical, refine_plane_abs, AbsConfig};
use crate::render::{render_plane, RenderSettings};
use crate::scene::{PlaneParams, SensorConfig, TransientHistogram};
use crate::spad::{estimate_transient_lowflux, simulate_synchronous_spad};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Noise {
    Noiseless,
    /// Synchronous acquisition over `cycles` laser cycles followed by the
    /// low-flux estimate `h_i / L`.
    Spad { cycles: u64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepConfig {
    pub z0_values: Vec<f64>,
    /// Plane tilts (rad).
    pub theta_values: Vec<f64>,
    pub config: SensorConfig,
    /// Settings of the ground-truth hard render.
    pub render: RenderSettings,
    pub noise: Noise,
    /// When set, the laser power of each cell is chosen so the noiseless
    /// laser flux sums to this many photons per cycle. Estimators are told
    /// the adjusted power.
    pub target_signal_flux: Option<f64>,
    pub abs: AbsConfig,
    pub seeds: Vec<u64>,
}

/// Absolute errors of one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamErrors {
    pub z0_m: f64,
    pub theta_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellResult {
    pub z0_m: f64,
    pub theta_rad: f64,
    /// Mean absolute errors over the runs where each estimator succeeded.
    pub mae_theoretical: Option<ParamErrors>,
    pub mae_abs: Option<ParamErrors>,
    /// Runs (seeds) in which at least one estimator succeeded.
    pub valid_runs: usize,
    /// Why the cell produced nothing, when it did not.
    pub failure: Option<alloc::string::String>,
}

impl CellResult {
    pub fn is_valid(&self) -> bool {
        self.valid_runs > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepReport {
    pub z0_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    /// Row-major over `(z0, theta)`.
    pub cells: Vec<CellResult>,
    /// Fraction of valid cells where AbS is at least as accurate; ties go
    /// to AbS.
    pub win_fraction_theta: f64,
    pub win_fraction_z0: f64,
    pub valid_cells: usize,
    pub invalid_cells: usize,
    pub noise: Noise,
    pub target_signal_flux: Option<f64>,
    pub seeds: Vec<u64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one run, determined by the user seed and the cell position only.
pub fn run_seed(seed: u64, z_index: usize, theta_index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((z_index as u64) << 32) | theta_index as u64))
}

impl SweepConfig {
    pub fn n_cells(&self) -> usize {
        self.z0_values.len() * self.theta_values.len()
    }

    /// `(z_index, theta_index)` of row-major cell `cell`.
    pub fn cell_position(&self, cell: usize) -> (usize, usize) {
        (cell / self.theta_values.len(), cell % self.theta_values.len())
    }

    fn truth_config(&self, plane: &PlaneParams) -> crate::Result<SensorConfig> {
        let Some(target) = self.target_signal_flux else {
            return Ok(self.config.clone());
        };
        let unit = self.config.clone().with_bkg_flux(0.0).with_photons_per_pulse(1.0);
        let laser = render_plane(plane, &unit, &self.render)?.total();
        if !(laser > 0.0) {
            return Err(crate::Error::NoSignal);
        }
        Ok(self.config.clone().with_photons_per_pulse(target / laser))
    }

    fn measure(
        &self,
        truth: &TransientHistogram,
        config: &SensorConfig,
        seed: u64,
    ) -> crate::Result<TransientHistogram> {
        match self.noise {
            Noise::Noiseless => Ok(truth.clone()),
            Noise::Spad { cycles } => {
                let spad = simulate_synchronous_spad(truth, cycles, seed)?;
                Ok(estimate_transient_lowflux(&spad, config.bin_time_s))
            }
        }
    }

    /// Runs both estimators for every seed of one cell.
    pub fn evaluate_cell(&self, z_index: usize, theta_index: usize) -> CellResult {
        let z0 = self.z0_values[z_index];
        let theta = self.theta_values[theta_index];
        let mut result = CellResult {
            z0_m: z0,
            theta_rad: theta,
            mae_theoretical: None,
            mae_abs: None,
            valid_runs: 0,
            failure: None,
        };
        let prepared = PlaneParams::new(z0, theta, 0.0).and_then(|plane| {
            let config = self.truth_config(&plane)?;
            let truth = render_plane(&plane, &config, &self.render)?;
            Ok((config, truth))
        });
        let (config, truth) = match prepared {
            Ok(v) => v,
            Err(e) => {
                result.failure = Some(alloc::format!("{e}"));
                return result;
            }
        };

        let err = |z: f64, t: f64| ParamErrors {
            z0_m: (z - z0).abs(),
            theta_rad: (t - theta).abs(),
        };
        let mut theo = Vec::new();
        let mut abs = Vec::new();
        let mut last_failure = None;
        for &seed in &self.seeds {
            let measured = match self.measure(&truth, &config, run_seed(seed, z_index, theta_index)) {
                Ok(m) => m,
                Err(e) => {
                    last_failure = Some(e);
                    continue;
                }
            };
            let init = match estimate_plane_theoretical(&measured, &config, self.abs.threshold_frac) {
                Ok(e) => e,
                Err(e) => {
                    // AbS starts from this estimate, so both fail together.
                    last_failure = Some(e);
                    continue;
                }
            };
            theo.push(err(init.z0_m, init.theta_n_rad));
            match refine_plane_abs(&measured, &config, &self.abs, init.z0_m, init.theta_n_rad) {
                Ok(e) => abs.push(err(e.z0_m, e.theta_n_rad)),
                Err(e) => last_failure = Some(e),
            }
            result.valid_runs += 1;
        }
        result.mae_theoretical = mean_errors(&theo);
        result.mae_abs = mean_errors(&abs);
        if result.valid_runs == 0 {
            result.failure = last_failure.map(|e| alloc::format!("{e}"));
        }
        result
    }
}

fn mean_errors(v: &[ParamErrors]) -> Option<ParamErrors> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some(ParamErrors {
        z0_m: v.iter().map(|e| e.z0_m).sum::<f64>() / n,
        theta_rad: v.iter().map(|e| e.theta_rad).sum::<f64>() / n,
    })
}

/// AbS wins when it has an error no larger than the closed form, or when
/// only AbS produced one.
fn abs_wins(abs: Option<f64>, theo: Option<f64>) -> bool {
    match (abs, theo) {
        (Some(a), Some(t)) => a <= t,
        (Some(_), None) => true,
        _ => false,
    }
}

impl SweepReport {
    /// Aggregates row-major cell results.
    pub fn from_cells(sweep: &SweepConfig, cells: Vec<CellResult>) -> Self {
        let valid: Vec<&CellResult> = cells.iter().filter(|c| c.is_valid()).collect();
        let frac = |wins: usize| {
            if valid.is_empty() {
                0.0
            } else {
                wins as f64 / valid.len() as f64
            }
        };
        let theta_wins = valid
            .iter()
            .filter(|c| {
                abs_wins(
                    c.mae_abs.map(|e| e.theta_rad),
                    c.mae_theoretical.map(|e| e.theta_rad),
                )
            })
            .count();
        let z0_wins = valid
            .iter()
            .filter(|c| abs_wins(c.mae_abs.map(|e| e.z0_m), c.mae_theoretical.map(|e| e.z0_m)))
            .count();
        Self {
            z0_grid: sweep.z0_values.clone(),
            theta_grid: sweep.theta_values.clone(),
            win_fraction_theta: frac(theta_wins),
            win_fraction_z0: frac(z0_wins),
            valid_cells: valid.len(),
            invalid_cells: cells.len() - valid.len(),
            cells,
            noise: sweep.noise,
            target_signal_flux: sweep.target_signal_flux,
            seeds: sweep.seeds.clone(),
        }
    }
}

/// Evaluates every cell in order.
pub fn run_sweep(sweep: &SweepConfig) -> crate::Result<SweepReport> {
    validate(sweep)?;
    let cells = (0..sweep.n_cells())
        .map(|c| {
            let (zi, ti) = sweep.cell_position(c);
            sweep.evaluate_cell(zi, ti)
        })
        .collect();
    Ok(SweepReport::from_cells(sweep, cells))
}

/// Checks a sweep before any cell is evaluated.
pub fn validate(sweep: &SweepConfig) -> crate::Result<()> {
    if sweep.z0_values.is_empty() || sweep.theta_values.is_empty() {
        return Err(crate::Error::invalid("sweep grids must be non-empty"));
    }
    if sweep.seeds.is_empty() {
        return Err(crate::Error::invalid("sweep needs at least one seed"));
    }
    sweep.config.validate()?;
    sweep.render.validate()?;
    sweep.abs.clamped_to(sweep.config.n_bins).validate(sweep.config.n_bins)?;
    if let Noise::Spad { cycles: 0 } = sweep.noise {
        return Err(crate::Error::invalid("cycles must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small(noise: Noise) -> SweepConfig {
        SweepConfig {
            z0_values: vec![2.0],
            theta_values: vec![20f64.to_radians()],
            config: SensorConfig::default(),
            render: RenderSettings {
                angular_resolution: 64,
                ..Default::default()
            },
            noise,
            target_signal_flux: None,
            abs: AbsConfig::default(),
            seeds: vec![1],
        }
    }

    #[test]
    fn degenerate_noiseless_sweep() {
        let r = run_sweep(&small(Noise::Noiseless)).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.valid_cells, 1);
        let c = &r.cells[0];
        let abs = c.mae_abs.unwrap();
        let theo = c.mae_theoretical.unwrap();
        assert!(abs.z0_m < 0.01 && abs.theta_rad < 1f64.to_radians(), "{c:?}");
        assert!(theo.z0_m >= 0.0 && theo.theta_rad >= 0.0);
        assert!((0.0..=1.0).contains(&r.win_fraction_theta));
        assert!((0.0..=1.0).contains(&r.win_fraction_z0));
    }

    #[test]
    fn sweep_is_deterministic() {
        let mut s = small(Noise::Spad { cycles: 100_000 });
        s.target_signal_flux = Some(0.05);
        s.config = s.config.with_bkg_flux(1e-5);
        s.seeds = vec![3, 4];
        let a = run_sweep(&s).unwrap();
        let b = run_sweep(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unrenderable_cells_are_excluded() {
        let mut s = small(Noise::Noiseless);
        s.z0_values = vec![2.0, 9.9];
        s.theta_values = vec![40f64.to_radians()];
        let r = run_sweep(&s).unwrap();
        assert_eq!((r.valid_cells, r.invalid_cells), (1, 1));
        assert!(r.cells[1].failure.is_some());
        assert!(r.win_fraction_theta <= 1.0 && r.win_fraction_z0 <= 1.0);
    }

    #[test]
    fn ties_go_to_abs() {
        assert!(abs_wins(Some(0.1), Some(0.1)));
        assert!(!abs_wins(Some(0.2), Some(0.1)));
        assert!(abs_wins(Some(0.2), None));
        assert!(!abs_wins(None, Some(0.1)));
    }

    #[test]
    fn run_seeds_depend_on_position() {
        assert_ne!(run_seed(1, 0, 1), run_seed(1, 1, 0));
        assert_ne!(run_seed(1, 0, 0), run_seed(2, 0, 0));
        assert_eq!(run_seed(7, 3, 4), run_seed(7, 3, 4));
    }
}
