//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::f64::consts::PI;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use transient::cli::{SWEEP_BKG_FLUX, SWEEP_TARGET_FLUX};
use transient::parallel;
use transient_core::estimate::{invert_distance_for_angle, refine_plane_abs};
use transient_core::metrics::{
    abs_rel, berhu, log10_err, rmse, threshold_accuracy, BERHU_C, DEFAULT_THRESHOLDS,
};
use transient_core::render::{render_plane, render_plane_soft, render_plane_with_albedo};
use transient_core::spad::{
    correct_pileup_coates, detection_probabilities, simulate_asynchronous_spad,
    simulate_synchronous_spad,
};
use transient_core::sweep::{Noise, SweepConfig};
use transient_core::{
    AbsConfig, DepthMapScene, PlaneParams, RenderSettings, SensorConfig, TransientHistogram,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn sweep_win_fractions() -> Outcome {
    let sweep = SweepConfig {
        z0_values: linspace(0.5, 9.5, 10),
        theta_values: linspace(5.0, 45.0, 10).into_iter().map(f64::to_radians).collect(),
        config: SensorConfig::default().with_bkg_flux(SWEEP_BKG_FLUX),
        render: RenderSettings::default(),
        noise: Noise::Spad { cycles: 100_000 },
        target_signal_flux: Some(SWEEP_TARGET_FLUX),
        abs: AbsConfig::default(),
        seeds: (0..5).collect(),
    };
    let r = parallel::run_sweep(&sweep).map_err(|e| e.to_string())?;
    check(
        r.win_fraction_theta >= 0.70 && r.win_fraction_z0 >= 0.85,
        format!(
            "win_fraction_theta {:.3} (>= 0.70), win_fraction_z0 {:.3} (>= 0.85), {} valid / {} invalid cells",
            r.win_fraction_theta, r.win_fraction_z0, r.valid_cells, r.invalid_cells
        ),
    )
}

fn abs_self_consistency() -> Outcome {
    let config = SensorConfig::default();
    let abs = AbsConfig::default();
    let settings = RenderSettings {
        angular_resolution: abs.angular_resolution,
        soft_sigma_bins: abs.soft_sigma_bins,
        ..Default::default()
    };
    let truth = PlaneParams::new(2.0, 20f64.to_radians(), 0.0).unwrap();
    let hist = render_plane_soft(&truth, &config, &settings).map_err(|e| e.to_string())?.flux;
    let est = refine_plane_abs(&hist, &config, &abs, 2.1, 25f64.to_radians()).map_err(|e| e.to_string())?;
    let dz = (est.z0_m - 2.0).abs();
    let dt = (est.theta_n_rad - truth.theta_n_rad).abs().to_degrees();
    check(
        dz < 0.01 && dt < 0.5,
        format!("from (2.1 m, 25 deg): |dZ0| {dz:.2e} m (< 0.01), |dtheta| {dt:.2e} deg (< 0.5)"),
    )
}

fn soft_gradients() -> Outcome {
    let config = SensorConfig::default();
    let settings = RenderSettings {
        angular_resolution: 64,
        ..Default::default()
    };
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let draws = 20;
    for _ in 0..draws {
        let z0 = rng.random_range(1.0..6.0);
        let theta = rng.random_range(5f64..40.0).to_radians();
        let render = |z: f64, t: f64| {
            render_plane_soft(&PlaneParams::new(z, t, 0.0).unwrap(), &config, &settings).unwrap()
        };
        let out = render(z0, theta);
        let h = 1e-6;
        let (tp, tm) = (render(z0, theta + h).flux, render(z0, theta - h).flux);
        let (zp, zm) = (render(z0 + h, theta).flux, render(z0 - h, theta).flux);
        for i in 0..config.n_bins {
            for (analytic, fd) in [
                (out.grad_theta[i], (tp.flux[i] - tm.flux[i]) / (2.0 * h)),
                (out.grad_z0[i], (zp.flux[i] - zm.flux[i]) / (2.0 * h)),
            ] {
                if analytic.abs() > 1e-9 {
                    worst = worst.max((analytic - fd).abs() / analytic.abs());
                    checked += 1;
                }
            }
        }
    }
    check(
        worst < 1e-3,
        format!("{draws} draws, {checked} bin gradients, worst relative error {worst:.2e} (< 1e-3)"),
    )
}

fn spad_statistics() -> Outcome {
    let cycles = 1_000_000u64;
    let config = SensorConfig::default().with_bkg_flux(1e-4);
    let plane = PlaneParams::new(2.0, 20f64.to_radians(), 0.0).unwrap();
    let unit = render_plane(&plane, &config.clone().with_bkg_flux(0.0), &RenderSettings::default()).unwrap();
    let laser = unit.scaled(1.0 / unit.total());
    let hist = TransientHistogram::new(laser.flux.iter().map(|v| v + 1e-4).collect(), config.bin_time_s).unwrap();
    let p = detection_probabilities(&hist);
    let spad = simulate_synchronous_spad(&hist, cycles, 11).map_err(|e| e.to_string())?;
    let dev = spad
        .counts
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| (c as f64 / cycles as f64 - pi).abs())
        .fold(0.0, f64::max);
    let bound = 5.0 / (cycles as f64).sqrt();

    // Top-hat of 2 photons/cycle over 12 bins on a weak floor.
    let mut flux = vec![1e-4; 512];
    for v in &mut flux[100..112] {
        *v += 2.0 / 12.0;
    }
    let truth = TransientHistogram::new(flux, config.bin_time_s).unwrap();
    let counts = simulate_synchronous_spad(&truth, cycles, 12).map_err(|e| e.to_string())?;
    let recovered = correct_pileup_coates(&counts, config.bin_time_s).map_err(|e| e.to_string())?;
    let rel = truth
        .flux
        .iter()
        .zip(&recovered.flux)
        .filter(|(t, _)| **t > 1e-2)
        .map(|(t, r)| (r - t).abs() / t)
        .fold(0.0, f64::max);
    check(
        dev < bound && rel < 0.03,
        format!(
            "max |h/L - p| {dev:.2e} (< {bound:.0e}); Coates worst relative error {:.2}% (< 3%)",
            rel * 100.0
        ),
    )
}

fn pileup_avoidance() -> Outcome {
    let cycles = 1_000_000u64;
    let n = 512;
    let peak = |center: f64, i: usize| (-((i as f64 - center) / 3.0).powi(2) / 2.0).exp();
    let norm: f64 = (0..n).map(|i| peak(100.0, i)).sum();
    let flux: Vec<f64> = (0..n)
        .map(|i| 1e-4 + 0.5 * (peak(100.0, i) + peak(300.0, i)) / norm)
        .collect();
    let hist = TransientHistogram::new(flux, 1e-10).unwrap();
    let total = hist.total();
    let window = |c: &[u64], center: usize| c[center - 15..=center + 15].iter().sum::<u64>() as f64;
    let ratio = |c: &[u64]| window(c, 300) / window(c, 100);
    let truth = {
        let f = &hist.flux;
        f[285..=315].iter().sum::<f64>() / f[85..=115].iter().sum::<f64>()
    };
    let sync = simulate_synchronous_spad(&hist, cycles, 21).map_err(|e| e.to_string())?;
    let asyn = simulate_asynchronous_spad(&hist, cycles, 1, 22).map_err(|e| e.to_string())?;
    let sync_err = (ratio(sync.time_bins()) / truth - 1.0).abs();
    let async_err = (ratio(&asyn.counts) / truth - 1.0).abs();
    check(
        total >= 1.0 && async_err < 0.05 && sync_err > 0.20,
        format!(
            "total flux {total:.2}/cycle; late/early ratio error async {:.2}% (< 5%), sync {:.1}% (> 20%)",
            async_err * 100.0,
            sync_err * 100.0
        ),
    )
}

fn ambiguity_invariants() -> Outcome {
    let config = SensorConfig::default().with_bkg_flux(1e-3).with_photons_per_pulse(3.0);
    let settings = RenderSettings {
        angular_resolution: 64,
        ..Default::default()
    };
    let mut rng = StdRng::seed_from_u64(6);
    for _ in 0..10 {
        let z0 = rng.random_range(0.5..6.0);
        let theta = rng.random_range(0.0..45f64).to_radians();
        let base = render_plane(&PlaneParams::new(z0, theta, 0.0).unwrap(), &config, &settings).unwrap();
        let phi = rng.random_range(0.0..2.0 * PI);
        let rotated = render_plane(&PlaneParams::new(z0, theta, phi).unwrap(), &config, &settings).unwrap();
        if rotated != base {
            return Err(format!("phi_n = {phi} changes the render of ({z0}, {theta})"));
        }
    }
    for _ in 0..10 {
        let z0 = rng.random_range(0.5..6.0);
        let theta = rng.random_range(0.0..45f64).to_radians();
        let plane = PlaneParams::new(z0, theta, 0.0).unwrap();
        let rho = rng.random_range(0.05..0.1);
        // Power-of-two factors keep both products exact.
        let alpha = 2f64.powi(rng.random_range(-3..=3));
        let a = render_plane_with_albedo(&plane, rho, &config, &settings).unwrap();
        let scaled = config.clone().with_photons_per_pulse(config.photons_per_pulse / alpha);
        let b = render_plane_with_albedo(&plane, alpha * rho, &scaled, &settings).unwrap();
        if a != b {
            return Err(format!("albedo x{alpha} / power /{alpha} changes the render"));
        }
    }
    Ok("phi_n rotation and (albedo x a, power / a) leave renders bit-identical over 10 draws each".into())
}

fn distance_angle_round_trip() -> Outcome {
    let half = SensorConfig::default().fov_rad / 2.0;
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = rng.random_range(1e-6..=45f64).to_radians();
        let z0 = rng.random_range(0.5..9.0);
        let plane = PlaneParams::new(z0, theta, 0.0).unwrap();
        for gamma in [-half, half] {
            let back = invert_distance_for_angle(plane.distance_at(gamma), gamma, z0).map_err(|e| e.to_string())?;
            worst = worst.max((back - theta).abs());
        }
    }
    check(worst < 1e-9, format!("100 draws, both cone edges, worst error {worst:.2e} rad (< 1e-9)"))
}

fn metric_checks() -> Outcome {
    let gt = [1.0, 2.0, 4.0];
    let pred = [1.1, 1.8, 5.0];
    let expect = [
        ("AbsRel", abs_rel(&pred, &gt), (0.1 / 1.0 + 0.2 / 2.0 + 1.0 / 4.0) / 3.0),
        ("RMSE", rmse(&pred, &gt), ((0.01f64 + 0.04 + 1.0) / 3.0).sqrt()),
        (
            "Log10",
            log10_err(&pred, &gt),
            (1.1f64.log10() + (0.9f64).log10().abs() + 1.25f64.log10()) / 3.0,
        ),
        // Ratios 1.1, 1/0.9 and exactly 1.25.
        ("delta<1.25", threshold_accuracy(&pred, &gt, 1.25), 2.0 / 3.0),
        ("delta<1.12", threshold_accuracy(&pred, &gt, 1.12), 2.0 / 3.0),
        ("delta<1.05", threshold_accuracy(&pred, &gt, 1.05), 0.0),
    ];
    for (name, got, want) in expect {
        let got = got.map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-12 {
            return Err(format!("{name}: {got} vs hand value {want}"));
        }
    }
    let c = BERHU_C;
    let jump = (berhu(c * (1.0 + 1e-15), c) - berhu(c, c))
        .abs()
        .max((berhu(-c * (1.0 + 1e-15), c) - berhu(-c, c)).abs());
    if jump > 1e-12 {
        return Err(format!("BerHu jumps by {jump} at |x| = c"));
    }
    for (i, pct) in [5.0, 10.25, 15.7625].iter().enumerate() {
        if (DEFAULT_THRESHOLDS[i] - (1.0 + pct / 100.0)).abs() > 1e-12 {
            return Err(format!("threshold {} is not {pct}%", DEFAULT_THRESHOLDS[i]));
        }
    }
    Ok(format!("3-pixel hand values match to 1e-12; BerHu jump at c {jump:.1e}; 1.05^i = 5%, 10.25%, 15.7625%"))
}

fn monte_carlo_vs_deterministic() -> Outcome {
    let config = SensorConfig::default();
    let plane = PlaneParams::new(3.0, 30f64.to_radians(), 0.0).unwrap();
    let exact = render_plane(&plane, &config, &RenderSettings::default()).unwrap();
    let scene = DepthMapScene::from_plane(&plane, 512, 512, 30f64.to_radians(), 1.0).unwrap();
    let settings = RenderSettings {
        mc_rays: 1_000_000,
        seed: 42,
        ..Default::default()
    };
    let mc = parallel::render_depth_map(&scene, &config, &settings).map_err(|e| e.to_string())?;
    let l1: f64 = mc.histogram.flux.iter().zip(&exact.flux).map(|(a, b)| (a - b).abs()).sum();
    let rel = l1 / exact.total();
    check(
        rel < 0.03 && mc.missed_rays == 0,
        format!("L1 / total {:.2}% (< 3%) at 1e6 rays, {} missed", rel * 100.0, mc.missed_rays),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("sweep: AbS beats closed form (10x10, L=1e5, 5 seeds)", sweep_win_fractions),
        ("noiseless AbS self-consistency", abs_self_consistency),
        ("soft-render gradients vs central differences", soft_gradients),
        ("SPAD frequencies and Coates round trip", spad_statistics),
        ("asynchronous acquisition avoids pile-up", pileup_avoidance),
        ("orientation and albedo/power ambiguity", ambiguity_invariants),
        ("distance/angle round trip", distance_angle_round_trip),
        ("depth metrics hand checks", metric_checks),
        ("Monte-Carlo vs deterministic render", monte_carlo_vs_deterministic),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  [{}] {name}: {d} ({secs:.1} s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL  [{}] {name}: {d} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
