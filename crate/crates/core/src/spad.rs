//! Single-photon acquisition of a transient histogram.
//!
//! In every laser cycle, bin `i` receives at least one photon with
//! probability `q_i = 1 - exp(-phi_i)`. A synchronous SPAD records only the
//! first such bin, so the probability of a detection in bin `i` is
//! `p_i = q_i * prod_{j<i} (1 - q_j)` and later bins are starved at high
//! flux (pile-up). A free-running detector instead resumes a fixed dead
//! time after each detection regardless of the laser period.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, expm1, log1p};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};

use crate::error::{Error, Result};
use crate::scene::{AcquisitionMode, SpadHistogram, TransientHistogram};

/// Detection probabilities `p_1..p_N` followed by the no-detection
/// probability `p_{N+1}`.
pub fn detection_probabilities(hist: &TransientHistogram) -> Vec<f64> {
    let mut p = Vec::with_capacity(hist.n_bins() + 1);
    let mut survive = 1.0;
    let mut detected = 0.0;
    for &phi in &hist.flux {
        let q = -expm1(-phi);
        let pi = q * survive;
        p.push(pi);
        detected += pi;
        survive *= exp(-phi);
    }
    p.push((1.0 - detected).max(0.0));
    p
}

/// Expected synchronous counts `L * p_i`, including the empty-cycle bin.
pub fn expected_synchronous_counts(hist: &TransientHistogram, cycles: u64) -> Vec<f64> {
    detection_probabilities(hist)
        .into_iter()
        .map(|p| p * cycles as f64)
        .collect()
}

/// Synchronous acquisition over `cycles` laser periods.
///
/// Bins are visited in time order: of the cycles still without a
/// detection, a `Binomial(remaining, q_i)` number detect in bin `i`. This
/// draws the same multinomial as `cycles` independent categorical draws
/// from [`detection_probabilities`], in O(N) time.
pub fn simulate_synchronous_spad(
    hist: &TransientHistogram,
    cycles: u64,
    seed: u64,
) -> Result<SpadHistogram> {
    if cycles == 0 {
        return Err(Error::invalid("cycles must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(hist.n_bins() + 1);
    let mut remaining = cycles;
    for &phi in &hist.flux {
        let q = -expm1(-phi);
        let c = if remaining == 0 || q <= 0.0 {
            0
        } else if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q)
                .map_err(|_| Error::invalid("detection probability out of range"))?
                .sample(&mut rng)
        };
        counts.push(c);
        remaining -= c;
    }
    counts.push(remaining);
    SpadHistogram::new(counts, cycles, AcquisitionMode::Synchronous)
}

/// Free-running acquisition over `cycles` laser periods with a dead time
/// of `dead_time_bins` bins.
///
/// The timeline is the concatenation of all periods. Photons arrive in
/// bin `t` as a Poisson variable with mean `phi_{t mod N}`; an active
/// detector fires in the first bin that receives a photon, then ignores
/// the next `dead_time_bins - 1` bins, so detection resumes at bin
/// `t + dead_time_bins` even across period boundaries. Each detection is
/// histogrammed at `t mod N`.
///
/// Waiting times are drawn directly: the chance of no photon over bins
/// `[t, b)` is `exp(-sum phi)`, so the next detection is the first bin where
/// the cumulative flux from `t` reaches an `Exp(1)` draw.
pub fn simulate_asynchronous_spad(
    hist: &TransientHistogram,
    cycles: u64,
    dead_time_bins: u64,
    seed: u64,
) -> Result<SpadHistogram> {
    if cycles == 0 {
        return Err(Error::invalid("cycles must be at least 1"));
    }
    if dead_time_bins == 0 {
        return Err(Error::invalid("dead time must be at least 1 bin"));
    }
    let n = hist.n_bins();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &phi in &hist.flux {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + phi);
    }
    let per_period = prefix[n];
    let mut counts = vec![0u64; n];
    if !(per_period > 0.0) {
        return SpadHistogram::new(counts, cycles, AcquisitionMode::Asynchronous);
    }
    let last_lit = hist.flux.iter().rposition(|&v| v > 0.0).unwrap_or(n - 1);
    // Smallest bin j >= from whose cumulative flux prefix[j+1] - base reaches need.
    let first_reaching = |from: usize, base: f64, need: f64| -> usize {
        let j = from + prefix[from + 1..].partition_point(|&c| c - base < need);
        j.min(last_lit)
    };

    let n64 = n as u64;
    let end = cycles * n64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: u64 = 0;
    while t < end {
        let e: f64 = Exp1.sample(&mut rng);
        let phase = (t % n64) as usize;
        let period_start = t - phase as u64;
        let left_in_period = per_period - prefix[phase];
        let b = if e <= left_in_period {
            period_start + first_reaching(phase, prefix[phase], e) as u64
        } else {
            let beyond = e - left_in_period;
            // Whole periods skipped, leaving 0 < rest <= per_period.
            let skip = libm::ceil(beyond / per_period).max(1.0) - 1.0;
            let rest = beyond - skip * per_period;
            period_start + n64 * (1 + skip as u64) + first_reaching(0, 0.0, rest) as u64
        };
        if b >= end {
            break;
        }
        counts[(b % n64) as usize] += 1;
        t = b + dead_time_bins;
    }
    SpadHistogram::new(counts, cycles, AcquisitionMode::Asynchronous)
}

/// Low-flux estimate `h_i / L`.
pub fn estimate_transient_lowflux(spad: &SpadHistogram, bin_time_s: f64) -> TransientHistogram {
    let l = spad.cycles as f64;
    TransientHistogram {
        flux: spad.time_bins().iter().map(|&h| h as f64 / l).collect(),
        bin_time_s,
    }
}

/// Inverts the synchronous detection model:
/// `phi_i = -ln(1 - h_i / (L - sum_{j<i} h_j))`.
///
/// Works on real-valued counts so expected counts can be inverted exactly.
pub fn coates_flux(counts: &[f64], cycles: f64) -> Result<Vec<f64>> {
    let mut remaining = cycles;
    let mut out = Vec::with_capacity(counts.len());
    for (i, &h) in counts.iter().enumerate() {
        if h == 0.0 {
            out.push(0.0);
            continue;
        }
        if h >= remaining {
            return Err(Error::Saturated { bin: i + 1 });
        }
        out.push(-log1p(-h / remaining));
        remaining -= h;
    }
    Ok(out)
}

/// Pile-up corrected flux estimate from a synchronous SPAD histogram.
pub fn correct_pileup_coates(spad: &SpadHistogram, bin_time_s: f64) -> Result<TransientHistogram> {
    if spad.mode != AcquisitionMode::Synchronous {
        return Err(Error::invalid("pile-up correction needs a synchronous histogram"));
    }
    let counts: Vec<f64> = spad.time_bins().iter().map(|&h| h as f64).collect();
    let flux = coates_flux(&counts, spad.cycles as f64)?;
    TransientHistogram::new(flux, bin_time_s)
}
