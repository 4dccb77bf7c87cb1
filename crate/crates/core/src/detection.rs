//! Bob's photon-counting detectors and symbol decoding.
//!
//! Each of the `S` detectors counts Poisson-distributed photons: mean `l1` at
//! the detector Alice focused on and `l2` at every other one, plus dark
//! counts. Decoding picks the strict maximum (ties are ambiguous) or, with a
//! threshold `n`, accepts only frames where exactly one detector reached `n`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::FiberSpec;
use crate::error::{ensure, Error, Result};
use crate::rng::{chunked, SimRng};
use crate::stats::{binomial_stderr, Estimate};

/// Poisson tail mass at which the success-probability series stops.
const SERIES_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorArray {
    pub n_symbols: usize,
    /// Quantum efficiency d.
    pub efficiency: f64,
    /// Dark-click probability per detector per gate.
    pub dark_prob: f64,
    /// Fraction of the focused power collected by the correct detector.
    pub capture_correct: f64,
    /// Effective number of background modes seen by each detector.
    pub background_modes: f64,
}

impl Default for DetectorArray {
    fn default() -> Self {
        Self {
            n_symbols: 36,
            efficiency: 1.0,
            dark_prob: 0.0,
            capture_correct: 1.0,
            background_modes: 1.0,
        }
    }
}

impl DetectorArray {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_symbols >= 1, "n_symbols", "must be >= 1")?;
        ensure(
            (0.0..=1.0).contains(&self.efficiency),
            "efficiency",
            "must lie in [0, 1]",
        )?;
        ensure(
            (0.0..1.0).contains(&self.dark_prob),
            "dark_prob",
            "must lie in [0, 1)",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.capture_correct),
            "capture_correct",
            "must lie in [0, 1]",
        )?;
        ensure(
            self.background_modes >= 0.0 && self.background_modes.is_finite(),
            "background_modes",
            "must be finite and >= 0",
        )?;
        Ok(())
    }

    /// Poisson rate whose no-click probability equals `1 - dark_prob`.
    pub fn dark_rate(&self) -> f64 {
        -(-self.dark_prob).ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub lambda_correct: f64,
    pub lambda_wrong: f64,
}

impl DetectionRates {
    pub fn new(lambda_correct: f64, lambda_wrong: f64) -> Result<Self> {
        ensure(
            lambda_correct >= 0.0 && lambda_correct.is_finite(),
            "lambda_correct",
            "must be finite and >= 0",
        )?;
        ensure(
            lambda_wrong >= 0.0 && lambda_wrong.is_finite(),
            "lambda_wrong",
            "must be finite and >= 0",
        )?;
        Ok(Self {
            lambda_correct,
            lambda_wrong,
        })
    }
}

/// Mean detected photons per gate at the correct and at each wrong detector,
/// excluding dark counts.
pub fn expected_rates(
    alpha2: f64,
    mu2: f64,
    fiber: &FiberSpec,
    detector: &DetectorArray,
) -> Result<DetectionRates> {
    ensure(
        (0.0..=1.0).contains(&alpha2),
        "alpha2",
        "must lie in [0, 1]",
    )?;
    ensure(
        mu2 >= 0.0 && mu2.is_finite(),
        "mu2",
        "must be finite and >= 0",
    )?;
    ensure(fiber.n_modes >= 2, "n_modes", "must be >= 2")?;
    detector.validate()?;
    let arriving = mu2 * detector.efficiency * fiber.transmittance();
    let per_mode_background = (1.0 - alpha2) / (fiber.n_modes - 1) as f64;
    DetectionRates::new(
        detector.capture_correct * alpha2 * arriving,
        detector.background_modes * per_mode_background * arriving,
    )
}

/// Photon counts registered by Bob's detectors in one gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonFrame {
    pub counts: Vec<u32>,
}

impl PhotonFrame {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Samples counts with the given per-detector signal means, adding the
/// detector's dark rate to each.
pub fn sample_counts<R: Rng + ?Sized>(
    means: &[f64],
    detector: &DetectorArray,
    rng: &mut R,
) -> PhotonFrame {
    let dark = detector.dark_rate();
    PhotonFrame {
        counts: means.iter().map(|m| poisson(m + dark, rng)).collect(),
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean > 0.0 {
        Poisson::new(mean)
            .map(|d| d.sample(rng) as u32)
            .unwrap_or(0)
    } else {
        0
    }
}

/// One gate with symbol `sent`: the correct detector sees `l1`, every other
/// detector `l2`.
pub fn sample_frame<R: Rng + ?Sized>(
    rates: &DetectionRates,
    detector: &DetectorArray,
    sent: usize,
    rng: &mut R,
) -> Result<PhotonFrame> {
    if sent >= detector.n_symbols {
        return Err(Error::UnknownSymbol {
            index: sent,
            size: detector.n_symbols,
        });
    }
    let dark = detector.dark_rate();
    let correct = Poisson::new(rates.lambda_correct + dark).ok();
    let wrong = Poisson::new(rates.lambda_wrong + dark).ok();
    let draw =
        |d: &Option<Poisson<f64>>, rng: &mut R| d.as_ref().map_or(0, |d| d.sample(rng) as u32);
    let counts = (0..detector.n_symbols)
        .map(|b| {
            if b == sent {
                draw(&correct, rng)
            } else {
                draw(&wrong, rng)
            }
        })
        .collect();
    Ok(PhotonFrame { counts })
}

/// Index of the strict maximum; `None` on ties or an empty frame.
pub fn decode_argmax(frame: &PhotonFrame) -> Option<usize> {
    let mut best = 0u32;
    let mut idx = None;
    for (i, &c) in frame.counts.iter().enumerate() {
        if c > best {
            best = c;
            idx = Some(i);
        } else if c == best && c > 0 {
            idx = None;
        }
    }
    idx
}

/// Accepts a frame only when exactly one detector counted at least
/// `threshold` photons.
pub fn decode_threshold(frame: &PhotonFrame, threshold: u32) -> Option<usize> {
    let threshold = threshold.max(1);
    let mut hits = frame
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= threshold)
        .map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Some(i),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "threshold")]
pub enum DecodeStrategy {
    Argmax,
    Threshold(u32),
}

impl DecodeStrategy {
    pub fn decode(&self, frame: &PhotonFrame) -> Option<usize> {
        match *self {
            DecodeStrategy::Argmax => decode_argmax(frame),
            DecodeStrategy::Threshold(n) => decode_threshold(frame, n),
        }
    }
}

/// Probability that the correct detector strictly out-counts all `S - 1`
/// wrong detectors:
/// `p = e^{-l1} sum_k F(k-1)^{S-1} l1^k / k!`, `F` the Poisson CDF of `l2`.
pub fn analytic_success_probability(lambda1: f64, lambda2: f64, n_symbols: usize) -> f64 {
    if n_symbols <= 1 {
        return 1.0;
    }
    let others = (n_symbols - 1) as i32;
    let ln_l1 = lambda1.ln();
    let ln_l2 = lambda2.ln();
    // F(k - 1), starting from F(-1) = 0
    let mut cdf_prev: f64 = 0.0;
    let mut ln_pmf1 = -lambda1;
    let mut ln_pmf2 = -lambda2;
    let mut mass1 = 0.0;
    let mut p: f64 = 0.0;
    let cap = (lambda1 + 40.0 * lambda1.sqrt() + 100.0) as u64;
    for k in 0..=cap {
        if k > 0 {
            ln_pmf1 += ln_l1 - (k as f64).ln();
            ln_pmf2 += ln_l2 - (k as f64).ln();
        }
        let pmf1 = ln_pmf1.exp();
        p += cdf_prev.powi(others) * pmf1;
        mass1 += pmf1;
        let pmf2 = if lambda2 > 0.0 || k == 0 {
            ln_pmf2.exp()
        } else {
            0.0
        };
        cdf_prev = (cdf_prev + pmf2).min(1.0);
        if k as f64 > lambda1 && (1.0 - mass1 < SERIES_TAIL || pmf1 < SERIES_TAIL * 1e-6) {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub trials: u64,
    pub accepted: u64,
    pub accept_rate: Estimate,
    /// Fraction of accepted frames decoded correctly; NaN with no acceptance.
    pub success_given_accept: Estimate,
}

/// Monte Carlo acceptance and conditional success rates of threshold
/// decoding, for symbol 0 sent through a dark-count-free array.
pub fn threshold_statistics<R: Rng + ?Sized>(
    lambda1: f64,
    lambda2: f64,
    n_symbols: usize,
    threshold: u32,
    rng: &mut R,
    n_trials: u64,
) -> Result<ThresholdStats> {
    ensure(n_trials >= 1, "n_trials", "must be >= 1")?;
    let strategy = DecodeStrategy::Threshold(threshold);
    let (accepted, correct) =
        simulate_decoding(lambda1, lambda2, n_symbols, strategy, rng, n_trials)?;
    let rate = accepted as f64 / n_trials as f64;
    let success = if accepted > 0 {
        let p = correct as f64 / accepted as f64;
        Estimate::new(p, binomial_stderr(p, accepted))
    } else {
        Estimate::new(f64::NAN, f64::NAN)
    };
    Ok(ThresholdStats {
        trials: n_trials,
        accepted,
        accept_rate: Estimate::new(rate, binomial_stderr(rate, n_trials)),
        success_given_accept: success,
    })
}

/// Monte Carlo probability that `strategy` returns the sent symbol.
pub fn simulated_success_probability<R: Rng + ?Sized>(
    lambda1: f64,
    lambda2: f64,
    n_symbols: usize,
    strategy: DecodeStrategy,
    rng: &mut R,
    n_trials: u64,
) -> Result<Estimate> {
    ensure(n_trials >= 1, "n_trials", "must be >= 1")?;
    let (_, correct) = simulate_decoding(lambda1, lambda2, n_symbols, strategy, rng, n_trials)?;
    let p = correct as f64 / n_trials as f64;
    Ok(Estimate::new(p, binomial_stderr(p, n_trials)))
}

/// Returns (accepted, correct) counts over `n_trials` gates.
fn simulate_decoding<R: Rng + ?Sized>(
    lambda1: f64,
    lambda2: f64,
    n_symbols: usize,
    strategy: DecodeStrategy,
    rng: &mut R,
    n_trials: u64,
) -> Result<(u64, u64)> {
    let rates = DetectionRates::new(lambda1, lambda2)?;
    let detector = DetectorArray {
        n_symbols,
        ..DetectorArray::default()
    };
    detector.validate()?;
    let seed: u64 = rng.random();
    let parts = chunked(seed, n_trials as usize, 1 << 16, |rng: &mut SimRng, n| {
        let mut accepted = 0u64;
        let mut correct = 0u64;
        for _ in 0..n {
            let frame = sample_frame(&rates, &detector, 0, rng).expect("symbol 0 is valid");
            if let Some(s) = strategy.decode(&frame) {
                accepted += 1;
                correct += (s == 0) as u64;
            }
        }
        (accepted, correct)
    });
    Ok(parts
        .into_iter()
        .fold((0, 0), |(a, c), (da, dc)| (a + da, c + dc)))
}
