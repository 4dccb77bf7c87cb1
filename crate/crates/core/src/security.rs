//! Information-theoretic accounting for Bob and Eve.
//!
//! All entropies are in bits. Coherent-state field entropies are measured in
//! shot-noise units (one photon of noise per mode), so only differences are
//! physical.

use std::f64::consts::LN_2;

use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::adversary::eve_phase_fidelity;
use crate::channel::attenuation_factor;
use crate::error::{ensure, Error, Result};
use crate::rng::{chunked, SimRng};
use crate::stats::{Estimate, Moments};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Eve's mean information per symbol with single photons and `N` large.
pub const SINGLE_PHOTON_EVE_BITS: f64 = (1.0 - EULER_GAMMA) / LN_2;

const MC_CHUNK: usize = 4096;

/// Upper end of the bisection bracket before the budget is declared saturated.
const BUDGET_CAP: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickDistribution {
    /// Click probability at the detector Alice focused on.
    pub p_correct: f64,
    /// Click probability at each of the other `S - 1` detectors.
    pub p_wrong: f64,
}

fn check_shaping(alpha2: f64, n_modes: usize, n_symbols: usize) -> Result<()> {
    ensure(
        (0.0..=1.0).contains(&alpha2),
        "alpha2",
        "must lie in [0, 1]",
    )?;
    ensure(n_modes >= 2, "n_modes", "must be >= 2")?;
    ensure(n_symbols >= 1, "n_symbols", "must be >= 1")?;
    ensure(
        n_symbols <= n_modes,
        "n_symbols",
        "must not exceed the number of modes",
    )
}

pub fn click_distribution(
    alpha2: f64,
    n_modes: usize,
    n_symbols: usize,
) -> Result<ClickDistribution> {
    check_shaping(alpha2, n_modes, n_symbols)?;
    if n_symbols == 1 {
        return Ok(ClickDistribution {
            p_correct: 1.0,
            p_wrong: 0.0,
        });
    }
    let background = (1.0 - alpha2) / (n_modes - 1) as f64;
    let norm = alpha2 + background * (n_symbols - 1) as f64;
    Ok(ClickDistribution {
        p_correct: alpha2 / norm,
        p_wrong: background / norm,
    })
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Bob's information per symbol, `H_B`.
pub fn bob_entropy(alpha2: f64, n_modes: usize, n_symbols: usize) -> Result<f64> {
    let c = click_distribution(alpha2, n_modes, n_symbols)?;
    let max = (n_symbols as f64).log2();
    let h = max + (n_symbols - 1) as f64 * plogp(c.p_wrong) + plogp(c.p_correct);
    Ok(h.clamp(0.0, max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EntropyMethod {
    ClosedForm,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Eve's information per symbol when she detects single photons on `N`
/// pixels through a speckle channel.
///
/// The Monte Carlo path draws independent output-intensity columns from
/// normalized exponentials and averages their entropy; the marginal over
/// pixels is uniform, so `H(E) = log2 N`.
pub fn single_photon_eve_entropy(n_modes: usize, method: EntropyMethod) -> Result<Estimate> {
    ensure(n_modes >= 2, "n_modes", "must be >= 2")?;
    match method {
        EntropyMethod::ClosedForm => Ok(Estimate::new(SINGLE_PHOTON_EVE_BITS, 0.0)),
        EntropyMethod::MonteCarlo { samples, seed } => {
            let cond = single_photon_conditional_entropy(n_modes, samples, seed)?;
            Ok(Estimate::new(
                (n_modes as f64).log2() - cond.value,
                cond.stderr,
            ))
        }
    }
}

/// Monte Carlo `<H(E|s)>` for single photons on `N` pixels.
pub fn single_photon_conditional_entropy(
    n_modes: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    ensure(n_modes >= 2, "n_modes", "must be >= 2")?;
    ensure(samples >= 2, "samples", "must be >= 2")?;
    let parts = chunked(seed, samples, 64, |rng: &mut SimRng, n| {
        let mut m = Moments::default();
        let mut column = vec![0.0; n_modes];
        for _ in 0..n {
            column.iter_mut().for_each(|w| *w = Exp1.sample(rng));
            let total: f64 = column.iter().sum();
            let h: f64 = column.iter().map(|w| -plogp(w / total)).sum();
            m.push(h);
        }
        m
    });
    Ok(merge(parts).estimate())
}

fn merge(parts: Vec<Moments>) -> Moments {
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

/// Monte Carlo information Eve extracts from a coherent pulse of `mu2`
/// photons with perfect field measurement over the `S` symbol modes.
///
/// Each sample draws a symbol and the noisy field `E`, then scores
/// `log P(E|s) - log P(E)`. This is `H(E) - H(E|s)` evaluated per sample
/// with the exactly known `H(E|s)` substituted, which removes the noise
/// energy fluctuations from the estimator. Since all symbol means lie on the
/// real axis only the real quadratures enter. Tiny negative results within
/// one standard error of zero are reported as zero.
pub fn coherent_eve_entropy_mc(
    mu2: f64,
    n_symbols: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    ensure(
        mu2 >= 0.0 && mu2.is_finite(),
        "mu2",
        "must be finite and >= 0",
    )?;
    ensure(n_symbols >= 2, "n_symbols", "must be >= 2")?;
    ensure(samples >= 2, "samples", "must be >= 2")?;
    let mu = mu2.sqrt();
    let ln_s = (n_symbols as f64).ln();
    let quadrature = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid sigma");
    let parts = chunked(seed, samples, MC_CHUNK, |rng: &mut SimRng, n| {
        let mut m = Moments::default();
        let mut exponents = vec![0.0; n_symbols];
        for _ in 0..n {
            // symbol 0 sent; by symmetry this covers every symbol
            let x0 = quadrature.sample(rng);
            exponents[0] = 0.0;
            for e in exponents.iter_mut().skip(1) {
                let xs = quadrature.sample(rng);
                *e = -2.0 * mu * (mu + x0 - xs);
            }
            m.push((ln_s - log_sum_exp(&exponents)) / LN_2);
        }
        m
    });
    let est = merge(parts).estimate();
    let value = if est.value < 0.0 && -est.value <= est.stderr {
        0.0
    } else {
        est.value
    };
    Ok(Estimate::new(value, est.stderr))
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gaussian maximum-entropy bound on Eve's coherent-state information.
pub fn coherent_eve_entropy_bound(mu2: f64, n_symbols: usize) -> Result<f64> {
    ensure(mu2 >= 0.0, "mu2", "must be >= 0")?;
    ensure(n_symbols >= 2, "n_symbols", "must be >= 2")?;
    let s = n_symbols as f64;
    let gauss = s / 2.0 * (2.0 * mu2 * (s - 1.0) / (s * s)).ln_1p() / LN_2;
    Ok(gauss.min(s.log2()))
}

/// Physical parameters of a link for the click-probability model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub alpha2: f64,
    pub mu2: f64,
    pub n_modes: usize,
    pub n_symbols: usize,
    /// Detector quantum efficiency d.
    pub efficiency: f64,
    pub p_dark: f64,
    /// dB/km
    pub attenuation: f64,
    /// km
    pub length: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        check_shaping(self.alpha2, self.n_modes, self.n_symbols)?;
        ensure(
            self.mu2 >= 0.0 && self.mu2.is_finite(),
            "mu2",
            "must be finite and >= 0",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.efficiency),
            "efficiency",
            "must lie in [0, 1]",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.p_dark),
            "p_dark",
            "must lie in [0, 1]",
        )?;
        Ok(())
    }

    pub fn with_alpha2(self, alpha2: f64) -> Self {
        Self { alpha2, ..self }
    }
}

/// Probability that the click Bob registers is on the correct detector,
/// including loss and dark counts.
pub fn practical_click_probability(p: &LinkParams) -> Result<f64> {
    p.validate()?;
    let arriving = p.mu2 * p.efficiency * attenuation_factor(p.attenuation, p.length)?;
    let signal = p.alpha2 * arriving;
    let background =
        (1.0 - p.alpha2) / (p.n_modes - 1) as f64 * (p.n_symbols - 1) as f64 * arriving;
    let denom = signal + background + p.n_symbols as f64 * p.p_dark;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::UndefinedProbability(
            "no signal and no dark counts reach the detectors".into(),
        ));
    }
    Ok(((signal + p.p_dark) / denom).clamp(0.0, 1.0))
}

pub fn qer_secure(p: &LinkParams) -> Result<f64> {
    Ok(1.0 - practical_click_probability(p)?)
}

/// Error rate after Eve intercepts every pulse and resends with fidelity
/// `beta2`.
pub fn qer_interception(p: &LinkParams, beta2: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&beta2), "beta2", "must lie in [0, 1]")?;
    qer_secure(&p.with_alpha2(beta2 * p.alpha2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BudgetMethod {
    Bound,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureBudget {
    /// Largest photon number per symbol for which Eve learns less than Bob;
    /// infinite when saturated.
    pub mu2: f64,
    /// Eve's information never reaches Bob's.
    pub saturated: bool,
    /// 95% interval from the Monte Carlo standard error.
    pub interval: Option<[f64; 2]>,
}

const BUDGET_TOL: f64 = 0.1;

/// Photon budget per symbol below which Eve's information stays under `H_B`.
pub fn secure_photon_budget(
    alpha2: f64,
    n_modes: usize,
    n_symbols: usize,
    method: BudgetMethod,
) -> Result<SecureBudget> {
    let h_b = bob_entropy(alpha2, n_modes, n_symbols)?;
    ensure(n_symbols >= 2, "n_symbols", "must be >= 2")?;
    let saturated = SecureBudget {
        mu2: f64::INFINITY,
        saturated: true,
        interval: None,
    };
    if h_b <= 1e-12 {
        return Ok(SecureBudget {
            mu2: 0.0,
            saturated: false,
            interval: matches!(method, BudgetMethod::MonteCarlo { .. }).then_some([0.0, 0.0]),
        });
    }
    // Eve's information never exceeds log2 S
    if h_b >= (n_symbols as f64).log2() - 1e-12 {
        return Ok(saturated);
    }
    match method {
        BudgetMethod::Bound => {
            let h = |mu2: f64| coherent_eve_entropy_bound(mu2, n_symbols);
            Ok(crossing(h, h_b)?.map_or(saturated, |mu2| SecureBudget {
                mu2,
                saturated: false,
                interval: None,
            }))
        }
        BudgetMethod::MonteCarlo { samples, seed } => {
            // common random numbers across evaluations
            let eval = |mu2: f64| coherent_eve_entropy_mc(mu2, n_symbols, samples, seed);
            let shifted = |z: f64| {
                move |mu2: f64| -> Result<f64> {
                    let e = eval(mu2)?;
                    Ok(e.value + z * e.stderr)
                }
            };
            let central = crossing(shifted(0.0), h_b)?;
            let Some(mu2) = central else {
                return Ok(saturated);
            };
            let lo = crossing(shifted(1.96), h_b)?.unwrap_or(mu2);
            let hi = crossing(shifted(-1.96), h_b)?.unwrap_or(f64::INFINITY);
            Ok(SecureBudget {
                mu2,
                saturated: false,
                interval: Some([lo, hi]),
            })
        }
    }
}

/// Largest `x` with `h(x) < target`, to within the budget tolerance, or
/// `None` if `h` stays below `target` up to the cap.
fn crossing(h: impl Fn(f64) -> Result<f64>, target: f64) -> Result<Option<f64>> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while h(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > BUDGET_CAP {
            return Ok(None);
        }
    }
    while hi - lo > BUDGET_TOL {
        let mid = 0.5 * (lo + hi);
        if h(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Secure bits per second at a given symbol rate.
pub fn throughput_estimate(symbol_rate_hz: f64, h_bob: f64) -> Result<f64> {
    ensure(symbol_rate_hz >= 0.0, "symbol_rate_hz", "must be >= 0")?;
    ensure(h_bob >= 0.0, "h_bob", "must be >= 0")?;
    Ok(symbol_rate_hz * h_bob)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    pub link: LinkParams,
    pub symbol_rate_hz: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub budget: BudgetMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub h_bob: f64,
    pub h_eve_single: f64,
    pub h_eve_coherent_bound: f64,
    pub h_eve_coherent_mc: Estimate,
    pub beta2: f64,
    pub qer_secure: f64,
    pub qer_interception: f64,
    pub secure_mu2: SecureBudget,
    pub throughput_bits_per_s: f64,
}

pub fn security_report(params: &ReportParams) -> Result<SecurityReport> {
    let link = &params.link;
    link.validate()?;
    ensure(link.n_symbols >= 2, "n_symbols", "must be >= 2")?;
    let h_bob = bob_entropy(link.alpha2, link.n_modes, link.n_symbols)?;
    let (h_eve_single, bound, mc) = if link.mu2 > 0.0 {
        (
            SINGLE_PHOTON_EVE_BITS,
            coherent_eve_entropy_bound(link.mu2, link.n_symbols)?,
            coherent_eve_entropy_mc(link.mu2, link.n_symbols, params.mc_samples, params.seed)?,
        )
    } else {
        (0.0, 0.0, Estimate::new(0.0, 0.0))
    };
    let beta2 = eve_phase_fidelity(link.mu2, link.n_modes);
    Ok(SecurityReport {
        h_bob,
        h_eve_single,
        h_eve_coherent_bound: bound,
        h_eve_coherent_mc: mc,
        beta2,
        qer_secure: qer_secure(link)?,
        qer_interception: qer_interception(link, beta2)?,
        secure_mu2: secure_photon_budget(link.alpha2, link.n_modes, link.n_symbols, params.budget)?,
        throughput_bits_per_s: throughput_estimate(params.symbol_rate_hz, h_bob)?,
    })
}
