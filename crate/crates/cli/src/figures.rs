//! Data tables for the detection and security figures.

use mmfkey::adversary::eve_phase_fidelity;
use mmfkey::detection::{
    analytic_success_probability, expected_rates, simulated_success_probability,
    threshold_statistics, DecodeStrategy,
};
use mmfkey::rng::substream;
use mmfkey::security::{
    bob_entropy, coherent_eve_entropy_bound, coherent_eve_entropy_mc, qer_interception, qer_secure,
    secure_photon_budget, LinkParams, SINGLE_PHOTON_EVE_BITS,
};

use crate::config::ExperimentConfig;
use crate::table::Table;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    #[value(name = "2c")]
    SuccessProbability,
    #[value(name = "2d")]
    Rejection,
    #[value(name = "3a")]
    EveFidelity,
    #[value(name = "3b")]
    EveEntropy,
    #[value(name = "3c")]
    SecureBudget,
    #[value(name = "3d")]
    ErrorRates,
}

const THRESHOLDS: [u32; 2] = [2, 3];
const FIDELITY_MODES: [usize; 4] = [500, 1500, 5000, 15_000];
const BUDGET_MODES: [usize; 2] = [1500, 5000];
const LINK_PHOTONS: [f64; 3] = [0.1, 1.0, 10.0];

impl Figure {
    /// Configuration field on the figure's x axis, which a sweep may replace.
    pub fn axis(self) -> &'static str {
        match self {
            Figure::SecureBudget => "protocol.alpha2",
            Figure::ErrorRates => "fiber.length",
            _ => "protocol.mu2",
        }
    }

    fn default_axis(self) -> Vec<f64> {
        match self {
            Figure::SuccessProbability | Figure::Rejection => {
                (1..=30).map(|k| 2.0 * k as f64).collect()
            }
            Figure::EveFidelity | Figure::EveEntropy => log_grid(0.01, 1000.0, 4),
            Figure::SecureBudget => (1..=10).map(|k| k as f64 / 10.0).collect(),
            Figure::ErrorRates => (0..=25).map(|k| 10.0 * k as f64).collect(),
        }
    }
}

/// Points spaced evenly in log10 from `lo` to `hi`, `per_decade` per decade,
/// rounded to four significant digits.
fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((hi / lo).log10() * per_decade as f64).round() as usize;
    (0..=steps)
        .map(|i| {
            let v = lo * 10f64.powf(i as f64 / per_decade as f64);
            let digits = 3 - v.log10().floor() as i32;
            let scale = 10f64.powi(digits);
            (v * scale).round() / scale
        })
        .collect()
}

pub fn run_figure(figure: Figure, config: &ExperimentConfig) -> Result<Table, CliError> {
    let axis = match &config.sweep {
        Some(s) if s.parameter == figure.axis() => s.values.clone(),
        Some(s) => {
            return Err(CliError::Config(format!(
                "this figure sweeps `{}`, not `{}`",
                figure.axis(),
                s.parameter
            )))
        }
        None => figure.default_axis(),
    };
    let trials = config.protocol.mc_samples as u64;
    match figure {
        Figure::SuccessProbability => success_probability(config, &axis, trials),
        Figure::Rejection => rejection(config, &axis, trials),
        Figure::EveFidelity => Ok(eve_fidelity(&axis)),
        Figure::EveEntropy => eve_entropy(config, &axis),
        Figure::SecureBudget => secure_budget(config, &axis),
        Figure::ErrorRates => error_rates(config, &axis),
    }
}

fn success_probability(
    config: &ExperimentConfig,
    axis: &[f64],
    trials: u64,
) -> Result<Table, CliError> {
    let s = config.detector.n_symbols;
    let mut t = Table::new(&["mu2", "lambda1", "lambda2", "p_analytic", "p_mc", "p_mc_stderr"])
        .note(format!(
            "probability of decoding the sent symbol by strict argmax; alpha2 = {}, S = {s}, {trials} frames per point",
            config.protocol.alpha2
        ))
        .note("p_analytic = exp(-l1) sum_k F(k-1)^(S-1) l1^k / k!, F the Poisson CDF of l2");
    for (i, &mu2) in axis.iter().enumerate() {
        let r = expected_rates(config.protocol.alpha2, mu2, &config.fiber, &config.detector)?;
        let (l1, l2) = (r.lambda_correct, r.lambda_wrong);
        let mc = simulated_success_probability(
            l1,
            l2,
            s,
            DecodeStrategy::Argmax,
            &mut substream(config.seed, i as u64),
            trials,
        )?;
        t.push(vec![
            mu2.into(),
            l1.into(),
            l2.into(),
            analytic_success_probability(l1, l2, s).into(),
            mc.value.into(),
            mc.stderr.into(),
        ]);
    }
    Ok(t)
}

fn rejection(config: &ExperimentConfig, axis: &[f64], trials: u64) -> Result<Table, CliError> {
    let s = config.detector.n_symbols;
    let mut t = Table::new(&[
        "mu2",
        "threshold",
        "accept_rate",
        "accept_stderr",
        "rejection_rate",
        "success_given_accept",
        "success_stderr",
    ])
    .note(format!(
        "threshold decoding: accept when exactly one detector reaches the threshold; alpha2 = {}, S = {s}, {trials} frames per point",
        config.protocol.alpha2
    ));
    let mut cell = 0u64;
    for &mu2 in axis {
        let r = expected_rates(config.protocol.alpha2, mu2, &config.fiber, &config.detector)?;
        for threshold in THRESHOLDS {
            let st = threshold_statistics(
                r.lambda_correct,
                r.lambda_wrong,
                s,
                threshold,
                &mut substream(config.seed, cell),
                trials,
            )?;
            cell += 1;
            t.push(vec![
                mu2.into(),
                threshold.into(),
                st.accept_rate.value.into(),
                st.accept_rate.stderr.into(),
                (1.0 - st.accept_rate.value).into(),
                st.success_given_accept.value.into(),
                st.success_given_accept.stderr.into(),
            ]);
        }
    }
    Ok(t)
}

fn eve_fidelity(axis: &[f64]) -> Table {
    let mut t = Table::new(&["mu2", "n_modes", "beta2"]).note("beta2 = mu2 / (mu2 + 2 N)");
    for &mu2 in axis {
        for n in FIDELITY_MODES {
            t.push(vec![
                mu2.into(),
                n.into(),
                eve_phase_fidelity(mu2, n).into(),
            ]);
        }
    }
    t
}

fn eve_entropy(config: &ExperimentConfig, axis: &[f64]) -> Result<Table, CliError> {
    let s = config.detector.n_symbols;
    let n = config.fiber.n_modes;
    let h_bob = bob_entropy(config.protocol.alpha2, n, s)?;
    let mut t = Table::new(&["mu2", "h_eve_mc", "h_eve_mc_stderr", "h_eve_bound", "h_eve_single_photon", "h_bob"])
        .note(format!(
            "Eve's information per symbol in bits; S = {s}, N = {n}, alpha2 = {}, {} samples per point",
            config.protocol.alpha2, config.protocol.mc_samples
        ))
        .note("h_eve_bound = min(log2 S, (S/2) log2(1 + 2 mu2 (S - 1) / S^2)), the Gaussian maximum-entropy bound");
    for (i, &mu2) in axis.iter().enumerate() {
        let mc = coherent_eve_entropy_mc(
            mu2,
            s,
            config.protocol.mc_samples,
            mmfkey::rng::derive_seed(config.seed, i as u64),
        )?;
        t.push(vec![
            mu2.into(),
            mc.value.into(),
            mc.stderr.into(),
            coherent_eve_entropy_bound(mu2, s)?.into(),
            SINGLE_PHOTON_EVE_BITS.into(),
            h_bob.into(),
        ]);
    }
    Ok(t)
}

fn secure_budget(config: &ExperimentConfig, axis: &[f64]) -> Result<Table, CliError> {
    let s = config.detector.n_symbols;
    let method = config.budget_method();
    let mut t = Table::new(&["alpha2", "n_modes", "h_bob", "secure_mu2", "saturated", "ci_low", "ci_high"]).note(
        format!("largest photon number per pulse at which Eve's information stays below Bob's; S = {s}, {method:?}"),
    );
    for &alpha2 in axis {
        for n in BUDGET_MODES {
            let b = secure_photon_budget(alpha2, n, s, method)?;
            let [lo, hi] = b.interval.unwrap_or([f64::NAN, f64::NAN]);
            t.push(vec![
                alpha2.into(),
                n.into(),
                bob_entropy(alpha2, n, s)?.into(),
                b.mu2.into(),
                b.saturated.into(),
                lo.into(),
                hi.into(),
            ]);
        }
    }
    Ok(t)
}

fn error_rates(config: &ExperimentConfig, axis: &[f64]) -> Result<Table, CliError> {
    let base = config.link_params();
    let mut t = Table::new(&["length_km", "mu2", "beta2", "qer_secure", "qer_interception"])
        .note(format!(
            "qudit error rates with and without intercept-resend; alpha2 = {}, N = {}, S = {}, d = {}, p_dark = {}, a = {} dB/km",
            base.alpha2, base.n_modes, base.n_symbols, base.efficiency, base.p_dark, base.attenuation
        ))
        .note("qer = 1 - (f mu2 d T + p_dark) / (f mu2 d T + (1 - f)(S - 1)/(N - 1) mu2 d T + S p_dark), f = alpha2 or alpha2 beta2");
    for &length in axis {
        for mu2 in LINK_PHOTONS {
            let p = LinkParams {
                mu2,
                length,
                ..base
            };
            let beta2 = eve_phase_fidelity(mu2, p.n_modes);
            t.push(vec![
                length.into(),
                mu2.into(),
                beta2.into(),
                qer_secure(&p)?.into(),
                qer_interception(&p, beta2)?.into(),
            ]);
        }
    }
    Ok(t)
}
