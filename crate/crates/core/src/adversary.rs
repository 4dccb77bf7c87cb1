//! Eve's measurements and attacks.
//!
//! Two measurement models are supported. With single photons Eve records
//! which of her `N` pixels clicked, distributed as the output intensities of
//! her tap. With coherent pulses she can measure the field of every mode,
//! limited by one photon of shot noise per mode. Her best estimate of the
//! wavefront then has fidelity `beta^2 = mu^2 / (mu^2 + 2N)`, and anything she
//! resends toward Bob focuses with fidelity `alpha^2 beta^2`.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::calibration::{poisson_count, CalibrationConfig, CalibrationRecord, ProbeTriple};
use crate::channel::{complex_gaussian, propagate, ModeField, TransmissionMatrix};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptKind {
    IntensitySinglePhoton,
    HomodyneField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptModel {
    pub kind: InterceptKind,
    /// Fraction of the pulse Eve diverts, in (0, 1].
    #[serde(default = "full_tap")]
    pub tap_fraction: f64,
}

fn full_tap() -> f64 {
    1.0
}

impl InterceptModel {
    pub fn new(kind: InterceptKind, tap_fraction: f64) -> Result<Self> {
        let m = Self { kind, tap_fraction };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.tap_fraction > 0.0 && self.tap_fraction <= 1.0,
            "tap_fraction",
            "must lie in (0, 1]",
        )
    }

    /// Fidelity of the field Bob receives relative to an undisturbed pulse
    /// when Eve taps `tap_fraction` of a `mu2`-photon pulse and resends her
    /// estimate.
    pub fn delivered_fidelity_factor(&self, mu2: f64, n_modes: usize) -> f64 {
        let beta2 = eve_phase_fidelity(mu2 * self.tap_fraction, n_modes);
        (1.0 - self.tap_fraction) + self.tap_fraction * beta2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveObservation {
    Pixel(usize),
    Field(ModeField),
}

/// Best wavefront fidelity under shot-noise-limited field measurement,
/// `mu^2 / (mu^2 + 2N)`.
pub fn eve_phase_fidelity(mu2: f64, n_modes: usize) -> f64 {
    if mu2.is_nan() || mu2 <= 0.0 {
        return 0.0;
    }
    mu2 / (mu2 + 2.0 * n_modes.max(1) as f64)
}

/// Focusing fidelity at Bob after a full intercept-resend, `alpha^2 beta^2`.
pub fn intercept_resend_effect(alpha2: f64, mu2: f64, n_modes: usize) -> f64 {
    alpha2 * eve_phase_fidelity(mu2, n_modes)
}

/// Pixel on which Eve's single photon clicks, drawn from the output
/// intensities of her tap.
pub fn intercept_intensity<R: Rng + ?Sized>(
    t_ae: &TransmissionMatrix,
    symbol_field: &ModeField,
    rng: &mut R,
) -> Result<usize> {
    let out = propagate(t_ae, symbol_field)?;
    Ok(PixelSampler::new(&out)?.sample(rng))
}

/// Categorical sampler over output intensities, for repeated single-photon
/// detections of the same field.
#[derive(Debug, Clone)]
pub struct PixelSampler {
    index: WeightedIndex<f64>,
}

impl PixelSampler {
    pub fn new(field: &ModeField) -> Result<Self> {
        let weights = field.intensities();
        let index = WeightedIndex::new(&weights)
            .map_err(|_| Error::InvalidChannel("no output intensity to sample from".into()))?;
        Ok(Self { index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

/// Shot-noise-limited field measurement: adds circular complex Gaussian noise
/// of one photon per mode (variance 1/2 per quadrature).
pub fn intercept_homodyne<R: Rng + ?Sized>(field_at_eve: &ModeField, rng: &mut R) -> ModeField {
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    ModeField(
        field_at_eve
            .0
            .iter()
            .map(|z| z + complex_gaussian(rng, sigma))
            .collect(),
    )
}

/// Field Eve sends on after measuring: her estimate overlaps the true field
/// with weight `beta`, the rest is independent speckle carrying the same mean
/// power per mode. `true_field` is the undisturbed field at the listed output
/// modes and `power_per_mode` its mean intensity per output mode.
pub fn resend_field<R: Rng + ?Sized>(
    true_field: &[Complex64],
    beta2: f64,
    power_per_mode: f64,
    rng: &mut R,
) -> Vec<Complex64> {
    let beta = beta2.clamp(0.0, 1.0).sqrt();
    let rest = (1.0 - beta * beta).sqrt();
    let sigma = (power_per_mode / 2.0).sqrt();
    true_field
        .iter()
        .map(|z| z * beta + complex_gaussian(rng, sigma) * rest)
        .collect()
}

/// Bob's calibration reports when Eve intercepts every probe and resends an
/// arbitrary wavefront: each pulse reaches the detectors as fresh speckle with
/// the same mean intensity as the honest probe.
pub fn calibration_resend_record<R: Rng + ?Sized>(
    t: &TransmissionMatrix,
    config: &CalibrationConfig,
    schedule: &[ProbeTriple],
    rng: &mut R,
    photon_noise: bool,
) -> Result<CalibrationRecord> {
    config.validate()?;
    if t.n_in() != config.n_segments {
        return Err(Error::DimensionMismatch {
            expected: config.n_segments,
            got: t.n_in(),
        });
    }
    if t.n_out() < config.n_detectors {
        return Err(Error::Shape("fewer output modes than detectors".into()));
    }
    let a2 = config.segment_amplitude().powi(2);
    let mean_power: Vec<f64> = (0..config.n_detectors)
        .map(|b| a2 * t.entries().row(b).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .collect();
    let mut intensities = Vec::with_capacity(schedule.len() * config.n_detectors);
    for _ in schedule {
        for p in &mean_power {
            let i = complex_gaussian(rng, (p / 2.0).sqrt()).norm_sqr();
            intensities.push(if photon_noise {
                poisson_count(i, rng)
            } else {
                i
            });
        }
    }
    CalibrationRecord::new(
        schedule.to_vec(),
        config.n_detectors,
        intensities,
        photon_noise,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnsCheck {
    pub secure: bool,
    pub margin: f64,
}

/// Photon-number-splitting guard: the pulse must carry strictly fewer photons
/// than the secure budget.
pub fn pns_budget_check(mu2_sent: f64, secure_mu2: f64) -> Result<PnsCheck> {
    ensure(mu2_sent >= 0.0, "mu2_sent", "must be >= 0")?;
    ensure(secure_mu2 >= 0.0, "secure_mu2", "must be >= 0")?;
    Ok(PnsCheck {
        secure: mu2_sent < secure_mu2,
        margin: secure_mu2 - mu2_sent,
    })
}
