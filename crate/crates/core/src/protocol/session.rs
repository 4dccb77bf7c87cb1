use std::collections::HashMap;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::message::{ProbeId, ProtocolMessage};
use super::transcript::{KeyStatus, SessionOutcome, SessionTranscript};
use crate::adversary::{
    calibration_resend_record, eve_phase_fidelity, resend_field, InterceptKind, InterceptModel,
    PixelSampler,
};
use crate::calibration::{
    detect_calibration_eavesdropper, generate_schedule, probe_intensities, reconstruct_rows,
    synthesize_focus_mask, CalibrationConfig, CalibrationResult, FocusMode, TamperCheck, Verdict,
    DEFAULT_CONTRAST_THRESHOLD,
};
use crate::channel::{
    draw_transmission_matrix, propagate, ChannelModel, FiberSpec, TransmissionMatrix,
};
use crate::detection::{expected_rates, sample_counts, DecodeStrategy, DetectorArray, PhotonFrame};
use crate::error::{ensure, Error, Result};
use crate::rng::{chunked, derive_seed, seeded, substream, SimRng};
use crate::security::{qer_secure, LinkParams};

const STREAM_CHANNEL: u64 = 1;
const STREAM_EVE_CHANNEL: u64 = 2;
const STREAM_CALIBRATION: u64 = 3;
const STREAM_COMMUNICATION: u64 = 4;
const STREAM_SAMPLING: u64 = 5;

const SYMBOL_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Weak coherent pulses with `mu2` photons on average.
    Coherent,
    /// Exactly one photon per symbol.
    SinglePhoton,
}

/// How Bob's detector signal is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalModel {
    /// Field-level simulation: a random channel is calibrated and every
    /// symbol is propagated through it.
    Simulated {
        channel: ChannelModel,
        focus: FocusMode,
        /// Build masks from the true channel rows instead of the calibration.
        #[serde(default)]
        exact_masks: bool,
    },
    /// Detector rates from a given shaping fidelity; no calibration is run.
    Analytic { alpha2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    Communication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveConfig {
    pub model: InterceptModel,
    pub active_in: Vec<Phase>,
}

impl EveConfig {
    pub fn is_active(&self, phase: Phase) -> bool {
        self.active_in.contains(&phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub fiber: FiberSpec,
    pub calibration: CalibrationConfig,
    pub detector: DetectorArray,
    pub signal: SignalModel,
    pub source: Source,
    /// Mean photons per symbol pulse; ignored for single photons.
    pub mu2: f64,
    pub n_symbols_to_send: usize,
    pub eve: Option<EveConfig>,
    pub decode: DecodeStrategy,
    pub sample_fraction: f64,
    /// Allowed excess of the measured error rate over the prediction.
    pub qer_slack: f64,
    pub contrast_threshold: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            fiber: FiberSpec::default(),
            calibration: CalibrationConfig::default(),
            detector: DetectorArray::default(),
            signal: SignalModel::Simulated {
                channel: ChannelModel::GaussianIid,
                focus: FocusMode::PhaseOnly,
                exact_masks: false,
            },
            source: Source::Coherent,
            mu2: 1.0,
            n_symbols_to_send: 10_000,
            eve: None,
            decode: DecodeStrategy::Argmax,
            sample_fraction: 0.1,
            qer_slack: 0.05,
            contrast_threshold: DEFAULT_CONTRAST_THRESHOLD,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        self.detector.validate()?;
        ensure(self.fiber.n_modes >= 2, "n_modes", "must be >= 2")?;
        ensure(
            self.detector.n_symbols <= self.fiber.n_modes,
            "n_symbols",
            "must not exceed the number of fiber modes",
        )?;
        ensure(
            self.mu2 >= 0.0 && self.mu2.is_finite(),
            "mu2",
            "must be finite and >= 0",
        )?;
        ensure(
            self.n_symbols_to_send >= 1,
            "n_symbols_to_send",
            "must be >= 1",
        )?;
        ensure(
            self.sample_fraction > 0.0 && self.sample_fraction <= 0.5,
            "sample_fraction",
            "must lie in (0, 0.5]",
        )?;
        ensure(self.qer_slack >= 0.0, "qer_slack", "must be >= 0")?;
        ensure(
            self.contrast_threshold > 0.0,
            "contrast_threshold",
            "must be > 0",
        )?;
        if let DecodeStrategy::Threshold(n) = self.decode {
            ensure(n >= 1, "threshold", "must be >= 1")?;
        }
        if let Some(eve) = &self.eve {
            eve.model.validate()?;
        }
        match self.signal {
            SignalModel::Simulated { channel, .. } => {
                self.calibration.validate()?;
                ensure(
                    self.calibration.n_detectors == self.detector.n_symbols,
                    "n_detectors",
                    "calibration detectors must match the symbol count",
                )?;
                if channel == ChannelModel::HaarUnitary {
                    ensure(
                        self.calibration.n_segments == self.fiber.n_modes,
                        "n_segments",
                        "a unitary channel needs as many segments as fiber modes",
                    )?;
                }
            }
            SignalModel::Analytic { alpha2 } => {
                ensure(
                    (0.0..=1.0).contains(&alpha2),
                    "alpha2",
                    "must lie in [0, 1]",
                )?;
                ensure(
                    !self.eve_active(Phase::Calibration),
                    "eve.active_in",
                    "calibration attacks need the simulated signal model",
                )?;
            }
        }
        Ok(())
    }

    fn eve_active(&self, phase: Phase) -> bool {
        self.eve.as_ref().is_some_and(|e| e.is_active(phase))
    }

    /// Photons per symbol pulse.
    pub fn pulse_photons(&self) -> f64 {
        match self.source {
            Source::Coherent => self.mu2,
            Source::SinglePhoton => 1.0,
        }
    }

    /// Link parameters for the error-rate prediction at fidelity `alpha2`.
    pub fn link_params(&self, alpha2: f64) -> LinkParams {
        LinkParams {
            alpha2,
            mu2: self.pulse_photons(),
            n_modes: self.fiber.n_modes,
            n_symbols: self.detector.n_symbols,
            efficiency: self.detector.efficiency,
            p_dark: self.detector.dark_prob,
            attenuation: self.fiber.attenuation,
            length: self.fiber.length,
        }
    }
}

/// The Alice-to-Bob channel and, if present, Eve's tap.
#[derive(Debug, Clone)]
pub struct SessionChannels {
    pub bob: TransmissionMatrix,
    pub eve: Option<TransmissionMatrix>,
}

impl SessionChannels {
    /// Draws the channels of a simulated session from its seed; `None` for
    /// the analytic signal model.
    pub fn draw(config: &SessionConfig) -> Result<Option<Self>> {
        let SignalModel::Simulated { channel, .. } = config.signal else {
            return Ok(None);
        };
        let (n_out, n_in) = (config.fiber.n_modes, config.calibration.n_segments);
        let bob = draw_transmission_matrix(
            n_out,
            n_in,
            channel,
            &mut substream(config.seed, STREAM_CHANNEL),
        )?;
        let eve = match &config.eve {
            Some(_) => Some(draw_transmission_matrix(
                n_out,
                n_in,
                ChannelModel::GaussianIid,
                &mut substream(config.seed, STREAM_EVE_CHANNEL),
            )?),
            None => None,
        };
        Ok(Some(Self { bob, eve }))
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationPhase {
    pub result: CalibrationResult,
    pub tamper: TamperCheck,
    pub eve_detected: bool,
    pub messages: Vec<ProtocolMessage>,
}

/// Runs the randomized calibration through `channels.bob`. If Eve is active
/// she intercepts every probe and Bob's reports are her resent speckle. On
/// detection the fragment ends with an abort and no masks are usable.
pub fn run_calibration_phase<R: Rng + ?Sized>(
    config: &SessionConfig,
    channels: &SessionChannels,
    rng: &mut R,
) -> Result<CalibrationPhase> {
    let SignalModel::Simulated {
        focus, exact_masks, ..
    } = config.signal
    else {
        return Err(Error::invalid(
            "signal",
            "calibration needs the simulated signal model",
        ));
    };
    let cal = &config.calibration;
    let schedule = generate_schedule(cal, rng)?;
    let record = if config.eve_active(Phase::Calibration) {
        calibration_resend_record(&channels.bob, cal, &schedule, rng, cal.photon_noise)?
    } else {
        probe_intensities(&channels.bob, cal, &schedule, rng, cal.photon_noise)?
    };
    let mut ids = seeded(rng.random());
    let mut messages: Vec<ProtocolMessage> = (0..record.len())
        .map(|i| ProtocolMessage::CalibIntensityReport {
            probe_id: ProbeId::random(&mut ids),
            counts: record.report(i).to_vec(),
        })
        .collect();
    let tamper =
        detect_calibration_eavesdropper(&record.summed_frames(cal)?, config.contrast_threshold)?;
    let eve_detected = tamper.verdict == Verdict::Attacked;
    let mut result = reconstruct_rows(&record, cal)?;
    if eve_detected {
        messages.push(ProtocolMessage::Abort {
            reason: format!(
                "calibration speckle contrast {:.3} below threshold",
                tamper.contrast
            ),
        });
    } else {
        if exact_masks {
            result.estimated_rows = channels.bob.entries().rows(0, cal.n_detectors).into_owned();
            result.degenerate = false;
        }
        result.measure_fidelity(&channels.bob, focus)?;
        messages.push(ProtocolMessage::CalibComplete);
    }
    Ok(CalibrationPhase {
        result,
        tamper,
        eve_detected,
        messages,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunicationPhase {
    pub alice_key: Vec<usize>,
    pub bob_key: Vec<Option<usize>>,
    /// Eve's pixel click per symbol for single-photon intensity interception.
    pub eve_clicks: Vec<Option<usize>>,
    pub eve_observations: usize,
    pub messages: Vec<ProtocolMessage>,
}

/// Per-symbol optics, precomputed once per session.
enum Emitter {
    Simulated {
        /// Field at Bob's detectors for a unit-energy pulse, per symbol.
        detector_fields: Vec<Vec<Complex64>>,
        /// Total output power for a unit-energy pulse, per symbol.
        output_power: Vec<f64>,
        eve_pixels: Option<Vec<PixelSampler>>,
        n_out: usize,
    },
    Analytic {
        lambda_correct: f64,
        lambda_wrong: f64,
    },
}

impl Emitter {
    fn new(
        config: &SessionConfig,
        channels: Option<&SessionChannels>,
        calibration: Option<&CalibrationResult>,
    ) -> Result<Self> {
        let s = config.detector.n_symbols;
        match config.signal {
            SignalModel::Simulated { focus, .. } => {
                let channels = channels.ok_or(Error::MissingData(
                    "simulated session without channels".into(),
                ))?;
                let cal = calibration.ok_or(Error::MissingData(
                    "simulated session without calibration".into(),
                ))?;
                let rows: Vec<usize> = (0..s).collect();
                let want_pixels = config.eve.as_ref().is_some_and(|e| {
                    e.is_active(Phase::Communication)
                        && e.model.kind == InterceptKind::IntensitySinglePhoton
                });
                let mut detector_fields = Vec::with_capacity(s);
                let mut output_power = Vec::with_capacity(s);
                let mut eve_pixels = want_pixels.then(Vec::new);
                for target in 0..s {
                    let field = synthesize_focus_mask(cal, target, focus)?.field(1.0);
                    detector_fields.push(channels.bob.propagate_rows(&rows, &field)?);
                    output_power.push(propagate(&channels.bob, &field)?.norm_sqr());
                    if let (Some(px), Some(eve)) = (eve_pixels.as_mut(), channels.eve.as_ref()) {
                        px.push(PixelSampler::new(&propagate(eve, &field)?)?);
                    }
                }
                Ok(Emitter::Simulated {
                    detector_fields,
                    output_power,
                    eve_pixels,
                    n_out: channels.bob.n_out(),
                })
            }
            SignalModel::Analytic { alpha2 } => {
                let photons = config.pulse_photons();
                let factor = match &config.eve {
                    Some(e) if e.is_active(Phase::Communication) => e
                        .model
                        .delivered_fidelity_factor(photons, config.fiber.n_modes),
                    _ => 1.0,
                };
                let r = expected_rates(alpha2 * factor, photons, &config.fiber, &config.detector)?;
                Ok(Emitter::Analytic {
                    lambda_correct: r.lambda_correct,
                    lambda_wrong: r.lambda_wrong,
                })
            }
        }
    }

    /// Mean detected photons at each of Bob's detectors (before dark
    /// counts) and Eve's click, for one pulse of `symbol`.
    fn emit<R: Rng + ?Sized>(
        &self,
        config: &SessionConfig,
        symbol: usize,
        rng: &mut R,
    ) -> (Vec<f64>, Option<usize>) {
        let gain = config.detector.efficiency * config.fiber.transmittance();
        let photons = config.pulse_photons();
        match self {
            Emitter::Simulated {
                detector_fields,
                output_power,
                eve_pixels,
                n_out,
            } => {
                let amp = photons.sqrt();
                let field: Vec<Complex64> =
                    detector_fields[symbol].iter().map(|z| z * amp).collect();
                let eve = config
                    .eve
                    .as_ref()
                    .filter(|e| e.is_active(Phase::Communication));
                let (bob_field, click) = match eve {
                    None => (field, None),
                    Some(e) => {
                        let tap = e.model.tap_fraction;
                        let click = eve_pixels.as_ref().map(|px| px[symbol].sample(rng));
                        let beta2 = eve_phase_fidelity(tap * photons, config.fiber.n_modes);
                        let per_mode = photons * output_power[symbol] / *n_out as f64;
                        let resent = resend_field(&field, beta2, per_mode, rng);
                        let mixed = field
                            .iter()
                            .zip(&resent)
                            .map(|(f, r)| f * (1.0 - tap).sqrt() + r * tap.sqrt())
                            .collect();
                        (mixed, click)
                    }
                };
                (
                    bob_field.iter().map(|z| gain * z.norm_sqr()).collect(),
                    click,
                )
            }
            Emitter::Analytic {
                lambda_correct,
                lambda_wrong,
            } => {
                let means = (0..config.detector.n_symbols)
                    .map(|b| {
                        if b == symbol {
                            *lambda_correct
                        } else {
                            *lambda_wrong
                        }
                    })
                    .collect();
                (means, None)
            }
        }
    }
}

/// A single photon lands on detector `b` with probability `means[b]`, or on
/// none; dark clicks are added independently.
fn single_photon_frame<R: Rng + ?Sized>(
    means: &[f64],
    detector: &DetectorArray,
    rng: &mut R,
) -> PhotonFrame {
    let total: f64 = means.iter().sum();
    let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
    let mut u: f64 = rng.random();
    let mut counts = vec![0u32; means.len()];
    for (c, m) in counts.iter_mut().zip(means) {
        let p = m * scale;
        if u < p {
            *c = 1;
            break;
        }
        u -= p;
    }
    if detector.dark_prob > 0.0 {
        for c in counts.iter_mut() {
            if rng.random::<f64>() < detector.dark_prob {
                *c += 1;
            }
        }
    }
    PhotonFrame { counts }
}

/// Sends `n_symbols_to_send` uniformly random symbols. Undecodable positions
/// are announced in a discard list.
pub fn run_communication_phase(
    config: &SessionConfig,
    channels: Option<&SessionChannels>,
    calibration: Option<&CalibrationResult>,
    seed: u64,
) -> Result<CommunicationPhase> {
    let emitter = Emitter::new(config, channels, calibration)?;
    let s = config.detector.n_symbols;
    let parts = chunked(
        seed,
        config.n_symbols_to_send,
        SYMBOL_CHUNK,
        |rng: &mut SimRng, n| {
            (0..n)
                .map(|_| {
                    let symbol = rng.random_range(0..s);
                    let (means, click) = emitter.emit(config, symbol, rng);
                    let frame = match config.source {
                        Source::Coherent => sample_counts(&means, &config.detector, rng),
                        Source::SinglePhoton => single_photon_frame(&means, &config.detector, rng),
                    };
                    (symbol, config.decode.decode(&frame), click)
                })
                .collect::<Vec<_>>()
        },
    );
    let n = config.n_symbols_to_send;
    let mut out = CommunicationPhase {
        alice_key: Vec::with_capacity(n),
        bob_key: Vec::with_capacity(n),
        eve_clicks: Vec::with_capacity(n),
        eve_observations: if config.eve_active(Phase::Communication) {
            n
        } else {
            0
        },
        messages: Vec::new(),
    };
    for (a, b, e) in parts.into_iter().flatten() {
        out.alice_key.push(a);
        out.bob_key.push(b);
        out.eve_clicks.push(e);
    }
    let discarded = (0..n).filter(|&i| out.bob_key[i].is_none()).collect();
    out.messages
        .push(ProtocolMessage::DiscardList { indices: discarded });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub qer: f64,
    /// Sampled positions within the kept keys, increasing.
    pub sampled: Vec<usize>,
}

/// Compares a uniform random sample (without replacement) of the aligned kept
/// keys. The sample holds `ceil(fraction * len)` positions.
pub fn estimate_error_rate<R: Rng + ?Sized>(
    alice_key: &[usize],
    bob_key: &[usize],
    sample_fraction: f64,
    rng: &mut R,
) -> Result<ErrorEstimate> {
    if alice_key.len() != bob_key.len() {
        return Err(Error::DimensionMismatch {
            expected: alice_key.len(),
            got: bob_key.len(),
        });
    }
    ensure(
        sample_fraction > 0.0 && sample_fraction <= 0.5,
        "sample_fraction",
        "must lie in (0, 0.5]",
    )?;
    let n = alice_key.len();
    if n == 0 {
        return Err(Error::InsufficientKey("no kept positions to sample".into()));
    }
    let k = ((sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sampled = sample_indices(rng, n, k).into_vec();
    sampled.sort_unstable();
    let errors = sampled
        .iter()
        .filter(|&&i| alice_key[i] != bob_key[i])
        .count();
    Ok(ErrorEstimate {
        qer: errors as f64 / k as f64,
        sampled,
    })
}

/// Boundary for error correction and privacy amplification.
pub trait Postprocessor {
    fn process(&self, alice: Vec<usize>, bob: Vec<usize>, qer: f64) -> (Vec<usize>, Vec<usize>);
}

/// Leaves the key material untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl Postprocessor for PassThrough {
    fn process(&self, alice: Vec<usize>, bob: Vec<usize>, _qer: f64) -> (Vec<usize>, Vec<usize>) {
        (alice, bob)
    }
}

/// Final keys of a released session after postprocessing.
pub fn release_keys(
    t: &SessionTranscript,
    post: &dyn Postprocessor,
) -> Option<(Vec<usize>, Vec<usize>)> {
    match t.outcome {
        Some(SessionOutcome::Released { .. }) => {
            let (a, b) = t.final_keys();
            Some(post.process(a, b, t.estimated_qer.unwrap_or(0.0)))
        }
        _ => None,
    }
}

/// Runs calibration, communication and error estimation; releases the key
/// when the measured error rate is within `qer_slack` of the prediction.
pub fn run_session(config: &SessionConfig) -> Result<SessionTranscript> {
    config.validate()?;
    let channels = SessionChannels::draw(config)?;
    let mut t = SessionTranscript::default();

    let (alpha2, calibration) = match (config.signal, channels.as_ref()) {
        (SignalModel::Simulated { .. }, Some(ch)) => {
            let mut rng = substream(config.seed, STREAM_CALIBRATION);
            let phase = run_calibration_phase(config, ch, &mut rng)?;
            t.messages.extend(phase.messages);
            t.eve_detected_in_calibration = phase.eve_detected;
            if phase.eve_detected {
                t.outcome = Some(SessionOutcome::Aborted {
                    reason: "eavesdropper detected during calibration".into(),
                });
                return Ok(t);
            }
            (
                phase.result.mean_fidelity().unwrap_or(0.0),
                Some(phase.result),
            )
        }
        (SignalModel::Analytic { alpha2 }, _) => {
            t.messages.push(ProtocolMessage::CalibComplete);
            (alpha2, None)
        }
        (SignalModel::Simulated { .. }, None) => {
            unreachable!("simulated sessions always draw channels")
        }
    };

    let comm = run_communication_phase(
        config,
        channels.as_ref(),
        calibration.as_ref(),
        derive_seed(config.seed, STREAM_COMMUNICATION),
    )?;
    t.messages.extend(comm.messages);
    t.shaping_fidelity = Some(alpha2);
    t.eve_observations = comm.eve_observations;
    t.status = comm
        .bob_key
        .iter()
        .map(|b| {
            if b.is_some() {
                KeyStatus::Kept
            } else {
                KeyStatus::Discarded
            }
        })
        .collect();
    t.alice_key = comm.alice_key;
    t.bob_key = comm.bob_key;

    let kept: Vec<usize> = (0..t.status.len())
        .filter(|&i| t.status[i] == KeyStatus::Kept)
        .collect();
    if kept.is_empty() {
        let reason = "no symbol was decoded".to_string();
        t.messages.push(ProtocolMessage::Abort {
            reason: reason.clone(),
        });
        t.outcome = Some(SessionOutcome::Aborted { reason });
        return Ok(t);
    }
    let a: Vec<usize> = kept.iter().map(|&i| t.alice_key[i]).collect();
    let b: Vec<usize> = kept.iter().map(|&i| t.bob_key[i].expect("kept")).collect();
    let est = estimate_error_rate(
        &a,
        &b,
        config.sample_fraction,
        &mut substream(config.seed, STREAM_SAMPLING),
    )?;
    let positions: Vec<usize> = est.sampled.iter().map(|&j| kept[j]).collect();
    t.messages.push(ProtocolMessage::SampleRequest {
        indices: positions.clone(),
    });
    t.messages.push(ProtocolMessage::SampleReveal {
        symbols: est.sampled.iter().map(|&j| b[j]).collect(),
    });
    t.messages
        .push(ProtocolMessage::ErrorEstimate { qer: est.qer });
    for &p in &positions {
        t.status[p] = KeyStatus::Sampled;
    }
    t.estimated_qer = Some(est.qer);
    let predicted = qer_secure(&config.link_params(alpha2))?;
    t.predicted_qer = Some(predicted);

    if est.qer <= predicted + config.qer_slack {
        t.outcome = Some(SessionOutcome::Released {
            key_length: t.count(KeyStatus::Kept),
        });
    } else {
        let reason = format!(
            "error rate {:.4} exceeds the expected {:.4} by more than {}",
            est.qer, predicted, config.qer_slack
        );
        t.messages.push(ProtocolMessage::Abort {
            reason: reason.clone(),
        });
        t.outcome = Some(SessionOutcome::Aborted { reason });
    }
    Ok(t)
}

/// Mutual information in bits between sent symbols and Eve's pixel clicks,
/// from the joint histogram with the Miller-Madow bias correction.
pub fn empirical_eve_information(symbols: &[usize], clicks: &[usize]) -> Result<f64> {
    if symbols.len() != clicks.len() {
        return Err(Error::DimensionMismatch {
            expected: symbols.len(),
            got: clicks.len(),
        });
    }
    if symbols.is_empty() {
        return Err(Error::InsufficientKey("no observations".into()));
    }
    let n = symbols.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ps: HashMap<usize, f64> = HashMap::new();
    let mut pe: HashMap<usize, f64> = HashMap::new();
    for (&s, &e) in symbols.iter().zip(clicks) {
        *joint.entry((s, e)).or_default() += 1.0;
        *ps.entry(s).or_default() += 1.0;
        *pe.entry(e).or_default() += 1.0;
    }
    let entropy = |counts: &mut dyn Iterator<Item = f64>| -> f64 {
        counts.map(|c| -(c / n) * (c / n).log2()).sum()
    };
    let h_joint = entropy(&mut joint.values().copied());
    let h_s = entropy(&mut ps.values().copied());
    let h_e = entropy(&mut pe.values().copied());
    let plugin = h_s + h_e - h_joint;
    // each plug-in entropy is biased low by (K - 1) / (2 n ln 2)
    let bias = ((ps.len() as f64 - 1.0) + (pe.len() as f64 - 1.0) - (joint.len() as f64 - 1.0))
        / (2.0 * n * std::f64::consts::LN_2);
    Ok(plugin - bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic_config() -> SessionConfig {
        SessionConfig {
            fiber: FiberSpec::default().with_modes(1500).with_link(0.2, 0.0),
            signal: SignalModel::Analytic { alpha2: 0.7 },
            n_symbols_to_send: 20_000,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn identical_keys_have_no_errors() {
        let k: Vec<usize> = (0..100).map(|i| i % 36).collect();
        let e = estimate_error_rate(&k, &k, 0.2, &mut seeded(1)).unwrap();
        assert_eq!(e.qer, 0.0);
        assert_eq!(e.sampled.len(), 20);
        assert!(e.sampled.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn half_wrong_keys_estimate_one_half() {
        let a: Vec<usize> = vec![0; 1000];
        let b: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let e = estimate_error_rate(&a, &b, 0.5, &mut seeded(2)).unwrap();
        assert_eq!(e.sampled.len(), 500);
        assert!((e.qer - 0.5).abs() < 3.0 * (0.25f64 / 500.0).sqrt());
    }

    #[test]
    fn empty_keys_are_insufficient() {
        assert!(matches!(
            estimate_error_rate(&[], &[], 0.1, &mut seeded(0)),
            Err(Error::InsufficientKey(_))
        ));
        assert!(estimate_error_rate(&[1], &[1], 0.6, &mut seeded(0)).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = analytic_config();
        c.sample_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = analytic_config();
        c.eve = Some(EveConfig {
            model: InterceptModel::new(InterceptKind::HomodyneField, 1.0).unwrap(),
            active_in: vec![Phase::Calibration],
        });
        assert!(c.validate().is_err());
        let c = SessionConfig {
            signal: SignalModel::Simulated {
                channel: ChannelModel::HaarUnitary,
                focus: FocusMode::FullField,
                exact_masks: true,
            },
            ..SessionConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn honest_analytic_session_releases_key() {
        let t = run_session(&analytic_config()).unwrap();
        assert!(
            matches!(t.outcome, Some(SessionOutcome::Released { key_length }) if key_length > 0)
        );
        let predicted = t.predicted_qer.unwrap();
        assert!(t.estimated_qer.unwrap() <= predicted + 0.05);
        let (a, b) = t.final_keys();
        assert_eq!(a.len(), b.len());
        assert_eq!(t.count(KeyStatus::Kept), a.len());
    }

    #[test]
    fn intercept_resend_aborts() {
        let mut c = analytic_config();
        c.eve = Some(EveConfig {
            model: InterceptModel::new(InterceptKind::HomodyneField, 1.0).unwrap(),
            active_in: vec![Phase::Communication],
        });
        let t = run_session(&c).unwrap();
        assert!(t.is_aborted());
        assert!(t.estimated_qer.unwrap() > 0.9, "{:?}", t.estimated_qer);
        assert_eq!(t.eve_observations, c.n_symbols_to_send);
        assert!(release_keys(&t, &PassThrough).is_none());
    }

    #[test]
    fn threshold_decoding_matches_its_oracle() {
        // l1 = 0.1 mu^2, l2 = 0.005 mu^2 at mu^2 = 30, threshold 3
        let g = 0.005 * 1499.0 / 0.9;
        let c = SessionConfig {
            detector: DetectorArray {
                background_modes: g,
                ..DetectorArray::default()
            },
            signal: SignalModel::Analytic { alpha2: 0.1 },
            mu2: 30.0,
            decode: DecodeStrategy::Threshold(3),
            n_symbols_to_send: 10_000,
            ..analytic_config()
        };
        let comm = run_communication_phase(&c, None, None, 17).unwrap();
        let (mut kept, mut wrong) = (0.0, 0.0);
        for (a, b) in comm.alice_key.iter().zip(&comm.bob_key) {
            if let Some(b) = b {
                kept += 1.0;
                wrong += (a != b) as u8 as f64;
            }
        }
        let tail = |l: f64| 1.0 - (-l).exp() * (1.0 + l + l * l / 2.0);
        let (q1, q2) = (tail(3.0), tail(0.15));
        let right = q1 * (1.0 - q2).powi(35);
        let bad = (1.0 - q1) * 35.0 * q2 * (1.0 - q2).powi(34);
        let oracle = bad / (right + bad);
        let rate = wrong / kept;
        assert!(
            (rate - oracle).abs() < 3.0 * (oracle * (1.0 - oracle) / kept).sqrt() + 1e-9,
            "{rate} vs {oracle}"
        );
        assert!((kept / 10_000.0 - (right + bad)).abs() < 0.02);
    }

    #[test]
    fn single_photon_frames_have_at_most_one_signal_click() {
        let det = DetectorArray::default();
        let mut rng = seeded(3);
        let mut hits = 0;
        for _ in 0..10_000 {
            let f = single_photon_frame(&[0.5, 0.25, 0.0], &det, &mut rng);
            assert!(f.total() <= 1);
            hits += f.total();
        }
        assert!((hits as f64 / 1e4 - 0.75).abs() < 0.02);
    }

    #[test]
    fn information_of_independent_clicks_is_zero() {
        let mut rng = seeded(4);
        let s: Vec<usize> = (0..50_000).map(|_| rng.random_range(0..8)).collect();
        let e: Vec<usize> = (0..50_000).map(|_| rng.random_range(0..16)).collect();
        assert!(empirical_eve_information(&s, &e).unwrap().abs() < 0.01);
        let same = empirical_eve_information(&s, &s).unwrap();
        assert!((same - 3.0).abs() < 0.01);
    }
}
