//! Randomized sequential phase-stepping calibration.
//!
//! Alice splits her modulator into `N_seg` segments. Each probe pulse is a
//! plane wave (all segments at amplitude `A = sqrt(n_c / N_seg)`) in which a
//! single segment is phase shifted by `theta_k = 2 pi k / K`. The unmodulated
//! segments act as the interference reference. Probes are sent in a uniformly
//! random order, Bob reports the counts at his `S` detectors, and Alice sums
//! the repetitions of every mask before retrieving the complex row of the
//! transmission matrix for each detector.
//!
//! Retrieval uses the K-point DFT `z = (1/K) sum_k I_k e^{-i theta_k}`, which
//! isolates `conj(P) u` where `u = A t_bs` is the probed segment and
//! `P = R - u` the reference made of the other segments. Because the
//! reference shifts with every probed segment, the DFT term alone is only
//! proportional to `t` up to a segment-dependent phase. The mean intensity
//! `m = |R|^2 - 2 Re z` pins `|R|`, after which `u` follows from a quadratic
//! in the gauge where `R` is real. The result is exact up to one global phase
//! per detector row, which no interferometric calibration can observe and
//! which does not affect focusing.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::{propagate, ModeField, TransmissionMatrix};
use crate::error::{ensure, Error, Result};

/// Default contrast below which summed calibration frames are declared
/// tampered with.
pub const DEFAULT_CONTRAST_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub n_segments: usize,
    pub phase_steps: usize,
    pub repetitions: usize,
    /// Mean photon number of one whole probe pulse.
    pub photons_per_pulse: f64,
    /// Number of Bob's detectors S. They sit on output modes `0..S`.
    pub n_detectors: usize,
    /// Poisson-sample Bob's counts instead of reporting mean intensities.
    pub photon_noise: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_segments: 34 * 34,
            phase_steps: 3,
            repetitions: 50,
            photons_per_pulse: 80.0,
            n_detectors: 36,
            photon_noise: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_segments >= 1, "n_segments", "must be >= 1")?;
        ensure(self.phase_steps >= 3, "phase_steps", "must be >= 3")?;
        ensure(self.repetitions >= 1, "repetitions", "must be >= 1")?;
        ensure(
            self.photons_per_pulse >= 0.0 && self.photons_per_pulse.is_finite(),
            "photons_per_pulse",
            "must be a finite value >= 0",
        )?;
        ensure(self.n_detectors >= 1, "n_detectors", "must be >= 1")?;
        Ok(())
    }

    pub fn step_angle(&self, step: usize) -> f64 {
        TAU * step as f64 / self.phase_steps as f64
    }

    /// Number of distinct phase masks, `N_seg * K`.
    pub fn n_masks(&self) -> usize {
        self.n_segments * self.phase_steps
    }

    pub fn n_probes(&self) -> usize {
        self.n_masks() * self.repetitions
    }

    pub fn mask_index(&self, segment: usize, step: usize) -> usize {
        segment * self.phase_steps + step
    }

    /// Field amplitude per segment of a probe pulse.
    pub fn segment_amplitude(&self) -> f64 {
        (self.photons_per_pulse / self.n_segments as f64).sqrt()
    }
}

/// Mean photon number carried by a single segment of a calibration probe.
pub fn calibration_photon_exposure(config: &CalibrationConfig) -> f64 {
    config.photons_per_pulse / config.n_segments as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeTriple {
    pub segment: usize,
    pub step: usize,
    pub repetition: usize,
}

/// Uniformly random order of every (segment, step, repetition) probe.
pub fn generate_schedule<R: Rng + ?Sized>(
    config: &CalibrationConfig,
    rng: &mut R,
) -> Result<Vec<ProbeTriple>> {
    config.validate()?;
    let mut schedule = Vec::with_capacity(config.n_probes());
    for segment in 0..config.n_segments {
        for step in 0..config.phase_steps {
            for repetition in 0..config.repetitions {
                schedule.push(ProbeTriple {
                    segment,
                    step,
                    repetition,
                });
            }
        }
    }
    schedule.shuffle(rng);
    Ok(schedule)
}

/// Bob's reports for every probe, in schedule order.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub schedule: Vec<ProbeTriple>,
    n_detectors: usize,
    intensities: Vec<f64>,
    /// Whether the intensities are Poisson photon counts.
    pub photon_counts: bool,
}

impl CalibrationRecord {
    pub fn new(
        schedule: Vec<ProbeTriple>,
        n_detectors: usize,
        intensities: Vec<f64>,
        photon_counts: bool,
    ) -> Result<Self> {
        if intensities.len() != schedule.len() * n_detectors {
            return Err(Error::DimensionMismatch {
                expected: schedule.len() * n_detectors,
                got: intensities.len(),
            });
        }
        if intensities.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Malformed(
                "intensities must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            schedule,
            n_detectors,
            intensities,
            photon_counts,
        })
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    /// Reported intensities of the `i`-th probe in schedule order.
    pub fn report(&self, i: usize) -> &[f64] {
        &self.intensities[i * self.n_detectors..(i + 1) * self.n_detectors]
    }

    /// Sums the repetitions of every mask. Fails unless each triple of the
    /// configured schedule appears exactly once.
    pub fn summed_frames(&self, config: &CalibrationConfig) -> Result<SummedFrames> {
        config.validate()?;
        if self.n_detectors != config.n_detectors {
            return Err(Error::DimensionMismatch {
                expected: config.n_detectors,
                got: self.n_detectors,
            });
        }
        let mut seen = vec![false; config.n_probes()];
        let mut data = vec![0.0; config.n_masks() * self.n_detectors];
        for (i, p) in self.schedule.iter().enumerate() {
            if p.segment >= config.n_segments
                || p.step >= config.phase_steps
                || p.repetition >= config.repetitions
            {
                return Err(Error::Malformed(format!(
                    "probe {p:?} outside configuration"
                )));
            }
            let mask = config.mask_index(p.segment, p.step);
            let slot = mask * config.repetitions + p.repetition;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::Malformed(format!("probe {p:?} reported twice")));
            }
            let row = &mut data[mask * self.n_detectors..(mask + 1) * self.n_detectors];
            for (acc, x) in row.iter_mut().zip(self.report(i)) {
                *acc += x;
            }
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            return Err(Error::MissingData(format!(
                "{missing} of {} probes absent from the record",
                config.n_probes()
            )));
        }
        Ok(SummedFrames {
            n_masks: config.n_masks(),
            n_detectors: self.n_detectors,
            data,
            photon_counts: self.photon_counts,
        })
    }

    /// Writes one row per probe: `segment,step,repetition,c0..c{S-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["segment".to_string(), "step".into(), "repetition".into()];
        header.extend((0..self.n_detectors).map(|b| format!("c{b}")));
        w.write_record(&header)?;
        for (i, p) in self.schedule.iter().enumerate() {
            let mut row = vec![
                p.segment.to_string(),
                p.step.to_string(),
                p.repetition.to_string(),
            ];
            row.extend(self.report(i).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let n_detectors = r
            .headers()?
            .len()
            .checked_sub(3)
            .ok_or_else(|| Error::Malformed("header needs segment,step,repetition".into()))?;
        let mut schedule = Vec::new();
        let mut intensities = Vec::new();
        let mut integral = true;
        for row in r.records() {
            let row = row?;
            let int = |i: usize| -> Result<usize> {
                row[i]
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad integer `{}`", &row[i])))
            };
            schedule.push(ProbeTriple {
                segment: int(0)?,
                step: int(1)?,
                repetition: int(2)?,
            });
            for cell in row.iter().skip(3) {
                let x: f64 = cell
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad intensity `{cell}`")))?;
                integral &= x.fract() == 0.0;
                intensities.push(x);
            }
        }
        Self::new(schedule, n_detectors, intensities, integral)
    }
}

/// Per-mask intensity images summed over repetitions; row `mask` holds the
/// `S` detector values of mask `segment * K + step`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummedFrames {
    pub n_masks: usize,
    pub n_detectors: usize,
    pub data: Vec<f64>,
    pub photon_counts: bool,
}

impl SummedFrames {
    pub fn frame(&self, mask: usize) -> &[f64] {
        &self.data[mask * self.n_detectors..(mask + 1) * self.n_detectors]
    }
}

/// Simulates Bob's reports for an honest calibration through `t`.
pub fn probe_intensities<R: Rng + ?Sized>(
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
        return Err(Error::Shape(format!(
            "{} detectors requested but the channel has {} output modes",
            config.n_detectors,
            t.n_out()
        )));
    }
    let s = config.n_detectors;
    let amp = config.segment_amplitude();
    // plane-wave field at each detector
    let plane: Vec<Complex64> = (0..s)
        .map(|b| t.entries().row(b).iter().sum::<Complex64>() * amp)
        .collect();
    let phasors: Vec<Complex64> = (0..config.phase_steps)
        .map(|k| Complex64::from_polar(1.0, config.step_angle(k)))
        .collect();
    let mut intensities = Vec::with_capacity(schedule.len() * s);
    for p in schedule {
        if p.segment >= config.n_segments || p.step >= config.phase_steps {
            return Err(Error::Malformed(format!(
                "probe {p:?} outside configuration"
            )));
        }
        for (b, reference) in plane.iter().enumerate() {
            let u = t.get(b, p.segment) * amp;
            let field = reference - u + u * phasors[p.step];
            let mean = field.norm_sqr();
            intensities.push(if photon_noise {
                poisson_count(mean, rng)
            } else {
                mean
            });
        }
    }
    CalibrationRecord::new(schedule.to_vec(), s, intensities, photon_noise)
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Estimated rows `t_hat` (S x N_seg), one per detector.
    pub estimated_rows: DMatrix<Complex64>,
    /// Measured focusing fidelity per symbol; empty until measured.
    pub fidelity_per_symbol: Vec<f64>,
    /// Set when the record carried no usable interference signal.
    pub degenerate: bool,
}

impl CalibrationResult {
    pub fn n_symbols(&self) -> usize {
        self.estimated_rows.nrows()
    }

    pub fn n_segments(&self) -> usize {
        self.estimated_rows.ncols()
    }

    /// Fills `fidelity_per_symbol` by focusing through the true channel.
    pub fn measure_fidelity(&mut self, t: &TransmissionMatrix, mode: FocusMode) -> Result<()> {
        self.fidelity_per_symbol = (0..self.n_symbols())
            .map(|b| {
                let mask = synthesize_focus_mask(self, b, mode)?;
                match shaping_fidelity(t, &mask, b) {
                    Err(Error::UndefinedFidelity) => Ok(0.0),
                    other => other,
                }
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn mean_fidelity(&self) -> Option<f64> {
        if self.fidelity_per_symbol.is_empty() {
            None
        } else {
            Some(
                self.fidelity_per_symbol.iter().sum::<f64>()
                    / self.fidelity_per_symbol.len() as f64,
            )
        }
    }
}

/// Retrieves the transmission rows of Bob's detectors from a complete record.
pub fn reconstruct_rows(
    record: &CalibrationRecord,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let frames = record.summed_frames(config)?;
    let n_seg = config.n_segments;
    let s = config.n_detectors;
    let k_steps = config.phase_steps;
    let demod: Vec<Complex64> = (0..k_steps)
        .map(|k| Complex64::from_polar(1.0 / k_steps as f64, -config.step_angle(k)))
        .collect();
    // field scale of the summed frames: sqrt(reps) * A
    let scale = (config.repetitions as f64).sqrt() * config.segment_amplitude();

    let mut rows = DMatrix::<Complex64>::zeros(s, n_seg);
    let mut degenerate = scale == 0.0;
    let mut z = vec![Complex64::new(0.0, 0.0); n_seg];
    let mut m = vec![0.0; n_seg];
    for b in 0..s {
        for seg in 0..n_seg {
            let (mut zs, mut ms) = (Complex64::new(0.0, 0.0), 0.0);
            for (k, d) in demod.iter().enumerate() {
                let i = frames.frame(config.mask_index(seg, k))[b];
                zs += d * i;
                ms += i / k_steps as f64;
            }
            z[seg] = zs;
            m[seg] = ms;
        }
        let r2 = z
            .iter()
            .zip(&m)
            .map(|(zs, ms)| ms + 2.0 * zs.re)
            .sum::<f64>()
            / n_seg as f64;
        if r2.is_nan() || r2 <= 0.0 || scale == 0.0 {
            degenerate = true;
            continue;
        }
        let u = solve_segment_fields(&z, r2.sqrt());
        for (seg, us) in u.into_iter().enumerate() {
            rows[(b, seg)] = us / scale;
        }
    }
    Ok(CalibrationResult {
        estimated_rows: rows,
        fidelity_per_symbol: Vec::new(),
        degenerate,
    })
}

/// Solves `r u = z + |u|^2` for every segment, with the plane-wave field `r`
/// real and positive. Each equation has two roots, mirror images about
/// `r / 2`, and the intensities cannot tell them apart. The small root is
/// the probed segment unless its real part exceeds `r / 2`, which happens
/// only for rows with a weak reference. The constraint `sum u = r` cannot
/// single out which segments to switch in general, so only the clear case is
/// handled: one dominant segment whose switch closes the constraint.
/// Relative residual below which a single root switch is accepted.
const SINGLE_FLIP_TOLERANCE: f64 = 0.1;

fn solve_segment_fields(z: &[Complex64], r: f64) -> Vec<Complex64> {
    if z.len() == 1 {
        return vec![Complex64::new(r, 0.0)];
    }
    let roots: Vec<(Complex64, Complex64)> = z
        .iter()
        .map(|zs| {
            let y = zs.im / r;
            let disc = (r * r - 4.0 * (zs.re + y * y)).max(0.0).sqrt();
            (
                Complex64::new((r - disc) / 2.0, y),
                Complex64::new((r + disc) / 2.0, y),
            )
        })
        .collect();
    let mut u: Vec<Complex64> = roots.iter().map(|r| r.0).collect();
    // switching segment i to its large root raises sum(Re u) by the root gap
    let residual = r - u.iter().map(|x| x.re).sum::<f64>();
    let best = roots
        .iter()
        .enumerate()
        .map(|(i, (small, large))| (i, (residual - (large.re - small.re)).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, left)) = best {
        if left < SINGLE_FLIP_TOLERANCE * residual.abs() {
            u[i] = roots[i].1;
        }
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMode {
    PhaseOnly,
    FullField,
}

/// Per-segment modulator settings. Amplitudes are normalized to unit total
/// energy, so `field(mu)` carries `mu^2` photons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMask {
    pub phases: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl PhaseMask {
    pub fn new(phases: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if phases.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: phases.len(),
                got: amplitudes.len(),
            });
        }
        if phases.iter().chain(&amplitudes).any(|x| !x.is_finite())
            || amplitudes.iter().any(|&a| a < 0.0)
        {
            return Err(Error::invalid(
                "mask",
                "phases and amplitudes must be finite, amplitudes >= 0",
            ));
        }
        let energy: f64 = amplitudes.iter().map(|a| a * a).sum();
        let norm = if energy > 0.0 { energy.sqrt() } else { 1.0 };
        Ok(Self {
            phases: phases.into_iter().map(wrap_phase).collect(),
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Uniform-amplitude mask with random phases.
    pub fn random<R: Rng + ?Sized>(n_segments: usize, rng: &mut R) -> Self {
        let phases = (0..n_segments)
            .map(|_| rng.random_range(0.0..TAU))
            .collect();
        Self::new(phases, vec![1.0; n_segments]).expect("random mask is valid")
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn field(&self, mu: f64) -> ModeField {
        ModeField(
            self.phases
                .iter()
                .zip(&self.amplitudes)
                .map(|(&p, &a)| Complex64::from_polar(mu * a, p))
                .collect(),
        )
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Mask focusing on detector `target`: conjugate phases of the estimated row,
/// and for `FullField` amplitudes proportional to `|t_hat|`.
pub fn synthesize_focus_mask(
    result: &CalibrationResult,
    target: usize,
    mode: FocusMode,
) -> Result<PhaseMask> {
    if target >= result.n_symbols() {
        return Err(Error::UnknownSymbol {
            index: target,
            size: result.n_symbols(),
        });
    }
    let row = result.estimated_rows.row(target);
    let phases = row.iter().map(|t| -t.arg()).collect();
    let amplitudes: Vec<f64> = match mode {
        FocusMode::PhaseOnly => vec![1.0; row.len()],
        FocusMode::FullField => {
            let a: Vec<f64> = row.iter().map(|t| t.norm()).collect();
            if a.iter().all(|&x| x == 0.0) {
                vec![1.0; row.len()]
            } else {
                a
            }
        }
    };
    PhaseMask::new(phases, amplitudes)
}

/// Fraction of output power that lands on output mode `target`.
pub fn shaping_fidelity(t: &TransmissionMatrix, mask: &PhaseMask, target: usize) -> Result<f64> {
    if target >= t.n_out() {
        return Err(Error::UnknownSymbol {
            index: target,
            size: t.n_out(),
        });
    }
    let out = propagate(t, &mask.field(1.0))?;
    let total = out.norm_sqr();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::UndefinedFidelity);
    }
    Ok((out.0[target].norm_sqr() / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Honest,
    Attacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TamperCheck {
    pub contrast: f64,
    pub verdict: Verdict,
}

/// Speckle-contrast test on the summed calibration frames.
///
/// For every mask the contrast `std/mean` is taken across detectors. Photon
/// count frames have their Poisson variance (equal to the mean) removed first,
/// so the statistic measures the speckle of the underlying intensity: about 1
/// when every repetition of a mask saw the same speckle, about `1/sqrt(reps)`
/// when the repetitions were independent resends. Squared contrasts are
/// averaged over masks before the square root.
pub fn detect_calibration_eavesdropper(
    frames: &SummedFrames,
    threshold: f64,
) -> Result<TamperCheck> {
    if frames.n_detectors < 2 {
        return Err(Error::InsufficientSignal(
            "contrast needs at least two detectors".into(),
        ));
    }
    let n = frames.n_detectors as f64;
    let mut acc = 0.0;
    let mut used = 0usize;
    for mask in 0..frames.n_masks {
        let f = frames.frame(mask);
        let mean = f.iter().sum::<f64>() / n;
        if mean.is_nan() || mean <= 0.0 {
            continue;
        }
        let mut var = f.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        if frames.photon_counts {
            var -= mean;
        }
        acc += var / (mean * mean);
        used += 1;
    }
    if used == 0 {
        return Err(Error::InsufficientSignal(
            "all calibration frames are empty".into(),
        ));
    }
    let contrast = (acc / used as f64).max(0.0).sqrt();
    Ok(TamperCheck {
        contrast,
        verdict: if contrast < threshold {
            Verdict::Attacked
        } else {
            Verdict::Honest
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_transmission_matrix, ChannelModel};
    use crate::rng::{seeded, substream};
    use std::f64::consts::PI;

    fn small_config(
        n_segments: usize,
        repetitions: usize,
        n_detectors: usize,
    ) -> CalibrationConfig {
        CalibrationConfig {
            n_segments,
            repetitions,
            n_detectors,
            photon_noise: false,
            ..CalibrationConfig::default()
        }
    }

    #[test]
    fn paper_schedule_size() {
        let cfg = CalibrationConfig::default();
        let sched = generate_schedule(&cfg, &mut seeded(1)).unwrap();
        assert_eq!(sched.len(), 173_400);
        let masks: std::collections::HashSet<_> =
            sched.iter().map(|p| (p.segment, p.step)).collect();
        assert_eq!(masks.len(), 3468);
    }

    #[test]
    fn tiny_schedule_is_a_permutation() {
        let cfg = small_config(1, 1, 1);
        let mut sched = generate_schedule(&cfg, &mut seeded(4)).unwrap();
        sched.sort_by_key(|p| p.step);
        let steps: Vec<_> = sched.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 1, 2]);
    }

    #[test]
    fn schedule_is_deterministic_per_seed() {
        let cfg = small_config(10, 4, 1);
        assert_eq!(
            generate_schedule(&cfg, &mut seeded(8)).unwrap(),
            generate_schedule(&cfg, &mut seeded(8)).unwrap()
        );
    }

    #[test]
    fn paper_exposure() {
        let cfg = CalibrationConfig::default();
        assert!((calibration_photon_exposure(&cfg) - 80.0 / 1156.0).abs() < 1e-15);
        assert!((calibration_photon_exposure(&cfg) - 0.0692).abs() < 1e-4);
        let zero = CalibrationConfig {
            photons_per_pulse: 0.0,
            ..cfg.clone()
        };
        assert_eq!(calibration_photon_exposure(&zero), 0.0);
        let one = CalibrationConfig {
            photons_per_pulse: 1156.0,
            ..cfg
        };
        assert_eq!(calibration_photon_exposure(&one), 1.0);
    }

    #[test]
    fn noiseless_probe_matches_explicit_interference() {
        let cfg = small_config(4, 1, 3);
        let mut rng = seeded(21);
        let t = draw_transmission_matrix(5, 4, ChannelModel::GaussianIid, &mut rng).unwrap();
        let sched = generate_schedule(&cfg, &mut rng).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut rng, false).unwrap();
        let a = cfg.segment_amplitude();
        for (i, p) in sched.iter().enumerate() {
            // build the whole input wavefront and propagate it directly
            let mut input = ModeField(vec![Complex64::new(a, 0.0); 4]);
            input.0[p.segment] = Complex64::from_polar(a, 2.0 * PI * p.step as f64 / 3.0);
            let out = propagate(&t, &input).unwrap();
            for b in 0..3 {
                assert!((rec.report(i)[b] - out.0[b].norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dark_segment_gives_flat_steps() {
        let cfg = small_config(3, 1, 2);
        let mut rng = seeded(2);
        let mut entries = draw_transmission_matrix(2, 3, ChannelModel::GaussianIid, &mut rng)
            .unwrap()
            .entries()
            .clone();
        entries.column_mut(1).fill(Complex64::new(0.0, 0.0));
        let t = TransmissionMatrix::from_entries(entries, ChannelModel::GaussianIid).unwrap();
        let sched = generate_schedule(&cfg, &mut rng).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut rng, false).unwrap();
        let frames = rec.summed_frames(&cfg).unwrap();
        for b in 0..2 {
            let i0 = frames.frame(cfg.mask_index(1, 0))[b];
            for k in 1..3 {
                assert!((frames.frame(cfg.mask_index(1, k))[b] - i0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probe_rejects_wrong_shape() {
        let cfg = small_config(4, 1, 2);
        let t = TransmissionMatrix::identity(3);
        let sched = generate_schedule(&cfg, &mut seeded(0)).unwrap();
        assert!(probe_intensities(&t, &cfg, &sched, &mut seeded(0), false).is_err());
    }

    /// Phase of `t_hat` relative to `t` after removing the best global row
    /// phase, and the amplitude ratio spread.
    fn row_errors(est: &CalibrationResult, t: &TransmissionMatrix, b: usize) -> (f64, f64) {
        let n = est.n_segments();
        let overlap: Complex64 = (0..n)
            .map(|s| est.estimated_rows[(b, s)] * t.get(b, s).conj())
            .sum();
        let g = Complex64::from_polar(1.0, -overlap.arg());
        let mut max_phase: f64 = 0.0;
        let mut ratios = Vec::new();
        for s in 0..n {
            let e = est.estimated_rows[(b, s)] * g;
            let d = (e * t.get(b, s).conj()).arg().abs();
            max_phase = max_phase.max(d);
            ratios.push(e.norm() / t.get(b, s).norm());
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        (max_phase, hi - lo)
    }

    #[test]
    fn noiseless_reconstruction_recovers_rows() {
        let cfg = small_config(64, 2, 4);
        let mut rng = seeded(33);
        let t = draw_transmission_matrix(32, 64, ChannelModel::GaussianIid, &mut rng).unwrap();
        let sched = generate_schedule(&cfg, &mut rng).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut rng, false).unwrap();
        let est = reconstruct_rows(&rec, &cfg).unwrap();
        assert!(!est.degenerate);
        for b in 0..4 {
            let (phase, spread) = row_errors(&est, &t, b);
            assert!(phase < 1e-6, "row {b}: phase error {phase}");
            assert!(spread < 1e-6, "row {b}: amplitude ratio spread {spread}");
        }
    }

    #[test]
    fn dominant_segment_is_resolved() {
        // segment 0 carries most of the field at the detector
        let cfg = small_config(3, 1, 1);
        let entries = DMatrix::from_row_slice(
            1,
            3,
            &[
                Complex64::new(2.0, 0.5),
                Complex64::new(0.1, -0.2),
                Complex64::new(-0.15, 0.05),
            ],
        );
        let t = TransmissionMatrix::from_entries(entries, ChannelModel::GaussianIid).unwrap();
        let sched = generate_schedule(&cfg, &mut seeded(1)).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut seeded(1), false).unwrap();
        let est = reconstruct_rows(&rec, &cfg).unwrap();
        let (phase, spread) = row_errors(&est, &t, 0);
        assert!(
            phase < 1e-9 && spread < 1e-9,
            "phase {phase} spread {spread}"
        );
    }

    #[test]
    fn single_segment_mask_conjugates_phase() {
        let cfg = small_config(1, 1, 1);
        let t = TransmissionMatrix::from_entries(
            DMatrix::from_element(1, 1, Complex64::from_polar(0.8, 1.1)),
            ChannelModel::GaussianIid,
        )
        .unwrap();
        let sched = generate_schedule(&cfg, &mut seeded(0)).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut seeded(0), false).unwrap();
        let est = reconstruct_rows(&rec, &cfg).unwrap();
        assert!((est.estimated_rows[(0, 0)].norm() - 0.8).abs() < 1e-12);
        // one segment: the only phase reference is the segment itself
        let mask = synthesize_focus_mask(&est, 0, FocusMode::PhaseOnly).unwrap();
        let result = CalibrationResult {
            estimated_rows: t.entries().clone(),
            fidelity_per_symbol: vec![],
            degenerate: false,
        };
        let exact = synthesize_focus_mask(&result, 0, FocusMode::PhaseOnly).unwrap();
        assert!((exact.phases[0] - (TAU - 1.1)).abs() < 1e-12);
        assert_eq!(mask.len(), 1);
        assert!((shaping_fidelity(&t, &mask, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_record_is_degenerate() {
        let cfg = small_config(4, 2, 2);
        let sched = generate_schedule(&cfg, &mut seeded(0)).unwrap();
        let rec =
            CalibrationRecord::new(sched.clone(), 2, vec![0.0; sched.len() * 2], true).unwrap();
        let est = reconstruct_rows(&rec, &cfg).unwrap();
        assert!(est.degenerate);
        assert!(est.estimated_rows.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn incomplete_record_is_rejected() {
        let cfg = small_config(4, 2, 2);
        let mut sched = generate_schedule(&cfg, &mut seeded(0)).unwrap();
        sched.pop();
        let rec =
            CalibrationRecord::new(sched.clone(), 2, vec![1.0; sched.len() * 2], true).unwrap();
        assert!(matches!(
            reconstruct_rows(&rec, &cfg),
            Err(Error::MissingData(_))
        ));
    }

    #[test]
    fn full_field_on_exact_unitary_rows_is_perfect() {
        let n = 48;
        let cfg = small_config(n, 1, 12);
        let mut rng = seeded(14);
        let t = draw_transmission_matrix(n, n, ChannelModel::HaarUnitary, &mut rng).unwrap();
        let sched = generate_schedule(&cfg, &mut rng).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut rng, false).unwrap();
        let mut est = reconstruct_rows(&rec, &cfg).unwrap();
        est.measure_fidelity(&t, FocusMode::FullField).unwrap();
        let mut checked = 0;
        for (b, a) in est.fidelity_per_symbol.iter().enumerate() {
            let row = t.entries().row(b);
            let r = row.iter().sum::<Complex64>().norm();
            let largest = row.iter().map(|z| z.norm()).fold(0.0, f64::max);
            // every segment below half the reference: small roots are exact
            if r > 2.0 * largest {
                checked += 1;
                assert!(*a >= 0.999, "fidelity {a} on row {b}");
            }
        }
        assert!(checked >= 6, "{checked}");
    }

    #[test]
    fn swapped_segment_and_reference_give_same_probes() {
        // with R real, u' = conj(R - u) probes exactly like u
        let r = 1.1;
        let u = Complex64::new(0.9, 0.4);
        let swapped = (Complex64::new(r, 0.0) - u).conj();
        for k in 0..3 {
            let ph = Complex64::from_polar(1.0, TAU * k as f64 / 3.0);
            let a = (r - u + u * ph).norm_sqr();
            let b = (r - swapped + swapped * ph).norm_sqr();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_mask_fidelity_is_one_over_n_out() {
        let (n_out, n_seg) = (64, 256);
        let mut acc = 0.0;
        let trials = 400;
        for i in 0..trials {
            let mut rng = substream(99, i);
            let t = draw_transmission_matrix(n_out, n_seg, ChannelModel::GaussianIid, &mut rng)
                .unwrap();
            let mask = PhaseMask::random(n_seg, &mut rng);
            acc += shaping_fidelity(&t, &mask, 0).unwrap();
        }
        let mean = acc / trials as f64;
        // exponential speckle: std of a single fidelity ~ 1/n_out
        let tol = 4.0 / n_out as f64 / (trials as f64).sqrt();
        assert!((mean - 1.0 / n_out as f64).abs() < tol, "mean {mean}");
    }

    #[test]
    fn shaping_fidelity_errors() {
        let t = TransmissionMatrix::identity(3);
        let mask = PhaseMask::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        // all-zero amplitude normalizes to zero field
        assert!(matches!(
            shaping_fidelity(&t, &mask, 0),
            Err(Error::UndefinedFidelity)
        ));
        let ok = PhaseMask::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(
            shaping_fidelity(&t, &ok, 3),
            Err(Error::UnknownSymbol { .. })
        ));
    }

    #[test]
    fn unknown_focus_target() {
        let est = CalibrationResult {
            estimated_rows: DMatrix::zeros(2, 3),
            fidelity_per_symbol: vec![],
            degenerate: true,
        };
        assert!(matches!(
            synthesize_focus_mask(&est, 2, FocusMode::PhaseOnly),
            Err(Error::UnknownSymbol { index: 2, size: 2 })
        ));
    }

    #[test]
    fn mask_phases_are_wrapped() {
        let m = PhaseMask::new(vec![-0.5, 7.0, TAU], vec![1.0, 1.0, 1.0]).unwrap();
        for p in &m.phases {
            assert!((0.0..TAU).contains(p));
        }
        assert!((m.field(2.0).norm_sqr() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_zero_contrast() {
        let frames = SummedFrames {
            n_masks: 3,
            n_detectors: 4,
            data: vec![5.0; 12],
            photon_counts: false,
        };
        let check = detect_calibration_eavesdropper(&frames, DEFAULT_CONTRAST_THRESHOLD).unwrap();
        assert_eq!(check.contrast, 0.0);
        assert_eq!(check.verdict, Verdict::Attacked);
    }

    #[test]
    fn empty_frames_are_insufficient() {
        let frames = SummedFrames {
            n_masks: 2,
            n_detectors: 4,
            data: vec![0.0; 8],
            photon_counts: true,
        };
        assert!(matches!(
            detect_calibration_eavesdropper(&frames, 0.5),
            Err(Error::InsufficientSignal(_))
        ));
    }

    #[test]
    fn record_csv_round_trip() {
        let cfg = CalibrationConfig {
            photon_noise: true,
            ..small_config(5, 3, 4)
        };
        let mut rng = seeded(6);
        let t = draw_transmission_matrix(6, 5, ChannelModel::GaussianIid, &mut rng).unwrap();
        let sched = generate_schedule(&cfg, &mut rng).unwrap();
        let rec = probe_intensities(&t, &cfg, &sched, &mut rng, true).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("segment,step,repetition,c0,c1,c2,c3\n"));
        let back = CalibrationRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
    }
}
