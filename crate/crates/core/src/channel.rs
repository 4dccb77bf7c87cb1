//! The multimode fiber as a random linear mode scrambler.
//!
//! A [`TransmissionMatrix`] maps input channels (segments of Alice's light
//! modulator) to output modes. Two ensembles are supported: iid circular
//! complex Gaussian entries with `E|t|^2 = 1/n_out`, and Haar-random unitary
//! matrices. Geometry helpers give the guided-mode count of a step-index fiber
//! and the coherence-limited fiber length.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Step-index multimode fiber parameters. Lengths are SI except the link
/// length, which is in kilometres like the attenuation coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberSpec {
    /// Core diameter in metres.
    pub core_diameter: f64,
    pub na: f64,
    pub n_core: f64,
    /// Vacuum wavelength in metres.
    pub wavelength: f64,
    /// Attenuation in dB/km.
    pub attenuation: f64,
    /// Link length in km.
    pub length: f64,
    /// Number of guided modes N.
    pub n_modes: usize,
}

impl FiberSpec {
    /// A fiber whose mode count is derived from its geometry.
    pub fn step_index(core_diameter: f64, na: f64, n_core: f64, wavelength: f64) -> Result<Self> {
        let count = mode_count(core_diameter, na, wavelength)?;
        let spec = FiberSpec {
            core_diameter,
            na,
            n_core,
            wavelength,
            attenuation: 0.2,
            length: 0.0,
            n_modes: count.n_modes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_modes(mut self, n_modes: usize) -> Self {
        self.n_modes = n_modes;
        self
    }

    pub fn with_link(mut self, attenuation_db_per_km: f64, length_km: f64) -> Self {
        self.attenuation = attenuation_db_per_km;
        self.length = length_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.core_diameter > 0.0, "core_diameter", "must be > 0")?;
        ensure(self.wavelength > 0.0, "wavelength", "must be > 0")?;
        ensure(
            self.na > 0.0 && self.na < self.n_core,
            "na",
            "must satisfy 0 < na < n_core",
        )?;
        ensure(self.attenuation >= 0.0, "attenuation", "must be >= 0")?;
        ensure(self.length >= 0.0, "length", "must be >= 0")?;
        ensure(self.n_modes >= 1, "n_modes", "must be >= 1")?;
        Ok(())
    }

    /// Normalized frequency V of the fiber.
    pub fn v_number(&self) -> f64 {
        std::f64::consts::PI * self.core_diameter * self.na / self.wavelength
    }

    pub fn transmittance(&self) -> f64 {
        // validated on construction; a bad spec falls back to a lossless link
        attenuation_factor(self.attenuation, self.length).unwrap_or(1.0)
    }
}

impl Default for FiberSpec {
    /// 50 µm core, NA 0.22 step-index fiber at 633 nm.
    fn default() -> Self {
        FiberSpec::step_index(50e-6, 0.22, 1.45, 633e-9).expect("default fiber is valid")
    }
}

/// Result of [`mode_count`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCount {
    pub v_number: f64,
    pub n_modes: usize,
    /// Set when `V^2/2` rounds to zero and the count was clamped to one.
    pub degenerate: bool,
}

/// Guided-mode count `round(V^2/2)` with `V = pi d NA / lambda`.
pub fn mode_count(core_diameter: f64, na: f64, wavelength: f64) -> Result<ModeCount> {
    ensure(core_diameter > 0.0, "core_diameter", "must be > 0")?;
    ensure(na > 0.0 && na < 1.0, "na", "must lie in (0, 1)")?;
    ensure(wavelength > 0.0, "wavelength", "must be > 0")?;
    let v = std::f64::consts::PI * core_diameter * na / wavelength;
    let raw = (v * v / 2.0).round();
    let degenerate = raw < 1.0;
    Ok(ModeCount {
        v_number: v,
        n_modes: if degenerate { 1 } else { raw as usize },
        degenerate,
    })
}

/// Power transmittance `10^(-a L / 10)` of a link.
pub fn attenuation_factor(attenuation_db_per_km: f64, length_km: f64) -> Result<f64> {
    ensure(attenuation_db_per_km >= 0.0, "attenuation", "must be >= 0")?;
    ensure(length_km >= 0.0, "length", "must be >= 0")?;
    Ok(10f64.powf(-attenuation_db_per_km * length_km / 10.0))
}

/// Longest fiber (km) for which modal dispersion stays within the coherence
/// time of a source of spectral width `bandwidth_hz`:
/// `L = c / (n_core * df * (1/cos(NA/n_core) - 1))`.
pub fn max_fiber_length(bandwidth_hz: f64, na: f64, n_core: f64) -> Result<f64> {
    ensure(bandwidth_hz > 0.0, "bandwidth", "must be > 0")?;
    ensure(na > 0.0, "na", "must be > 0")?;
    ensure(n_core > 0.0, "n_core", "must be > 0")?;
    ensure(na < n_core, "na", "must be smaller than n_core")?;
    let spread = 1.0 / (na / n_core).cos() - 1.0;
    Ok(SPEED_OF_LIGHT / (n_core * bandwidth_hz * spread) / 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    GaussianIid,
    HaarUnitary,
}

/// Complex field amplitudes over the modes (or segments) of a channel. The
/// squared norm is the mean photon number of the pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeField(pub Vec<Complex64>);

impl ModeField {
    pub fn zeros(n: usize) -> Self {
        ModeField(vec![Complex64::new(0.0, 0.0); n])
    }

    /// Unit vector on `index`, scaled to amplitude `mu`.
    pub fn one_hot(n: usize, index: usize, mu: f64) -> Self {
        let mut f = Self::zeros(n);
        f.0[index] = Complex64::new(mu, 0.0);
        f
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ModeField(self.0.iter().map(|z| z * factor).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMatrix {
    entries: DMatrix<Complex64>,
    model: ChannelModel,
}

impl TransmissionMatrix {
    pub fn from_entries(entries: DMatrix<Complex64>, model: ChannelModel) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Shape("transmission matrix must be non-empty".into()));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidChannel("non-finite entry".into()));
        }
        Ok(Self { entries, model })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            model: ChannelModel::HaarUnitary,
        }
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn n_out(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, out: usize, input: usize) -> Complex64 {
        self.entries[(out, input)]
    }

    /// Rescales every column to unit norm, so a unit input on any single
    /// channel is transmitted without loss.
    pub fn normalize_columns(&mut self) {
        for mut col in self.entries.column_iter_mut() {
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|z| *z /= norm);
            }
        }
    }

    /// Field at the listed output modes only, `sum_j t_bj x_j` for each `b`.
    pub fn propagate_rows(&self, rows: &[usize], field: &ModeField) -> Result<Vec<Complex64>> {
        self.check_input(field)?;
        rows.iter()
            .map(|&b| {
                if b >= self.n_out() {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_out(),
                        got: b,
                    });
                }
                Ok(self
                    .entries
                    .row(b)
                    .iter()
                    .zip(&field.0)
                    .map(|(t, x)| t * x)
                    .sum())
            })
            .collect()
    }

    fn check_input(&self, field: &ModeField) -> Result<()> {
        if field.len() != self.n_in() {
            return Err(Error::DimensionMismatch {
                expected: self.n_in(),
                got: field.len(),
            });
        }
        Ok(())
    }
}

/// Draws a random transmission matrix from the requested ensemble.
pub fn draw_transmission_matrix<R: Rng + ?Sized>(
    n_out: usize,
    n_in: usize,
    model: ChannelModel,
    rng: &mut R,
) -> Result<TransmissionMatrix> {
    ensure(n_out >= 1, "n_out", "must be >= 1")?;
    ensure(n_in >= 1, "n_in", "must be >= 1")?;
    match model {
        ChannelModel::GaussianIid => {
            let sigma = (0.5 / n_out as f64).sqrt();
            let entries = DMatrix::from_fn(n_out, n_in, |_, _| complex_gaussian(rng, sigma));
            Ok(TransmissionMatrix { entries, model })
        }
        ChannelModel::HaarUnitary => {
            if n_out != n_in {
                return Err(Error::Shape(format!(
                    "haar_unitary requires a square matrix, got {n_out}x{n_in}"
                )));
            }
            Ok(TransmissionMatrix {
                entries: haar_unitary(n_out, rng),
                model,
            })
        }
    }
}

/// QR of a Ginibre matrix with the phases of `diag(R)` moved into `Q`, which
/// makes `Q` Haar distributed.
fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<Complex64> {
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let z = DMatrix::from_fn(n, n, |_, _| complex_gaussian(rng, sigma));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        col.iter_mut().for_each(|x| *x *= phase);
    }
    q
}

/// Circular complex Gaussian sample with standard deviation `sigma` per
/// quadrature.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// Output field `T x`.
pub fn propagate(t: &TransmissionMatrix, field: &ModeField) -> Result<ModeField> {
    t.check_input(field)?;
    let x = DVector::from_column_slice(&field.0);
    let y = &t.entries * x;
    Ok(ModeField(y.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn paper_fiber_mode_count() {
        let m = mode_count(50e-6, 0.22, 633e-9).unwrap();
        assert!((m.v_number - 54.59).abs() < 0.01, "V = {}", m.v_number);
        assert_eq!(m.n_modes, 1490);
        assert!(!m.degenerate);
    }

    #[test]
    fn mode_count_scales_quadratically_with_core() {
        let small = mode_count(50e-6, 0.22, 633e-9).unwrap();
        let big = mode_count(100e-6, 0.22, 633e-9).unwrap();
        let v = std::f64::consts::PI * 100e-6 * 0.22 / 633e-9;
        assert_eq!(big.n_modes, (v * v / 2.0).round() as usize);
        assert!((big.n_modes as f64 - 4.0 * small.n_modes as f64).abs() <= 2.0);
    }

    #[test]
    fn vanishing_aperture_clamps_to_one_mode() {
        let m = mode_count(50e-6, 1e-9, 633e-9).unwrap();
        assert_eq!(m.n_modes, 1);
        assert!(m.degenerate);
    }

    #[test]
    fn mode_count_rejects_bad_arguments() {
        assert!(mode_count(0.0, 0.22, 633e-9).is_err());
        assert!(mode_count(50e-6, -0.1, 633e-9).is_err());
        assert!(mode_count(50e-6, 0.22, 0.0).is_err());
        assert!(mode_count(50e-6, 1.0, 633e-9).is_err());
    }

    #[test]
    fn attenuation_examples() {
        assert_eq!(attenuation_factor(0.2, 0.0).unwrap(), 1.0);
        assert!((attenuation_factor(0.2, 50.0).unwrap() - 0.1).abs() < 1e-15);
        let f = attenuation_factor(0.2, 220.0).unwrap();
        assert!((f - 3.981_071_705_534_97e-5).abs() < 1e-15);
        assert!(attenuation_factor(-0.1, 1.0).is_err());
        assert!(attenuation_factor(0.1, -1.0).is_err());
    }

    #[test]
    fn fiber_length_limit() {
        let l = max_fiber_length(97e3, 0.2, 1.45).unwrap();
        assert!((l - 222.29).abs() < 0.05, "L = {l}");
        let half = max_fiber_length(2.0 * 97e3, 0.2, 1.45).unwrap();
        assert!((half - l / 2.0).abs() < 1e-9 * l);
        let mhz = max_fiber_length(1e6, 0.2, 1.45).unwrap();
        assert!((mhz - 21.56).abs() < 0.01, "L = {mhz}");
        assert!(max_fiber_length(1e6, 1.5, 1.45).is_err());
    }

    #[test]
    fn one_by_one_haar_has_unit_modulus() {
        let t = draw_transmission_matrix(1, 1, ChannelModel::HaarUnitary, &mut seeded(3)).unwrap();
        assert!((t.get(0, 0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn haar_requires_square() {
        let err = draw_transmission_matrix(3, 2, ChannelModel::HaarUnitary, &mut seeded(0));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn haar_is_unitary() {
        let t =
            draw_transmission_matrix(64, 64, ChannelModel::HaarUnitary, &mut seeded(11)).unwrap();
        let g = t.entries().adjoint() * t.entries();
        let id = DMatrix::<Complex64>::identity(64, 64);
        let err = (g - id).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "max deviation {err}");
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let a = draw_transmission_matrix(5, 4, ChannelModel::GaussianIid, &mut seeded(9)).unwrap();
        let b = draw_transmission_matrix(5, 4, ChannelModel::GaussianIid, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_propagation() {
        let x = ModeField(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)]);
        let y = propagate(&TransmissionMatrix::identity(2), &x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn propagate_rejects_wrong_length() {
        let t = TransmissionMatrix::identity(3);
        assert!(matches!(
            propagate(&t, &ModeField::zeros(2)),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn propagate_rows_matches_full_product() {
        let mut rng = seeded(5);
        let t = draw_transmission_matrix(6, 4, ChannelModel::GaussianIid, &mut rng).unwrap();
        let x = ModeField((0..4).map(|_| complex_gaussian(&mut rng, 1.0)).collect());
        let full = propagate(&t, &x).unwrap();
        let part = t.propagate_rows(&[1, 4], &x).unwrap();
        assert!((part[0] - full.0[1]).norm() < 1e-14);
        assert!((part[1] - full.0[4]).norm() < 1e-14);
    }

    #[test]
    fn normalized_columns_have_unit_norm() {
        let mut t =
            draw_transmission_matrix(20, 5, ChannelModel::GaussianIid, &mut seeded(1)).unwrap();
        t.normalize_columns();
        for col in t.entries().column_iter() {
            let n: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
