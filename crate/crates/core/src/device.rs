//! Two-transmon device description: the fixed-frequency transmon, the
//! asymmetric-SQUID tunable band, the static coupling, and the
//! modulation-averaged frequency of the tunable qubit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::units::{angular_to_mhz, mhz_to_angular, to_us, us};
use crate::{Error, Result};

/// Number of quadrature points per flux period used for the modulation
/// average. The integrand is smooth and periodic, so the trapezoidal rule
/// converges geometrically.
const QUADRATURE_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedTransmon {
    pub omega: f64,
    /// Anharmonicity, positive.
    pub eta: f64,
    pub t1: f64,
    pub t2_star: f64,
}

impl FixedTransmon {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.eta > 0.0) {
            return Err(Error::InvalidParameter("fixed transmon frequency and anharmonicity must be positive".into()));
        }
        check_coherence(self.t1, self.t2_star, "fixed transmon")
    }
}

/// How the tunable transmon's anharmonicity is treated along the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnharmonicityMode {
    /// The value at the sweet spot nearest the parking flux, held fixed.
    #[default]
    Constant,
    /// Linear in frequency between `eta_max` (at `omega_max`) and `eta_min`
    /// (at `omega_min`).
    Interpolated,
}

/// Flux-tunable transmon band
/// `omega(phi) = (omega_max + eta) [d^2 + (1 - d^2) cos^2(pi phi)]^(1/4) - eta`
/// with `phi` in units of the flux quantum and `eta = eta_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunableBand {
    pub omega_max: f64,
    pub omega_min: f64,
    pub eta_max: f64,
    pub eta_min: f64,
    pub asymmetry_d: f64,
    pub t1: f64,
    pub t2_star_parked: f64,
    pub t2_star_driven: f64,
}

impl TunableBand {
    /// Builds the band from its measured extrema, solving for the junction
    /// asymmetry that reproduces `omega_min` at half a flux quantum.
    #[allow(clippy::too_many_arguments)]
    pub fn from_extrema(
        omega_max: f64,
        omega_min: f64,
        eta_max: f64,
        eta_min: f64,
        t1: f64,
        t2_star_parked: f64,
        t2_star_driven: f64,
    ) -> Result<Self> {
        if !(omega_max > omega_min && omega_min > 0.0) {
            return Err(Error::InvalidParameter("tunable band requires omega_max > omega_min > 0".into()));
        }
        if !(eta_max > 0.0 && eta_min > 0.0) {
            return Err(Error::InvalidParameter("anharmonicities must be positive".into()));
        }
        let asymmetry_d = solve_asymmetry(omega_max, omega_min, eta_max);
        let band = Self { omega_max, omega_min, eta_max, eta_min, asymmetry_d, t1, t2_star_parked, t2_star_driven };
        check_coherence(t1, t2_star_parked, "tunable transmon (parked)")?;
        check_coherence(t1, t2_star_driven, "tunable transmon (driven)")?;
        Ok(band)
    }

    /// First transition frequency at flux `phi` (units of the flux quantum).
    pub fn frequency(&self, phi: f64) -> f64 {
        let d2 = self.asymmetry_d * self.asymmetry_d;
        let c = (PI * phi).cos();
        let inner = d2 + (1.0 - d2) * c * c;
        (self.omega_max + self.eta_max) * inner.sqrt().sqrt() - self.eta_max
    }

    pub fn anharmonicity_at(&self, phi: f64, mode: AnharmonicityMode) -> f64 {
        match mode {
            AnharmonicityMode::Constant => {
                // distance to the nearest integer vs. half-integer flux
                let r = phi.rem_euclid(1.0);
                let to_max = r.min(1.0 - r);
                let to_min = (r - 0.5).abs();
                if to_max <= to_min {
                    self.eta_max
                } else {
                    self.eta_min
                }
            }
            AnharmonicityMode::Interpolated => {
                let s = (self.omega_max - self.frequency(phi)) / (self.omega_max - self.omega_min);
                self.eta_max + (self.eta_min - self.eta_max) * s.clamp(0.0, 1.0)
            }
        }
    }

    /// Fourier decomposition of `omega(park + amp cos x)` over one modulation
    /// period. The waveform is even in `x`, so only cosine terms appear.
    pub fn modulated(&self, park: f64, amp: f64, n_harmonics: usize) -> ModulatedFrequency {
        if amp == 0.0 {
            return ModulatedFrequency { omega_bar: self.frequency(park), omega_tilde: 0.0, harmonics: Vec::new() };
        }
        let n = QUADRATURE_POINTS;
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / n as f64;
                self.frequency(park + amp * x.cos())
            })
            .collect();
        let omega_bar = samples.iter().sum::<f64>() / n as f64;
        let coefficient = |k: usize| {
            2.0 / n as f64
                * samples.iter().enumerate().map(|(j, w)| w * (2.0 * PI * (k * j) as f64 / n as f64).cos()).sum::<f64>()
        };
        let harmonics = (1..=n_harmonics).map(|k| (k, coefficient(k))).collect();
        ModulatedFrequency { omega_bar, omega_tilde: coefficient(2), harmonics }
    }
}

/// `d` such that the band formula yields `omega_min` at half flux:
/// `((omega_min + eta) / (omega_max + eta))^2`.
fn solve_asymmetry(omega_max: f64, omega_min: f64, eta: f64) -> f64 {
    let ratio = (omega_min + eta) / (omega_max + eta);
    ratio * ratio
}

fn check_coherence(t1: f64, t2: f64, what: &str) -> Result<()> {
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::InvalidParameter(format!("{what}: coherence times must be positive")));
    }
    if t2 > 2.0 * t1 * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("{what}: T2 must not exceed 2 T1")));
    }
    Ok(())
}

pub fn band_frequency(band: &TunableBand, phi: f64) -> f64 {
    band.frequency(phi)
}

pub fn anharmonicity_at(band: &TunableBand, phi: f64, mode: AnharmonicityMode) -> f64 {
    band.anharmonicity_at(phi, mode)
}

pub fn modulated_frequency(band: &TunableBand, pulse: &FluxPulse, n_harmonics: usize) -> ModulatedFrequency {
    band.modulated(pulse.park, pulse.amp, n_harmonics)
}

/// `park` is at a band extremum (integer or half-integer flux).
pub fn is_turning_point(park: f64) -> bool {
    let r = (2.0 * park).rem_euclid(1.0);
    r.min(1.0 - r) < 1e-12
}

/// Time-averaged frequency and Fourier content of the modulated tunable
/// qubit. `omega_tilde` is the signed cosine coefficient at twice the
/// modulation frequency, so that at a turning point
/// `omega(t) ~ omega_bar + omega_tilde cos(2 omega_p t + 2 theta_p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulatedFrequency {
    pub omega_bar: f64,
    pub omega_tilde: f64,
    /// `(k, c_k)` for `k = 1..=n_harmonics`; the waveform is
    /// `omega_bar + sum_k c_k cos(k (omega_p t + theta_p))`.
    pub harmonics: Vec<(usize, f64)>,
}

impl ModulatedFrequency {
    pub fn reconstruct(&self, phase: f64) -> f64 {
        self.omega_bar + self.harmonics.iter().map(|&(k, ck)| ck * (k as f64 * phase).cos()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    #[default]
    FlatTopCosineEdges,
}

/// Flux waveform `park + env(t) amp cos(omega_p t + theta_p)` with `t`
/// measured from the start of the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxPulse {
    /// Static flux, units of the flux quantum.
    pub park: f64,
    /// Modulation amplitude, units of the flux quantum.
    pub amp: f64,
    /// rad/s
    pub omega_p: f64,
    pub theta_p: f64,
    /// seconds
    pub duration: f64,
    /// seconds
    pub risetime: f64,
    #[serde(default)]
    pub envelope: Envelope,
}

impl FluxPulse {
    pub fn validate(&self) -> Result<()> {
        if !(self.amp >= 0.0) {
            return Err(Error::InvalidParameter("modulation amplitude must be non-negative".into()));
        }
        if !(self.duration >= 0.0) {
            return Err(Error::InvalidParameter("pulse duration must be non-negative".into()));
        }
        if !(self.risetime >= 0.0 && 2.0 * self.risetime <= self.duration * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter("require 0 <= 2 risetime <= duration".into()));
        }
        Ok(())
    }

    /// Envelope scale in `[0, 1]`: raised-cosine edges of length `risetime`
    /// around a flat top. A zero risetime gives a square pulse.
    pub fn envelope_value(&self, t: f64) -> Result<f64> {
        let slack = 1e-12 * self.duration.max(1e-15);
        if t < -slack || t > self.duration + slack {
            return Err(Error::InvalidParameter(format!("t = {t:e} outside pulse of duration {:e}", self.duration)));
        }
        Ok(self.envelope_unchecked(t))
    }

    pub(crate) fn envelope_unchecked(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            return 0.0;
        }
        let r = self.risetime;
        if r <= 0.0 {
            return 1.0;
        }
        if t < r {
            0.5 * (1.0 - (PI * t / r).cos())
        } else if t > self.duration - r {
            0.5 * (1.0 - (PI * (self.duration - t) / r).cos())
        } else {
            1.0
        }
    }

    pub fn flux_at(&self, t: f64) -> f64 {
        self.park + self.envelope_unchecked(t) * self.amp * (self.omega_p * t + self.theta_p).cos()
    }
}

pub fn envelope_value(pulse: &FluxPulse, t: f64) -> Result<f64> {
    pulse.envelope_value(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams {
    pub fixed: FixedTransmon,
    pub tunable: TunableBand,
    /// Static exchange coupling, rad/s.
    pub g: f64,
    pub levels_per_transmon: usize,
    pub anharmonicity_mode: AnharmonicityMode,
    /// Per-gate effective coherence under drive, keyed by gate name.
    pub effective_noise: BTreeMap<String, EffectiveCoherence>,
}

/// Effective tunable-qubit coherence while a given parametric gate is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoherence {
    #[serde(rename = "T1_us")]
    pub t1_us: f64,
    #[serde(rename = "T2_us")]
    pub t2_us: f64,
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        if !(self.g > 0.0) {
            return Err(Error::InvalidParameter("coupling g must be positive".into()));
        }
        if self.levels_per_transmon < 3 {
            return Err(Error::InvalidParameter("at least three levels per transmon are required".into()));
        }
        Ok(())
    }

    /// Soft violations that do not prevent simulation.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.g > 0.05 * self.tunable.omega_min.min(self.fixed.omega) {
            out.push(format!(
                "coupling g/2pi = {:.2} MHz is not small compared with the qubit frequencies",
                angular_to_mhz(self.g)
            ));
        }
        out
    }

    /// The paper-calibrated device shipped with the repository.
    pub fn paper() -> Self {
        DeviceConfig::paper().to_params().expect("bundled device config is valid")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: DeviceConfig = serde_json::from_str(&text)?;
        cfg.to_params()
    }
}

/// On-disk device description in MHz / microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub fixed: FixedConfig,
    pub tunable: TunableConfig,
    #[serde(rename = "g_MHz")]
    pub g_mhz: f64,
    pub levels: usize,
    #[serde(default, skip_serializing_if = "is_default_mode")]
    pub anharmonicity_mode: AnharmonicityMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub effective_noise: BTreeMap<String, EffectiveCoherence>,
}

fn is_default_mode(m: &AnharmonicityMode) -> bool {
    *m == AnharmonicityMode::Constant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedConfig {
    #[serde(rename = "f_MHz")]
    pub f_mhz: f64,
    #[serde(rename = "eta_MHz")]
    pub eta_mhz: f64,
    #[serde(rename = "T1_us")]
    pub t1_us: f64,
    #[serde(rename = "T2_us")]
    pub t2_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunableConfig {
    #[serde(rename = "f_max_MHz")]
    pub f_max_mhz: f64,
    #[serde(rename = "f_min_MHz")]
    pub f_min_mhz: f64,
    #[serde(rename = "eta_max_MHz")]
    pub eta_max_mhz: f64,
    #[serde(rename = "eta_min_MHz")]
    pub eta_min_mhz: f64,
    #[serde(rename = "T1_us")]
    pub t1_us: f64,
    #[serde(rename = "T2_parked_us")]
    pub t2_parked_us: f64,
    #[serde(rename = "T2_driven_us")]
    pub t2_driven_us: f64,
}

pub const PAPER_DEVICE_JSON: &str = include_str!("../../../device_paper.json");

impl DeviceConfig {
    pub fn paper() -> Self {
        serde_json::from_str(PAPER_DEVICE_JSON).expect("bundled device config parses")
    }

    pub fn to_params(&self) -> Result<DeviceParams> {
        let fixed = FixedTransmon {
            omega: mhz_to_angular(self.fixed.f_mhz),
            eta: mhz_to_angular(self.fixed.eta_mhz),
            t1: us(self.fixed.t1_us),
            t2_star: us(self.fixed.t2_us),
        };
        let t = &self.tunable;
        let tunable = TunableBand::from_extrema(
            mhz_to_angular(t.f_max_mhz),
            mhz_to_angular(t.f_min_mhz),
            mhz_to_angular(t.eta_max_mhz),
            mhz_to_angular(t.eta_min_mhz),
            us(t.t1_us),
            us(t.t2_parked_us),
            us(t.t2_driven_us),
        )?;
        let params = DeviceParams {
            fixed,
            tunable,
            g: mhz_to_angular(self.g_mhz),
            levels_per_transmon: self.levels,
            anharmonicity_mode: self.anharmonicity_mode,
            effective_noise: self.effective_noise.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_params(p: &DeviceParams) -> Self {
        Self {
            fixed: FixedConfig {
                f_mhz: angular_to_mhz(p.fixed.omega),
                eta_mhz: angular_to_mhz(p.fixed.eta),
                t1_us: to_us(p.fixed.t1),
                t2_us: to_us(p.fixed.t2_star),
            },
            tunable: TunableConfig {
                f_max_mhz: angular_to_mhz(p.tunable.omega_max),
                f_min_mhz: angular_to_mhz(p.tunable.omega_min),
                eta_max_mhz: angular_to_mhz(p.tunable.eta_max),
                eta_min_mhz: angular_to_mhz(p.tunable.eta_min),
                t1_us: to_us(p.tunable.t1),
                t2_parked_us: to_us(p.tunable.t2_star_parked),
                t2_driven_us: to_us(p.tunable.t2_star_driven),
            },
            g_mhz: angular_to_mhz(p.g),
            levels: p.levels_per_transmon,
            anharmonicity_mode: p.anharmonicity_mode,
            effective_noise: p.effective_noise.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band() -> TunableBand {
        DeviceParams::paper().tunable
    }

    #[test]
    fn band_extrema_match_measured_values() {
        let b = band();
        assert!((b.frequency(0.0) - mhz_to_angular(4582.0)).abs() < 1e-3);
        assert!((b.frequency(0.5) - mhz_to_angular(3285.0)).abs() < 1e-3);
        assert!((b.frequency(1.0) - mhz_to_angular(4582.0)).abs() < 1e-3);
    }

    #[test]
    fn asymmetry_round_trip() {
        let b = band();
        let rebuilt = TunableBand::from_extrema(
            b.omega_max,
            b.omega_min,
            b.eta_max,
            b.eta_min,
            b.t1,
            b.t2_star_parked,
            b.t2_star_driven,
        )
        .unwrap();
        assert!(rebuilt.asymmetry_d > 0.0 && rebuilt.asymmetry_d < 1.0);
        // 1 Hz in angular units
        let hz = 2.0 * PI;
        assert!((rebuilt.frequency(0.0) - b.omega_max).abs() < hz);
        assert!((rebuilt.frequency(0.5) - b.omega_min).abs() < hz);
    }

    #[test]
    fn anharmonicity_modes() {
        let b = band();
        let c = AnharmonicityMode::Constant;
        let i = AnharmonicityMode::Interpolated;
        assert!((b.anharmonicity_at(0.0, c) - mhz_to_angular(173.0)).abs() < 1e-3);
        assert!((b.anharmonicity_at(0.5, i) - mhz_to_angular(185.0)).abs() < 1e-3);
        assert!((b.anharmonicity_at(0.0, i) - mhz_to_angular(173.0)).abs() < 1e-3);
        let mid = b.anharmonicity_at(0.3, i);
        assert!(mid > b.eta_max && mid < b.eta_min);
    }

    #[test]
    fn unmodulated_limit() {
        let b = band();
        let m = b.modulated(0.0, 0.0, 8);
        assert_eq!(m.omega_bar, b.frequency(0.0));
        assert_eq!(m.omega_tilde, 0.0);
        assert!(m.harmonics.is_empty());
    }

    #[test]
    fn modulation_lowers_average_at_upper_sweet_spot() {
        let b = band();
        let m = b.modulated(0.0, 0.245, 8);
        assert!(m.omega_bar < mhz_to_angular(4582.0));
        assert!(m.omega_tilde < 0.0);
    }

    /// Independent oracle: 10^4-point direct quadrature and a direct DFT of
    /// the sampled waveform.
    #[test]
    fn modulated_frequency_matches_dense_quadrature() {
        let b = band();
        let amp = 0.245;
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let ws: Vec<f64> = xs.iter().map(|x| b.frequency(amp * x.cos())).collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (x, w) in xs.iter().zip(&ws) {
            re += w * (2.0 * x).cos();
            im += w * (2.0 * x).sin();
        }
        let c2 = 2.0 * re / n as f64;
        assert!((2.0 * im / n as f64).abs() < 1.0);

        let m = b.modulated(0.0, amp, 6);
        let hz = 2.0 * PI;
        assert!((m.omega_bar - mean).abs() < hz, "{} vs {}", m.omega_bar, mean);
        assert!((m.omega_tilde - c2).abs() < hz);
        // frozen values (MHz) from the same oracle
        assert!((angular_to_mhz(m.omega_bar) - 4_336.928_193).abs() < 1e-4);
        assert!((angular_to_mhz(m.omega_tilde) + 241.957_703).abs() < 1e-4);
    }

    #[test]
    fn odd_harmonics_vanish_at_turning_points() {
        let b = band();
        for park in [0.0, 0.5] {
            let m = b.modulated(park, 0.2, 9);
            for &(k, ck) in &m.harmonics {
                if k % 2 == 1 {
                    assert!(ck.abs() < 1e-9 * m.omega_tilde.abs(), "k={k}: {ck}");
                }
            }
            let tail = m.harmonics.last().unwrap().1.abs();
            assert!(tail < 1e-3 * m.omega_tilde.abs());
        }
    }

    #[test]
    fn envelope_shape() {
        let p = FluxPulse {
            park: 0.0,
            amp: 0.2,
            omega_p: 1e9,
            theta_p: 0.0,
            duration: 150e-9,
            risetime: 40e-9,
            envelope: Envelope::FlatTopCosineEdges,
        };
        assert_eq!(p.envelope_value(0.0).unwrap(), 0.0);
        assert_eq!(p.envelope_value(75e-9).unwrap(), 1.0);
        assert!((p.envelope_value(20e-9).unwrap() - 0.5).abs() < 1e-12);
        assert!(p.envelope_value(150e-9).unwrap().abs() < 1e-12);
        assert!(p.envelope_value(151e-9).is_err());
        assert!(p.envelope_value(-1e-9).is_err());
    }

    #[test]
    fn pulse_validation() {
        let mut p = FluxPulse {
            park: 0.0,
            amp: 0.2,
            omega_p: 1e9,
            theta_p: 0.0,
            duration: 50e-9,
            risetime: 30e-9,
            envelope: Envelope::FlatTopCosineEdges,
        };
        assert!(p.validate().is_err());
        p.risetime = 25e-9;
        assert!(p.validate().is_ok());
        p.amp = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = DeviceConfig::paper();
        let params = cfg.to_params().unwrap();
        let back = DeviceConfig::from_params(&params);
        assert!((back.tunable.f_min_mhz - 3285.0).abs() < 1e-9);
        assert!(params.warnings().is_empty());

        let mut bad = cfg.clone();
        bad.fixed.t2_us = 100.0;
        assert!(bad.to_params().is_err());
        let mut bad = cfg.clone();
        bad.levels = 2;
        assert!(bad.to_params().is_err());
        let mut bad = cfg;
        bad.tunable.f_min_mhz = 5000.0;
        assert!(bad.to_params().is_err());
    }

    proptest! {
        #[test]
        fn band_is_even_and_periodic(phi in -3.0f64..3.0) {
            let b = band();
            let w = b.frequency(phi);
            prop_assert!((w - b.frequency(-phi)).abs() <= 1e-12 * w);
            prop_assert!((w - b.frequency(phi + 1.0)).abs() <= 1e-12 * w);
            prop_assert!(w <= b.omega_max * (1.0 + 1e-15) && w >= b.omega_min * (1.0 - 1e-15));
        }

        #[test]
        fn average_frequency_monotone_in_amplitude(a in 0.0f64..0.49, da in 1e-3f64..0.01) {
            let b = band();
            let lo = b.modulated(0.0, a, 0).omega_bar;
            let hi = b.modulated(0.0, (a + da).min(0.5), 0).omega_bar;
            prop_assert!(hi <= lo + 1e-6);
        }
    }
}
