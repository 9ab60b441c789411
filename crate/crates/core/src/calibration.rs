//! Resonance prediction, chevron scans, gate calibration and the phase
//! ledger that turns a resonant swap into the target two-qubit unitary.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j;
use crate::device::{DeviceParams, Envelope, FluxPulse};
use crate::dynamics::{
    evolve_sampled, propagator_over, EvolveWindow, NoiseModel, PulseSchedule, QuantumState, ScheduleItem,
};
use crate::hamiltonian::{
    build_rotating_hamiltonian, effective_coupling, ladder_factor, mean_eta_t, HamiltonianOptions, HilbertSpace,
    Transition,
};
use crate::linalg::{average_fidelity_operator, cis, CMat, ZERO};
use crate::units::{angular_to_mhz, mhz_to_angular, to_ns};
use crate::{Error, Result};

pub const DEFAULT_RISETIME: f64 = 40e-9;

/// Shortest edge considered for the iSWAP.
pub const MIN_RISETIME: f64 = 30e-9;

/// Grid spacing of the iSWAP edge search.
const EDGE_STEP: f64 = 0.25e-9;

/// Integration tolerance used for coarse scans.
const SCAN_TOL: f64 = 1e-7;

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (j, x)| if *x > v[b] { j } else { b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePrediction {
    pub transition: Transition,
    pub harmonic_n: i32,
    /// rad/s
    pub omega_p_star: f64,
    /// rad/s, signed
    pub g_eff: f64,
    pub amp: f64,
}

/// Solves `2 n omega_p = rhs(amp)` for one transition and harmonic.
pub fn predict_resonance(
    device: &DeviceParams,
    transition: Transition,
    amp: f64,
    n: i32,
) -> Result<ResonancePrediction> {
    if !(amp >= 0.0) {
        return Err(Error::InvalidParameter("modulation amplitude must be non-negative".into()));
    }
    let no_resonance = || Error::NoResonance { transition: transition.name().into(), n };
    if n == 0 {
        return Err(no_resonance());
    }
    let m = device.tunable.modulated(0.0, amp, 2);
    let delta = m.omega_bar - device.fixed.omega;
    let rhs = transition.resonance_rhs(delta, device.fixed.eta, mean_eta_t(device, 0.0, amp));
    let omega_p = rhs / (2.0 * n as f64);
    if !(omega_p > 0.0) {
        return Err(no_resonance());
    }
    let pulse = FluxPulse {
        park: 0.0,
        amp,
        omega_p,
        theta_p: 0.0,
        duration: 0.0,
        risetime: 0.0,
        envelope: Envelope::FlatTopCosineEdges,
    };
    let coupling = effective_coupling(device, &pulse, transition, n)?;
    if coupling.detuning_residual.abs() / (2.0 * PI) >= 1.0 {
        return Err(Error::InvariantViolation(format!(
            "resonance residual {:e} Hz exceeds 1 Hz",
            coupling.detuning_residual / (2.0 * PI)
        )));
    }
    Ok(ResonancePrediction { transition, harmonic_n: n, omega_p_star: omega_p, g_eff: coupling.g_eff, amp })
}

/// Predictions for every transition and each harmonic in `n_range`.
pub fn predict_resonances(device: &DeviceParams, amp: f64, n_range: &[i32]) -> Result<Vec<ResonancePrediction>> {
    let mut out = Vec::with_capacity(3 * n_range.len());
    for transition in Transition::ALL {
        for &n in n_range {
            out.push(predict_resonance(device, transition, amp, n)?);
        }
    }
    Ok(out)
}

/// Flux pulse parked at the upper sweet spot.
pub fn gate_pulse(amp: f64, omega_p: f64, duration: f64, risetime: f64) -> FluxPulse {
    FluxPulse { park: 0.0, amp, omega_p, theta_p: 0.0, duration, risetime, envelope: Envelope::FlatTopCosineEdges }
}

/// Sideband coupling when the modulation amplitude is `amp` and the drive
/// frequency `omega_p` (used with the instantaneous envelope amplitude).
fn instantaneous_g_eff(device: &DeviceParams, transition: Transition, n: i32, omega_p: f64, amp: f64) -> f64 {
    let space = HilbertSpace::new(3, 3).expect("3x3 space");
    let m = device.tunable.modulated(0.0, amp, 2);
    let x = m.omega_tilde / (2.0 * omega_p);
    device.g * ladder_factor(transition, &space) * bessel_j(n, x)
}

/// `2 * integral of |g_eff|` over one raised-cosine edge of length `risetime`.
fn edge_theta(device: &DeviceParams, transition: Transition, n: i32, omega_p: f64, amp: f64, risetime: f64) -> f64 {
    if risetime <= 0.0 {
        return 0.0;
    }
    // composite Simpson over the edge
    let k = 64;
    let h = risetime / k as f64;
    let mut acc = 0.0;
    for j in 0..=k {
        let t = j as f64 * h;
        let env = 0.5 * (1.0 - (PI * t / risetime).cos());
        let w = if j == 0 || j == k {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * instantaneous_g_eff(device, transition, n, omega_p, env * amp).abs();
    }
    2.0 * acc * h / 3.0
}

/// Rotation angle `theta = 2 * integral of |g_eff(t)| dt` through the pulse,
/// with the Bessel argument following the envelope.
pub fn pulse_theta(device: &DeviceParams, transition: Transition, n: i32, pulse: &FluxPulse) -> f64 {
    let flat = (pulse.duration - 2.0 * pulse.risetime).max(0.0);
    let g = instantaneous_g_eff(device, transition, n, pulse.omega_p, pulse.amp).abs();
    2.0 * g * flat + 2.0 * edge_theta(device, transition, n, pulse.omega_p, pulse.amp, pulse.risetime)
}

/// Pulse duration giving rotation angle `theta`, edges included.
pub fn duration_for_theta(
    device: &DeviceParams,
    transition: Transition,
    n: i32,
    omega_p: f64,
    amp: f64,
    risetime: f64,
    theta: f64,
) -> Result<f64> {
    let g = instantaneous_g_eff(device, transition, n, omega_p, amp).abs();
    if g == 0.0 {
        return Err(Error::CalibrationFailed(format!("{transition}: zero sideband coupling at amp {amp}")));
    }
    let edges = 2.0 * edge_theta(device, transition, n, omega_p, amp, risetime);
    Ok(2.0 * risetime + ((theta - edges) / (2.0 * g)).max(0.0))
}

// ---------------------------------------------------------------------------
// chevrons

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub freq_index: usize,
    pub duration_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChevronScan {
    pub transition: Transition,
    pub amp: f64,
    /// `(n_F, n_T)` of the prepared state.
    pub prepared: (usize, usize),
    /// `(n_F, n_T)` of the state whose population is recorded.
    pub measured: (usize, usize),
    pub risetime: f64,
    /// rad/s
    pub frequencies: Vec<f64>,
    /// seconds
    pub durations: Vec<f64>,
    /// `values[i][j]`: population at `frequencies[i]`, `durations[j]`; NaN
    /// where the cell failed.
    pub values: Vec<Vec<f64>>,
    pub failures: Vec<CellFailure>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Population-transfer map over modulation frequency and pulse duration.
///
/// Square pulses (`risetime == 0`) are simulated as one trajectory per
/// frequency sampled at every duration; shaped pulses need one simulation per
/// cell.
#[allow(clippy::too_many_arguments)]
pub fn simulate_chevron(
    device: &DeviceParams,
    noise: Option<&NoiseModel>,
    transition: Transition,
    amp: f64,
    frequencies: &[f64],
    durations: &[f64],
    prepared: (usize, usize),
    risetime: f64,
    tol: f64,
) -> Result<ChevronScan> {
    if frequencies.is_empty() || durations.is_empty() {
        return Err(Error::InvalidParameter("chevron grids must be non-empty".into()));
    }
    if !strictly_increasing(frequencies) || !strictly_increasing(durations) {
        return Err(Error::InvalidParameter("chevron grids must be strictly increasing".into()));
    }
    if durations[0] < 0.0 || frequencies[0] <= 0.0 {
        return Err(Error::InvalidParameter("durations must be >= 0 and frequencies > 0".into()));
    }
    if prepared != (1, 0) && prepared != (1, 1) {
        return Err(Error::InvalidParameter("prepared state must be |10> or |11>".into()));
    }
    let (initial, partner) = transition.levels();
    if initial != prepared {
        return Err(Error::InvalidParameter(format!(
            "{transition} starts from |{}{}>, not |{}{}>",
            initial.0, initial.1, prepared.0, prepared.1
        )));
    }
    let space = HilbertSpace::for_device(device)?;
    let psi0 = QuantumState::basis(&space, prepared.0, prepared.1);
    let target = space.index(partner.0, partner.1);
    let nd = durations.len();

    let rows: Vec<(Vec<f64>, Vec<CellFailure>)> = if risetime == 0.0 {
        frequencies
            .par_iter()
            .enumerate()
            .map(|(i, &w)| {
                let pulse = gate_pulse(amp, w, *durations.last().unwrap(), 0.0);
                let run = build_rotating_hamiltonian(device, &space, &pulse, HamiltonianOptions::default())
                    .and_then(|h| evolve_sampled(&h, &psi0, EvolveWindow::pulse(&pulse), noise, tol, durations));
                match run {
                    Ok(states) => (states[..nd].iter().map(|s| s.population(target).clamp(0.0, 1.0)).collect(), vec![]),
                    Err(e) => (
                        vec![f64::NAN; nd],
                        (0..nd)
                            .map(|j| CellFailure { freq_index: i, duration_index: j, message: e.to_string() })
                            .collect(),
                    ),
                }
            })
            .collect()
    } else {
        let cells: Vec<std::result::Result<f64, CellFailure>> = (0..frequencies.len() * nd)
            .into_par_iter()
            .map(|cell| {
                let (i, j) = (cell / nd, cell % nd);
                let d = durations[j];
                let pulse = gate_pulse(amp, frequencies[i], d, risetime.min(d / 2.0));
                let run = build_rotating_hamiltonian(device, &space, &pulse, HamiltonianOptions::default())
                    .and_then(|h| evolve_sampled(&h, &psi0, EvolveWindow::pulse(&pulse), noise, tol, &[]));
                run.map(|s| s[0].population(target).clamp(0.0, 1.0)).map_err(|e| CellFailure {
                    freq_index: i,
                    duration_index: j,
                    message: e.to_string(),
                })
            })
            .collect();
        cells
            .chunks(nd)
            .map(|row| {
                let mut vals = Vec::with_capacity(nd);
                let mut fails = Vec::new();
                for c in row {
                    match c {
                        Ok(v) => vals.push(*v),
                        Err(f) => {
                            vals.push(f64::NAN);
                            fails.push(f.clone());
                        }
                    }
                }
                (vals, fails)
            })
            .collect()
    };
    let mut values = Vec::with_capacity(rows.len());
    let mut failures = Vec::new();
    for (v, f) in rows {
        values.push(v);
        failures.extend(f);
    }
    Ok(ChevronScan {
        transition,
        amp,
        prepared,
        measured: partner,
        risetime,
        frequencies: frequencies.to_vec(),
        durations: durations.to_vec(),
        values,
        failures,
    })
}

impl ChevronScan {
    /// `freq_MHz,duration_ns,population`, frequency-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "freq_MHz,duration_ns,population")?;
        for (i, &f) in self.frequencies.iter().enumerate() {
            for (j, &d) in self.durations.iter().enumerate() {
                writeln!(out, "{:.6},{:.6},{:.9}", angular_to_mhz(f), to_ns(d), self.values[i][j])?;
            }
        }
        Ok(())
    }

    /// Fixed parameters and per-cell failures.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "transition": self.transition,
            "amp_phi0": self.amp,
            "prepared": format!("{}{}", self.prepared.0, self.prepared.1),
            "measured": format!("{}{}", self.measured.0, self.measured.1),
            "risetime_ns": to_ns(self.risetime),
            "n_frequencies": self.frequencies.len(),
            "n_durations": self.durations.len(),
            "failures": self.failures,
        })
    }

    /// Frequency whose duration trace reaches the largest population.
    pub fn max_transfer_frequency(&self) -> f64 {
        let mut best = (f64::NEG_INFINITY, self.frequencies[0]);
        for (row, &f) in self.values.iter().zip(&self.frequencies) {
            let m = row.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            if m > best.0 {
                best = (m, f);
            }
        }
        best.1
    }
}

/// Oscillation fit `P(t) = contrast * sin^2(omega t / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiFit {
    /// rad/s
    pub omega: f64,
    pub contrast: f64,
    pub rms_residual: f64,
}

fn rabi_residual(times: &[f64], pops: &[f64], omega: f64) -> (f64, f64) {
    let s: Vec<f64> = times.iter().map(|t| (0.5 * omega * t).sin().powi(2)).collect();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let c = if ss > 0.0 { s.iter().zip(pops).map(|(a, b)| a * b).sum::<f64>() / ss } else { 0.0 };
    let r: f64 = s.iter().zip(pops).map(|(a, b)| (c * a - b).powi(2)).sum();
    (r, c)
}

/// Least-squares Rabi fit: grid search over `omega` up to the sampling
/// Nyquist limit, then golden-section refinement.
pub fn fit_rabi(times: &[f64], pops: &[f64]) -> Result<RabiFit> {
    if times.len() < 4 || times.len() != pops.len() {
        return Err(Error::FitFailed("need at least four samples".into()));
    }
    let span = times.last().unwrap() - times[0];
    let dt_min = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(span > 0.0 && dt_min > 0.0) {
        return Err(Error::FitFailed("sample times must be increasing".into()));
    }
    let (lo, hi) = (PI / span, PI / dt_min);
    let k = 4000;
    let mut best = (f64::INFINITY, lo);
    for j in 0..=k {
        let w = lo + (hi - lo) * j as f64 / k as f64;
        let (r, _) = rabi_residual(times, pops, w);
        if r < best.0 {
            best = (r, w);
        }
    }
    let step = (hi - lo) / k as f64;
    let omega = golden_min(|w| rabi_residual(times, pops, w).0, best.1 - step, best.1 + step, 1e-12 * best.1);
    let (r, c) = rabi_residual(times, pops, omega);
    Ok(RabiFit { omega, contrast: c, rms_residual: (r / times.len() as f64).sqrt() })
}

pub(crate) fn golden_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= xtol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

// ---------------------------------------------------------------------------
// calibration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLedger {
    /// Phase lag of the fixed qubit's frame after the gate, rad.
    pub local_phase_f: f64,
    /// Phase lag of the tunable qubit's frame after the gate, rad.
    pub local_phase_t: f64,
    /// Offset between the bare exchange frame and the driven sideband,
    /// `(omega_F - omega_T(park)) - 2 n omega_p`, rad/s. Successive pulses
    /// advance their modulation phase to follow it.
    pub frame_tracking_rate: f64,
    /// Exchange phase, applied as `+phi` on F and `-phi` on T in addition to
    /// the local phases.
    pub interaction_phase: f64,
    pub swap_frame_exchange: bool,
}

impl PhaseLedger {
    pub fn identity() -> Self {
        Self {
            local_phase_f: 0.0,
            local_phase_t: 0.0,
            frame_tracking_rate: 0.0,
            interaction_phase: 0.0,
            swap_frame_exchange: false,
        }
    }

    /// Total frame lag `[F, T]` introduced by one gate.
    pub fn frame_shift(&self) -> [f64; 2] {
        [self.local_phase_f + self.interaction_phase, self.local_phase_t - self.interaction_phase]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// rad/s
    pub predicted_omega_p: f64,
    /// Transfer (iSWAP) or return (CZ) probability of the final pulse.
    pub figure_of_merit: f64,
    /// `arg U_11 - arg U_01 - arg U_10 + arg U_00` minus its ideal value, rad.
    pub conditional_phase_error: f64,
    /// Worst-case population leaving the computational subspace.
    pub leakage: f64,
    pub pulse_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecipe {
    pub gate_kind: Transition,
    pub harmonic_n: i32,
    pub pulse: FluxPulse,
    pub theta_target: f64,
    /// rad/s at the calibrated operating point
    pub g_eff: f64,
    pub phase_ledger: PhaseLedger,
    pub diagnostics: CalibrationDiagnostics,
}

impl GateRecipe {
    pub fn validate(&self) -> Result<()> {
        let ok_theta = (self.theta_target - PI).abs() < 1e-12 || (self.theta_target - 2.0 * PI).abs() < 1e-12;
        if !ok_theta {
            return Err(Error::InvalidParameter("theta_target must be pi or 2 pi".into()));
        }
        if self.phase_ledger.swap_frame_exchange != (self.gate_kind == Transition::Iswap) {
            return Err(Error::InvalidParameter("swap_frame_exchange must be set exactly for iswap".into()));
        }
        self.pulse.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: GateRecipe = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    /// Ideal target on the computational subspace (`|00>, |01>, |10>, |11>`,
    /// fixed qubit first).
    pub fn target_unitary(&self) -> CMat {
        target_unitary(self.gate_kind)
    }

    /// Post-gate frame correction `exp(i sum_q phi_q n_q)` on the
    /// computational subspace.
    pub fn correction(&self) -> CMat {
        frame_correction(self.phase_ledger.frame_shift())
    }

    /// Human-readable summary in laboratory units.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("gate                     {}\n", self.gate_kind));
        s.push_str(&format!("harmonic n               {}\n", self.harmonic_n));
        s.push_str(&format!("amplitude [Phi0]         {:.4}\n", self.pulse.amp));
        s.push_str(&format!("f_p [MHz]                {:.3}\n", angular_to_mhz(self.pulse.omega_p)));
        s.push_str(&format!("g_eff/2pi [MHz]          {:.3}\n", angular_to_mhz(self.g_eff.abs())));
        s.push_str(&format!("duration [ns]            {:.2}\n", to_ns(self.pulse.duration)));
        s.push_str(&format!("risetime [ns]            {:.2}\n", to_ns(self.pulse.risetime)));
        s.push_str(&format!("theta target [rad]       {:.6}\n", self.theta_target));
        s.push_str(&format!("local phase F [rad]      {:.6}\n", self.phase_ledger.local_phase_f));
        s.push_str(&format!("local phase T [rad]      {:.6}\n", self.phase_ledger.local_phase_t));
        s.push_str(&format!("interaction phase [rad]  {:.6}\n", self.phase_ledger.interaction_phase));
        s.push_str(&format!("frame tracking [MHz]     {:.6}\n", angular_to_mhz(self.phase_ledger.frame_tracking_rate)));
        s.push_str(&format!("swap frames              {}\n", self.phase_ledger.swap_frame_exchange));
        s.push_str(&format!("figure of merit          {:.6}\n", self.diagnostics.figure_of_merit));
        s.push_str(&format!("leakage                  {:.3e}\n", self.diagnostics.leakage));
        s
    }
}

pub fn target_unitary(kind: Transition) -> CMat {
    let mut u = CMat::identity(4, 4);
    match kind {
        Transition::Iswap => {
            u[(1, 1)] = ZERO;
            u[(2, 2)] = ZERO;
            u[(1, 2)] = C64::new(0.0, 1.0);
            u[(2, 1)] = C64::new(0.0, 1.0);
        }
        Transition::Cz02 | Transition::Cz20 => u[(3, 3)] = C64::new(-1.0, 0.0),
    }
    u
}

/// `exp(i (phi_F n_F + phi_T n_T))` on `|00>, |01>, |10>, |11>`.
pub fn frame_correction(phi: [f64; 2]) -> CMat {
    let mut c = CMat::zeros(4, 4);
    for (k, (nf, nt)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        c[(k, k)] = cis(phi[0] * nf as f64 + phi[1] * nt as f64);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Edge length of CZ pulses, and the upper end of the iSWAP edge search.
    pub risetime: f64,
    /// Lower end of the iSWAP edge search. Set equal to `risetime` to pin
    /// the iSWAP edges.
    pub min_risetime: f64,
    pub tol: f64,
    /// Minimum accepted transfer (iSWAP) or return (CZ) probability.
    pub min_figure_of_merit: f64,
    /// rad
    pub phase_tol: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            risetime: DEFAULT_RISETIME,
            min_risetime: MIN_RISETIME,
            tol: 1e-9,
            min_figure_of_merit: 0.98,
            phase_tol: 1e-2,
            max_iterations: 12,
        }
    }
}

fn wrap(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Noiseless evolution of one pulse started at `t = 0`.
struct PulseResult {
    /// Full propagator.
    u: CMat,
    space: HilbertSpace,
}

impl PulseResult {
    fn amp(&self, to: (usize, usize), from: (usize, usize)) -> C64 {
        self.u[(self.space.index(to.0, to.1), self.space.index(from.0, from.1))]
    }

    fn prob(&self, to: (usize, usize), from: (usize, usize)) -> f64 {
        self.amp(to, from).norm_sqr()
    }

    fn computational_block(&self) -> CMat {
        let idx = self.space.computational();
        CMat::from_fn(4, 4, |r, c| self.u[(idx[r], idx[c])])
    }

    fn leakage(&self) -> f64 {
        let b = self.computational_block();
        (0..4).map(|c| 1.0 - b.column(c).norm_squared()).fold(0.0, f64::max)
    }

    fn conditional_phase(&self) -> f64 {
        let b = self.computational_block();
        wrap(b[(3, 3)].arg() - b[(1, 1)].arg() - b[(2, 2)].arg() + b[(0, 0)].arg())
    }
}

fn run_pulse(device: &DeviceParams, pulse: &FluxPulse, tol: f64) -> Result<PulseResult> {
    let space = HilbertSpace::for_device(device)?;
    let h = build_rotating_hamiltonian(device, &space, pulse, HamiltonianOptions::default())?;
    let p = propagator_over(&h, EvolveWindow::pulse(pulse), None, tol)?;
    Ok(PulseResult { u: p.matrix, space })
}

/// Noiseless computational-subspace block of one pulse started at `t = 0`.
pub fn pulse_block(device: &DeviceParams, pulse: &FluxPulse, tol: f64) -> Result<CMat> {
    Ok(run_pulse(device, pulse, tol)?.computational_block())
}

/// Ramsey-style phase readout: prepare `(|0> + |1>)/sqrt2` on qubit `q`
/// (other qubit in `|0>`), run the pulse and read the coherence between
/// `|00>` and the single-excitation state it lands in.
fn ramsey_phase(result: &PulseResult, prepared: (usize, usize), landed: (usize, usize)) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a00 = result.amp((0, 0), (0, 0)) * s;
    let a1 = result.amp(landed, prepared) * s;
    // <landed| rho |00> = a1 * conj(a00)
    (a1 * a00.conj()).arg()
}

/// Phase ledger from a noiseless gate run: local phase lags such that the
/// block equals `exp(-i sum phi_q n_q) T` on the single-excitation states.
fn measure_ledger(result: &PulseResult, kind: Transition, beta: f64, tracking: f64) -> PhaseLedger {
    match kind {
        Transition::Iswap => {
            // |10> -> i e^{-i phi_T} |01>,  |01> -> i e^{-i phi_F} |10>
            let phi_t = -wrap(ramsey_phase(result, (1, 0), (0, 1)) - PI / 2.0);
            let phi_f = -wrap(ramsey_phase(result, (0, 1), (1, 0)) - PI / 2.0);
            let beta = wrap(beta);
            PhaseLedger {
                local_phase_f: wrap(phi_f - beta),
                local_phase_t: wrap(phi_t + beta),
                frame_tracking_rate: tracking,
                interaction_phase: beta,
                swap_frame_exchange: true,
            }
        }
        Transition::Cz02 | Transition::Cz20 => PhaseLedger {
            local_phase_f: -wrap(ramsey_phase(result, (1, 0), (1, 0))),
            local_phase_t: -wrap(ramsey_phase(result, (0, 1), (0, 1))),
            frame_tracking_rate: tracking,
            interaction_phase: 0.0,
            swap_frame_exchange: false,
        },
    }
}

struct Calibrator<'a> {
    device: &'a DeviceParams,
    kind: Transition,
    n: i32,
    amp: f64,
    opts: CalibrationOptions,
    risetime: f64,
    evaluations: usize,
    /// Scans run at a looser tolerance than refinements.
    coarse: bool,
}

impl Calibrator<'_> {
    fn run(&mut self, omega_p: f64, duration: f64) -> Result<PulseResult> {
        self.evaluations += 1;
        let pulse = gate_pulse(self.amp, omega_p, duration, self.risetime.min(duration / 2.0));
        let tol = if self.coarse { self.opts.tol.max(SCAN_TOL) } else { self.opts.tol };
        run_pulse(self.device, &pulse, tol)
    }

    fn scan(&mut self, grid: &[f64], mut f: impl FnMut(&mut Self, f64) -> Result<f64>) -> Result<Vec<f64>> {
        self.coarse = true;
        let out = grid.iter().map(|&x| f(self, x)).collect();
        self.coarse = false;
        out
    }

    fn transfer(&mut self, omega_p: f64, duration: f64) -> Result<f64> {
        let (a, b) = self.kind.levels();
        Ok(self.run(omega_p, duration)?.prob(b, a))
    }

    fn ret(&mut self, omega_p: f64, duration: f64) -> Result<f64> {
        let (a, _) = self.kind.levels();
        Ok(self.run(omega_p, duration)?.prob(a, a))
    }

    fn maximize(
        &mut self,
        mut f: impl FnMut(&mut Self, f64) -> Result<f64>,
        lo: f64,
        hi: f64,
        xtol: f64,
    ) -> Result<f64> {
        let mut err = None;
        let x = golden_min(
            |x| match f(self, x) {
                Ok(v) => -v,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::INFINITY
                }
            },
            lo,
            hi,
            xtol,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(x),
        }
    }

    /// Resonance centre by chevron symmetrisation at the theta = pi duration:
    /// coarse scan, maximum, then the two half-maximum crossings.
    fn centre_frequency(&mut self, guess: f64, g: f64, d_pi: f64) -> Result<f64> {
        let scale = (g.abs() / self.n as f64).max(mhz_to_angular(0.02));
        let k = 20;
        let grid = linspace(guess - 3.0 * scale, guess + 3.0 * scale, k + 1);
        let p = self.scan(&grid, |s, w| s.transfer(w, d_pi))?;
        let best = grid[argmax(&p)];
        let step = 6.0 * scale / k as f64;
        let w_max = self.maximize(|s, w| s.transfer(w, d_pi), best - step, best + step, 1e-3 * scale)?;
        let p_max = self.transfer(w_max, d_pi)?;
        let half = 0.5 * p_max;
        let mut edges = [0.0; 2];
        for (side, sign) in [-1.0f64, 1.0].into_iter().enumerate() {
            let mut inner = w_max;
            let mut outer = w_max + sign * 0.5 * scale;
            let mut found = false;
            for _ in 0..40 {
                if self.transfer(outer, d_pi)? < half {
                    found = true;
                    break;
                }
                inner = outer;
                outer += sign * 0.5 * scale;
            }
            if !found {
                return Err(Error::CalibrationFailed(format!("{}: no half-maximum crossing", self.kind)));
            }
            for _ in 0..14 {
                let mid = 0.5 * (inner + outer);
                if self.transfer(mid, d_pi)? >= half {
                    inner = mid;
                } else {
                    outer = mid;
                }
            }
            edges[side] = 0.5 * (inner + outer);
        }
        Ok(0.5 * (edges[0] + edges[1]))
    }

    /// Duration of the target rotation at `omega_p`: coarse scan for the
    /// first transfer maximum (iSWAP) or the first return after the
    /// half-way minimum (CZ), then golden-section refinement.
    fn best_duration(&mut self, omega_p: f64) -> Result<f64> {
        let theta = self.kind.theta_target();
        let d0 = duration_for_theta(self.device, self.kind, self.n, omega_p, self.amp, self.risetime, theta)?;
        let lo = 2.0 * self.risetime;
        let hi = 2.2 * d0.max(lo);
        let k = 30;
        let grid = linspace(lo.max(hi / k as f64), hi, k);
        let merit = match self.kind {
            Transition::Iswap => self.scan(&grid, |s, d| s.transfer(omega_p, d))?,
            _ => self.scan(&grid, |s, d| s.ret(omega_p, d))?,
        };
        let local_max = |j: usize, m: &[f64]| j > 0 && j + 1 < m.len() && m[j] >= m[j - 1] && m[j] >= m[j + 1];
        let start = match self.kind {
            Transition::Iswap => 0,
            _ => (1..k - 1)
                .find(|&j| merit[j] < 0.5 && merit[j] <= merit[j - 1] && merit[j] <= merit[j + 1])
                .ok_or_else(|| {
                    Error::CalibrationFailed(format!("{}: no half-way minimum in duration scan", self.kind))
                })?,
        };
        let j = (start..k)
            .find(|&j| local_max(j, &merit) && merit[j] > 0.5)
            .ok_or_else(|| Error::CalibrationFailed(format!("{}: no rotation maximum in duration scan", self.kind)))?;
        let step = grid[1] - grid[0];
        match self.kind {
            Transition::Iswap => self.maximize(|s, d| s.transfer(omega_p, d), grid[j] - step, grid[j] + step, 1e-12),
            _ => self.maximize(|s, d| s.ret(omega_p, d), grid[j] - step, grid[j] + step, 1e-12),
        }
    }

    /// Duration giving theta = pi at `omega_p`.
    fn half_duration(&mut self, omega_p: f64) -> Result<f64> {
        match self.kind {
            Transition::Iswap => self.best_duration(omega_p),
            _ => {
                let d = duration_for_theta(self.device, self.kind, self.n, omega_p, self.amp, self.risetime, PI)?;
                let lo = 2.0 * self.risetime;
                let hi = 2.2 * d.max(lo);
                let k = 30;
                let grid = linspace(lo.max(hi / k as f64), hi, k);
                let tr = self.scan(&grid, |s, g| s.transfer(omega_p, g))?;
                let j = (1..k - 1)
                    .find(|&j| tr[j] > 0.5 && tr[j] >= tr[j - 1] && tr[j] >= tr[j + 1])
                    .ok_or_else(|| Error::CalibrationFailed(format!("{}: no transfer maximum", self.kind)))?;
                let step = grid[1] - grid[0];
                self.maximize(|s, g| s.transfer(omega_p, g), grid[j] - step, grid[j] + step, 1e-12)
            }
        }
    }

    /// iSWAP edge length. The spectator `|11>` sees the neighbouring CZ
    /// sidebands off resonance and how much it leaks depends on the pulse
    /// timing, so scan the edge over `[min_risetime, risetime]`, follow the
    /// transfer maximum in duration, and keep the edge where transfer and
    /// `|11>` return are jointly best.
    fn iswap_edge(&mut self, omega_p: f64, duration: f64) -> Result<(f64, f64)> {
        let (lo, hi) = (self.opts.min_risetime, self.opts.risetime);
        if hi <= lo {
            return Ok((self.risetime, duration));
        }
        let k = ((hi - lo) / EDGE_STEP).ceil() as usize;
        let mut d = duration;
        let mut best = (f64::NEG_INFINITY, hi, duration);
        self.coarse = true;
        for r in linspace(hi, lo, k + 1) {
            self.risetime = r;
            d = self.maximize(|s, x| s.transfer(omega_p, x), 0.97 * d, 1.03 * d, 1e-11)?;
            let m = self.joint_merit(omega_p, d)?;
            if m > best.0 {
                best = (m, r, d);
            }
        }
        self.coarse = false;
        self.risetime = best.1;
        let d = self.maximize(|s, x| s.transfer(omega_p, x), best.2 - 1e-9, best.2 + 1e-9, 1e-12)?;
        Ok((best.1, d))
    }

    fn joint_merit(&mut self, omega_p: f64, duration: f64) -> Result<f64> {
        let r = self.run(omega_p, duration)?;
        Ok(r.prob((0, 1), (1, 0)) * r.prob((1, 1), (1, 1)))
    }

    /// Conditional-phase error at `omega_p`, with the return duration
    /// refined within a few percent of `near`.
    fn cz_phase_error(&mut self, omega_p: f64, near: f64) -> Result<(f64, f64)> {
        let d = self.maximize(|s, d| s.ret(omega_p, d), 0.97 * near, 1.03 * near, 1e-12)?;
        let r = self.run(omega_p, d)?;
        Ok((wrap(r.conditional_phase() - PI), d))
    }
}

/// Refines modulation frequency and duration of one gate on noiseless
/// dynamics and fills its phase ledger.
pub fn calibrate_gate(
    device: &DeviceParams,
    kind: Transition,
    guess: &ResonancePrediction,
    options: CalibrationOptions,
) -> Result<GateRecipe> {
    if guess.transition != kind {
        return Err(Error::InvalidParameter(format!("prediction is for {}, not {kind}", guess.transition)));
    }
    if guess.g_eff == 0.0 {
        return Err(Error::CalibrationFailed(format!("{kind}: no sideband coupling at amp {}", guess.amp)));
    }
    let mut cal = Calibrator {
        device,
        kind,
        n: guess.harmonic_n,
        amp: guess.amp,
        opts: options,
        risetime: options.risetime,
        evaluations: 0,
        coarse: false,
    };
    // two passes: the theta = pi duration depends on the frequency and the
    // chevron is only symmetric about the resonance at that duration
    let mut omega_p = guess.omega_p_star;
    for _ in 0..2 {
        let d_pi = cal.half_duration(omega_p)?;
        omega_p = cal.centre_frequency(omega_p, guess.g_eff, d_pi)?;
    }
    let mut duration = cal.best_duration(omega_p)?;
    if kind == Transition::Iswap {
        duration = cal.iswap_edge(omega_p, duration)?.1;
    }

    if kind != Transition::Iswap {
        // secant on the modulation frequency to null the conditional-phase error
        let scale = guess.g_eff.abs() / guess.harmonic_n as f64;
        let (mut e0, d0) = cal.cz_phase_error(omega_p, duration)?;
        duration = d0;
        let mut w0 = omega_p;
        let mut w1 = omega_p + 0.02 * scale;
        let mut converged = e0.abs() <= options.phase_tol;
        for _ in 0..options.max_iterations {
            if converged {
                break;
            }
            let (e1, d1) = cal.cz_phase_error(w1, duration)?;
            duration = d1;
            if e1.abs() <= options.phase_tol {
                omega_p = w1;
                duration = d1;
                converged = true;
                break;
            }
            if e1 == e0 {
                break;
            }
            let w2 = w1 - e1 * (w1 - w0) / (e1 - e0);
            let w2 = w2.clamp(w1 - scale, w1 + scale);
            w0 = w1;
            e0 = e1;
            w1 = w2;
        }
        if !converged {
            return Err(Error::CalibrationFailed(format!(
                "{kind}: conditional phase did not converge within {} iterations",
                options.max_iterations
            )));
        }
    }

    let pulse = gate_pulse(guess.amp, omega_p, duration, cal.risetime.min(duration / 2.0));
    let result = run_pulse(device, &pulse, options.tol)?;
    cal.evaluations += 1;
    let (a, b) = kind.levels();
    let merit = match kind {
        Transition::Iswap => result.prob(b, a),
        _ => result.prob(a, a),
    };
    if merit < options.min_figure_of_merit {
        return Err(Error::CalibrationFailed(format!(
            "{kind}: figure of merit {merit:.4} below {}",
            options.min_figure_of_merit
        )));
    }
    let coupling = effective_coupling(device, &pulse, kind, guess.harmonic_n)?;
    let omega_t0 = device.tunable.frequency(pulse.park);
    let tracking = (device.fixed.omega - omega_t0) - 2.0 * guess.harmonic_n as f64 * omega_p;
    let ledger = measure_ledger(&result, kind, coupling.beta_n, tracking);
    let ideal_cp = match kind {
        Transition::Iswap => 0.0,
        _ => PI,
    };
    Ok(GateRecipe {
        gate_kind: kind,
        harmonic_n: guess.harmonic_n,
        pulse,
        theta_target: kind.theta_target(),
        g_eff: coupling.g_eff,
        phase_ledger: ledger,
        diagnostics: CalibrationDiagnostics {
            predicted_omega_p: guess.omega_p_star,
            figure_of_merit: merit,
            conditional_phase_error: wrap(result.conditional_phase() - ideal_cp),
            leakage: result.leakage(),
            pulse_evaluations: cal.evaluations,
        },
    })
}

/// Convenience: predict the n = 1 resonance at `amp` and calibrate it.
pub fn calibrate_at(
    device: &DeviceParams,
    kind: Transition,
    amp: f64,
    options: CalibrationOptions,
) -> Result<GateRecipe> {
    let guess = predict_resonance(device, kind, amp, 1)?;
    calibrate_gate(device, kind, &guess, options)
}

/// Noiseless gate block after the ledger's frame correction.
pub fn corrected_block(device: &DeviceParams, recipe: &GateRecipe, tol: f64) -> Result<CMat> {
    Ok(recipe.correction() * pulse_block(device, &recipe.pulse, tol)?)
}

/// Average gate fidelity of the corrected noiseless gate to its target.
pub fn noiseless_gate_fidelity(device: &DeviceParams, recipe: &GateRecipe, tol: f64) -> Result<f64> {
    Ok(average_fidelity_operator(&corrected_block(device, recipe, tol)?, &recipe.target_unitary()))
}

fn same_gate(a: &FluxPulse, b: &FluxPulse) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-30);
    close(a.amp, b.amp) && close(a.omega_p, b.omega_p) && close(a.duration, b.duration) && close(a.risetime, b.risetime)
}

/// Rewrites a schedule so that every instance of a recipe's gate realises
/// the recipe's target in the software frame:
/// - the gate's modulation phase follows its start time so that each
///   instance repeats the calibrated one,
/// - local gates after it have their phases shifted by the accumulated
///   frame lag (frames swapped first after an iSWAP).
///
/// The schedule's final frame lag is stored in `frame`.
pub fn apply_phase_ledgers(recipes: &[&GateRecipe], schedule: &PulseSchedule) -> PulseSchedule {
    let mut out = schedule.clone();
    let mut frame = schedule.frame;
    let mut t = 0.0;
    for item in out.items.iter_mut() {
        match item {
            ScheduleItem::Flux(p) => {
                if let Some(r) = recipes.iter().find(|r| same_gate(&r.pulse, p)) {
                    let n = r.harmonic_n as f64;
                    let bare = 2.0 * n * r.pulse.omega_p + r.phase_ledger.frame_tracking_rate;
                    p.theta_p = r.pulse.theta_p - bare * t / (2.0 * n);
                    if r.phase_ledger.swap_frame_exchange {
                        frame.swap(0, 1);
                    }
                    let shift = r.phase_ledger.frame_shift();
                    frame[0] += shift[0];
                    frame[1] += shift[1];
                }
                t += p.duration;
            }
            ScheduleItem::Local(g) => g.phase -= frame[g.qubit.index()],
            ScheduleItem::Idle(d) => t += *d,
        }
    }
    out.frame = [wrap(frame[0]), wrap(frame[1])];
    out
}

pub fn apply_phase_ledger(recipe: &GateRecipe, schedule: &PulseSchedule) -> PulseSchedule {
    apply_phase_ledgers(&[recipe], schedule)
}

/// Default duration grid helper: `count` points from `start` to `stop`.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        _ => (0..count).map(|k| start + (stop - start) * k as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_resonances() {
        let d = DeviceParams::paper();
        let iswap = predict_resonance(&d, Transition::Iswap, 0.0, 1).unwrap();
        assert!((angular_to_mhz(iswap.omega_p_star) - 321.0).abs() < 1e-9);
        let cz20 = predict_resonance(&d, Transition::Cz20, 0.0, 1).unwrap();
        assert!((angular_to_mhz(cz20.omega_p_star) - 411.0).abs() < 1e-9);
        assert_eq!(iswap.g_eff, 0.0);
        assert!(predict_resonance(&d, Transition::Iswap, 0.0, -1).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_min(|x| (x - 1.3).powi(2), 0.0, 3.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-8);
    }

    #[test]
    fn rabi_fit_recovers_frequency() {
        let times = linspace(0.0, 1e-6, 120);
        let w = 2.0 * PI * 3.3e6;
        let pops: Vec<f64> = times.iter().map(|t| 0.9 * (0.5 * w * t).sin().powi(2)).collect();
        let fit = fit_rabi(&times, &pops).unwrap();
        assert!((fit.omega / w - 1.0).abs() < 1e-6);
        assert!((fit.contrast - 0.9).abs() < 1e-6);
    }

    #[test]
    fn identity_ledger_leaves_schedule_unchanged() {
        let s = PulseSchedule::new(vec![ScheduleItem::Local(crate::dynamics::LocalGate {
            qubit: crate::dynamics::Qubit::T,
            angle: PI,
            phase: 0.3,
        })]);
        let recipe = GateRecipe {
            gate_kind: Transition::Cz02,
            harmonic_n: 1,
            pulse: gate_pulse(0.2, 1e9, 1e-7, 0.0),
            theta_target: 2.0 * PI,
            g_eff: 1e7,
            phase_ledger: PhaseLedger::identity(),
            diagnostics: CalibrationDiagnostics {
                predicted_omega_p: 1e9,
                figure_of_merit: 1.0,
                conditional_phase_error: 0.0,
                leakage: 0.0,
                pulse_evaluations: 0,
            },
        };
        assert_eq!(apply_phase_ledger(&recipe, &s), s);
    }
}
