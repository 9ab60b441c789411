//! Time evolution of the driven two-transmon system.
//!
//! Closed evolution integrates `i psi' = H(t) psi`; open evolution integrates
//! the Lindblad equation with amplitude damping `a_q / sqrt(T1_q)` and pure
//! dephasing `n_q sqrt(2 / T_phi_q)`, `1 / T_phi = 1 / T2 - 1 / (2 T1)`.
//! Both go through the adaptive integrator in [`crate::ode`].

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, FluxPulse};
use crate::frame::InteractionSystem;
use crate::hamiltonian::{
    build_rotating_hamiltonian, Frame, HamiltonianOptions, HilbertSpace, TimeDependentHamiltonian, Transition,
};
use crate::linalg::{cis, min_eigenvalue_hermitian, trace, CMat, I, ONE, ZERO};
use crate::ode::{integrate, Dopri5Options};
use crate::units::{to_ns, us};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(DVector<C64>),
    Density(CMat),
}

impl QuantumState {
    pub fn basis(space: &HilbertSpace, nf: usize, nt: usize) -> Self {
        let mut v = DVector::from_element(space.dim(), ZERO);
        v[space.index(nf, nt)] = ONE;
        QuantumState::Pure(v)
    }

    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.len(),
            QuantumState::Density(m) => m.nrows(),
        }
    }

    pub fn to_density(&self) -> CMat {
        match self {
            QuantumState::Pure(v) => v * v.adjoint(),
            QuantumState::Density(m) => m.clone(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match self {
            QuantumState::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            QuantumState::Density(m) => m.diagonal().iter().map(|z| z.re).collect(),
        }
    }

    pub fn population(&self, idx: usize) -> f64 {
        match self {
            QuantumState::Pure(v) => v[idx].norm_sqr(),
            QuantumState::Density(m) => m[(idx, idx)].re,
        }
    }

    /// `<i| rho |j>`.
    pub fn coherence(&self, i: usize, j: usize) -> C64 {
        match self {
            QuantumState::Pure(v) => v[i] * v[j].conj(),
            QuantumState::Density(m) => m[(i, j)],
        }
    }

    /// Checks normalisation (pure) or Hermiticity, unit trace and positivity
    /// (density) at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        match self {
            QuantumState::Pure(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > tol {
                    return Err(Error::InvariantViolation(format!("state norm {norm} deviates from 1")));
                }
            }
            QuantumState::Density(m) => {
                let herm = (m - m.adjoint()).norm();
                if herm > tol {
                    return Err(Error::InvariantViolation(format!("density matrix not Hermitian ({herm:e})")));
                }
                let tr = trace(m);
                if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
                    return Err(Error::InvariantViolation(format!("density trace {tr} deviates from 1")));
                }
                let min = min_eigenvalue_hermitian(m);
                if min < -tol.max(1e-7) {
                    return Err(Error::InvariantViolation(format!("density eigenvalue {min:e} is negative")));
                }
            }
        }
        Ok(())
    }

    /// Fidelity with another state: `|<a|b>|^2` for two pure states,
    /// `<a| rho |a>` when one side is pure, `tr(rho sigma)` otherwise.
    pub fn overlap(&self, other: &QuantumState) -> f64 {
        match (self, other) {
            (QuantumState::Pure(a), QuantumState::Pure(b)) => a.dotc(b).norm_sqr(),
            (QuantumState::Pure(a), QuantumState::Density(r)) | (QuantumState::Density(r), QuantumState::Pure(a)) => {
                (a.adjoint() * r * a)[(0, 0)].re
            }
            (QuantumState::Density(a), QuantumState::Density(b)) => trace(&(a * b)).re,
        }
    }
}

/// Decoherence of both transmons. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub t1_f: f64,
    pub t1_t: f64,
    pub t2_f: f64,
    pub t2_t: f64,
    /// Tunable-qubit T2 while a flux pulse is applied.
    pub driven_t2_t: Option<f64>,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (t1, t2, name) in [(self.t1_f, self.t2_f, "F"), (self.t1_t, self.t2_t, "T")] {
            if !(t1 > 0.0 && t2 > 0.0) {
                return Err(Error::InvalidParameter(format!("qubit {name}: coherence times must be positive")));
            }
            if t2 > 2.0 * t1 * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!("qubit {name}: T2 must not exceed 2 T1")));
            }
        }
        if let Some(t2) = self.driven_t2_t {
            if !(t2 > 0.0 && t2 <= 2.0 * self.t1_t * (1.0 + 1e-12)) {
                return Err(Error::InvalidParameter("driven T2 must lie in (0, 2 T1]".into()));
            }
        }
        Ok(())
    }

    /// Idle coherence from the device description.
    pub fn parked(device: &DeviceParams) -> Self {
        Self {
            t1_f: device.fixed.t1,
            t1_t: device.tunable.t1,
            t2_f: device.fixed.t2_star,
            t2_t: device.tunable.t2_star_parked,
            driven_t2_t: Some(device.tunable.t2_star_driven),
        }
    }

    /// Effective coherence under the drive for a given gate, falling back to
    /// the device's generic driven T2 when the gate has no entry.
    pub fn for_gate(device: &DeviceParams, gate: Transition) -> Self {
        let mut noise = Self::parked(device);
        if let Some(eff) = device.effective_noise.get(gate.name()) {
            noise.t1_t = us(eff.t1_us);
            noise.driven_t2_t = Some(us(eff.t2_us));
        }
        noise
    }

    pub fn t2_t_at(&self, driven: bool) -> f64 {
        if driven {
            self.driven_t2_t.unwrap_or(self.t2_t)
        } else {
            self.t2_t
        }
    }

    /// Pure-dephasing rate `1/T2 - 1/(2 T1)`, clipped at zero.
    pub fn dephasing_rate(t1: f64, t2: f64) -> f64 {
        (1.0 / t2 - 0.5 / t1).max(0.0)
    }

    pub fn collapse_operators(&self, space: &HilbertSpace, driven: bool) -> Vec<CMat> {
        let mut ops = Vec::new();
        let qubits = [
            (space.annihilation_f(), space.number_f(), self.t1_f, self.t2_f),
            (space.annihilation_t(), space.number_t(), self.t1_t, self.t2_t_at(driven)),
        ];
        for (a, n, t1, t2) in qubits {
            ops.push(a.scale((1.0 / t1).sqrt()));
            let gamma_phi = Self::dephasing_rate(t1, t2);
            if gamma_phi > 0.0 {
                ops.push(n.scale((2.0 * gamma_phi).sqrt()));
            }
        }
        ops
    }
}

/// Time window of one evolution. `driven` selects the under-drive T2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveWindow {
    pub start: f64,
    pub end: f64,
    pub driven: bool,
}

impl EvolveWindow {
    pub fn pulse(pulse: &FluxPulse) -> Self {
        Self { start: 0.0, end: pulse.duration, driven: pulse.amp > 0.0 }
    }

    pub fn idle(duration: f64) -> Self {
        Self { start: 0.0, end: duration, driven: false }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::InvalidParameter(format!("tolerance {tol:e} outside [1e-12, 1e-4]")));
    }
    Ok(())
}

fn pack(m: &CMat) -> Vec<C64> {
    let n = m.nrows();
    (0..n * m.ncols()).map(|k| m[(k / m.ncols(), k % m.ncols())]).collect()
}

fn unpack(v: &[C64], rows: usize, cols: usize) -> CMat {
    CMat::from_row_slice(rows, cols, v)
}

/// Local error target handed to the step controller. Errors add up over
/// thousands of steps, so the controller runs tighter than the requested
/// tolerance to keep the end-of-window error at the requested level.
fn options(tol: f64) -> Dopri5Options {
    Dopri5Options::with_tol(tol * LOCAL_TOL_FACTOR)
}

const LOCAL_TOL_FACTOR: f64 = 0.1;

fn frame_phases(h: &TimeDependentHamiltonian, window: &EvolveWindow) -> [f64; 2] {
    match h.frame {
        Frame::RotatingBare { omega_f, omega_t } => {
            let dt = window.end - window.start;
            [omega_f * dt, omega_t * dt]
        }
        _ => [0.0, 0.0],
    }
}

/// Integrates `k` state columns (row-major `n x k`) through the window.
fn integrate_columns(
    h: &TimeDependentHamiltonian,
    window: EvolveWindow,
    y0: &[C64],
    k: usize,
    tol: f64,
    sample_times: &[f64],
    mut on_sample: impl FnMut(usize, f64, Vec<C64>),
) -> Result<Vec<C64>> {
    let sys = InteractionSystem::new(h, window.start, window.end, &[]);
    let mut ws = sys.workspace();
    let (mut y, _) = integrate(
        |t, y, dy| sys.schrodinger(t, y, dy, k, &mut ws),
        window.start,
        window.end,
        y0,
        &options(tol),
        sample_times,
        |idx, t, y| {
            let mut v = y.to_vec();
            sys.to_frame_columns(t, &mut v, k);
            on_sample(idx, t, v);
        },
    )?;
    sys.to_frame_columns(window.end, &mut y, k);
    Ok(y)
}

/// Integrates a row-major density matrix through the window.
fn integrate_density(
    h: &TimeDependentHamiltonian,
    window: EvolveWindow,
    collapse: &[CMat],
    rho0: &[C64],
    tol: f64,
    sample_times: &[f64],
    mut on_sample: impl FnMut(usize, f64, Vec<C64>),
) -> Result<Vec<C64>> {
    let sys = InteractionSystem::new(h, window.start, window.end, collapse);
    let mut ws = sys.workspace();
    let (mut y, _) = integrate(
        |t, y, dy| sys.lindblad(t, y, dy, &mut ws),
        window.start,
        window.end,
        rho0,
        &options(tol),
        sample_times,
        |idx, t, y| {
            let mut v = y.to_vec();
            sys.to_frame_density(t, &mut v);
            on_sample(idx, t, v);
        },
    )?;
    sys.to_frame_density(window.end, &mut y);
    Ok(y)
}

/// Evolves `state` through `window`. With `noise` the evolution is open and a
/// pure input is promoted to a density matrix.
pub fn evolve_state(
    h: &TimeDependentHamiltonian,
    state: &QuantumState,
    window: EvolveWindow,
    noise: Option<&NoiseModel>,
    tol: f64,
) -> Result<QuantumState> {
    let mut out = evolve_sampled(h, state, window, noise, tol, &[])?;
    Ok(out.pop().expect("final state"))
}

/// As [`evolve_state`], additionally returning the state at each of the
/// sorted `sample_times` (absolute times within the window). The final state
/// is the last element.
pub fn evolve_sampled(
    h: &TimeDependentHamiltonian,
    state: &QuantumState,
    window: EvolveWindow,
    noise: Option<&NoiseModel>,
    tol: f64,
    sample_times: &[f64],
) -> Result<Vec<QuantumState>> {
    check_tol(tol)?;
    let n = h.dim();
    if state.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: state.dim() });
    }
    if window.end < window.start {
        return Err(Error::InvalidParameter("window end precedes start".into()));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.iter().any(|&t| t < window.start || t > window.end)
    {
        return Err(Error::InvalidParameter("sample times must be sorted and inside the window".into()));
    }
    state.validate(1e-9)?;
    if let Some(noise) = noise {
        noise.validate()?;
    }
    let open = noise.is_some() || matches!(state, QuantumState::Density(_));
    let mut samples: Vec<QuantumState> = Vec::with_capacity(sample_times.len() + 1);
    let result = if open {
        let collapse = noise.map(|nm| nm.collapse_operators(&h.space, window.driven)).unwrap_or_default();
        let rho0 = pack(&state.to_density());
        let y = integrate_density(h, window, &collapse, &rho0, tol, sample_times, |_, _, y| {
            samples.push(QuantumState::Density(unpack(&y, n, n)))
        })?;
        QuantumState::Density(unpack(&y, n, n))
    } else {
        let QuantumState::Pure(psi) = state else { unreachable!() };
        let y = integrate_columns(h, window, psi.as_slice(), 1, tol, sample_times, |_, _, y| {
            samples.push(QuantumState::Pure(DVector::from_vec(y)))
        })?;
        QuantumState::Pure(DVector::from_vec(y))
    };
    for s in samples.iter().chain(std::iter::once(&result)) {
        s.validate(INVARIANT_SCALE * tol)?;
    }
    samples.push(result);
    Ok(samples)
}

/// Norm and trace deviations are checked against this multiple of the
/// requested tolerance.
const INVARIANT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    Unitary,
    /// Column-stacked Liouville superoperator.
    Superoperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub matrix: CMat,
    pub kind: PropagatorKind,
    /// Phases `omega_q * duration` of the bare frames rotated out during
    /// integration; zero for lab or interaction frames.
    pub frame_phases: [f64; 2],
}

impl Propagator {
    /// Restriction of a unitary propagator to the given basis indices.
    pub fn unitary_block(&self, indices: &[usize]) -> CMat {
        assert_eq!(self.kind, PropagatorKind::Unitary);
        CMat::from_fn(indices.len(), indices.len(), |r, c| self.matrix[(indices[r], indices[c])])
    }
}

/// Time-ordered propagator over the window: the unitary in the closed case,
/// the Liouville superoperator (evolving each `|i><j|`) in the open case.
pub fn propagator_over(
    h: &TimeDependentHamiltonian,
    window: EvolveWindow,
    noise: Option<&NoiseModel>,
    tol: f64,
) -> Result<Propagator> {
    check_tol(tol)?;
    let n = h.dim();
    let frame_phases = frame_phases(h, &window);
    match noise {
        None => {
            let u0 = pack(&CMat::identity(n, n));
            let y = integrate_columns(h, window, &u0, n, tol, &[], |_, _, _| {})?;
            let u = unpack(&y, n, n);
            let defect = (u.adjoint() * &u - CMat::identity(n, n)).norm();
            if defect > UNITARITY_TOL.max(INVARIANT_SCALE * tol) {
                return Err(Error::InvariantViolation(format!("propagator not unitary ({defect:e})")));
            }
            Ok(Propagator { matrix: u, kind: PropagatorKind::Unitary, frame_phases })
        }
        Some(_) => {
            let all: Vec<usize> = (0..n).collect();
            let matrix = subspace_channel(h, window, noise, tol, &all)?;
            let tp_defect = trace_defect(&matrix, n);
            if tp_defect > INVARIANT_SCALE * tol {
                return Err(Error::InvariantViolation(format!("superoperator not trace preserving ({tp_defect:e})")));
            }
            Ok(Propagator { matrix, kind: PropagatorKind::Superoperator, frame_phases })
        }
    }
}

const UNITARITY_TOL: f64 = 1e-8;

/// Largest deviation of `tr E(|i><j|)` from `delta_ij` for a column-stacked
/// Liouville matrix on dimension `d`.
pub fn trace_defect(s: &CMat, d: usize) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in 0..d {
            let col = j * d + i;
            let tr: C64 = (0..d).map(|a| s[(a * d + a, col)]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((tr - expect).norm());
        }
    }
    worst
}

/// Liouville matrix (column-stacked, `k^2 x k^2`) of the evolution restricted
/// to inputs supported on `indices` and projected onto the same subspace.
/// Population leaving the subspace shows up as a trace deficit.
pub fn subspace_channel(
    h: &TimeDependentHamiltonian,
    window: EvolveWindow,
    noise: Option<&NoiseModel>,
    tol: f64,
    indices: &[usize],
) -> Result<CMat> {
    check_tol(tol)?;
    if let Some(noise) = noise {
        noise.validate()?;
    }
    let n = h.dim();
    let k = indices.len();
    let collapse = noise.map(|nm| nm.collapse_operators(&h.space, window.driven)).unwrap_or_default();
    let columns: Vec<Result<Vec<C64>>> = (0..k * k)
        .into_par_iter()
        .map(|col| {
            // column-stacked index: col = j * k + i  <->  |i><j|
            let (i, j) = (col % k, col / k);
            let mut rho0 = vec![ZERO; n * n];
            rho0[indices[i] * n + indices[j]] = ONE;
            let y = integrate_density(h, window, &collapse, &rho0, tol, &[], |_, _, _| {})?;
            let mut out = vec![ZERO; k * k];
            for b in 0..k {
                for a in 0..k {
                    out[b * k + a] = y[indices[a] * n + indices[b]];
                }
            }
            Ok(out)
        })
        .collect();
    let mut s = CMat::zeros(k * k, k * k);
    for (col, data) in columns.into_iter().enumerate() {
        let data = data?;
        for (row, v) in data.into_iter().enumerate() {
            s[(row, col)] = v;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Qubit {
    F,
    T,
}

impl Qubit {
    pub fn index(&self) -> usize {
        match self {
            Qubit::F => 0,
            Qubit::T => 1,
        }
    }
}

/// Ideal rotation by `angle` about `cos(phase) X + sin(phase) Y` in the
/// qubit's drive frame. Levels above `|1>` are untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGate {
    pub qubit: Qubit,
    pub angle: f64,
    pub phase: f64,
}

impl LocalGate {
    pub fn matrix_2x2(&self) -> CMat {
        let (c, s) = ((self.angle / 2.0).cos(), (self.angle / 2.0).sin());
        CMat::from_row_slice(
            2,
            2,
            &[C64::new(c, 0.0), -I * cis(-self.phase) * s, -I * cis(self.phase) * s, C64::new(c, 0.0)],
        )
    }

    /// Embedding in the full two-transmon space.
    pub fn matrix(&self, space: &HilbertSpace) -> CMat {
        let levels = match self.qubit {
            Qubit::F => space.levels_f,
            Qubit::T => space.levels_t,
        };
        let mut single = CMat::identity(levels, levels);
        single.view_mut((0, 0), (2, 2)).copy_from(&self.matrix_2x2());
        match self.qubit {
            Qubit::F => single.kronecker(&CMat::identity(space.levels_t, space.levels_t)),
            Qubit::T => CMat::identity(space.levels_f, space.levels_f).kronecker(&single),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleItem {
    Flux(FluxPulse),
    Local(LocalGate),
    Idle(f64),
}

impl ScheduleItem {
    pub fn duration(&self) -> f64 {
        match self {
            ScheduleItem::Flux(p) => p.duration,
            ScheduleItem::Local(_) => 0.0,
            ScheduleItem::Idle(t) => *t,
        }
    }
}

/// Sequential program of flux pulses, instantaneous ideal local gates and
/// idles. `frame` holds the software frame offsets already folded into the
/// local-gate phases.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub items: Vec<ScheduleItem>,
    pub frame: [f64; 2],
}

impl PulseSchedule {
    pub fn new(items: Vec<ScheduleItem>) -> Self {
        Self { items, frame: [0.0, 0.0] }
    }

    pub fn total_duration(&self) -> f64 {
        self.items.iter().map(ScheduleItem::duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for item in &self.items {
            match item {
                ScheduleItem::Flux(p) => p.validate()?,
                ScheduleItem::Idle(t) if *t < 0.0 => {
                    return Err(Error::InvalidParameter("idle durations must be non-negative".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn apply_unitary(state: &QuantumState, u: &CMat) -> QuantumState {
    match state {
        QuantumState::Pure(v) => QuantumState::Pure(u * v),
        QuantumState::Density(m) => QuantumState::Density(u * m * u.adjoint()),
    }
}

/// Runs a schedule on the device in the frame rotating at the bare qubit
/// frequencies (parking at zero flux between pulses).
pub fn simulate_schedule(
    device: &DeviceParams,
    schedule: &PulseSchedule,
    state: &QuantumState,
    noise: Option<&NoiseModel>,
    tol: f64,
) -> Result<QuantumState> {
    schedule.validate()?;
    let space = HilbertSpace::for_device(device)?;
    let mut t = 0.0;
    let mut current = state.clone();
    for item in &schedule.items {
        match item {
            ScheduleItem::Local(g) => current = apply_unitary(&current, &g.matrix(&space)),
            ScheduleItem::Flux(p) => {
                let opts = HamiltonianOptions { time_offset: t, ..Default::default() };
                let h = build_rotating_hamiltonian(device, &space, p, opts)?;
                current = evolve_state(&h, &current, EvolveWindow::pulse(p), noise, tol)?;
                t += p.duration;
            }
            ScheduleItem::Idle(d) => {
                let idle = idle_pulse(*d);
                let opts = HamiltonianOptions { time_offset: t, ..Default::default() };
                let h = build_rotating_hamiltonian(device, &space, &idle, opts)?;
                current = evolve_state(&h, &current, EvolveWindow::idle(*d), noise, tol)?;
                t += d;
            }
        }
    }
    Ok(current)
}

pub(crate) fn idle_pulse(duration: f64) -> FluxPulse {
    FluxPulse { park: 0.0, amp: 0.0, omega_p: 0.0, theta_p: 0.0, duration, risetime: 0.0, envelope: Default::default() }
}

/// CSV dump `t_ns,P_00,...` followed by `re_/im_rho_<a>_<b>` for each
/// requested coherence.
pub fn write_timeseries_csv<W: Write>(
    mut out: W,
    space: &HilbertSpace,
    times: &[f64],
    states: &[QuantumState],
    coherences: &[(usize, usize)],
) -> std::io::Result<()> {
    let mut header = vec!["t_ns".to_string()];
    header.extend((0..space.dim()).map(|k| format!("P_{}", space.basis_label(k))));
    for &(a, b) in coherences {
        let (la, lb) = (space.basis_label(a), space.basis_label(b));
        header.push(format!("re_rho_{la}_{lb}"));
        header.push(format!("im_rho_{la}_{lb}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for (t, s) in times.iter().zip(states) {
        let mut row = vec![format!("{:.6}", to_ns(*t))];
        row.extend(s.populations().iter().map(|p| format!("{p:.9}")));
        for &(a, b) in coherences {
            let z = s.coherence(a, b);
            row.push(format!("{:.9}", z.re));
            row.push(format!("{:.9}", z.im));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::build_duffing_hamiltonian;
    use crate::linalg::hermitian_eigen;

    fn device() -> DeviceParams {
        DeviceParams::paper()
    }

    #[test]
    fn eigenstate_of_static_hamiltonian_is_stationary() {
        let d = device();
        let s = HilbertSpace::for_device(&d).unwrap();
        let idle = idle_pulse(50e-9);
        let h = build_duffing_hamiltonian(&d, &s, &idle, HamiltonianOptions::default()).unwrap();
        let (_, vecs) = hermitian_eigen(&h.static_part);
        let v = vecs.column(4).into_owned();
        let psi = QuantumState::Pure(v.clone());
        let out = evolve_state(&h, &psi, EvolveWindow::idle(idle.duration), None, 1e-10).unwrap();
        assert!((out.overlap(&psi) - 1.0).abs() < 1e-6, "{}", out.overlap(&psi));
    }

    #[test]
    fn zero_hamiltonian_gives_identity_propagator() {
        let s = HilbertSpace::new(3, 3).unwrap();
        let h = TimeDependentHamiltonian::zero(s);
        let p = propagator_over(&h, EvolveWindow::idle(1e-7), None, 1e-8).unwrap();
        assert!((p.matrix - CMat::identity(9, 9)).norm() < 1e-14);
        let noisy = NoiseModel { t1_f: 1e-3, t1_t: 1e-3, t2_f: 1e-3, t2_t: 1e-3, driven_t2_t: None };
        let _ = noisy;
    }

    #[test]
    fn amplitude_damping_follows_exponential_law() {
        let d = device();
        let s = HilbertSpace::for_device(&d).unwrap();
        let noise = NoiseModel::parked(&d);
        let h = TimeDependentHamiltonian::zero(s);
        let out = evolve_state(&h, &QuantumState::basis(&s, 1, 0), EvolveWindow::idle(noise.t1_f), Some(&noise), 1e-8)
            .unwrap();
        let excited: f64 = (0..3).map(|nt| out.population(s.index(1, nt))).sum();
        let expected = (-1.0f64).exp();
        assert!((excited - expected).abs() < 0.01 * expected);
        out.validate(1e-7).unwrap();
    }

    #[test]
    fn dephasing_rates_reproduce_t2() {
        // coherence of (|00> + |10>)/sqrt2 decays as exp(-t / T2_F)
        let d = device();
        let s = HilbertSpace::for_device(&d).unwrap();
        let noise = NoiseModel::parked(&d);
        let h = TimeDependentHamiltonian::zero(s);
        let mut v = DVector::from_element(9, ZERO);
        v[s.index(0, 0)] = C64::new(0.5f64.sqrt(), 0.0);
        v[s.index(1, 0)] = C64::new(0.5f64.sqrt(), 0.0);
        let t = 5e-6;
        let out = evolve_state(&h, &QuantumState::Pure(v), EvolveWindow::idle(t), Some(&noise), 1e-9).unwrap();
        let coh = out.coherence(s.index(0, 0), s.index(1, 0)).norm();
        let expected = 0.5 * (-t / noise.t2_f).exp();
        assert!((coh - expected).abs() < 1e-6, "{coh} vs {expected}");
    }

    #[test]
    fn noise_validation() {
        let bad = NoiseModel { t1_f: 1e-6, t1_t: 1e-6, t2_f: 3e-6, t2_t: 1e-6, driven_t2_t: None };
        assert!(bad.validate().is_err());
        let noise = NoiseModel::for_gate(&device(), Transition::Cz02);
        assert!((noise.t1_t - 10.908712114635714e-6).abs() < 1e-15);
        assert!((noise.driven_t2_t.unwrap() - 10.2e-6).abs() < 1e-15);
    }

    #[test]
    fn tolerance_bounds_are_enforced() {
        let s = HilbertSpace::new(3, 3).unwrap();
        let h = TimeDependentHamiltonian::zero(s);
        let psi = QuantumState::basis(&s, 0, 0);
        assert!(evolve_state(&h, &psi, EvolveWindow::idle(1e-9), None, 1e-3).is_err());
        assert!(evolve_state(&h, &psi, EvolveWindow::idle(1e-9), None, 1e-13).is_err());
    }

    #[test]
    fn local_gate_rotations() {
        let g = LocalGate { qubit: Qubit::T, angle: std::f64::consts::PI, phase: 0.0 };
        let s = HilbertSpace::new(3, 3).unwrap();
        let out = apply_unitary(&QuantumState::basis(&s, 0, 0), &g.matrix(&s));
        assert!((out.population(s.index(0, 1)) - 1.0).abs() < 1e-15);
        let m = g.matrix(&s);
        assert!((m.adjoint() * &m - CMat::identity(9, 9)).norm() < 1e-14);
    }

    #[test]
    fn timeseries_csv_has_header_and_rows() {
        let s = HilbertSpace::new(3, 3).unwrap();
        let states = vec![QuantumState::basis(&s, 1, 0), QuantumState::basis(&s, 0, 1)];
        let mut buf = Vec::new();
        write_timeseries_csv(&mut buf, &s, &[0.0, 1e-9], &states, &[(3, 1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("t_ns,P_00,P_01"));
        assert!(lines[0].ends_with("re_rho_10_01,im_rho_10_01"));
        assert!(lines[2].starts_with("1.000000,0.000000000,1.000000000"));
    }
}
