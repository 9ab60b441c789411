//! Driven two-transmon Hamiltonians.
//!
//! [`build_duffing_hamiltonian`] gives the lab-frame Duffing model with an
//! exchange coupling; [`build_rotating_hamiltonian`] is the same model in the
//! frame rotating at the static bare qubit frequencies, which is what the
//! integrator sees. [`rwa_effective_hamiltonian`] is the sideband picture in
//! the interaction frame of the instantaneous qubit frequencies, where the
//! flux modulation shows up as Bessel-weighted couplings at multiples of
//! twice the modulation frequency.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j;
use crate::device::{is_turning_point, AnharmonicityMode, DeviceParams, FluxPulse};
use crate::linalg::{c, CMat, I, ONE, ZERO};
use crate::units::angular_to_mhz;
use crate::{Error, Result};

/// Truncated two-transmon space with basis `|F, T>`, `T` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    pub levels_f: usize,
    pub levels_t: usize,
}

impl HilbertSpace {
    pub fn new(levels_f: usize, levels_t: usize) -> Result<Self> {
        if levels_f < 3 || levels_t < 3 {
            return Err(Error::InvalidParameter(
                "each transmon needs at least three levels to resolve |20> and |02>".into(),
            ));
        }
        Ok(Self { levels_f, levels_t })
    }

    pub fn for_device(device: &DeviceParams) -> Result<Self> {
        Self::new(device.levels_per_transmon, device.levels_per_transmon)
    }

    pub fn dim(&self) -> usize {
        self.levels_f * self.levels_t
    }

    pub fn index(&self, nf: usize, nt: usize) -> usize {
        nf * self.levels_t + nt
    }

    pub fn levels_of(&self, idx: usize) -> (usize, usize) {
        (idx / self.levels_t, idx % self.levels_t)
    }

    /// Indices of `|00>, |01>, |10>, |11>`.
    pub fn computational(&self) -> [usize; 4] {
        [self.index(0, 0), self.index(0, 1), self.index(1, 0), self.index(1, 1)]
    }

    pub fn annihilation_f(&self) -> CMat {
        annihilation(self.levels_f).kronecker(&CMat::identity(self.levels_t, self.levels_t))
    }

    pub fn annihilation_t(&self) -> CMat {
        CMat::identity(self.levels_f, self.levels_f).kronecker(&annihilation(self.levels_t))
    }

    pub fn number_f(&self) -> CMat {
        let a = self.annihilation_f();
        a.adjoint() * a
    }

    pub fn number_t(&self) -> CMat {
        let a = self.annihilation_t();
        a.adjoint() * a
    }

    pub fn basis_label(&self, idx: usize) -> String {
        let (f, t) = self.levels_of(idx);
        format!("{f}{t}")
    }
}

/// Truncated harmonic-oscillator lowering operator.
pub fn annihilation(levels: usize) -> CMat {
    let mut a = CMat::zeros(levels, levels);
    for n in 1..levels {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    a
}

/// `n (n - 1)` for a number operator.
fn kerr(n: &CMat) -> CMat {
    let dim = n.nrows();
    n * (n - CMat::identity(dim, dim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    /// `|10> <-> |01>`
    Iswap,
    /// `|11> <-> |02>`
    Cz02,
    /// `|11> <-> |20>`
    Cz20,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::Iswap, Transition::Cz02, Transition::Cz20];

    pub fn name(&self) -> &'static str {
        match self {
            Transition::Iswap => "iswap",
            Transition::Cz02 => "cz02",
            Transition::Cz20 => "cz20",
        }
    }

    /// `(initial, partner)` as `(n_F, n_T)` level pairs.
    pub fn levels(&self) -> ((usize, usize), (usize, usize)) {
        match self {
            Transition::Iswap => ((1, 0), (0, 1)),
            Transition::Cz02 => ((1, 1), (0, 2)),
            Transition::Cz20 => ((1, 1), (2, 0)),
        }
    }

    /// Basis indices `(initial, partner)`.
    pub fn states(&self, space: &HilbertSpace) -> (usize, usize) {
        let ((a0, a1), (b0, b1)) = self.levels();
        (space.index(a0, a1), space.index(b0, b1))
    }

    /// Right-hand side of the resonance condition `2 n omega_p = rhs`.
    pub fn resonance_rhs(&self, delta: f64, eta_f: f64, eta_t: f64) -> f64 {
        match self {
            Transition::Iswap => delta,
            Transition::Cz02 => delta - eta_t,
            Transition::Cz20 => delta + eta_f,
        }
    }

    /// Target rotation angle in the resonant subspace.
    pub fn theta_target(&self) -> f64 {
        match self {
            Transition::Iswap => std::f64::consts::PI,
            _ => 2.0 * std::f64::consts::PI,
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iswap" => Ok(Transition::Iswap),
            "cz02" => Ok(Transition::Cz02),
            "cz20" => Ok(Transition::Cz20),
            other => Err(Error::UnknownTransition(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Lab,
    /// Rotating at the static bare qubit frequencies.
    RotatingBare {
        omega_f: f64,
        omega_t: f64,
    },
    /// Interaction frame of the instantaneous qubit frequencies.
    Interaction,
}

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct DriveTerm {
    pub label: String,
    pub op: CMat,
    pub coeff: Coefficient,
}

impl fmt::Debug for DriveTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriveTerm").field("label", &self.label).finish_non_exhaustive()
    }
}

/// `H(t) = static_part + sum_k coeff_k(t) op_k`, in rad/s.
#[derive(Debug, Clone)]
pub struct TimeDependentHamiltonian {
    pub space: HilbertSpace,
    pub static_part: CMat,
    pub drive_terms: Vec<DriveTerm>,
    pub frame: Frame,
    pub warnings: Vec<String>,
}

impl TimeDependentHamiltonian {
    pub fn dim(&self) -> usize {
        self.static_part.nrows()
    }

    pub fn zero(space: HilbertSpace) -> Self {
        let dim = space.dim();
        Self {
            space,
            static_part: CMat::zeros(dim, dim),
            drive_terms: Vec::new(),
            frame: Frame::Lab,
            warnings: Vec::new(),
        }
    }

    pub fn at(&self, t: f64) -> CMat {
        let mut h = self.static_part.clone();
        for term in &self.drive_terms {
            let f = (term.coeff)(t);
            if f != 0.0 {
                h += term.op.scale(f);
            }
        }
        h
    }

    pub fn is_time_independent(&self) -> bool {
        self.drive_terms.is_empty()
    }

    /// Row-major packed copy of the operators, for the integrator hot loop.
    pub fn packed(&self) -> PackedHamiltonian {
        let pack = |m: &CMat| {
            let n = m.nrows();
            let mut out = Vec::with_capacity(n * n);
            for r in 0..n {
                for col in 0..n {
                    out.push(m[(r, col)]);
                }
            }
            out
        };
        PackedHamiltonian {
            dim: self.dim(),
            static_part: pack(&self.static_part),
            ops: self.drive_terms.iter().map(|t| pack(&t.op)).collect(),
            coeffs: self.drive_terms.iter().map(|t| t.coeff.clone()).collect(),
        }
    }
}

/// Flat row-major form of a [`TimeDependentHamiltonian`] for the integrator.
pub struct PackedHamiltonian {
    pub dim: usize,
    pub static_part: Vec<num_complex::Complex64>,
    pub ops: Vec<Vec<num_complex::Complex64>>,
    pub coeffs: Vec<Coefficient>,
}

impl PackedHamiltonian {
    /// Row-major `H(t)` into `out`.
    pub fn fill(&self, t: f64, out: &mut [num_complex::Complex64]) {
        out.copy_from_slice(&self.static_part);
        for (op, coeff) in self.ops.iter().zip(&self.coeffs) {
            let f = coeff(t);
            if f != 0.0 {
                for (o, v) in out.iter_mut().zip(op) {
                    *o += v * f;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HamiltonianOptions {
    /// Keep the `a_F a_T + h.c.` part of the capacitive coupling.
    pub counter_rotating: bool,
    /// Absolute time of the pulse start; only the rotating-frame coupling
    /// phases depend on it.
    pub time_offset: f64,
}

fn check_space(device: &DeviceParams, space: &HilbertSpace) -> Result<()> {
    if space.levels_f != device.levels_per_transmon || space.levels_t != device.levels_per_transmon {
        return Err(Error::DimensionMismatch {
            expected: device.levels_per_transmon * device.levels_per_transmon,
            found: space.dim(),
        });
    }
    Ok(())
}

/// Lab-frame Duffing Hamiltonian
/// `sum_q [omega_q(t) n_q - eta_q/2 n_q (n_q - 1)] + g (a_F^dag a_T + h.c.)`.
pub fn build_duffing_hamiltonian(
    device: &DeviceParams,
    space: &HilbertSpace,
    pulse: &FluxPulse,
    options: HamiltonianOptions,
) -> Result<TimeDependentHamiltonian> {
    check_space(device, space)?;
    pulse.validate()?;
    let (nf, nt) = (space.number_f(), space.number_t());
    let (af, at) = (space.annihilation_f(), space.annihilation_t());
    let band = device.tunable;
    let omega_t0 = band.frequency(pulse.park);
    let eta_t0 = band.anharmonicity_at(pulse.park, AnharmonicityMode::Constant);
    let eta_f = device.fixed.eta;

    let exchange = af.adjoint() * &at;
    let mut static_part = nf.scale(device.fixed.omega) - kerr(&nf).scale(0.5 * eta_f) + nt.scale(omega_t0)
        - kerr(&nt).scale(0.5 * eta_t0)
        + (&exchange + exchange.adjoint()).scale(device.g);
    if options.counter_rotating {
        let pair = &af * &at;
        static_part += (&pair + pair.adjoint()).scale(device.g);
    }

    let mut drive_terms = modulation_terms(device, space, pulse, omega_t0, eta_t0);
    drive_terms.retain(|t| t.op.iter().any(|z| z.norm() > 0.0));
    Ok(TimeDependentHamiltonian {
        space: *space,
        static_part,
        drive_terms,
        frame: Frame::Lab,
        warnings: device.warnings(),
    })
}

/// Frequency-modulation terms shared by the lab and rotating frames.
fn modulation_terms(
    device: &DeviceParams,
    space: &HilbertSpace,
    pulse: &FluxPulse,
    omega_t0: f64,
    eta_t0: f64,
) -> Vec<DriveTerm> {
    if pulse.amp == 0.0 {
        return Vec::new();
    }
    let band = device.tunable;
    let p = *pulse;
    let mut terms = vec![DriveTerm {
        label: "n_T * (omega_T(t) - omega_T(park))".into(),
        op: space.number_t(),
        coeff: Arc::new(move |t| band.frequency(p.flux_at(t)) - omega_t0),
    }];
    if device.anharmonicity_mode == AnharmonicityMode::Interpolated {
        terms.push(DriveTerm {
            label: "-n_T (n_T - 1) / 2 * (eta_T(t) - eta_T(park))".into(),
            op: kerr(&space.number_t()).scale(-0.5),
            coeff: Arc::new(move |t| band.anharmonicity_at(p.flux_at(t), AnharmonicityMode::Interpolated) - eta_t0),
        });
    }
    terms
}

/// The Duffing model in the frame rotating at `omega_F n_F + omega_T(park) n_T`.
/// Remaining dynamics are at the detuning, anharmonicity and modulation scales.
pub fn build_rotating_hamiltonian(
    device: &DeviceParams,
    space: &HilbertSpace,
    pulse: &FluxPulse,
    options: HamiltonianOptions,
) -> Result<TimeDependentHamiltonian> {
    check_space(device, space)?;
    pulse.validate()?;
    let (nf, nt) = (space.number_f(), space.number_t());
    let (af, at) = (space.annihilation_f(), space.annihilation_t());
    let band = device.tunable;
    let omega_f = device.fixed.omega;
    let omega_t0 = band.frequency(pulse.park);
    let eta_t0 = band.anharmonicity_at(pulse.park, AnharmonicityMode::Constant);

    let static_part = -(kerr(&nf).scale(0.5 * device.fixed.eta) + kerr(&nt).scale(0.5 * eta_t0));
    let mut drive_terms = modulation_terms(device, space, pulse, omega_t0, eta_t0);

    let g = device.g;
    let t0 = options.time_offset;
    let mut push_pair = |label: &str, op: CMat, freq: f64| {
        let x = &op + op.adjoint();
        let y = (&op - op.adjoint()) * I;
        drive_terms.push(DriveTerm {
            label: format!("{label} (cos)"),
            op: x,
            coeff: Arc::new(move |t| g * (freq * (t + t0)).cos()),
        });
        drive_terms.push(DriveTerm {
            label: format!("{label} (sin)"),
            op: y,
            coeff: Arc::new(move |t| g * (freq * (t + t0)).sin()),
        });
    };
    push_pair("g a_F^dag a_T", af.adjoint() * &at, omega_f - omega_t0);
    if options.counter_rotating {
        push_pair("g a_F^dag a_T^dag", af.adjoint() * at.adjoint(), omega_f + omega_t0);
    }

    Ok(TimeDependentHamiltonian {
        space: *space,
        static_part,
        drive_terms,
        frame: Frame::RotatingBare { omega_f, omega_t: omega_t0 },
        warnings: device.warnings(),
    })
}

/// Sideband coupling of one transition at one harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveCoupling {
    pub transition: Transition,
    pub harmonic_n: i32,
    /// rad/s, signed: `J_n` of a negative argument is negative for odd `n`.
    pub g_eff: f64,
    pub beta_n: f64,
    /// `2 n omega_p` minus the resonance condition's right-hand side, rad/s.
    pub detuning_residual: f64,
    pub bessel_argument: f64,
}

/// Time-averaged tunable anharmonicity over a modulation cycle.
pub(crate) fn mean_eta_t(device: &DeviceParams, park: f64, amp: f64) -> f64 {
    let band = &device.tunable;
    match device.anharmonicity_mode {
        AnharmonicityMode::Constant => band.anharmonicity_at(park, AnharmonicityMode::Constant),
        AnharmonicityMode::Interpolated => {
            let n = 512;
            (0..n)
                .map(|j| {
                    let x = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    band.anharmonicity_at(park + amp * x.cos(), AnharmonicityMode::Interpolated)
                })
                .sum::<f64>()
                / n as f64
        }
    }
}

/// `<initial| a_F^dag a_T |partner>` on the truncated ladder: 1 for iSWAP,
/// sqrt(2) for the CZ transitions.
pub fn ladder_factor(transition: Transition, space: &HilbertSpace) -> f64 {
    let a = space.annihilation_f().adjoint() * space.annihilation_t();
    let (i, j) = transition.states(space);
    // exactly one of the two orderings is non-zero
    a[(i, j)].norm().max(a[(j, i)].norm())
}

/// Bessel-weighted sideband coupling `g_eff = g <a|a_F^dag a_T|b> J_n(omega_tilde / 2 omega_p)`
/// and interaction phase `beta_n = x sin(2 theta_p) + (2 theta_p + pi) n`.
pub fn effective_coupling(
    device: &DeviceParams,
    pulse: &FluxPulse,
    transition: Transition,
    harmonic_n: i32,
) -> Result<EffectiveCoupling> {
    if !is_turning_point(pulse.park) {
        return Err(Error::InvalidParameter(
            "effective sideband couplings require parking at a band turning point".into(),
        ));
    }
    if !(pulse.omega_p > 0.0) {
        return Err(Error::InvalidParameter("modulation frequency must be positive".into()));
    }
    let space = HilbertSpace::new(3, 3)?;
    let m = device.tunable.modulated(pulse.park, pulse.amp, 2);
    let x = m.omega_tilde / (2.0 * pulse.omega_p);
    let factor = ladder_factor(transition, &space);
    let g_eff = device.g * factor * bessel_j(harmonic_n, x);
    let beta_n = x * (2.0 * pulse.theta_p).sin() + (2.0 * pulse.theta_p + std::f64::consts::PI) * harmonic_n as f64;
    let delta = m.omega_bar - device.fixed.omega;
    let rhs = transition.resonance_rhs(delta, device.fixed.eta, mean_eta_t(device, pulse.park, pulse.amp));
    Ok(EffectiveCoupling {
        transition,
        harmonic_n,
        g_eff,
        beta_n,
        detuning_residual: 2.0 * harmonic_n as f64 * pulse.omega_p - rhs,
        bessel_argument: x,
    })
}

/// Interaction-frame sideband Hamiltonian, truncated to `|n| <= n_max`.
///
/// Every non-zero element `<a| a_F^dag a_T |b>` of the truncated ladder
/// contributes `g <a|..|b> sum_n J_n(x) exp(i(2 n omega_p t + beta_n - delta_ab t)) |a><b| + h.c.`
/// where `delta_ab` is the Bessel-averaged transition detuning. The envelope
/// is ignored: the modulation is treated as constant over the pulse.
pub fn rwa_effective_hamiltonian(
    device: &DeviceParams,
    pulse: &FluxPulse,
    space: &HilbertSpace,
    n_max: usize,
) -> Result<TimeDependentHamiltonian> {
    check_space(device, space)?;
    if !is_turning_point(pulse.park) {
        return Err(Error::InvalidParameter(
            "the sideband Hamiltonian requires parking at a band turning point".into(),
        ));
    }
    let m = device.tunable.modulated(pulse.park, pulse.amp, 2);
    let x = if pulse.amp == 0.0 { 0.0 } else { m.omega_tilde / (2.0 * pulse.omega_p) };
    let delta = m.omega_bar - device.fixed.omega;
    let eta_f = device.fixed.eta;
    let eta_t = mean_eta_t(device, pulse.park, pulse.amp);

    let mut warnings = device.warnings();
    let min_freq = device.fixed.omega.min(m.omega_bar);
    if 2.0 * pulse.omega_p > 0.2 * min_freq {
        warnings.push(format!(
            "2 omega_p / 2pi = {:.1} MHz is not well below the qubit frequencies; the sideband picture may be inaccurate",
            angular_to_mhz(2.0 * pulse.omega_p)
        ));
    }

    let n_range: Vec<i32> = if x == 0.0 { vec![0] } else { (-(n_max as i32)..=n_max as i32).collect() };
    let sidebands: Vec<(f64, f64)> = n_range
        .iter()
        .map(|&n| {
            let beta = x * (2.0 * pulse.theta_p).sin() + (2.0 * pulse.theta_p + std::f64::consts::PI) * n as f64;
            (bessel_j(n, x), beta)
        })
        .collect();
    let omega_p = pulse.omega_p;

    let exchange = space.annihilation_f().adjoint() * space.annihilation_t();
    let dim = space.dim();
    let mut drive_terms = Vec::new();
    for a in 0..dim {
        for b in 0..dim {
            let amp = exchange[(a, b)].re;
            if amp == 0.0 {
                continue;
            }
            let (nf, _) = space.levels_of(b);
            let (_, nt_a) = space.levels_of(a);
            // b = (nf, nt_a + 1) -> a = (nf + 1, nt_a)
            let detuning = delta + eta_f * nf as f64 - eta_t * nt_a as f64;
            let strength = device.g * amp;
            let sb = sidebands.clone();
            let ns = n_range.clone();
            let phase_sum = move |t: f64| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (&n, &(j, beta)) in ns.iter().zip(&sb) {
                    let phi = 2.0 * n as f64 * omega_p * t + beta - detuning * t;
                    re += j * phi.cos();
                    im += j * phi.sin();
                }
                (strength * re, strength * im)
            };
            let phase_sum = Arc::new(phase_sum);
            let mut x_op = CMat::zeros(dim, dim);
            x_op[(a, b)] = ONE;
            x_op[(b, a)] = ONE;
            let mut y_op = CMat::zeros(dim, dim);
            y_op[(a, b)] = I;
            y_op[(b, a)] = -I;
            let label = format!("|{}><{}|", space.basis_label(a), space.basis_label(b));
            let re_part = phase_sum.clone();
            drive_terms.push(DriveTerm {
                label: format!("{label} re"),
                op: x_op,
                coeff: Arc::new(move |t| re_part(t).0),
            });
            drive_terms.push(DriveTerm {
                label: format!("{label} im"),
                op: y_op,
                coeff: Arc::new(move |t| phase_sum(t).1),
            });
        }
    }

    Ok(TimeDependentHamiltonian {
        space: *space,
        static_part: CMat::from_element(dim, dim, ZERO),
        drive_terms,
        frame: Frame::Interaction,
        warnings,
    })
}

/// Writes `m` as row-major little-endian `(re, im)` f64 pairs.
pub fn write_matrix_binary<W: Write>(m: &CMat, mut out: W) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            let z = m[(r, col)];
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_binary(bytes: &[u8], rows: usize, cols: usize) -> Result<CMat> {
    if bytes.len() != rows * cols * 16 {
        return Err(Error::DimensionMismatch { expected: rows * cols * 16, found: bytes.len() });
    }
    let f = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    Ok(CMat::from_fn(rows, cols, |r, col| {
        let k = 2 * (r * cols + col);
        c(f(k), f(k + 1))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Envelope;
    use crate::linalg::is_hermitian;
    use crate::units::mhz_to_angular;
    use proptest::prelude::*;

    fn pulse(amp: f64, f_mhz: f64) -> FluxPulse {
        FluxPulse {
            park: 0.0,
            amp,
            omega_p: mhz_to_angular(f_mhz),
            theta_p: 0.0,
            duration: 200e-9,
            risetime: 0.0,
            envelope: Envelope::FlatTopCosineEdges,
        }
    }

    #[test]
    fn static_energies_are_additive() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let h = build_duffing_hamiltonian(&d, &s, &pulse(0.0, 100.0), HamiltonianOptions::default()).unwrap();
        assert_eq!(h.dim(), 9);
        assert!(h.is_time_independent());
        let e11 = h.static_part[(s.index(1, 1), s.index(1, 1))].re;
        let e00 = h.static_part[(s.index(0, 0), s.index(0, 0))].re;
        let expected = d.fixed.omega + d.tunable.frequency(0.0);
        assert!((e11 - e00 - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn static_single_excitation_gap_is_detuning() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let h = build_duffing_hamiltonian(&d, &s, &pulse(0.0, 100.0), HamiltonianOptions::default()).unwrap();
        let sub = CMat::from_fn(2, 2, |r, col| {
            let idx = [s.index(1, 0), s.index(0, 1)];
            h.static_part[(idx[r], idx[col])]
        });
        let (vals, _) = crate::linalg::hermitian_eigen(&sub);
        let gap = vals[0] - vals[1];
        let delta = d.tunable.frequency(0.0) - d.fixed.omega;
        let hybridised = (delta * delta + 4.0 * d.g * d.g).sqrt();
        assert!((gap - hybridised).abs() < 1e-6 * gap);
        assert!((gap - delta).abs() < 2.0 * d.g * d.g / delta + 1.0);
    }

    #[test]
    fn all_generated_matrices_are_hermitian() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let p = pulse(0.3, 120.0);
        let opts = HamiltonianOptions { counter_rotating: true, time_offset: 3e-9 };
        for h in [
            build_duffing_hamiltonian(&d, &s, &p, opts).unwrap(),
            build_rotating_hamiltonian(&d, &s, &p, opts).unwrap(),
            rwa_effective_hamiltonian(&d, &p, &s, 3).unwrap(),
        ] {
            assert!(is_hermitian(&h.static_part, 1e-12));
            for t in &h.drive_terms {
                assert!(is_hermitian(&t.op, 1e-12), "{}", t.label);
            }
            assert!(is_hermitian(&h.at(17e-9), 1e-12));
        }
    }

    #[test]
    fn waveform_matches_fourier_reconstruction() {
        // Table I iSWAP operating point
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let p = pulse(0.317, 122.0);
        let h = build_duffing_hamiltonian(&d, &s, &p, HamiltonianOptions::default()).unwrap();
        let m = d.tunable.modulated(0.0, 0.317, 40);
        let omega_t0 = d.tunable.frequency(0.0);
        let n = 2000;
        let mut sq = 0.0;
        for k in 0..n {
            let t = p.duration * k as f64 / n as f64;
            let from_h = omega_t0 + (h.drive_terms[0].coeff)(t);
            let direct = d.tunable.frequency(p.flux_at(t));
            assert!((from_h - direct).abs() < 1e-3);
            let series = m.reconstruct(p.omega_p * t + p.theta_p);
            sq += (series - direct).powi(2);
        }
        let rms_hz = (sq / n as f64).sqrt() / (2.0 * std::f64::consts::PI);
        assert!(rms_hz < 1e3, "rms {rms_hz} Hz");
    }

    #[test]
    fn coupling_vanishes_without_modulation() {
        let d = DeviceParams::paper();
        for tr in Transition::ALL {
            let e = effective_coupling(&d, &pulse(0.0, 300.0), tr, 1).unwrap();
            assert_eq!(e.g_eff, 0.0);
        }
    }

    #[test]
    fn coupling_at_bessel_optimum() {
        let d = DeviceParams::paper();
        // choose omega_p so that |omega_tilde| / (2 omega_p) = 1.84
        let amp = 0.3;
        let wt = d.tunable.modulated(0.0, amp, 2).omega_tilde.abs();
        let mut p = pulse(amp, 1.0);
        p.omega_p = wt / (2.0 * 1.84);
        let e = effective_coupling(&d, &p, Transition::Iswap, 1).unwrap();
        assert!((e.g_eff.abs() / d.g - 0.582).abs() < 1e-3);
        let cz = effective_coupling(&d, &p, Transition::Cz02, 1).unwrap();
        assert!((cz.g_eff / e.g_eff - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn beta_at_zero_phase() {
        let d = DeviceParams::paper();
        let e = effective_coupling(&d, &pulse(0.2, 150.0), Transition::Iswap, 1).unwrap();
        assert!((e.beta_n - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn off_turning_point_is_rejected() {
        let d = DeviceParams::paper();
        let mut p = pulse(0.2, 150.0);
        p.park = 0.1;
        assert!(effective_coupling(&d, &p, Transition::Iswap, 1).is_err());
    }

    #[test]
    fn cz02_term_is_stationary_at_table_point() {
        // CZ02 at 0.245 flux quanta and 112 MHz: 2 omega_p = Delta - eta_T
        let d = DeviceParams::paper();
        let e = effective_coupling(&d, &pulse(0.245, 112.0), Transition::Cz02, 1).unwrap();
        let residual_mhz = angular_to_mhz(e.detuning_residual);
        assert!(residual_mhz.abs() < 1.0, "{residual_mhz}");
    }

    #[test]
    fn rwa_unmodulated_limit_is_static_exchange() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let h = rwa_effective_hamiltonian(&d, &pulse(0.0, 300.0), &s, 3).unwrap();
        let (a, b) = (s.index(1, 0), s.index(0, 1));
        let m = h.at(0.0);
        assert!((m[(a, b)].re - d.g).abs() < 1e-9);
        let delta = d.tunable.frequency(0.0) - d.fixed.omega;
        let t = 0.37e-9;
        let m = h.at(t);
        let expected = num_complex::Complex64::from_polar(d.g, -delta * t);
        assert!((m[(a, b)] - expected).norm() < 1e-6 * d.g);
    }

    #[test]
    fn rwa_has_three_transition_families() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let h = rwa_effective_hamiltonian(&d, &pulse(0.245, 112.0), &s, 3).unwrap();
        let labels: Vec<_> = h.drive_terms.iter().map(|t| t.label.clone()).collect();
        for want in ["|10><01| re", "|20><11| re", "|11><02| re"] {
            assert!(labels.iter().any(|l| l == want), "{labels:?}");
        }
    }

    #[test]
    fn ladder_factors() {
        let s = HilbertSpace::new(3, 3).unwrap();
        assert!((ladder_factor(Transition::Iswap, &s) - 1.0).abs() < 1e-15);
        assert!((ladder_factor(Transition::Cz02, &s) - 2f64.sqrt()).abs() < 1e-15);
        assert!((ladder_factor(Transition::Cz20, &s) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn binary_export_round_trip() {
        let d = DeviceParams::paper();
        let s = HilbertSpace::for_device(&d).unwrap();
        let h = build_rotating_hamiltonian(&d, &s, &pulse(0.2, 150.0), HamiltonianOptions::default()).unwrap();
        let m = h.at(5e-9);
        let mut buf = Vec::new();
        write_matrix_binary(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 81 * 16);
        let back = read_matrix_binary(&buf, 9, 9).unwrap();
        assert_eq!(back, m);
        // first element is the (0,0) real part
        assert_eq!(f64::from_le_bytes(buf[0..8].try_into().unwrap()), m[(0, 0)].re);
    }

    #[test]
    fn small_space_rejected() {
        assert!(HilbertSpace::new(2, 3).is_err());
        let d = DeviceParams::paper();
        let s = HilbertSpace::new(4, 4).unwrap();
        assert!(build_rotating_hamiltonian(&d, &s, &pulse(0.1, 100.0), HamiltonianOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn beta_shift_by_pi(theta in -3.0f64..3.0, n in -3i32..=3, amp in 0.05f64..0.35) {
            let d = DeviceParams::paper();
            let mut p = pulse(amp, 120.0);
            p.theta_p = theta;
            let b0 = effective_coupling(&d, &p, Transition::Iswap, n).unwrap().beta_n;
            p.theta_p = theta + std::f64::consts::PI;
            let b1 = effective_coupling(&d, &p, Transition::Iswap, n).unwrap().beta_n;
            let diff = (b1 - b0 - 2.0 * std::f64::consts::PI * n as f64).rem_euclid(2.0 * std::f64::consts::PI);
            prop_assert!(diff.min(2.0 * std::f64::consts::PI - diff) < 1e-9);
        }

        #[test]
        fn coupling_bounded_by_ladder(amp in 0.0f64..0.45, f in 30.0f64..500.0, n in -3i32..=3) {
            let d = DeviceParams::paper();
            let p = pulse(amp, f);
            let e = effective_coupling(&d, &p, Transition::Iswap, n).unwrap();
            prop_assert!(e.g_eff.abs() <= d.g * (1.0 + 1e-12));
            let e = effective_coupling(&d, &p, Transition::Cz20, n).unwrap();
            prop_assert!(e.g_eff.abs() <= 2f64.sqrt() * d.g * (1.0 + 1e-12));
        }
    }
}
