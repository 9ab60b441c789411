//! Integration in the interaction picture of the diagonal part of `H(t)`.
//!
//! Writing `H(t) = D(t) + V(t)` with `D` diagonal in the bare basis, the
//! state is carried as `phi = exp(i Theta(t)) psi` with `Theta = int D dt`,
//! so the integrator only sees the coupling `V` dressed with the phases
//! `exp(i (Theta_r - Theta_c))`. The phase integrals of time-dependent
//! diagonal coefficients are tabulated once per window.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::hamiltonian::{Coefficient, TimeDependentHamiltonian};
use crate::linalg::{CMat, I, ZERO};

/// Grid spacing of the phase tables, seconds.
const TABLE_STEP: f64 = 5e-12;

/// Cumulative integral of a coefficient on a uniform grid, interpolated by
/// cubic Hermite splines using the coefficient itself as the derivative.
struct PhaseTable {
    t0: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl PhaseTable {
    fn new(coeff: &Coefficient, t0: f64, t1: f64) -> Self {
        let span = (t1 - t0).max(0.0);
        let steps = ((span / TABLE_STEP).ceil() as usize).max(1);
        let h = if span > 0.0 { span / steps as f64 } else { 1.0 };
        // three-point Gauss-Legendre per cell
        let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let increments: Vec<f64> = (0..steps)
            .into_par_iter()
            .map(|k| {
                let mid = t0 + (k as f64 + 0.5) * h;
                nodes.iter().zip(&weights).map(|(x, w)| w * coeff(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
            })
            .collect();
        let mut values = Vec::with_capacity(steps + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for inc in increments {
            acc += inc;
            values.push(acc);
        }
        let slopes = (0..=steps).into_par_iter().map(|k| coeff(t0 + k as f64 * h)).collect();
        Self { t0, h, values, slopes }
    }

    fn at(&self, t: f64) -> f64 {
        let last = self.values.len() - 1;
        let x = ((t - self.t0) / self.h).max(0.0);
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return 0.0;
        }
        let s = (x - k as f64).clamp(0.0, 1.0);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.h, self.slopes[k + 1] * self.h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1
    }
}

type Sparse = Vec<(usize, usize, C64)>;

fn sparse_offdiag(m: &CMat) -> Sparse {
    let mut out = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c && m[(r, c)] != ZERO {
                out.push((r, c, m[(r, c)]));
            }
        }
    }
    out
}

fn sparse_all(m: &CMat) -> Sparse {
    let mut out = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if m[(r, c)] != ZERO {
                out.push((r, c, m[(r, c)]));
            }
        }
    }
    out
}

pub(crate) struct InteractionSystem {
    pub n: usize,
    t_start: f64,
    static_diag: Vec<f64>,
    diag_terms: Vec<(Vec<f64>, PhaseTable)>,
    static_off: Sparse,
    off_terms: Vec<(Coefficient, Sparse)>,
    /// Collapse operators, sparse.
    collapse: Vec<Sparse>,
    /// Diagonal of `sum_k L_k^dag L_k`.
    decay_diag: Vec<f64>,
}

/// Scratch buffers for one right-hand-side evaluation.
pub(crate) struct Workspace {
    theta: Vec<f64>,
    phase: Vec<C64>,
    v: Sparse,
}

impl InteractionSystem {
    pub fn new(h: &TimeDependentHamiltonian, t_start: f64, t_end: f64, collapse: &[CMat]) -> Self {
        let n = h.dim();
        let static_diag = (0..n).map(|k| h.static_part[(k, k)].re).collect();
        let mut diag_terms = Vec::new();
        let mut off_terms = Vec::new();
        for term in &h.drive_terms {
            let diag: Vec<f64> = (0..n).map(|k| term.op[(k, k)].re).collect();
            if diag.iter().any(|d| *d != 0.0) {
                diag_terms.push((diag, PhaseTable::new(&term.coeff, t_start, t_end)));
            }
            let off = sparse_offdiag(&term.op);
            if !off.is_empty() {
                off_terms.push((term.coeff.clone(), off));
            }
        }
        let mut decay_diag = vec![0.0; n];
        for l in collapse {
            let a = l.adjoint() * l;
            for (k, d) in decay_diag.iter_mut().enumerate() {
                *d += a[(k, k)].re;
            }
            debug_assert!(sparse_offdiag(&a).iter().all(|e| e.2.norm() < 1e-12));
        }
        Self {
            n,
            t_start,
            static_diag,
            diag_terms,
            static_off: sparse_offdiag(&h.static_part),
            off_terms,
            collapse: collapse.iter().map(sparse_all).collect(),
            decay_diag,
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace { theta: vec![0.0; self.n], phase: vec![ZERO; self.n], v: Vec::new() }
    }

    /// Accumulated diagonal phases at `t`.
    pub fn theta(&self, t: f64, out: &mut [f64]) {
        let dt = t - self.t_start;
        for (o, d) in out.iter_mut().zip(&self.static_diag) {
            *o = d * dt;
        }
        for (diag, table) in &self.diag_terms {
            let v = table.at(t);
            for (o, d) in out.iter_mut().zip(diag) {
                *o += d * v;
            }
        }
    }

    fn prepare(&self, t: f64, ws: &mut Workspace) {
        self.theta(t, &mut ws.theta);
        for (p, th) in ws.phase.iter_mut().zip(&ws.theta) {
            *p = C64::from_polar(1.0, *th);
        }
        ws.v.clear();
        for &(r, c, val) in &self.static_off {
            ws.v.push((r, c, val * ws.phase[r] * ws.phase[c].conj()));
        }
        for (coeff, entries) in &self.off_terms {
            let f = coeff(t);
            if f == 0.0 {
                continue;
            }
            for &(r, c, val) in entries {
                ws.v.push((r, c, val * f * ws.phase[r] * ws.phase[c].conj()));
            }
        }
    }

    /// `dy = -i V_I(t) y` for `k` row-major columns.
    pub fn schrodinger(&self, t: f64, y: &[C64], dy: &mut [C64], k: usize, ws: &mut Workspace) {
        self.prepare(t, ws);
        dy.iter_mut().for_each(|z| *z = ZERO);
        for &(r, c, v) in &ws.v {
            let f = -I * v;
            let (src, dst) = (c * k, r * k);
            for j in 0..k {
                dy[dst + j] += f * y[src + j];
            }
        }
    }

    /// Lindblad generator on a row-major interaction-frame density matrix.
    pub fn lindblad(&self, t: f64, rho: &[C64], drho: &mut [C64], ws: &mut Workspace) {
        let n = self.n;
        self.prepare(t, ws);
        // -1/2 {A, rho}
        for r in 0..n {
            for c in 0..n {
                drho[r * n + c] = rho[r * n + c] * (-0.5 * (self.decay_diag[r] + self.decay_diag[c]));
            }
        }
        // -i (V rho - rho V)
        for &(r, c, v) in &ws.v {
            let f = -I * v;
            for j in 0..n {
                drho[r * n + j] += f * rho[c * n + j];
                drho[j * n + c] -= f * rho[j * n + r];
            }
        }
        // L rho L^dag with L_I = e^{i Theta} L e^{-i Theta}
        for l in &self.collapse {
            for &(r, j, a) in l {
                let a = a * ws.phase[r] * ws.phase[j].conj();
                for &(k, m, b) in l {
                    let b = (b * ws.phase[k] * ws.phase[m].conj()).conj();
                    drho[r * n + k] += a * rho[j * n + m] * b;
                }
            }
        }
    }

    /// Interaction-frame to bare-frame state: `psi = e^{-i Theta} phi`.
    pub fn to_frame_columns(&self, t: f64, y: &mut [C64], k: usize) {
        let mut theta = vec![0.0; self.n];
        self.theta(t, &mut theta);
        for (r, th) in theta.iter().enumerate() {
            let p = C64::from_polar(1.0, -th);
            for j in 0..k {
                y[r * k + j] *= p;
            }
        }
    }

    /// `rho = e^{-i Theta} rho_I e^{i Theta}`.
    pub fn to_frame_density(&self, t: f64, rho: &mut [C64]) {
        let n = self.n;
        let mut theta = vec![0.0; n];
        self.theta(t, &mut theta);
        for r in 0..n {
            for c in 0..n {
                rho[r * n + c] *= C64::from_polar(1.0, theta[c] - theta[r]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn phase_table_integrates_oscillation() {
        let w = 2.0 * std::f64::consts::PI * 500e6;
        let coeff: Coefficient = Arc::new(move |t| 3e9 * (w * t).cos() + 1e8);
        let table = PhaseTable::new(&coeff, 0.0, 50e-9);
        for &t in &[0.0, 1.234e-9, 17.77e-9, 50e-9] {
            let exact = 3e9 / w * (w * t).sin() + 1e8 * t;
            assert!((table.at(t) - exact).abs() < 1e-9, "{t}: {} vs {exact}", table.at(t));
        }
    }
}
