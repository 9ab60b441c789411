//! Channels on the two-qubit computational subspace.
//!
//! Liouville matrices are column-stacked (see `linalg`). The Choi matrix is
//! `J = sum_ij |i><j| (x) E(|i><j|)`, input factor first, so a Kraus operator
//! `K` contributes the vector `v[i d + a] = K[a, i]`.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::linalg::{
    fix_global_phase, hermitian_eigen, identity, polar_unitary, singular_values, trace, unitary_to_liouville,
    unvec_cols, vec_cols, CMat, ONE, ZERO,
};
use crate::{Error, Result};

/// Eigenvalues of the Choi matrix above `-CP_TOL` count as positive.
pub const CP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superoperator {
    pub dim: usize,
    /// `dim^2 x dim^2`, column-stacked.
    pub liouville: CMat,
    /// Set when the map was constructed or reconstructed as trace preserving.
    pub tp: bool,
    /// Set when the map was constructed or reconstructed as completely positive.
    pub cp: bool,
}

impl Superoperator {
    pub fn from_liouville(liouville: CMat, tp: bool, cp: bool) -> Result<Self> {
        let n = liouville.nrows();
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n || liouville.ncols() != n {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: liouville.ncols() });
        }
        Ok(Self { dim, liouville, tp, cp })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, liouville: identity(dim * dim), tp: true, cp: true }
    }

    pub fn from_unitary(u: &CMat) -> Self {
        Self { dim: u.nrows(), liouville: unitary_to_liouville(u), tp: true, cp: true }
    }

    pub fn from_kraus(ops: &[CMat]) -> Result<Self> {
        let dim = ops.first().map(|k| k.nrows()).ok_or_else(|| Error::InvalidParameter("no Kraus operators".into()))?;
        let mut l = CMat::zeros(dim * dim, dim * dim);
        for k in ops {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: k.nrows() });
            }
            l += unitary_to_liouville(k);
        }
        let mut s = Self { dim, liouville: l, tp: false, cp: true };
        s.tp = s.trace_defect() < 1e-10;
        Ok(s)
    }

    /// `rho -> p rho + (1 - p) tr(rho) I / d`.
    pub fn depolarizing(dim: usize, p: f64) -> Self {
        let mut l = identity(dim * dim).scale(p);
        let id = vec_cols(&identity(dim));
        for r in 0..dim * dim {
            for c in 0..dim * dim {
                l[(r, c)] += id[r] * id[c] * ((1.0 - p) / dim as f64);
            }
        }
        Self { dim, liouville: l, tp: true, cp: (-1.0 / (dim * dim - 1) as f64..=1.0).contains(&p) }
    }

    /// Depolarizing channel with average gate infidelity `r`.
    pub fn depolarizing_with_infidelity(dim: usize, r: f64) -> Self {
        let d = dim as f64;
        Self::depolarizing(dim, 1.0 - d * r / (d - 1.0))
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            liouville: &self.liouville * &first.liouville,
            tp: self.tp && first.tp,
            cp: self.cp && first.cp,
        }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let v = &self.liouville * DVector::from_vec(vec_cols(rho));
        unvec_cols(v.as_slice(), self.dim)
    }

    pub fn choi(&self) -> CMat {
        let d = self.dim;
        let mut j = CMat::zeros(d * d, d * d);
        for i in 0..d {
            for jj in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        j[(i * d + a, jj * d + b)] = self.liouville[(b * d + a, jj * d + i)];
                    }
                }
            }
        }
        j
    }

    pub fn from_choi(choi: &CMat, tp: bool, cp: bool) -> Result<Self> {
        let n = choi.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if d * d != n {
            return Err(Error::DimensionMismatch { expected: d * d, found: n });
        }
        let mut l = CMat::zeros(n, n);
        for i in 0..d {
            for jj in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        l[(b * d + a, jj * d + i)] = choi[(i * d + a, jj * d + b)];
                    }
                }
            }
        }
        Ok(Self { dim: d, liouville: l, tp, cp })
    }

    pub fn min_choi_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.choi()).0.last().copied().unwrap_or(0.0)
    }

    /// Largest deviation of `tr E(|i><j|)` from `delta_ij`.
    pub fn trace_defect(&self) -> f64 {
        crate::dynamics::trace_defect(&self.liouville, self.dim)
    }

    /// Canonical Kraus operators, ordered by decreasing weight. Negative
    /// Choi eigenvalues (numerical noise on a CP map) are dropped.
    pub fn kraus(&self) -> Vec<(f64, CMat)> {
        let d = self.dim;
        let (vals, vecs) = hermitian_eigen(&self.choi());
        vals.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, &v)| (v, kraus_from_vector(vecs.column(k).as_slice(), v, d)))
            .collect()
    }

    /// Completes a trace-decreasing map by returning the lost population as
    /// the maximally mixed state: `E'(rho) = E(rho) + tr(Q rho) I / d` with
    /// `Q = I - E^dag(I)`, which is CP whenever `E` is CP and trace
    /// non-increasing.
    pub fn complete_with_mixed_loss(&self) -> Superoperator {
        let d = self.dim;
        let id = vec_cols(&identity(d));
        let mut l = self.liouville.clone();
        // <<I| L
        let lost: Vec<C64> = (0..d * d).map(|c| id[c] - (0..d * d).map(|r| id[r] * l[(r, c)]).sum::<C64>()).collect();
        for r in 0..d * d {
            for c in 0..d * d {
                l[(r, c)] += id[r] * lost[c] / d as f64;
            }
        }
        Superoperator { dim: d, liouville: l, tp: true, cp: self.cp }
    }

    /// Restricts a map on a larger space to the computational block picked
    /// out by `indices` (inputs and outputs).
    pub fn restrict(full: &CMat, indices: &[usize]) -> Result<Self> {
        let n = (full.nrows() as f64).sqrt().round() as usize;
        let k = indices.len();
        let mut l = CMat::zeros(k * k, k * k);
        for (jo, &bo) in indices.iter().enumerate() {
            for (io, &ao) in indices.iter().enumerate() {
                for (ji, &bi) in indices.iter().enumerate() {
                    for (ii, &ai) in indices.iter().enumerate() {
                        l[(jo * k + io, ji * k + ii)] = full[(bo * n + ao, bi * n + ai)];
                    }
                }
            }
        }
        Superoperator::from_liouville(l, false, true)
    }
}

fn kraus_from_vector(v: &[C64], weight: f64, d: usize) -> CMat {
    let s = weight.sqrt();
    CMat::from_fn(d, d, |a, i| v[i * d + a] * s)
}

/// `(tr[(U* (x) U)^dag E] + d) / (d^2 + d)`.
pub fn average_gate_fidelity(e: &Superoperator, u: &CMat) -> Result<f64> {
    if u.nrows() != e.dim {
        return Err(Error::DimensionMismatch { expected: e.dim, found: u.nrows() });
    }
    let d = e.dim as f64;
    let lu = unitary_to_liouville(u);
    let overlap = trace(&(lu.adjoint() * &e.liouville)).re;
    Ok((overlap + d) / (d * d + d))
}

/// Closest-unitary fidelity bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitarityBounds {
    /// Fidelity to the polar unitary of the leading canonical Kraus operator.
    pub interferometric: f64,
    /// `(tr S + d) / (d^2 + d)` with `S` the singular values of the
    /// Liouville matrix.
    pub procrustean: f64,
    /// The two largest Kraus weights were degenerate; the leading operator
    /// was picked by eigenvector ordering.
    pub leading_kraus_tie: bool,
    pub leading_unitary: CMat,
}

const TIE_REL: f64 = 1e-9;

pub fn unitarity_bounds(e: &Superoperator) -> Result<UnitarityBounds> {
    let d = e.dim;
    let (vals, vecs) = hermitian_eigen(&e.choi());
    let top = vals[0];
    let tied: Vec<usize> =
        (0..vals.len()).filter(|&k| (top - vals[k]).abs() <= TIE_REL * top.abs().max(1e-300)).collect();
    let pick = if tied.len() == 1 {
        0
    } else {
        // lexicographic ordering of the phase-fixed eigenvectors, by
        // (re, im) component by component
        let keyed: Vec<(usize, Vec<C64>)> = tied
            .iter()
            .map(|&k| {
                let mut v = vecs.column(k).iter().copied().collect::<Vec<_>>();
                fix_global_phase(&mut v);
                (k, v)
            })
            .collect();
        keyed
            .iter()
            .max_by(|a, b| {
                for (x, y) in a.1.iter().zip(&b.1) {
                    let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
                    if o != std::cmp::Ordering::Equal {
                        return o;
                    }
                }
                std::cmp::Ordering::Equal
            })
            .map(|k| k.0)
            .unwrap_or(0)
    };
    let k0 = kraus_from_vector(vecs.column(pick).as_slice(), top.max(0.0), d);
    let u0 = if k0.iter().all(|z| *z == ZERO) { identity(d) } else { polar_unitary(&k0) };
    let s: f64 = singular_values(&e.liouville).iter().sum();
    let df = d as f64;
    Ok(UnitarityBounds {
        interferometric: average_gate_fidelity(e, &u0)?,
        procrustean: (s + df) / (df * df + df),
        leading_kraus_tie: tied.len() > 1,
        leading_unitary: u0,
    })
}

/// Ideal unitaries used throughout, on `|00>, |01>, |10>, |11>` with the
/// fixed qubit first.
pub mod gates {
    use super::*;
    use crate::linalg::I;

    pub fn cz() -> CMat {
        let mut m = identity(4);
        m[(3, 3)] = -ONE;
        m
    }

    pub fn iswap() -> CMat {
        let mut m = CMat::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(3, 3)] = ONE;
        m[(1, 2)] = I;
        m[(2, 1)] = I;
        m
    }

    pub fn swap() -> CMat {
        let mut m = CMat::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(1, 2)] = ONE;
        m[(2, 1)] = ONE;
        m[(3, 3)] = ONE;
        m
    }
}
