//! Dense complex linear-algebra helpers shared by the simulator and the
//! characterization code.
//!
//! Vectorisation is column-stacking throughout: `vec(A X B) = (B^T (x) A) vec(X)`,
//! so a unitary channel `X -> U X U^dag` has Liouville matrix `conj(U) (x) U`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// `|| H - H^dag || <= rel * ||H||` (Frobenius). The zero matrix is Hermitian.
pub fn is_hermitian(m: &CMat, rel: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let norm = frobenius(m);
    let diff = frobenius(&(m - m.adjoint()));
    diff <= rel * norm.max(f64::MIN_POSITIVE)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in descending
/// order. The input is symmetrised first so tiny anti-Hermitian noise does
/// not leak into the result.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

pub fn min_eigenvalue_hermitian(m: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(m);
    vals.last().copied().unwrap_or(0.0)
}

/// Column-stacked vectorisation.
pub fn vec_cols(m: &CMat) -> Vec<C64> {
    m.as_slice().to_vec()
}

pub fn unvec_cols(v: &[C64], n: usize) -> CMat {
    CMat::from_column_slice(n, n, v)
}

pub fn unitary_to_liouville(u: &CMat) -> CMat {
    kron(&u.map(|z| z.conj()), u)
}

/// Average gate fidelity of the (possibly non-unitary, e.g. subspace-projected)
/// operator `m` with respect to the unitary `u`:
/// `(|tr(u^dag m)|^2 + tr(m^dag m)) / (d (d + 1))`.
pub fn average_fidelity_operator(m: &CMat, u: &CMat) -> f64 {
    let d = u.nrows() as f64;
    let overlap = trace(&(u.adjoint() * m)).norm_sqr();
    let norm = trace(&(m.adjoint() * m)).re;
    (overlap + norm) / (d * (d + 1.0))
}

/// Unitary polar factor `W V^dag` of `m = W S V^dag`.
pub fn polar_unitary(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let w = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    w * vt
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Rotate `ket` by a global phase so that its largest-magnitude component is
/// real and positive.
pub fn fix_global_phase(ket: &mut [C64]) {
    if let Some(big) = ket.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())) {
        if big.norm() > 0.0 {
            let phase = big.conj() / big.norm();
            for z in ket.iter_mut() {
                *z *= phase;
            }
        }
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `exp(i phi)`.
pub fn cis(phi: f64) -> C64 {
    C64::from_polar(1.0, phi)
}
