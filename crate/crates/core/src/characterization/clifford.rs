//! The two-qubit Clifford group (11520 elements modulo phase), enumerated by
//! the usual class decomposition and compiled to local layers plus the
//! native iSWAP and CZ.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::superop::gates;
use crate::linalg::{c, kron, CMat, I, ONE, ZERO};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Native {
    Iswap,
    Cz,
}

/// One step of a compiled Clifford.
#[derive(Debug, Clone, PartialEq)]
pub enum NativeOp {
    /// Ideal simultaneous single-qubit gates, `a (x) b` (fixed qubit first).
    Local(CMat),
    Entangler(Native),
}

#[derive(Debug, Clone)]
pub struct Clifford {
    pub unitary: CMat,
    /// Applied first to last.
    pub ops: Vec<NativeOp>,
}

/// Phase-insensitive lookup key.
fn key(u: &CMat) -> Vec<i64> {
    let pivot = u.iter().find(|z| z.norm() > 1e-3).copied().unwrap_or(ONE);
    let phase = pivot.conj() / pivot.norm();
    u.iter()
        .flat_map(|z| {
            let w = z * phase;
            [(w.re * 1e6).round() as i64, (w.im * 1e6).round() as i64]
        })
        .collect()
}

fn single_qubit_cliffords() -> Vec<CMat> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = CMat::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]);
    let sg = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, I]);
    let mut out = vec![CMat::identity(2, 2)];
    let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
    seen.insert(key(&out[0]), 0);
    let mut k = 0;
    while k < out.len() {
        for g in [&h, &sg] {
            let next = g * &out[k];
            if let Entry::Vacant(e) = seen.entry(key(&next)) {
                e.insert(out.len());
                out.push(next);
            }
        }
        k += 1;
    }
    out
}

pub struct CliffordGroup {
    pub elements: Vec<Clifford>,
    index: HashMap<Vec<i64>, usize>,
}

pub const TWO_QUBIT_CLIFFORDS: usize = 11520;

impl CliffordGroup {
    pub fn two_qubit() -> Self {
        let c1 = single_qubit_cliffords();
        assert_eq!(c1.len(), 24);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = CMat::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]);
        let sdg = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -I]);
        // S1 = {I, V, V^2}, V cycling X -> Y -> Z
        let v = CMat::from_row_slice(2, 2, &[c(0.5, -0.5), c(-0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5)]);
        let s1 = [CMat::identity(2, 2), v.clone(), &v * &v];

        let mut elements = Vec::with_capacity(TWO_QUBIT_CLIFFORDS);
        let mut push = |ops: Vec<NativeOp>| {
            let mut u = CMat::identity(4, 4);
            for op in &ops {
                u = match op {
                    NativeOp::Local(m) => m * u,
                    NativeOp::Entangler(Native::Iswap) => gates::iswap() * u,
                    NativeOp::Entangler(Native::Cz) => gates::cz() * u,
                };
            }
            elements.push(Clifford { unitary: u, ops });
        };
        for a in &c1 {
            for b in &c1 {
                let last = NativeOp::Local(kron(a, b));
                push(vec![last.clone()]);
                for p in &s1 {
                    for q in &s1 {
                        // CNOT-like: (a (x) b) CNOT (p (x) q), CNOT = (I (x) H) CZ (I (x) H)
                        push(vec![
                            NativeOp::Local(kron(p, &(&h * q))),
                            NativeOp::Entangler(Native::Cz),
                            NativeOp::Local(kron(a, &(b * &h))),
                        ]);
                        push(vec![NativeOp::Local(kron(p, q)), NativeOp::Entangler(Native::Iswap), last.clone()]);
                    }
                }
                // SWAP-like: SWAP = iSWAP CZ (S^dag (x) S^dag)
                push(vec![
                    NativeOp::Local(kron(&sdg, &sdg)),
                    NativeOp::Entangler(Native::Cz),
                    NativeOp::Entangler(Native::Iswap),
                    last,
                ]);
            }
        }
        let mut index = HashMap::with_capacity(elements.len());
        for (k, e) in elements.iter().enumerate() {
            index.insert(key(&e.unitary), k);
        }
        assert_eq!(index.len(), TWO_QUBIT_CLIFFORDS, "Clifford enumeration produced duplicates");
        Self { elements, index }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Index of the element equal to `u` up to a global phase.
    pub fn find(&self, u: &CMat) -> Option<usize> {
        self.index.get(&key(u)).copied()
    }

    /// Index of `elements[second] * elements[first]`.
    pub fn compose(&self, first: usize, second: usize) -> usize {
        let u = &self.elements[second].unitary * &self.elements[first].unitary;
        self.find(&u).expect("the Clifford group is closed")
    }

    pub fn inverse(&self, k: usize) -> usize {
        self.find(&self.elements[k].unitary.adjoint()).expect("the Clifford group is closed")
    }

    pub fn index_of(&self, u: &CMat) -> Result<usize> {
        self.find(u).ok_or_else(|| Error::InvalidParameter("unitary is not a two-qubit Clifford".into()))
    }
}
