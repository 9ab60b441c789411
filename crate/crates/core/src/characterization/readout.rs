use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Joint two-qubit assignment matrix on outcomes `00, 01, 10, 11` (fixed
/// qubit first). `matrix[(reported, true)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub matrix: DMatrix<f64>,
}

impl ConfusionMatrix {
    pub fn perfect() -> Self {
        Self { matrix: DMatrix::identity(4, 4) }
    }

    /// Independent symmetric readout with the given assignment fidelities.
    pub fn from_fidelities(fixed: f64, tunable: f64) -> Result<Self> {
        for f in [fixed, tunable] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!("assignment fidelity {f} outside [0, 1]")));
            }
        }
        let single = |f: f64| DMatrix::from_row_slice(2, 2, &[f, 1.0 - f, 1.0 - f, f]);
        Self::from_single_qubit(&single(fixed), &single(tunable))
    }

    pub fn from_single_qubit(fixed: &DMatrix<f64>, tunable: &DMatrix<f64>) -> Result<Self> {
        let c = Self { matrix: fixed.kronecker(tunable) };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.nrows() != 4 || self.matrix.ncols() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, found: self.matrix.nrows() });
        }
        if self.matrix.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("confusion entries must lie in [0, 1]".into()));
        }
        for c in 0..4 {
            let s: f64 = self.matrix.column(c).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("confusion column {c} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Reported-outcome distribution for true-outcome probabilities `p`.
    pub fn apply(&self, p: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|t| self.matrix[(r, t)] * p[t]).sum();
        }
        out
    }
}
