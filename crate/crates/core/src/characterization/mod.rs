//! Gate characterization from synthetic data: process tomography with a
//! readout model, closest-unitary bounds and interleaved randomized
//! benchmarking.

pub mod clifford;
pub mod rb;
pub mod readout;
pub mod superop;
pub mod tomography;

use serde::{Deserialize, Serialize};

pub use clifford::{CliffordGroup, Native, NativeOp};
pub use rb::{run_irb, DecayFit, InterleavedGate, NativeGates, RbConfig, RbExperiment, DEFAULT_LENGTHS};
pub use readout::ConfusionMatrix;
pub use superop::{average_gate_fidelity, unitarity_bounds, Superoperator, UnitarityBounds};
pub use tomography::{
    mle_process_tomography, synthesize_tomography_data, MleOptions, MleResult, TomographyData, TomographySettings,
};

use crate::calibration::GateRecipe;
use crate::device::DeviceParams;
use crate::dynamics::{subspace_channel, EvolveWindow, NoiseModel};
use crate::hamiltonian::{build_rotating_hamiltonian, HamiltonianOptions, HilbertSpace};
use crate::Result;

/// Gate channel on the computational subspace in the software frame: the
/// pulse started at `t = 0`, followed by the recipe's frame correction.
/// Population leaving the subspace is returned as the maximally mixed state
/// (see [`Superoperator::complete_with_mixed_loss`]); the lost fraction is
/// reported alongside.
pub fn simulate_gate_channel(
    device: &DeviceParams,
    recipe: &GateRecipe,
    noise: Option<&NoiseModel>,
    tol: f64,
) -> Result<(Superoperator, f64)> {
    let space = HilbertSpace::for_device(device)?;
    let h = build_rotating_hamiltonian(device, &space, &recipe.pulse, HamiltonianOptions::default())?;
    let raw = subspace_channel(&h, EvolveWindow::pulse(&recipe.pulse), noise, tol, &space.computational())?;
    let raw = Superoperator::from_liouville(raw, false, true)?;
    let corrected = Superoperator::from_unitary(&recipe.correction()).compose(&raw);
    let lost = mean_loss(&corrected);
    Ok((corrected.complete_with_mixed_loss(), lost))
}

/// Population lost from the subspace, averaged over the basis inputs.
fn mean_loss(e: &Superoperator) -> f64 {
    let d = e.dim;
    (0..d)
        .map(|i| {
            let col = i * d + i;
            1.0 - (0..d).map(|a| e.liouville[(a * d + a, col)].re).sum::<f64>()
        })
        .sum::<f64>()
        / d as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QptOutcome {
    pub reconstruction: MleResult,
    pub fidelity: f64,
    pub bounds: UnitarityBounds,
    /// Fidelity of the channel the data came from.
    pub true_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QptConfig {
    pub shots: u64,
    pub confusion: ConfusionMatrix,
    /// Use the readout model in the likelihood; otherwise the data is
    /// treated as if readout were perfect.
    pub compensate: bool,
    pub seed: u64,
    pub mle: MleOptions,
}

/// Synthesise tomography data for `channel`, reconstruct and score it
/// against `target`.
pub fn run_qpt(
    channel: &Superoperator,
    target: &nalgebra::DMatrix<num_complex::Complex64>,
    cfg: &QptConfig,
) -> Result<(TomographyData, QptOutcome)> {
    let settings = TomographySettings::standard();
    let data = synthesize_tomography_data(channel, &settings, cfg.shots, &cfg.confusion, cfg.seed)?;
    let model = if cfg.compensate { cfg.confusion.clone() } else { ConfusionMatrix::perfect() };
    let reconstruction = mle_process_tomography(&data, &model, cfg.mle)?;
    let fidelity = average_gate_fidelity(&reconstruction.channel, target)?;
    let bounds = unitarity_bounds(&reconstruction.channel)?;
    let true_fidelity = average_gate_fidelity(channel, target)?;
    Ok((data, QptOutcome { reconstruction, fidelity, bounds, true_fidelity }))
}

/// Report with Table I style row names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub gate: String,
    #[serde(rename = "QPT fidelity")]
    pub qpt_fidelity: Option<f64>,
    #[serde(rename = "IRB fidelity")]
    pub irb_fidelity: Option<f64>,
    #[serde(rename = "Clifford fidelity")]
    pub clifford_fidelity: Option<f64>,
    #[serde(rename = "unitarity bound")]
    pub unitarity_bound: Option<f64>,
    #[serde(rename = "interferometric bound")]
    pub interferometric_bound: Option<f64>,
    pub notes: Vec<String>,
}

impl FidelityReport {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.qpt_fidelity,
            self.irb_fidelity,
            self.clifford_fidelity,
            self.unitarity_bound,
            self.interferometric_bound,
        ];
        if all.iter().flatten().any(|f| !(0.0..=1.0 + 1e-9).contains(f)) {
            return Err(crate::Error::InvalidParameter("fidelities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn with_qpt(mut self, q: &QptOutcome) -> Self {
        self.qpt_fidelity = Some(q.fidelity);
        self.unitarity_bound = Some(q.bounds.procrustean);
        self.interferometric_bound = Some(q.bounds.interferometric);
        if q.bounds.leading_kraus_tie {
            self.notes.push("leading Kraus weight degenerate; tie broken by eigenvector ordering".into());
        }
        if !q.reconstruction.converged {
            self.notes.push(format!("MLE stopped after {} iterations without converging", q.reconstruction.iterations));
        }
        self
    }

    pub fn with_rb(mut self, rb: &RbExperiment) -> Self {
        self.clifford_fidelity = Some(rb.clifford_fidelity());
        self.irb_fidelity = rb.irb_fidelity();
        self
    }
}
