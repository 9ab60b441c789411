//! Pulse-level simulation and characterization of parametrically activated
//! entangling gates between a flux-tunable and a fixed-frequency transmon.
//!
//! The crate is organised bottom-up:
//!
//! * [`device`] - transmon parameters, the flux band and the modulation-averaged frequency.
//! * [`hamiltonian`] - driven Duffing Hamiltonian and the Bessel-sideband effective model.
//! * [`dynamics`] - Schrodinger / Lindblad integration over flux pulses.
//! * [`calibration`] - resonance prediction, chevron scans, gate calibration and phase bookkeeping.
//! * [`characterization`] - process tomography, fidelity bounds and interleaved benchmarking.
//!
//! All frequencies inside the library are angular (rad/s) and all times are in
//! seconds. File formats and the command line use MHz (meaning omega / 2 pi).

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod calibration;
pub mod characterization;
pub mod device;
pub mod dynamics;
mod error;
mod frame;
pub mod hamiltonian;
pub mod linalg;
pub mod ode;
pub mod units;

pub use error::{Error, Result};
