//! Standard and interleaved randomized benchmarking on gate-level channels.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clifford::{CliffordGroup, Native, NativeOp};
use super::superop::{gates, Superoperator};
use super::tomography::task_rng;
use crate::linalg::CMat;
use crate::{Error, Result};

/// Sequence lengths of the reference experiment.
pub const DEFAULT_LENGTHS: [usize; 8] = [2, 4, 6, 8, 16, 24, 32, 48];

/// Channels of the native entangling gates in the software frame. Local
/// gates are ideal.
#[derive(Debug, Clone)]
pub struct NativeGates {
    pub iswap: Superoperator,
    pub cz: Superoperator,
}

impl NativeGates {
    pub fn ideal() -> Self {
        Self { iswap: Superoperator::from_unitary(&gates::iswap()), cz: Superoperator::from_unitary(&gates::cz()) }
    }

    fn get(&self, g: Native) -> &Superoperator {
        match g {
            Native::Iswap => &self.iswap,
            Native::Cz => &self.cz,
        }
    }
}

/// The gate benchmarked by interleaving: its channel and its ideal unitary.
#[derive(Debug, Clone)]
pub struct InterleavedGate {
    pub name: String,
    pub channel: Superoperator,
    pub target: CMat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    /// `None` records exact survival probabilities.
    pub shots: Option<u64>,
    pub seed: u64,
    pub bootstrap_samples: usize,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            sequences_per_length: 30,
            shots: Some(1000),
            seed: 0,
            bootstrap_samples: 200,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths[0] == 0 || self.lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("RB lengths must be positive and increasing".into()));
        }
        if self.sequences_per_length == 0 {
            return Err(Error::InvalidParameter("need at least one sequence per length".into()));
        }
        if self.shots == Some(0) {
            return Err(Error::InvalidParameter("shots must be positive".into()));
        }
        Ok(())
    }
}

/// `survival = a p^m + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    /// Bootstrap-over-sequences standard deviation of `p`.
    pub p_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbExperiment {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    pub interleaved_gate: Option<String>,
    /// `[length][sequence]`
    pub reference: Vec<Vec<f64>>,
    pub interleaved: Option<Vec<Vec<f64>>>,
    pub fit_reference: DecayFit,
    pub fit_interleaved: Option<DecayFit>,
}

const D: f64 = 4.0;

impl RbExperiment {
    /// Average fidelity per reference Clifford.
    pub fn clifford_fidelity(&self) -> f64 {
        1.0 - (D - 1.0) * (1.0 - self.fit_reference.p) / D
    }

    /// `1 - (d - 1)(1 - p_int / p_ref) / d`.
    pub fn irb_fidelity(&self) -> Option<f64> {
        self.fit_interleaved.map(|f| 1.0 - (D - 1.0) * (1.0 - f.p / self.fit_reference.p) / D)
    }

    /// `length,sequence_index,survival` for the reference or interleaved set.
    pub fn write_csv<W: Write>(&self, interleaved: bool, mut out: W) -> std::io::Result<()> {
        writeln!(out, "length,sequence_index,survival")?;
        let data = if interleaved { self.interleaved.as_ref() } else { Some(&self.reference) };
        if let Some(rows) = data {
            for (m, row) in self.lengths.iter().zip(rows) {
                for (k, s) in row.iter().enumerate() {
                    writeln!(out, "{m},{k},{s:.9}")?;
                }
            }
        }
        Ok(())
    }
}

fn run_sequence(
    group: &CliffordGroup,
    natives: &NativeGates,
    interleaved: Option<&(InterleavedGate, usize)>,
    length: usize,
    rng: &mut impl Rng,
    shots: Option<u64>,
) -> f64 {
    let mut rho = CMat::zeros(4, 4);
    rho[(0, 0)] = crate::linalg::ONE;
    let mut total = group.find(&CMat::identity(4, 4)).expect("identity");
    let apply = |rho: CMat, k: usize| -> CMat {
        let mut r = rho;
        for op in &group.elements[k].ops {
            r = match op {
                NativeOp::Local(u) => u * r * u.adjoint(),
                NativeOp::Entangler(g) => natives.get(*g).apply(&r),
            };
        }
        r
    };
    for _ in 0..length {
        let k = rng.gen_range(0..group.len());
        rho = apply(rho, k);
        total = group.compose(total, k);
        if let Some((gate, gk)) = interleaved {
            rho = gate.channel.apply(&rho);
            total = group.compose(total, *gk);
        }
    }
    rho = apply(rho, group.inverse(total));
    let p = rho[(0, 0)].re.clamp(0.0, 1.0);
    match shots {
        None => p,
        Some(n) => Binomial::new(n, p).expect("p in [0, 1]").sample(rng) as f64 / n as f64,
    }
}

fn collect(
    group: &CliffordGroup,
    natives: &NativeGates,
    interleaved: Option<&(InterleavedGate, usize)>,
    cfg: &RbConfig,
    stream_base: u64,
) -> Vec<Vec<f64>> {
    let ns = cfg.sequences_per_length;
    let flat: Vec<f64> = (0..cfg.lengths.len() * ns)
        .into_par_iter()
        .map(|task| {
            let mut rng = task_rng(cfg.seed, stream_base + task as u64);
            run_sequence(group, natives, interleaved, cfg.lengths[task / ns], &mut rng, cfg.shots)
        })
        .collect();
    flat.chunks(ns).map(|c| c.to_vec()).collect()
}

/// Least squares of `y = a x + b` for fixed `p`; returns `(a, b, sse)`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let (a, b) = if sxx < 1e-24 { (my, 0.0) } else { (sxy / sxx, my - sxy / sxx * mx) };
    let sse = xs.iter().zip(ys).map(|(x, y)| (a * x + b - y).powi(2)).sum();
    (a, b, sse)
}

const P_MIN: f64 = 0.01;

/// Profile least squares over `p`: grid from 1 downwards, then
/// golden-section refinement around the best grid point. Ties keep the
/// larger `p`, so undecaying data fits `p = 1`.
fn fit_points(lengths: &[usize], data: &[Vec<f64>]) -> (f64, f64, f64) {
    let mut ms = Vec::new();
    let mut ys = Vec::new();
    for (m, row) in lengths.iter().zip(data) {
        for y in row {
            ms.push(*m as i32);
            ys.push(*y);
        }
    }
    let sse_at = |p: f64| {
        let xs: Vec<f64> = ms.iter().map(|&m| p.powi(m)).collect();
        linear_fit(&xs, &ys)
    };
    let k = 1980;
    let mut best = (f64::INFINITY, 1.0);
    for j in 0..=k {
        let p = 1.0 - (1.0 - P_MIN) * j as f64 / k as f64;
        let sse = sse_at(p).2;
        if sse < best.0 * (1.0 - 1e-12) {
            best = (sse, p);
        }
    }
    let step = (1.0 - P_MIN) / k as f64;
    let refined =
        crate::calibration::golden_min(|p| sse_at(p).2, (best.1 - step).max(P_MIN), (best.1 + step).min(1.0), 1e-12);
    let p = if sse_at(refined).2 < best.0 * (1.0 - 1e-12) { refined } else { best.1 };
    let (a, b, _) = sse_at(p);
    (a, b, p)
}

fn fit_decay(lengths: &[usize], data: &[Vec<f64>], cfg: &RbConfig, stream: u64) -> Result<DecayFit> {
    let (a, b, p) = fit_points(lengths, data);
    if p <= P_MIN + 1e-9 || (a <= 0.0 && p < 1.0) {
        return Err(Error::FitFailed(format!("no usable decay (p = {p:.4}, A = {a:.4})")));
    }
    let mut rng = task_rng(cfg.seed, stream);
    let mut ps = Vec::with_capacity(cfg.bootstrap_samples);
    for _ in 0..cfg.bootstrap_samples {
        let resampled: Vec<Vec<f64>> =
            data.iter().map(|row| (0..row.len()).map(|_| row[rng.gen_range(0..row.len())]).collect()).collect();
        ps.push(fit_points(lengths, &resampled).2);
    }
    let p_std = if ps.len() > 1 {
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        (ps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ps.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DecayFit { a, b, p, p_std })
}

/// Reference RB and, when `interleaved` is given, IRB with the same
/// configuration. Sequences draw from per-task streams of the seed.
pub fn run_irb(
    group: &CliffordGroup,
    natives: &NativeGates,
    interleaved: Option<&InterleavedGate>,
    cfg: &RbConfig,
) -> Result<RbExperiment> {
    cfg.validate()?;
    let n_tasks = (cfg.lengths.len() * cfg.sequences_per_length) as u64;
    let reference = collect(group, natives, None, cfg, 0);
    let fit_reference = fit_decay(&cfg.lengths, &reference, cfg, 2 * n_tasks)?;
    let (inter, fit_inter) = match interleaved {
        Some(g) => {
            let k = group.index_of(&g.target)?;
            let pair = (g.clone(), k);
            let data = collect(group, natives, Some(&pair), cfg, n_tasks);
            let fit = fit_decay(&cfg.lengths, &data, cfg, 2 * n_tasks + 1)?;
            (Some(data), Some(fit))
        }
        None => (None, None),
    };
    Ok(RbExperiment {
        lengths: cfg.lengths.clone(),
        sequences_per_length: cfg.sequences_per_length,
        interleaved_gate: interleaved.map(|g| g.name.clone()),
        reference,
        interleaved: inter,
        fit_reference,
        fit_interleaved: fit_inter,
    })
}
