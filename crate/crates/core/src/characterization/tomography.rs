//! Process tomography with product Pauli preparations and measurements:
//! synthetic count generation and a CP/TP-constrained maximum-likelihood
//! reconstruction with the readout model inside the likelihood.

use std::io::Write;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::readout::ConfusionMatrix;
use super::superop::Superoperator;
use crate::linalg::{c, hermitian_eigen, identity, kron, trace, vec_cols, CMat, ZERO};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrepState {
    Zero,
    One,
    Plus,
    PlusI,
}

impl PrepState {
    pub const ALL: [PrepState; 4] = [PrepState::Zero, PrepState::One, PrepState::Plus, PrepState::PlusI];

    pub fn label(&self) -> char {
        match self {
            PrepState::Zero => '0',
            PrepState::One => '1',
            PrepState::Plus => '+',
            PrepState::PlusI => 'i',
        }
    }

    fn ket(&self) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            PrepState::Zero => [c(1.0, 0.0), ZERO],
            PrepState::One => [ZERO, c(1.0, 0.0)],
            PrepState::Plus => [c(s, 0.0), c(s, 0.0)],
            PrepState::PlusI => [c(s, 0.0), c(0.0, s)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauliBasis {
    X,
    Y,
    Z,
}

impl PauliBasis {
    pub const ALL: [PauliBasis; 3] = [PauliBasis::X, PauliBasis::Y, PauliBasis::Z];

    pub fn label(&self) -> char {
        match self {
            PauliBasis::X => 'X',
            PauliBasis::Y => 'Y',
            PauliBasis::Z => 'Z',
        }
    }

    /// Eigenvector for outcome bit `b` (0 for the +1 eigenvalue).
    fn eigvec(&self, b: usize) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sign = if b == 0 { 1.0 } else { -1.0 };
        match self {
            PauliBasis::Z => PrepState::ALL[b].ket(),
            PauliBasis::X => [c(s, 0.0), c(sign * s, 0.0)],
            PauliBasis::Y => [c(s, 0.0), c(0.0, sign * s)],
        }
    }
}

fn projector(v: &[C64]) -> CMat {
    let n = v.len();
    CMat::from_fn(n, n, |r, col| v[r] * v[col].conj())
}

fn product_ket(a: [C64; 2], b: [C64; 2]) -> [C64; 4] {
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

/// Preparation and measurement settings; every preparation is measured in
/// every setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographySettings {
    pub preparations: Vec<[PrepState; 2]>,
    pub measurements: Vec<[PauliBasis; 2]>,
}

impl TomographySettings {
    /// `{0, 1, +, +i}^2` preparations and `{X, Y, Z}^2` measurements.
    pub fn standard() -> Self {
        let mut preparations = Vec::new();
        for a in PrepState::ALL {
            for b in PrepState::ALL {
                preparations.push([a, b]);
            }
        }
        let mut measurements = Vec::new();
        for a in PauliBasis::ALL {
            for b in PauliBasis::ALL {
                measurements.push([a, b]);
            }
        }
        Self { preparations, measurements }
    }

    pub fn n_settings(&self) -> usize {
        self.preparations.len() * self.measurements.len()
    }

    pub fn prep_label(&self, j: usize) -> String {
        self.preparations[j].iter().map(PrepState::label).collect()
    }

    pub fn meas_label(&self, m: usize) -> String {
        self.measurements[m].iter().map(PauliBasis::label).collect()
    }

    pub fn prep_state(&self, j: usize) -> CMat {
        let [a, b] = self.preparations[j];
        projector(&product_ket(a.ket(), b.ket()))
    }

    /// Projector for true outcome `o = 2 b_F + b_T` in setting `m`.
    pub fn outcome_projector(&self, m: usize, o: usize) -> CMat {
        let [a, b] = self.measurements[m];
        projector(&product_ket(a.eigvec(o >> 1), b.eigvec(o & 1)))
    }

    /// Both the preparations and the measurement effects must span the
    /// 16-dimensional operator space.
    pub fn validate(&self) -> Result<()> {
        if self.n_settings() < 36 {
            return Err(Error::NotInformationallyComplete(format!("{} settings, need at least 36", self.n_settings())));
        }
        let rank = |cols: Vec<Vec<C64>>| {
            let m = CMat::from_fn(16, cols.len(), |r, col| cols[col][r]);
            let sv = m.svd(false, false).singular_values;
            let top = sv.iter().cloned().fold(0.0, f64::max);
            sv.iter().filter(|s| **s > 1e-9 * top).count()
        };
        let preps = rank((0..self.preparations.len()).map(|j| vec_cols(&self.prep_state(j))).collect());
        if preps < 16 {
            return Err(Error::NotInformationallyComplete(format!("preparations span {preps} of 16 dimensions")));
        }
        let effects = rank(
            (0..self.measurements.len())
                .flat_map(|m| (0..4).map(move |o| (m, o)))
                .map(|(m, o)| vec_cols(&self.outcome_projector(m, o)))
                .collect(),
        );
        if effects < 16 {
            return Err(Error::NotInformationallyComplete(format!(
                "measurement effects span {effects} of 16 dimensions"
            )));
        }
        Ok(())
    }
}

/// Reported-outcome counts, `counts[j * n_meas + m][r]` for preparation `j`,
/// measurement `m` and reported outcome `r = 2 b_F + b_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyData {
    pub settings: TomographySettings,
    pub shots: u64,
    pub counts: Vec<[u64; 4]>,
}

pub const OUTCOME_LABELS: [&str; 4] = ["00", "01", "10", "11"];

impl TomographyData {
    /// `setting_id,prep_label,meas_label,outcome,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "setting_id,prep_label,meas_label,outcome,count")?;
        let nm = self.settings.measurements.len();
        for (id, row) in self.counts.iter().enumerate() {
            let (j, m) = (id / nm, id % nm);
            for (r, n) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{id},{},{},{},{n}",
                    self.settings.prep_label(j),
                    self.settings.meas_label(m),
                    OUTCOME_LABELS[r]
                )?;
            }
        }
        Ok(())
    }
}

/// Per-task generator: the master seed selects the key, the task index the
/// ChaCha stream, so results do not depend on scheduling.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

fn multinomial(rng: &mut ChaCha8Rng, shots: u64, p: &[f64; 4]) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut left = shots;
    let mut mass = 1.0;
    for k in 0..3 {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[k] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let n = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out[k] = n;
        left -= n;
        mass -= p[k];
    }
    out[3] = left;
    out
}

/// Reported-outcome probabilities of every setting for a channel.
pub fn setting_probabilities(
    channel: &Superoperator,
    settings: &TomographySettings,
    confusion: &ConfusionMatrix,
) -> Vec<[f64; 4]> {
    let nm = settings.measurements.len();
    (0..settings.n_settings())
        .map(|id| {
            let out = channel.apply(&settings.prep_state(id / nm));
            let mut p = [0.0; 4];
            for (o, v) in p.iter_mut().enumerate() {
                *v = trace(&(settings.outcome_projector(id % nm, o) * &out)).re.max(0.0);
            }
            let s: f64 = p.iter().sum();
            if s > 0.0 {
                p.iter_mut().for_each(|v| *v /= s);
            }
            confusion.apply(&p)
        })
        .collect()
}

/// Multinomial counts for every setting, pushed through the readout model.
pub fn synthesize_tomography_data(
    channel: &Superoperator,
    settings: &TomographySettings,
    shots: u64,
    confusion: &ConfusionMatrix,
    seed: u64,
) -> Result<TomographyData> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be positive".into()));
    }
    if channel.dim != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: channel.dim });
    }
    settings.validate()?;
    confusion.validate()?;
    let defect = channel.trace_defect();
    if defect > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "channel loses {defect:.2e} of the trace; complete it before sampling"
        )));
    }
    let probs = setting_probabilities(channel, settings, confusion);
    let counts =
        probs.par_iter().enumerate().map(|(id, p)| multinomial(&mut task_rng(seed, id as u64), shots, p)).collect();
    Ok(TomographyData { settings: settings.clone(), shots, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Constrain the reconstruction to trace-preserving maps.
    pub tp: bool,
    pub max_iterations: usize,
    /// Stop when the Frobenius change of the Choi matrix falls below this.
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tp: true, max_iterations: 20000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub channel: Superoperator,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Model {
    /// `rho_j^T`
    preps_t: Vec<CMat>,
    /// Reported-outcome effects `sum_t C[r, t] Pi_{m, t}`, indexed `m * 4 + r`.
    effects: Vec<CMat>,
    n_meas: usize,
}

impl Model {
    fn new(settings: &TomographySettings, confusion: &ConfusionMatrix) -> Self {
        let preps_t = (0..settings.preparations.len()).map(|j| settings.prep_state(j).transpose()).collect();
        let mut effects = Vec::new();
        for m in 0..settings.measurements.len() {
            let true_effects: Vec<CMat> = (0..4).map(|o| settings.outcome_projector(m, o)).collect();
            for r in 0..4 {
                let mut e = CMat::zeros(4, 4);
                for (t, pi) in true_effects.iter().enumerate() {
                    e += pi.scale(confusion.matrix[(r, t)]);
                }
                effects.push(e);
            }
        }
        Self { preps_t, effects, n_meas: settings.measurements.len() }
    }

    /// `E(rho_j)` from the input-first Choi matrix.
    fn output(&self, choi: &CMat, j: usize) -> CMat {
        let rho = self.preps_t[j].transpose();
        let mut out = CMat::zeros(4, 4);
        for i in 0..4 {
            for k in 0..4 {
                let w = rho[(i, k)];
                if w == ZERO {
                    continue;
                }
                for a in 0..4 {
                    for b in 0..4 {
                        out[(a, b)] += w * choi[(i * 4 + a, k * 4 + b)];
                    }
                }
            }
        }
        out
    }

    fn probabilities(&self, choi: &CMat) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.preps_t.len() * self.effects.len());
        for j in 0..self.preps_t.len() {
            let out = self.output(choi, j);
            for e in &self.effects {
                // tr(E out) for Hermitian E
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        s += (e[(b, a)] * out[(a, b)]).re;
                    }
                }
                p.push(s);
            }
        }
        p
    }

    fn log_likelihood(&self, counts: &[f64], p: &[f64]) -> f64 {
        counts.iter().zip(p).filter(|(n, _)| **n > 0.0).map(|(n, q)| n * q.max(1e-300).ln()).sum()
    }

    /// `R = sum_k (n_k / p_k) A_k` with `A_k = rho_j^T (x) effect`.
    fn gradient(&self, counts: &[f64], p: &[f64]) -> CMat {
        let ne = self.effects.len();
        let mut r = CMat::zeros(16, 16);
        for (j, rt) in self.preps_t.iter().enumerate() {
            let mut m = CMat::zeros(4, 4);
            for (k, e) in self.effects.iter().enumerate() {
                let idx = j * ne + k;
                if counts[idx] > 0.0 {
                    m += e.scale(counts[idx] / p[idx].max(1e-300));
                }
            }
            r += kron(rt, &m);
        }
        r
    }
}

/// `tr_out` of an input-first Choi matrix.
fn partial_trace_out(choi: &CMat) -> CMat {
    CMat::from_fn(4, 4, |i, k| (0..4).map(|a| choi[(i * 4 + a, k * 4 + a)]).sum())
}

fn inverse_sqrt(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| c(1.0 / v.max(1e-300).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

/// Rescales the input side so that `tr_out J = I`.
fn enforce_tp(choi: &CMat) -> CMat {
    let x = kron(&inverse_sqrt(&partial_trace_out(choi)), &identity(4));
    &x * choi * &x
}

fn clip_to_psd(choi: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(choi);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|v| c(v.max(0.0), 0.0))));
    &vecs * d * vecs.adjoint()
}

/// Maximum-likelihood channel from tomography counts.
///
/// Diluted fixed-point iteration on the Choi matrix, `J -> R J R`
/// followed by the trace-preservation rescaling; the dilution is halved
/// whenever a step would lower the likelihood. The readout model enters
/// through the effects, so counts are never inverted.
pub fn mle_process_tomography(
    data: &TomographyData,
    confusion: &ConfusionMatrix,
    opts: MleOptions,
) -> Result<MleResult> {
    data.settings.validate()?;
    confusion.validate()?;
    if data.counts.len() != data.settings.n_settings() {
        return Err(Error::DimensionMismatch { expected: data.settings.n_settings(), found: data.counts.len() });
    }
    let model = Model::new(&data.settings, confusion);
    debug_assert_eq!(model.n_meas * 4, model.effects.len());
    let counts: Vec<f64> = data.counts.iter().flat_map(|row| row.iter().map(|&n| n as f64)).collect();
    let total: f64 = counts.iter().sum();
    // counts are stored per (prep, meas) in the same order as the model
    let normalise = |j: CMat| if opts.tp { enforce_tp(&j) } else { j.scale(4.0 / trace(&j).re) };

    let mut choi = identity(16).scale(0.25);
    let mut p = model.probabilities(&choi);
    let mut ll = model.log_likelihood(&counts, &p);
    let mut eps = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let id = identity(16);
    while iterations < opts.max_iterations {
        iterations += 1;
        let r = model.gradient(&counts, &p).scale(4.0 / total);
        let mut accepted = None;
        for _ in 0..40 {
            let re = &id + (&r - &id).scale(eps);
            let next = normalise(&re * &choi * &re);
            let next = (&next + next.adjoint()).scale(0.5);
            let pn = model.probabilities(&next);
            let lln = model.log_likelihood(&counts, &pn);
            if lln >= ll - 1e-12 * ll.abs() {
                accepted = Some((next, pn, lln));
                break;
            }
            eps *= 0.5;
        }
        let Some((next, pn, lln)) = accepted else { break };
        let change = (&next - &choi).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        choi = next;
        p = pn;
        ll = lln;
        eps = (eps * 2.0).min(1.0);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let choi = normalise(clip_to_psd(&choi));
    let p = model.probabilities(&choi);
    let channel = Superoperator::from_choi(&choi, opts.tp, true)?;
    Ok(MleResult { log_likelihood: model.log_likelihood(&counts, &p), channel, iterations, converged })
}

/// Joint outcome distribution helper for tests and reports.
pub fn outcome_fraction(data: &TomographyData, setting: usize, outcome: usize) -> f64 {
    data.counts[setting][outcome] as f64 / data.shots as f64
}
