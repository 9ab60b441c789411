//! Adaptive Dormand-Prince 5(4) integrator for complex-valued linear ODEs,
//! with the standard fourth-order continuous extension for dense sampling.

use num_complex::Complex64 as C64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    /// Relative local error tolerance.
    pub rtol: f64,
    /// Absolute local error tolerance.
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on the step, seconds. `None` leaves it to error control.
    pub h_max: Option<f64>,
    pub h_init: Option<f64>,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-8, max_steps: 5_000_000, h_max: None, h_init: None }
    }
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` (`t1 >= t0`).
///
/// `sample_times` must be sorted and lie in `[t0, t1]`; `on_sample` is called
/// once per entry with the dense-output interpolant. Returns `y(t1)`.
pub fn integrate<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[C64],
    opts: &Dopri5Options,
    sample_times: &[f64],
    mut on_sample: S,
) -> Result<(Vec<C64>, Stats)>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    S: FnMut(usize, f64, &[C64]),
{
    let n = y0.len();
    let mut stats = Stats::default();
    let mut y = y0.to_vec();
    let mut next_sample = 0usize;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        on_sample(next_sample, sample_times[next_sample], &y);
        next_sample += 1;
    }
    if t1 <= t0 || n == 0 {
        while next_sample < sample_times.len() {
            on_sample(next_sample, sample_times[next_sample], &y);
            next_sample += 1;
        }
        return Ok((y, stats));
    }

    let span = t1 - t0;
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let mut k1 = vec![C64::default(); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut k5 = k1.clone();
    let mut k6 = k1.clone();
    let mut k7 = k1.clone();
    let mut tmp = k1.clone();
    let mut y_new = k1.clone();
    let mut dense = [k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone()];
    let mut interp = k1.clone();

    f(t0, &y, &mut k1);
    stats.evaluations += 1;
    let mut h = match opts.h_init {
        Some(h) => h.min(h_max),
        None => initial_step(&mut f, t0, &y, &k1, opts, &mut stats).min(h_max),
    };
    let mut t = t0;
    let mut last = false;
    let mut err_prev: f64 = 1e-4;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        if h < 1e-14 * t.abs().max(span) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        if t + 1.01 * h >= t1 {
            h = t1 - t;
            last = true;
        }

        macro_rules! stage {
            ($out:ident, $c:expr, $( ($a:ident, $k:ident) ),+ ) => {{
                for i in 0..n {
                    tmp[i] = y[i] + h * (C64::default() $( + $k[i] * $a )+);
                }
                f(t + $c * h, &tmp, &mut $out);
            }};
        }
        stage!(k2, C2, (A21, k1));
        stage!(k3, C3, (A31, k1), (A32, k2));
        stage!(k4, C4, (A41, k1), (A42, k2), (A43, k3));
        stage!(k5, C5, (A51, k1), (A52, k2), (A53, k3), (A54, k4));
        stage!(k6, 1.0, (A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5));
        for i in 0..n {
            y_new[i] = y[i] + h * (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76);
        }
        f(t + h, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7);
            let sc = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
            err += (e.norm() / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();

        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = t + h;
            if next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                for i in 0..n {
                    let ydiff = y_new[i] - y[i];
                    let bspl = k1[i] * h - ydiff;
                    dense[0][i] = y[i];
                    dense[1][i] = ydiff;
                    dense[2][i] = bspl;
                    dense[3][i] = ydiff - k7[i] * h - bspl;
                    dense[4][i] = h * (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7);
                }
                while next_sample < sample_times.len() && (sample_times[next_sample] <= t_new || last) {
                    let ts = sample_times[next_sample].min(t_new);
                    let theta = (ts - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        interp[i] = dense[0][i]
                            + (dense[1][i] + (dense[2][i] + (dense[3][i] + dense[4][i] * theta1) * theta) * theta1)
                                * theta;
                    }
                    on_sample(next_sample, sample_times[next_sample], &interp);
                    next_sample += 1;
                }
            }
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last {
                break;
            }
            // PI step-size controller
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            err_prev = err.max(1e-4);
            h = (h * fac.clamp(0.2, 10.0)).min(h_max);
        } else {
            stats.rejected += 1;
            last = false;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.1 };
            h *= fac;
        }
    }
    while next_sample < sample_times.len() {
        on_sample(next_sample, sample_times[next_sample], &y);
        next_sample += 1;
    }
    Ok((y, stats))
}

fn rms_scaled(v: &[C64], y: &[C64], opts: &Dopri5Options) -> f64 {
    let s: f64 = v.iter().zip(y).map(|(a, b)| (a.norm() / (opts.atol + opts.rtol * b.norm())).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y: &[C64], f0: &[C64], opts: &Dopri5Options, stats: &mut Stats) -> f64
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let d0 = rms_scaled(y, y, opts);
    let d1 = rms_scaled(f0, y, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<C64> = y.iter().zip(f0).map(|(a, b)| a + b * h0).collect();
    let mut f1 = vec![C64::default(); y.len()];
    f(t0 + h0, &y1, &mut f1);
    stats.evaluations += 1;
    let diff: Vec<C64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y, opts) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1)
}
