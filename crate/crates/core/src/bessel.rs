//! Bessel functions of the first kind for integer order.
//!
//! Small arguments use the power series; larger arguments use Miller's
//! downward recurrence normalised with `J_0 + 2 sum J_{2k} = 1`.

/// `J_n(x)` for integer `n` (any sign) and real `x`.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    let m = n.unsigned_abs() as usize;
    let mut value = bessel_j_nonneg(m, x.abs());
    // J_{-n}(x) = (-1)^n J_n(x) and J_n(-x) = (-1)^n J_n(x).
    if n < 0 && m % 2 == 1 {
        value = -value;
    }
    if x < 0.0 && m % 2 == 1 {
        value = -value;
    }
    value
}

/// `[J_0(x), J_1(x), ..., J_nmax(x)]`.
pub fn bessel_j_table(nmax: usize, x: f64) -> Vec<f64> {
    let ax = x.abs();
    let mut out = if ax <= 1.0 { (0..=nmax).map(|n| series(n, ax)).collect() } else { miller(nmax, ax) };
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

fn bessel_j_nonneg(n: usize, x: f64) -> f64 {
    if x <= 1.0 {
        series(n, x)
    } else {
        miller(n, x)[n]
    }
}

fn series(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    // (x/2)^n / n!
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = half * half;
    let mut sum = term;
    let mut k = 0usize;
    loop {
        k += 1;
        term *= -q / (k as f64 * (n + k) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || k > 200 {
            break;
        }
    }
    sum
}

fn miller(nmax: usize, x: f64) -> Vec<f64> {
    let top = nmax.max(x.ceil() as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut out = vec![0.0; nmax + 1];
    let mut next = 0.0; // J_{k+1}
    let mut cur = 1e-30; // J_k
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        // cur is now J_{k-1}
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        let idx = k - 1;
        if idx <= nmax {
            out[idx] = cur;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * cur;
        }
    }
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Location and value of the first maximum of `J_n` for `n >= 1`, by golden
/// section on the bracket `[n, n + 2]` which contains it for small orders.
pub fn first_maximum(n: i32) -> (f64, f64) {
    let (mut a, mut b) = (n.max(1) as f64 * 0.5, n.max(1) as f64 + 2.5);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    while (b - a).abs() > 1e-12 {
        if bessel_j(n, c) > bessel_j(n, d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    let x = 0.5 * (a + b);
    (x, bessel_j(n, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values cross-checked against an independent library.
    #[test]
    fn tabulated_values() {
        let cases = [
            (0, 1.0, 0.765_197_686_557_966_6),
            (1, 1.0, 0.440_050_585_744_933_5),
            (0, 2.5, -0.048_383_776_468_197_98),
            (1, 2.5, 0.497_094_102_464_274_1),
            (2, 5.0, 0.046_565_116_277_752_22),
            (5, 10.0, -0.234_061_528_186_793_6),
            (3, 0.3, 0.000_559_343_047_748_846_4),
        ];
        for (n, x, expected) in cases {
            let got = bessel_j(n, x);
            assert!((got - expected).abs() < 1e-13, "J_{n}({x}) = {got}, want {expected}");
        }
    }

    #[test]
    fn symmetry_in_order_and_argument() {
        for &x in &[0.4, 1.7, 3.2] {
            assert!((bessel_j(-1, x) + bessel_j(1, x)).abs() < 1e-15);
            assert!((bessel_j(-2, x) - bessel_j(2, x)).abs() < 1e-15);
            assert!((bessel_j(3, -x) + bessel_j(3, x)).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_rule() {
        for &x in &[0.0, 0.3, 1.0, 1.84, 2.9, 6.0, 12.0] {
            let t = bessel_j_table(60, x);
            let s = t[0] * t[0] + 2.0 * t[1..].iter().map(|v| v * v).sum::<f64>();
            assert!((s - 1.0).abs() < 1e-12, "x = {x}: {s}");
        }
    }

    #[test]
    fn table_agrees_with_scalar() {
        let t = bessel_j_table(8, 4.4);
        for (n, v) in t.iter().enumerate() {
            assert!((v - bessel_j(n as i32, 4.4)).abs() < 1e-14);
        }
        let t = bessel_j_table(4, -1.3);
        assert!((t[1] - bessel_j(1, -1.3)).abs() < 1e-15);
    }

    #[test]
    fn continuity_at_method_switch() {
        let below = bessel_j(1, 1.0 - 1e-12);
        let above = bessel_j(1, 1.0 + 1e-12);
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn first_maximum_of_j1() {
        let (x, v) = first_maximum(1);
        assert!((x - 1.841_183_808).abs() < 1e-7);
        assert!((v - 0.581_865_2).abs() < 1e-6);
    }
}
