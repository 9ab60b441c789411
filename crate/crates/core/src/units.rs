//! Conversions between the MHz / ns / us units used at the file boundary and
//! the SI angular units used internally.

use std::f64::consts::PI;

/// `f` in MHz (meaning omega / 2 pi) to angular frequency in rad/s.
pub fn mhz_to_angular(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}

pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn to_ns(t: f64) -> f64 {
    t * 1e9
}

pub fn to_us(t: f64) -> f64 {
    t * 1e6
}
