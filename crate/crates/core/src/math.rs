//! Float helpers backed by `libm`, since `core` carries no transcendental functions.

#![allow(dead_code)]

use core::f64::consts::PI;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn asin(x: f64) -> f64 {
    libm::asin(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn to_rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

#[inline]
pub fn to_deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(deg: f64) -> f64 {
    let w = deg - 360.0 * floor((deg + 180.0) / 360.0);
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Smallest signed difference `a - b` on the circle, in degrees.
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a slice; averages the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v: alloc::vec::Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
