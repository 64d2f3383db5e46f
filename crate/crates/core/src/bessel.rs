//! Modified Bessel functions of the first kind, orders 0 and 1.
//!
//! Power series below [`SERIES_LIMIT`], large-argument asymptotic expansion
//! above it. Both branches are also exposed exponentially scaled
//! (`e^{-x} I_n(x)`), which is what the beam-wander model actually consumes
//! and which stays finite for arguments far beyond `f64` overflow of `I_n`.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    Zero,
    One,
}

impl BesselOrder {
    fn nu(self) -> u32 {
        match self {
            BesselOrder::Zero => 0,
            BesselOrder::One => 1,
        }
    }
}

/// `I_n(x)` for `x >= 0`.
///
/// ```
/// use qloud_core::bessel::{bessel_i, BesselOrder};
///
/// assert_eq!(bessel_i(BesselOrder::Zero, 0.0), 1.0);
/// assert!((bessel_i(BesselOrder::Zero, 1.0) - 1.2660658778).abs() < 1e-9);
/// ```
pub fn bessel_i(order: BesselOrder, x: f64) -> f64 {
    debug_assert!(x >= 0.0, "bessel_i defined here for x >= 0");
    if x < SERIES_LIMIT {
        series(order.nu(), x)
    } else {
        asymptotic_scaled(order.nu(), x) * x.exp()
    }
}

/// `e^{-x} I_n(x)` for `x >= 0`.
pub fn bessel_i_scaled(order: BesselOrder, x: f64) -> f64 {
    debug_assert!(x >= 0.0, "bessel_i_scaled defined here for x >= 0");
    if x < SERIES_LIMIT {
        series(order.nu(), x) * (-x).exp()
    } else {
        asymptotic_scaled(order.nu(), x)
    }
}

pub fn i0(x: f64) -> f64 {
    bessel_i(BesselOrder::Zero, x)
}

pub fn i1(x: f64) -> f64 {
    bessel_i(BesselOrder::One, x)
}

pub fn i0e(x: f64) -> f64 {
    bessel_i_scaled(BesselOrder::Zero, x)
}

pub fn i1e(x: f64) -> f64 {
    bessel_i_scaled(BesselOrder::One, x)
}

/// `I_0(x) - 1` without cancellation for small `x`.
pub(crate) fn i0_minus_one(x: f64) -> f64 {
    if x < SERIES_LIMIT {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term <= sum * 1e-17 {
                return sum;
            }
            k += 1.0;
        }
    } else {
        i0(x) - 1.0
    }
}

// sum_k (x/2)^(2k+nu) / (k! (k+nu)!)
fn series(nu: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let mut term = if nu == 0 { 1.0 } else { half };
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + nu as f64));
        sum += term;
        if term <= sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

// e^{-x} I_nu(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k prod_j (4nu^2 - (2j-1)^2) / (k! (8x)^k)
fn asymptotic_scaled(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu * nu) as f64;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}
