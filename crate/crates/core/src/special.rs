//! Special functions used by the fading generator and the free energy.
//!
//! All three are evaluated with a recurrence or power series near the origin
//! and an asymptotic expansion far from it. Accuracy is about 1e-12 absolute
//! over the ranges the crate uses.

use std::f64::consts::{FRAC_PI_4, PI};

const J0_SERIES_LIMIT: f64 = 14.0;
const ASYMPTOTIC_SHIFT: f64 = 10.0;

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= J0_SERIES_LIMIT {
        let q = -0.25 * x * x;
        let mut term: f64 = 1.0;
        let mut sum: f64 = 1.0;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) || k < 3.0 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
            if k > 200.0 {
                break;
            }
        }
        sum
    } else {
        // Hankel expansion: J0 = sqrt(2/(pi x)) (P cos chi - Q sin chi)
        let chi = x - FRAC_PI_4;
        let eight_x = 8.0 * x;
        let mut p = 1.0;
        let mut q = 0.0;
        let mut t = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..60 {
            let odd = (2 * k - 1) as f64;
            t *= odd * odd / (k as f64 * eight_x);
            if t > prev || t < 1e-18 {
                break;
            }
            prev = t;
            match k % 4 {
                1 => q -= t,
                2 => p -= t,
                3 => q += t,
                _ => p += t,
            }
        }
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Natural log of the gamma function for `x > 0`. Returns NaN otherwise.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_SHIFT {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360_360.0))))));
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series - shift
}

/// Digamma function (derivative of `ln_gamma`) for `x > 0`.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32_760.0)))));
    acc + z.ln() - 0.5 / z - series
}
