//! The Kolmogorov distribution, the large-sample law of the scaled KS statistic.
//!
//! `F_K(x) = 1 − 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²x²}`. That alternating series
//! converges slowly for small `x`, so below [`SWITCH`] the equivalent theta
//! form `√(2π)/x Σ_{k≥1} e^{−(2k−1)²π²/(8x²)}` is summed instead.

use std::f64::consts::PI;

const SWITCH: f64 = 1.0;
const TERM_TOL: f64 = 1e-12;
const MAX_TERMS: usize = 200;

fn sum_series(mut term: impl FnMut(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for k in 1..=MAX_TERMS {
        let t = term(k);
        total += t;
        if t.abs() < TERM_TOL {
            break;
        }
    }
    total
}

#[inline]
fn odd_coefficient(k: usize) -> f64 {
    let o = (2 * k - 1) as f64;
    o * o * PI * PI / 8.0
}

#[inline]
fn sign(k: usize) -> f64 {
    if k % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn kolmogorov_cdf(x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x < SWITCH {
        let inv2 = 1.0 / (x * x);
        let s = sum_series(|k| (-odd_coefficient(k) * inv2).exp());
        ((2.0 * PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s = sum_series(|k| sign(k) * (-2.0 * (k * k) as f64 * x * x).exp());
        (1.0 - 2.0 * s).clamp(0.0, 1.0)
    }
}

pub fn kolmogorov_pdf(x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x < SWITCH {
        let inv2 = 1.0 / (x * x);
        let s = sum_series(|k| {
            let c = odd_coefficient(k);
            (-c * inv2).exp() * (2.0 * c * inv2 - 1.0)
        });
        ((2.0 * PI).sqrt() * inv2 * s).max(0.0)
    } else {
        let s = sum_series(|k| {
            let k2 = (k * k) as f64;
            sign(k) * k2 * (-2.0 * k2 * x * x).exp()
        });
        (8.0 * x * s).max(0.0)
    }
}
