//! Standard normal distribution: CDF, quantile and density.

use crate::scalar::{lit, to_f64, Real};

/// Lower limit of the quantile's accurate range; arguments are clamped to `[Q_MIN, 1 - Q_MIN]`.
pub const Q_MIN: f64 = 1e-12;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Φ(x) = P(Z ≤ x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ⁻¹(p), Wichura's AS241 (PPND16) with one Newton step.
///
/// Arguments outside `[Q_MIN, 1 - Q_MIN]` are clamped with a warning.
pub fn quantile(p: f64) -> f64 {
    let p = if !(Q_MIN..=1.0 - Q_MIN).contains(&p) {
        log::warn!("normal quantile argument {p:e} clamped to [{Q_MIN:e}, 1 - {Q_MIN:e}]");
        if p.is_nan() {
            return f64::NAN;
        }
        p.clamp(Q_MIN, 1.0 - Q_MIN)
    } else {
        p
    };
    let x = ppnd16(p);
    // Newton refinement on the CDF; the raw approximation is already ~1e-16 relative.
    let err = if p < 0.5 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let d = pdf(x);
    if d > 0.0 {
        x - err / d
    } else {
        x
    }
}

/// Raw AS241 quantile for `p ∈ (0, 1)`, no clamping or refinement. Used by samplers.
pub fn quantile_raw(p: f64) -> f64 {
    ppnd16(p)
}

/// Upper quantile Φ⁻¹(1 − q), computed without forming 1 − q.
pub fn upper_quantile(q: f64) -> f64 {
    -quantile(q)
}

fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
            + 67265.770927008700853)
            * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Generic front-ends.
pub fn cdf_t<T: Real>(x: T) -> T {
    lit(cdf(to_f64(x)))
}

pub fn quantile_t<T: Real>(p: T) -> T {
    lit(quantile(to_f64(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((sf(1.0) - 0.15865525393145707).abs() < 1e-15);
        assert!((quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert!((quantile(0.5)).abs() < 1e-15);
        assert!((quantile(1e-10) + 6.361340902404056).abs() < 1e-9);
    }

    #[test]
    fn round_trip() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-14);
        }
        for e in 1..12 {
            let p = 10f64.powi(-e);
            assert!(((cdf(quantile(p)) - p) / p).abs() < 1e-10);
            assert!(((sf(upper_quantile(p)) - p) / p).abs() < 1e-10);
        }
    }

    #[test]
    fn clamps_outside_range() {
        assert_eq!(quantile(0.0), quantile(Q_MIN));
        assert_eq!(quantile(1.0), quantile(1.0 - Q_MIN));
    }
}
