//! Clohessy–Wiltshire–Hill relative dynamics and zero-order-hold discretization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Earth gravitational parameter, km³/s².
pub const MU_EARTH_KM3_S2: f64 = 398_600.4418;
/// Equatorial Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6378.137;

/// Mean motion `ω = √(μ/R₀³)` of a circular orbit of radius `R₀` (km), in rad/s.
pub fn mean_motion(mu_km3_s2: f64, radius_km: f64) -> Result<f64> {
    if !(mu_km3_s2 > 0.0 && radius_km > 0.0) {
        return Err(Error::OutOfRange { what: "orbit", detail: "μ and R₀ must be positive".into() });
    }
    Ok((mu_km3_s2 / radius_km.powi(3)).sqrt())
}

/// Continuous `(A, B)` with state `[p; ṗ]` and thrust input in newtons.
pub fn cwh_matrices<T: Real>(omega: T, mass: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if !(omega >= T::zero()) || !(mass > T::zero()) {
        return Err(Error::OutOfRange { what: "CWH parameters", detail: "need ω ≥ 0 and m_d > 0".into() });
    }
    let w2 = omega * omega;
    let two_w = lit::<T>(2.0) * omega;
    let mut a = DMatrix::zeros(6, 6);
    for i in 0..3 {
        a[(i, i + 3)] = T::one();
    }
    a[(3, 0)] = lit::<T>(3.0) * w2;
    a[(3, 4)] = two_w;
    a[(4, 3)] = -two_w;
    a[(5, 2)] = -w2;
    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        b[(i + 3, i)] = T::one() / mass;
    }
    Ok((a, b))
}

/// `A_d = e^{A dt}`, `B_d = ∫₀^dt e^{Aτ} B dτ` from the exponential of `[[A, B], [0, 0]] dt`.
pub fn discretize_zoh<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, dt: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (n, m) = (a.nrows(), b.ncols());
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim(format!("A must be square and B must have {n} rows")));
    }
    if !(dt > T::zero()) {
        return Err(Error::OutOfRange { what: "time step", detail: "dt must be positive".into() });
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_double_integrator() {
        let (a, b) = cwh_matrices(0.0f64, 300.0).unwrap();
        let (ad, bd) = discretize_zoh(&a, &b, 4.0).unwrap();
        for i in 0..3 {
            assert!((ad[(i, i + 3)] - 4.0).abs() < 1e-14);
            assert!((bd[(i, i)] - 8.0 / 300.0).abs() < 1e-15);
            assert!((bd[(i + 3, i)] - 4.0 / 300.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, -0.7);
        let b = DMatrix::from_element(1, 1, 2.0);
        let (ad, bd) = discretize_zoh(&a, &b, 0.3).unwrap();
        let e = (-0.7f64 * 0.3).exp();
        assert!((ad[(0, 0)] - e).abs() < 1e-15);
        assert!((bd[(0, 0)] - (e - 1.0) * 2.0 / -0.7).abs() < 1e-14);
    }

    #[test]
    fn rendezvous_rate() {
        let w = mean_motion(MU_EARTH_KM3_S2, EARTH_RADIUS_KM + 800.0).unwrap();
        assert!((w - 1.0382e-3).abs() < 1e-6);
    }
}
