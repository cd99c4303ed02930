//! Small dense linear algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub fn block_diag<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, rtol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(T::one());
    (m - m.transpose()).amax() <= lit::<T>(rtol) * scale
}

/// Lower Cholesky factor; fails with the matrix name when not PD.
pub fn cholesky<T: Real>(m: &DMatrix<T>, name: &str, index: Option<usize>) -> Result<DMatrix<T>> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::NotPositiveDefinite { name: name.into(), index });
    }
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite { name: name.into(), index })
}

pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    nalgebra::SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    eigenvalues(m).min()
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    eigenvalues(m).max()
}

/// Factor `F` with `F Fᵀ = clip(m)`, negative eigenvalues set to zero.
pub fn psd_factor<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut f = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

/// log det of a symmetric positive definite matrix; `None` if not PD.
pub fn log_det_spd<T: Real>(m: &DMatrix<T>) -> Option<T> {
    let c = nalgebra::Cholesky::new(symmetrize(m))?;
    let l = c.l();
    Some(l.diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * lit::<T>(2.0))
}

pub fn check_psd<T: Real>(m: &DMatrix<T>, name: &str, index: Option<usize>) -> Result<()> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::NotPositiveSemidefinite { name: name.into(), index });
    }
    let scale = m.amax().max(T::one());
    if min_eigenvalue(m) < -lit::<T>(1e-10) * scale {
        return Err(Error::NotPositiveSemidefinite { name: name.into(), index });
    }
    Ok(())
}

pub fn cast<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(lit::<T>)
}

pub fn to_f64_matrix<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(crate::scalar::to_f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = psd_factor(&a);
        assert!((&f * f.transpose() - &a).amax() < 1e-12);
    }

    #[test]
    fn log_det_matches_product() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!((log_det_spd(&a).unwrap() - 3.0f64.ln()).abs() < 1e-14);
    }
}
