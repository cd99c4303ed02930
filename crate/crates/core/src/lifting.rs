//! Block-lifted representation of a discrete linear time-varying system.
//!
//! The whole trajectory `X = [x_0; …; x_N]` is written as
//! `X = 𝓐 x_0 + 𝓑 U + 𝓓 W` with `U = [u_0; …; u_{N-1}]`, `W = [w_0; …; w_{N-1}]`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// `x_{k+1} = A_k x_k + B_k u_k + D_k w_k`, `k = 0..N-1`.
#[derive(Debug, Clone)]
pub struct LtvSystem<T: Real> {
    a: Vec<DMatrix<T>>,
    b: Vec<DMatrix<T>>,
    d: Vec<DMatrix<T>>,
    n: usize,
    m: usize,
    r: usize,
}

impl<T: Real> LtvSystem<T> {
    pub fn new(a: Vec<DMatrix<T>>, b: Vec<DMatrix<T>>, d: Vec<DMatrix<T>>) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::OutOfRange { what: "horizon", detail: "N must be at least 1".into() });
        }
        if b.len() != horizon || d.len() != horizon {
            return Err(Error::dim(format!(
                "expected {horizon} matrices each for A, B, D; got {}, {}, {}",
                a.len(),
                b.len(),
                d.len()
            )));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        let r = d[0].ncols();
        for k in 0..horizon {
            if a[k].shape() != (n, n) {
                return Err(Error::dim(format!("A_{k} is {:?}, expected ({n}, {n})", a[k].shape())));
            }
            if b[k].shape() != (n, m) {
                return Err(Error::dim(format!("B_{k} is {:?}, expected ({n}, {m})", b[k].shape())));
            }
            if d[k].shape() != (n, r) {
                return Err(Error::dim(format!("D_{k} is {:?}, expected ({n}, {r})", d[k].shape())));
            }
        }
        Ok(Self { a, b, d, n, m, r })
    }

    /// Same `(A, B, D)` at every step.
    pub fn time_invariant(a: DMatrix<T>, b: DMatrix<T>, d: DMatrix<T>, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon], vec![d; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn a(&self, k: usize) -> &DMatrix<T> {
        &self.a[k]
    }
    pub fn b(&self, k: usize) -> &DMatrix<T> {
        &self.b[k]
    }
    pub fn d(&self, k: usize) -> &DMatrix<T> {
        &self.d[k]
    }

    /// One step of the recursion.
    pub fn step(&self, k: usize, x: &DVector<T>, u: DVectorView<T>, w: DVectorView<T>) -> DVector<T> {
        &self.a[k] * x + &self.b[k] * u + &self.d[k] * w
    }

    /// Stacked trajectory by direct recursion.
    pub fn simulate(&self, x0: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        let (n, m, r) = (self.n, self.m, self.r);
        let horizon = self.horizon();
        let mut out = DVector::zeros((horizon + 1) * n);
        out.rows_mut(0, n).copy_from(x0);
        let mut x = x0.clone();
        for k in 0..horizon {
            x = self.step(k, &x, u.rows(k * m, m), w.rows(k * r, r));
            out.rows_mut((k + 1) * n, n).copy_from(&x);
        }
        out
    }

    /// State transition Φ(k, j) = A_{k-1} ⋯ A_j (identity when k = j).
    pub fn transition(&self, k: usize, j: usize) -> DMatrix<T> {
        let mut phi = DMatrix::identity(self.n, self.n);
        for i in j..k {
            phi = &self.a[i] * phi;
        }
        phi
    }
}

/// Lifted matrices and derived constants of an [`LtvSystem`].
#[derive(Debug, Clone)]
pub struct LiftedSystem<T: Real> {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub horizon: usize,
    /// `(N+1)n × n`
    pub a_cal: DMatrix<T>,
    /// `(N+1)n × Nm`
    pub b_cal: DMatrix<T>,
    /// `(N+1)n × Nr`
    pub d_cal: DMatrix<T>,
    /// `blockdiag(Q_0, …, Q_{N-1}, 0)`
    pub q_bar: DMatrix<T>,
    /// `blockdiag(R_0, …, R_{N-1})`
    pub r_bar: DMatrix<T>,
    pub sigma0: DMatrix<T>,
    /// `𝓐 Σ_0 𝓐ᵀ + 𝓓 𝓓ᵀ`
    pub sigma_y: DMatrix<T>,
    pub system: LtvSystem<T>,
}

pub fn lift<T: Real>(
    sys: &LtvSystem<T>,
    q: &[DMatrix<T>],
    r: &[DMatrix<T>],
    sigma0: &DMatrix<T>,
) -> Result<LiftedSystem<T>> {
    let (n, m, nr, horizon) = (sys.n, sys.m, sys.r, sys.horizon());
    if q.len() != horizon || r.len() != horizon {
        return Err(Error::dim(format!("expected {horizon} Q and R weights, got {} and {}", q.len(), r.len())));
    }
    for (k, qk) in q.iter().enumerate() {
        if qk.shape() != (n, n) {
            return Err(Error::dim(format!("Q_{k} is {:?}, expected ({n}, {n})", qk.shape())));
        }
        linalg::check_psd(qk, "Q", Some(k))?;
    }
    for (k, rk) in r.iter().enumerate() {
        if rk.shape() != (m, m) {
            return Err(Error::dim(format!("R_{k} is {:?}, expected ({m}, {m})", rk.shape())));
        }
        linalg::cholesky(rk, "R", Some(k))?;
    }
    if sigma0.shape() != (n, n) {
        return Err(Error::dim(format!("Sigma_0 is {:?}, expected ({n}, {n})", sigma0.shape())));
    }
    linalg::cholesky(sigma0, "Sigma_0", None)?;

    let rows = (horizon + 1) * n;
    let mut a_cal = DMatrix::zeros(rows, n);
    let mut b_cal = DMatrix::zeros(rows, horizon * m);
    let mut d_cal = DMatrix::zeros(rows, horizon * nr);
    let mut phi = DMatrix::identity(n, n);
    a_cal.view_mut((0, 0), (n, n)).copy_from(&phi);
    for k in 1..=horizon {
        phi = sys.a(k - 1) * &phi;
        a_cal.view_mut((k * n, 0), (n, n)).copy_from(&phi);
        // Block (k, j) = Φ(k, j+1) B_j, built backwards from j = k-1.
        let mut tail = DMatrix::<T>::identity(n, n);
        for j in (0..k).rev() {
            b_cal.view_mut((k * n, j * m), (n, m)).copy_from(&(&tail * sys.b(j)));
            d_cal.view_mut((k * n, j * nr), (n, nr)).copy_from(&(&tail * sys.d(j)));
            tail = &tail * sys.a(j);
        }
    }

    let mut q_blocks: Vec<DMatrix<T>> = q.to_vec();
    q_blocks.push(DMatrix::zeros(n, n));
    let q_bar = linalg::block_diag(&q_blocks);
    let r_bar = linalg::block_diag(r);
    let sigma_y = &a_cal * sigma0 * a_cal.transpose() + &d_cal * d_cal.transpose();

    Ok(LiftedSystem {
        n,
        m,
        r: nr,
        horizon,
        a_cal,
        b_cal,
        d_cal,
        q_bar,
        r_bar,
        sigma0: sigma0.clone(),
        sigma_y,
        system: sys.clone(),
    })
}

impl<T: Real> LiftedSystem<T> {
    pub fn state_len(&self) -> usize {
        (self.horizon + 1) * self.n
    }

    pub fn input_len(&self) -> usize {
        self.horizon * self.m
    }

    pub fn noise_len(&self) -> usize {
        self.horizon * self.r
    }

    /// `E_k = [0, I_n, 0]`, picking `x_k` out of `X`.
    pub fn selector(&self, k: usize) -> Result<DMatrix<T>> {
        if k > self.horizon {
            return Err(Error::OutOfRange { what: "step index", detail: format!("k = {k} > N = {}", self.horizon) });
        }
        let mut e = DMatrix::zeros(self.n, self.state_len());
        e.view_mut((0, k * self.n), (self.n, self.n)).fill_with_identity();
        Ok(e)
    }

    /// `E_k X` without forming the selector.
    pub fn block(&self, x: &DVector<T>, k: usize) -> DVector<T> {
        x.rows(k * self.n, self.n).into_owned()
    }

    /// `E_k S E_kᵀ`.
    pub fn block_cov(&self, s: &DMatrix<T>, k: usize) -> DMatrix<T> {
        s.view((k * self.n, k * self.n), (self.n, self.n)).into_owned()
    }

    pub fn propagate(&self, x0: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        &self.a_cal * x0 + &self.b_cal * u + &self.d_cal * w
    }

    /// Exact factor `M = [𝓐 L_0, 𝓓]` with `M Mᵀ = Σ_Y`, where `L_0 L_0ᵀ = Σ_0`.
    pub fn noise_factor(&self) -> Result<DMatrix<T>> {
        let l0 = linalg::cholesky(&self.sigma0, "Sigma_0", None)?;
        let al = &self.a_cal * l0;
        let mut out = DMatrix::zeros(self.state_len(), self.n + self.noise_len());
        out.view_mut((0, 0), (self.state_len(), self.n)).copy_from(&al);
        out.view_mut((0, self.n), (self.state_len(), self.noise_len())).copy_from(&self.d_cal);
        Ok(out)
    }

    /// Cholesky factor of `Σ_Y` itself; ill-conditioned when the noise is small.
    pub fn sigma_y_cholesky(&self) -> Result<DMatrix<T>> {
        linalg::cholesky(&self.sigma_y, "Sigma_Y", None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_identity() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::from_element(1, 1, 0.0);
        let sys = LtvSystem::new(vec![one.clone()], vec![one.clone()], vec![zero]).unwrap();
        let l = lift(&sys, &[one.clone()], &[one.clone()], &one).unwrap();
        assert_eq!(l.a_cal.as_slice(), &[1.0, 1.0]);
        assert_eq!(l.b_cal.as_slice(), &[0.0, 1.0]);
        assert_eq!(l.d_cal.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn selector_blocks() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let sys = LtvSystem::time_invariant(i2.clone(), i2.clone(), i2.clone(), 3).unwrap();
        let l = lift(&sys, &vec![i2.clone(); 3], &vec![i2.clone(); 3], &i2).unwrap();
        let e0 = l.selector(0).unwrap();
        assert_eq!(e0.view((0, 0), (2, 2)), i2);
        let e3 = l.selector(3).unwrap();
        assert_eq!(e3.view((0, 6), (2, 2)), i2);
        assert!(l.selector(4).is_err());
    }

    #[test]
    fn rejects_bad_r() {
        let i1 = DMatrix::<f64>::identity(1, 1);
        let sys = LtvSystem::time_invariant(i1.clone(), i1.clone(), i1.clone(), 2).unwrap();
        let bad = DMatrix::from_element(1, 1, -1.0);
        let err = lift(&sys, &[i1.clone(), i1.clone()], &[i1.clone(), bad], &i1).unwrap_err();
        assert!(err.to_string().contains("R is not positive definite (index 1)"), "{err}");
    }

    #[test]
    fn noise_factor_reproduces_sigma_y() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]);
        let sys = LtvSystem::time_invariant(a, b, d, 4).unwrap();
        let s0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let l = lift(&sys, &vec![DMatrix::identity(2, 2); 4], &vec![DMatrix::identity(1, 1); 4], &s0).unwrap();
        let mf = l.noise_factor().unwrap();
        assert!((&mf * mf.transpose() - &l.sigma_y).amax() < 1e-12);
    }
}
