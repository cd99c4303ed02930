//! Hard input bounds through saturated-noise feedback.
//!
//! The controller feeds back `z_k` with `z_{k+1} = A_k z_k + D_k φ(w_k)`, `z_0 = φ(y_0)`,
//! so `z = [𝓐 𝓓] ζ` with `ζ = [φ(y_0); φ(w_0); …]` confined to a known box. The input
//! bound then holds for every realization through the slack variables `Ω`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conic::{AffExpr, ConicProgram, Var};
use crate::error::{Error, Family, Result};
use crate::lifting::LiftedSystem;
use crate::linalg;
use crate::rng;
use crate::scalar::{lit, to_f64, Real};
use crate::steering::{Layout, NoiseModel};

/// Default Monte Carlo sample count for saturated moments.
pub const DEFAULT_SAMPLES: usize = 1_000_000;
/// Default seed for saturated moments.
pub const DEFAULT_SEED: u64 = 0x5a7_0001;

const CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct HardInputSpec<T: Real> {
    /// Saturation levels of the initial deviation, length `n`.
    pub y_max: DVector<T>,
    /// Saturation levels of each disturbance, length `r`.
    pub w_max: DVector<T>,
    /// `H u_k ≤ h`, `H` is `N_c × m`.
    pub h_mat: DMatrix<T>,
    pub h_vec: DVector<T>,
    /// Relative tightening of `h` absorbing solver tolerance.
    pub backoff: T,
    pub samples: usize,
    pub seed: u64,
}

impl<T: Real> HardInputSpec<T> {
    /// `‖u‖∞ ≤ u_max` with the given saturation levels.
    pub fn box_bound(m: usize, u_max: T, y_max: DVector<T>, w_max: DVector<T>) -> Self {
        let mut h_mat = DMatrix::zeros(2 * m, m);
        for i in 0..m {
            h_mat[(i, i)] = T::one();
            h_mat[(m + i, i)] = -T::one();
        }
        Self {
            y_max,
            w_max,
            h_mat,
            h_vec: DVector::from_element(2 * m, u_max),
            backoff: lit(1e-6),
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self, lifted: &LiftedSystem<T>) -> Result<()> {
        if self.y_max.len() != lifted.n || self.w_max.len() != lifted.r {
            return Err(Error::dim(format!("saturation levels need lengths {} and {}", lifted.n, lifted.r)));
        }
        if self.y_max.iter().chain(self.w_max.iter()).any(|v| !(*v > T::zero())) {
            return Err(Error::OutOfRange { what: "saturation level", detail: "must be positive".into() });
        }
        if self.h_mat.ncols() != lifted.m || self.h_mat.nrows() != self.h_vec.len() {
            return Err(Error::dim(format!("input constraint H must be N_c × {} with h of length N_c", lifted.m)));
        }
        if self.samples == 0 {
            return Err(Error::OutOfRange { what: "moment samples", detail: "must be positive".into() });
        }
        Ok(())
    }

    /// `σ`: box half-widths of `ζ`, length `n + N r`.
    pub fn sigma(&self, horizon: usize) -> DVector<T> {
        let mut s: Vec<T> = self.y_max.iter().copied().collect();
        for _ in 0..horizon {
            s.extend(self.w_max.iter().copied());
        }
        DVector::from_vec(s)
    }

    /// Signed unit rows `S` with `S_{2i} = e_iᵀ`, `S_{2i+1} = −e_iᵀ`.
    pub fn s_matrix(&self, horizon: usize) -> DMatrix<T> {
        let d = self.y_max.len() + horizon * self.w_max.len();
        let mut s = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            s[(2 * i, i)] = T::one();
            s[(2 * i + 1, i)] = -T::one();
        }
        s
    }
}

/// Elementwise symmetric saturation.
pub fn saturate<T: Real>(y: &DVector<T>, max: &DVector<T>) -> DVector<T> {
    y.zip_map(max, |v, m| v.min(m).max(-m))
}

/// Moments of `(y, φ(y))` for `y ~ 𝒩(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedMoments {
    pub cov: DMatrix<f64>,
    /// `𝔼[y φ(y)ᵀ]`
    pub cross: DMatrix<f64>,
    /// `𝔼[φ(y) φ(y)ᵀ]`
    pub second: DMatrix<f64>,
    /// Largest gap between the sampled cross moment and the closed form from Stein's identity.
    pub stein_gap: f64,
}

impl SaturatedMoments {
    /// `[[Σ, 𝔼[yφᵀ]], [𝔼[φyᵀ], 𝔼[φφᵀ]]]`
    pub fn joint(&self) -> DMatrix<f64> {
        let d = self.cov.nrows();
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        j.view_mut((0, 0), (d, d)).copy_from(&self.cov);
        j.view_mut((0, d), (d, d)).copy_from(&self.cross);
        j.view_mut((d, 0), (d, d)).copy_from(&self.cross.transpose());
        j.view_mut((d, d), (d, d)).copy_from(&self.second);
        linalg::symmetrize(&j)
    }
}

/// Closed-form cross moment `𝔼[y_i φ_j(y)] = Σ_ij ℙ(|y_j| ≤ m_j)`.
pub fn stein_cross_moment(sigma: &DMatrix<f64>, max: &DVector<f64>) -> DMatrix<f64> {
    let d = sigma.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        let s = sigma[(j, j)].sqrt();
        let p = if s > 0.0 { 1.0 - 2.0 * crate::normal::sf(max[j] / s) } else { 1.0 };
        sigma[(i, j)] * p
    })
}

/// Seeded Monte Carlo estimate of the saturated moments.
///
/// Uses `yyᵀ` as a control variate with coefficient one, so unsaturated samples contribute
/// exactly `Σ`. Chunks are independent streams reduced in a fixed order.
pub fn saturated_moments(sigma: &DMatrix<f64>, max: &DVector<f64>, samples: usize, seed: u64) -> Result<SaturatedMoments> {
    let d = sigma.nrows();
    if max.len() != d {
        return Err(Error::dim("saturation levels must match the covariance"));
    }
    let l = linalg::cholesky(sigma, "saturated moment covariance", None)?;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(samples - c * CHUNK);
            let mut r = rng::stream(seed, c as u64);
            let mut z = vec![0.0; d];
            let mut dc = DMatrix::zeros(d, d);
            let mut ds = DMatrix::zeros(d, d);
            for _ in 0..count {
                rng::fill_normal(&mut r, &mut z);
                let y = &l * DVector::from_column_slice(&z);
                let p = saturate(&y, max);
                if p == y {
                    continue;
                }
                let e = &p - &y;
                // yφᵀ − yyᵀ = y eᵀ;  φφᵀ − yyᵀ = e yᵀ + y eᵀ + e eᵀ
                let ye = &y * e.transpose();
                dc += &ye;
                ds += &ye + ye.transpose() + &e * e.transpose();
            }
            (dc, ds)
        })
        .collect();
    let mut dc = DMatrix::zeros(d, d);
    let mut ds = DMatrix::zeros(d, d);
    for (c, s) in &partial {
        dc += c;
        ds += s;
    }
    let n = samples as f64;
    let cross = sigma + dc / n;
    let second = linalg::symmetrize(&(sigma + ds / n));
    let stein = stein_cross_moment(sigma, max);
    let stein_gap = (&cross - &stein).amax();
    Ok(SaturatedMoments { cov: sigma.clone(), cross, second, stein_gap })
}

/// Moments of the initial deviation and of one disturbance vector.
#[derive(Debug, Clone)]
pub struct HardInputMoments {
    pub initial: SaturatedMoments,
    pub disturbance: SaturatedMoments,
}

pub fn moments<T: Real>(lifted: &LiftedSystem<T>, spec: &HardInputSpec<T>) -> Result<HardInputMoments> {
    let s0 = linalg::to_f64_matrix(&lifted.sigma0);
    let ym = DVector::from_iterator(spec.y_max.len(), spec.y_max.iter().map(|v| to_f64(*v)));
    let wm = DVector::from_iterator(spec.w_max.len(), spec.w_max.iter().map(|v| to_f64(*v)));
    let initial = saturated_moments(&s0, &ym, spec.samples, spec.seed)?;
    let disturbance =
        saturated_moments(&DMatrix::identity(lifted.r, lifted.r), &wm, spec.samples, spec.seed.wrapping_add(1))?;
    Ok(HardInputMoments { initial, disturbance })
}

/// `[𝓐 𝓓]`
pub fn ad_matrix<T: Real>(lifted: &LiftedSystem<T>) -> DMatrix<T> {
    let rows = lifted.state_len();
    let (n, q) = (lifted.n, lifted.noise_len());
    let mut ad = DMatrix::zeros(rows, n + q);
    ad.view_mut((0, 0), (rows, n)).copy_from(&lifted.a_cal);
    ad.view_mut((0, n), (rows, q)).copy_from(&lifted.d_cal);
    ad
}

/// Factors `L_ξ`, `L_ζ` with `[ξ; ζ] = [L_ξ; L_ζ] η`, `η ~ 𝒩(0, I)`,
/// where `ξ = [y_0; W]` and `ζ = [φ(y_0); φ(W)]`.
fn joint_factors(lifted_n: usize, r: usize, horizon: usize, mom: &HardInputMoments) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = lifted_n + horizon * r;
    let q = 2 * d;
    let mut lx = DMatrix::zeros(d, q);
    let mut lz = DMatrix::zeros(d, q);
    let mut place = |blk: &SaturatedMoments, row: usize, col: usize| {
        let k = blk.cov.nrows();
        let f = linalg::psd_factor(&blk.joint());
        lx.view_mut((row, col), (k, 2 * k)).copy_from(&f.rows(0, k));
        lz.view_mut((row, col), (k, 2 * k)).copy_from(&f.rows(k, k));
    };
    place(&mom.initial, 0, 0);
    for k in 0..horizon {
        place(&mom.disturbance, lifted_n + k * r, 2 * lifted_n + 2 * k * r);
    }
    (lx, lz)
}

/// Noise factors for the saturated feedback: `M_0 = [𝓐 𝓓] L_ξ`, `M_1 = [𝓐 𝓓] L_ζ`.
pub fn saturated_noise_model<T: Real>(lifted: &LiftedSystem<T>, spec: &HardInputSpec<T>) -> Result<NoiseModel<T>> {
    spec.validate(lifted)?;
    let mom = moments(lifted, spec)?;
    noise_model_from_moments(lifted, &mom)
}

pub fn noise_model_from_moments<T: Real>(lifted: &LiftedSystem<T>, mom: &HardInputMoments) -> Result<NoiseModel<T>> {
    let (lx, lz) = joint_factors(lifted.n, lifted.r, lifted.horizon, mom);
    let ad = ad_matrix(lifted);
    let m0 = &ad * linalg::cast::<T>(&lx);
    let m1 = &ad * linalg::cast::<T>(&lz);
    Ok(NoiseModel { m0, m1 })
}

/// `Σ_XX` (`2(N+1)n` square) and `Σ_UU` (`(N+1)n` square).
pub fn moment_matrices<T: Real>(lifted: &LiftedSystem<T>, mom: &HardInputMoments) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = linalg::to_f64_matrix(&lifted.a_cal);
    let dm = linalg::to_f64_matrix(&lifted.d_cal);
    let (r, nh) = (lifted.r, lifted.horizon);
    let aa = linalg::block_diag(&[a.clone(), a.clone()]);
    let dd = linalg::block_diag(&[dm.clone(), dm.clone()]);
    let j0 = mom.initial.joint();
    let jw = mom.disturbance.joint();
    // Reorder per-step (w_k, φ(w_k)) blocks into [W; φ(W)].
    let q = nh * r;
    let mut jww = DMatrix::zeros(2 * q, 2 * q);
    for k in 0..nh {
        for (bi, oi) in [(0, 0), (r, q)] {
            for (bj, oj) in [(0, 0), (r, q)] {
                jww.view_mut((oi + k * r, oj + k * r), (r, r)).copy_from(&jw.view((bi, bj), (r, r)));
            }
        }
    }
    let sxx = &aa * j0 * aa.transpose() + &dd * jww * dd.transpose();
    let suu = &a * &mom.initial.second * a.transpose()
        + &dm * linalg::block_diag(&vec![mom.disturbance.second.clone(); nh]) * dm.transpose();
    (linalg::symmetrize(&sxx), linalg::symmetrize(&suu))
}

/// Per-step `Ω` slacks: `H K_k E_k [𝓐 𝓓] = Ω_kᵀ S`, `H v_k + Ω_kᵀ σ ≤ h`, `Ω_k ≥ 0`.
pub fn emit_input_constraints<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    spec: &HardInputSpec<T>,
) -> Result<usize> {
    let lifted = layout.lifted;
    let (nh, n, m) = (lifted.horizon, lifted.n, lifted.m);
    let ad = ad_matrix(lifted);
    let sigma = spec.sigma(nh);
    let nc = spec.h_mat.nrows();
    let mut count = 0;
    for k in 0..nh {
        let blk = ad.rows(k * n, n);
        let cols: Vec<usize> = (0..ad.ncols()).filter(|&c| blk.column(c).iter().any(|v| *v != T::zero())).collect();
        for s in 0..nc {
            let mut total = AffExpr::zero();
            for a in 0..m {
                total.add_term(layout.vars.v(k, a), spec.h_mat[(s, a)]);
            }
            for &c in &cols {
                // Row 2c of S is +e_c, row 2c+1 is −e_c.
                let plus: Var = prog.add_var();
                let minus: Var = prog.add_var();
                let mut eq = AffExpr::zero();
                for a in 0..m {
                    let hsa = spec.h_mat[(s, a)];
                    if hsa == T::zero() {
                        continue;
                    }
                    for b in 0..n {
                        eq.add_term(layout.vars.k(k, a, b), hsa * blk[(b, c)]);
                    }
                }
                eq.add_term(plus, -T::one()).add_term(minus, T::one());
                prog.add_eq(eq, Family::HardInput, format!("input slack step {k} row {s} col {c}"))?;
                prog.add_ge(AffExpr::var(plus), Family::HardInput, format!("omega+ step {k} row {s} col {c}"))?;
                prog.add_ge(AffExpr::var(minus), Family::HardInput, format!("omega- step {k} row {s} col {c}"))?;
                total.add_term(plus, sigma[c]).add_term(minus, sigma[c]);
                count += 1;
            }
            let h = spec.h_vec[s];
            total.add_constant(-(h - spec.backoff * h.abs()));
            prog.add_le(total, Family::HardInput, format!("input bound step {k} row {s}"))?;
        }
    }
    Ok(count)
}

/// Worst-case `max_ζ (H u_k)_s − h_s` over the saturation box, per step; nonpositive means guaranteed.
pub fn worst_case_margin<T: Real>(
    lifted: &LiftedSystem<T>,
    spec: &HardInputSpec<T>,
    v: &DVector<T>,
    gains: &[DMatrix<T>],
) -> f64 {
    let (nh, n, m) = (lifted.horizon, lifted.n, lifted.m);
    let ad = ad_matrix(lifted);
    let sigma = spec.sigma(nh);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..nh {
        let coef = &spec.h_mat * &gains[k] * ad.rows(k * n, n);
        let hv = &spec.h_mat * v.rows(k * m, m);
        for s in 0..spec.h_mat.nrows() {
            let spread: T = coef.row(s).iter().zip(sigma.iter()).fold(T::zero(), |acc, (c, w)| acc + c.abs() * *w);
            worst = worst.max(to_f64(hv[s] + spread - spec.h_vec[s]));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_clamps_and_is_odd() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let y = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(saturate(&y, &m), y);
        assert_eq!(saturate(&(&m * 2.0), &m), m);
        let y = DVector::from_vec(vec![3.0, -7.0]);
        assert_eq!(saturate(&(-&y), &m), -saturate(&y, &m));
    }

    #[test]
    fn no_saturation_reproduces_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = DVector::from_vec(vec![1e6, 1e6]);
        let mom = saturated_moments(&s, &m, 10_000, 1).unwrap();
        assert_eq!(mom.cross, s);
        assert_eq!(mom.second, s);
    }

    #[test]
    fn seed_determinism() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = DVector::from_vec(vec![1.0, 1.0]);
        let a = saturated_moments(&s, &m, 50_000, 9).unwrap();
        let b = saturated_moments(&s, &m, 50_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn s_rows_are_signed_units() {
        let spec = HardInputSpec::<f64>::box_bound(1, 1.0, DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0]));
        let s = spec.s_matrix(2);
        assert_eq!(s.shape(), (6, 3));
        assert_eq!(s[(2, 1)], 1.0);
        assert_eq!(s[(3, 1)], -1.0);
        assert_eq!(spec.sigma(2).as_slice(), &[1.0, 2.0, 2.0]);
    }
}
