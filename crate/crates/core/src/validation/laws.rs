//! Randomized checks of the probability laws behind the chance-constraint reformulations.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_rational::Ratio;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::disk_probability;
use crate::normal;
use crate::rng;

/// Outcome of one law over its randomized instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawCheck {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Smallest slack across trials; negative means the law failed somewhere.
    pub worst_margin: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub seed: u64,
    pub checks: Vec<LawCheck>,
}

impl LawReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&LawCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const DISK_LAW: &str = "disk_law";
pub const DISK_BOUND: &str = "disk_bound";
pub const RELAXATION_ORDERING: &str = "relaxation_ordering";
pub const REVERSE_UNION_BOUND: &str = "reverse_union_bound";
pub const DECOMPOSITION: &str = "two_sided_decomposition";

fn check(name: &str, margins: &[f64], detail: String) -> LawCheck {
    let failures = margins.iter().filter(|m| **m < 0.0).count();
    LawCheck {
        name: name.into(),
        trials: margins.len(),
        failures,
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        passed: failures == 0,
        detail,
    }
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::open_uniform(r)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng::normal(r))
}

fn random_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng::normal(r))
}

/// Random covariance with condition number up to `cond`.
fn random_cov(r: &mut ChaCha8Rng, n: usize, cond: f64) -> DMatrix<f64> {
    let q = random_matrix(r, n, n).qr().q();
    let eig = DVector::from_fn(n, |_, _| cond.powf(rng::open_uniform(r)));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Parallel count of `hit` over `samples` draws, chunked by stream index.
fn mc_count<F>(seed: u64, samples: usize, dim: usize, hit: F) -> usize
where
    F: Fn(&[f64]) -> bool + Sync,
{
    const CHUNK: usize = 1 << 14;
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let mut z = vec![0.0; dim];
            let mut n = 0usize;
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                rng::fill_normal(&mut r, &mut z);
                n += hit(&z) as usize;
            }
            n
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// `ℙ(ζᵀΣ⁻¹ζ ≤ a²) = 1 − e^{−a²/2}` for planar Gaussians, against Monte Carlo.
pub fn disk_law(seed: u64, samples: usize) -> LawCheck {
    let mut r = rng::stream(seed, u64::MAX);
    let mut margins = Vec::new();
    let mut detail = String::new();
    for (i, a) in [0.5, 1.0, 2.0, 3.0].into_iter().enumerate() {
        let sigma = random_cov(&mut r, 2, 50.0);
        let l = sigma.clone().cholesky().expect("random covariance is PD").l();
        let inv = sigma.try_inverse().expect("random covariance is invertible");
        let hits = mc_count(seed.wrapping_add(i as u64 + 1), samples, 2, |z| {
            let zeta = &l * DVector::from_column_slice(z);
            (zeta.transpose() * &inv * &zeta)[(0, 0)] <= a * a
        });
        let freq = hits as f64 / samples as f64;
        let exact = disk_probability(a).expect("nonnegative radius");
        let se = super::binomial_se(exact, samples);
        margins.push(3.0 * se - (freq - exact).abs());
        detail.push_str(&format!("a={a}: mc={freq:.6} law={exact:.6} se={se:.2e}; "));
    }
    check(DISK_LAW, &margins, detail)
}

/// Exact `ℙ(‖ζ‖ ≤ r)` for `ζ ~ 𝒩(0, Σ)` in the plane by periodic quadrature over the angle.
pub fn disk_probability_exact(sigma: &Matrix2<f64>, radius: f64, nodes: usize) -> f64 {
    let inv = sigma.try_inverse().expect("positive definite covariance");
    let det = sigma.determinant();
    let h = std::f64::consts::TAU / nodes as f64;
    let mut sum = 0.0;
    for i in 0..nodes {
        let (s, c) = (i as f64 * h).sin_cos();
        let q = c * c * inv[(0, 0)] + 2.0 * s * c * inv[(0, 1)] + s * s * inv[(1, 1)];
        sum += -(-0.5 * radius * radius * q).exp_m1() / q;
    }
    sum * h / (std::f64::consts::TAU * det.sqrt())
}

/// `ℙ(‖ζ‖ ≤ r) ≥ 1 − e^{−r²/2σ²}` with `σ² = λ_max(Σ)`.
pub fn disk_bound(seed: u64, trials: usize) -> LawCheck {
    let margins: Vec<f64> = (0..trials)
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let s = random_cov(&mut r, 2, 100.0);
            let sigma = Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
            let smax = sigma.symmetric_eigenvalues().max().sqrt();
            let radius = smax * uniform(&mut r, 0.1, 4.0);
            let exact = disk_probability_exact(&sigma, radius, 4096);
            let bound = disk_probability(radius / smax).expect("nonnegative radius");
            exact - bound + 1e-12
        })
        .collect();
    check(DISK_BOUND, &margins, format!("{trials} random planar covariances, exact angular quadrature"))
}

/// Paired Monte Carlo of `ℙ(‖Ax+b‖ ≤ cᵀx+d) ≥ ℙ(‖Ax+b‖ ≤ cᵀμ+d)` on random 3-D cones.
pub fn relaxation_ordering(seed: u64, trials: usize, samples: usize) -> LawCheck {
    let mut detail = String::new();
    let margins: Vec<f64> = (0..trials)
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let a = random_matrix(&mut r, 3, 3);
            let b = random_vector(&mut r, 3);
            let c = random_vector(&mut r, 3) * 0.5;
            let mu = random_vector(&mut r, 3) * 2.0;
            let sigma = random_cov(&mut r, 3, 20.0) * uniform(&mut r, 0.05, 1.0);
            let l = sigma.clone().cholesky().expect("random covariance is PD").l();
            let spread = (&a * &l).norm() + (l.transpose() * &c).norm();
            let d = (&a * &mu + &b).norm() - c.dot(&mu) + spread * uniform(&mut r, 0.5, 4.0);
            let kappa_bar = c.dot(&mu) + d;
            let (mut only_orig, mut only_relax, mut orig) = (0usize, 0usize, 0usize);
            let mut g = rng::stream(seed.wrapping_add(1), t as u64);
            let mut z = [0.0; 3];
            for _ in 0..samples {
                rng::fill_normal(&mut g, &mut z);
                let x = &mu + &l * DVector::from_column_slice(&z);
                let lhs = (&a * &x + &b).norm();
                let o = lhs <= c.dot(&x) + d;
                let q = lhs <= kappa_bar;
                orig += o as usize;
                only_orig += (o && !q) as usize;
                only_relax += (q && !o) as usize;
            }
            let s = samples as f64;
            let diff = (only_orig as f64 - only_relax as f64) / s;
            let var = (only_orig + only_relax) as f64 / s - diff * diff;
            let se = (var / s).sqrt();
            let margin = diff + 3.0 * se;
            if margin < 0.0 && detail.len() < 400 {
                detail.push_str(&format!("trial {t}: p_cone={:.4} gap={diff:.4} se={se:.1e}; ", orig as f64 / s));
            }
            margin
        })
        .collect();
    check(RELAXATION_ORDERING, &margins, detail)
}

/// `ℙ(∩A_i) ≥ Σℙ(A_i) − (n−1)` in exact rational arithmetic on random finite spaces.
pub fn reverse_union_bound(seed: u64, trials: usize) -> LawCheck {
    let mut margins = Vec::with_capacity(trials + 1);
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let n = 2 + (r.next_u32() % 3) as usize;
        // One atom per membership pattern.
        let mut w: Vec<i64> = (0..1usize << n).map(|_| (r.next_u32() % 21) as i64).collect();
        if w.iter().all(|v| *v == 0) {
            w[0] = 1;
        }
        let total: i64 = w.iter().sum();
        let p = |mask: usize| -> Ratio<i64> {
            let s: i64 = w.iter().enumerate().filter(|(a, _)| a & mask == mask).map(|(_, v)| *v).sum();
            Ratio::new(s, total)
        };
        let inter = p((1 << n) - 1);
        let bound = (0..n).map(|i| p(1 << i)).sum::<Ratio<i64>>() - Ratio::from_integer(n as i64 - 1);
        let slack = inter - bound;
        margins.push(*slack.numer() as f64 / *slack.denom() as f64);
    }
    // Minimum-overlap coupling attains the bound: ten equal atoms, A₁ = {1..9}, A₂ = {2..10}.
    let tenth = Ratio::new(1i64, 10);
    let (p1, p2, both) = (tenth * 9, tenth * 9, tenth * 8);
    let tight = both - (p1 + p2 - Ratio::from_integer(1));
    margins.push(if tight == Ratio::from_integer(0) { 0.0 } else { -1.0 });
    check(REVERSE_UNION_BOUND, &margins, format!("{trials} random spaces with 2 to 4 events, plus the 0.9/0.9 → 0.8 coupling"))
}

/// Smallest `f` with `ℙ(|ψ| ≤ f) ≥ p` for `ψ ~ 𝒩(m, s²)`.
pub fn two_sided_radius(m: f64, s: f64, p: f64) -> f64 {
    let prob = |f: f64| normal::cdf((f - m) / s) - normal::cdf((-f - m) / s);
    let (mut lo, mut hi) = (0.0, m.abs() + 10.0 * s);
    while prob(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if prob(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Per-coordinate two-sided bounds at levels `1 − β_iδ` with `Σf_i² = κ²` imply
/// `ℙ(Σψ_i² ≤ κ²) ≥ 1 − δ`.
pub fn decomposition(seed: u64, trials: usize, samples: usize) -> LawCheck {
    let margins: Vec<f64> = (0..trials)
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let n = 2 + t % 2;
            let mean = random_vector(&mut r, n) * 0.5;
            let cov = random_cov(&mut r, n, 20.0);
            let l = cov.clone().cholesky().expect("random covariance is PD").l();
            let delta = uniform(&mut r, 0.02, 0.2);
            let beta = 1.0 / n as f64;
            let kappa2: f64 = (0..n)
                .map(|i| two_sided_radius(mean[i], cov[(i, i)].sqrt(), 1.0 - beta * delta).powi(2))
                .sum();
            let hits = mc_count(seed.wrapping_add(1 + t as u64), samples, n, |z| {
                let psi = &mean + &l * DVector::from_column_slice(z);
                psi.norm_squared() <= kappa2
            });
            let freq = hits as f64 / samples as f64;
            freq - (1.0 - delta) + 3.0 * super::binomial_se(1.0 - delta, samples)
        })
        .collect();
    check(DECOMPOSITION, &margins, format!("{trials} random 2-D and 3-D instances, {samples} samples each"))
}

/// Runs every law check with sub-seeds derived from `seed`.
pub fn probability_law_oracles(seed: u64) -> LawReport {
    let checks = vec![
        disk_law(seed, 1_000_000),
        disk_bound(seed ^ 0x2, 100),
        relaxation_ordering(seed ^ 0x3, 100, 20_000),
        reverse_union_bound(seed ^ 0x4, 100),
        decomposition(seed ^ 0x5, 100, 20_000),
    ];
    LawReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadrature_matches_isotropic_law() {
        let s = Matrix2::new(2.0, 0.0, 0.0, 2.0);
        for r in [0.3, 1.0, 2.5] {
            let exact = disk_probability_exact(&s, r, 1024);
            let law = disk_probability(r / 2f64.sqrt()).unwrap();
            assert!((exact - law).abs() < 1e-13);
        }
    }

    #[test]
    fn two_sided_radius_standard() {
        let f = two_sided_radius(0.0, 1.0, 0.95);
        assert!((f - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn reverse_union_bound_exact() {
        let c = reverse_union_bound(3, 50);
        assert!(c.passed, "{c:?}");
        assert_eq!(c.worst_margin, 0.0);
    }
}
