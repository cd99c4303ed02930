//! Seeded Monte Carlo validation of a solved controller.
//!
//! Sample `s` draws from the stream `(seed, s)`: `n` normals for the initial deviation,
//! then `N r` for the disturbances. Two controllers validated with the same seed
//! therefore see the same noise realizations.

pub mod laws;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::StateConstraints;
use crate::error::{Error, Result};
use crate::hardinput::HardInputSpec;
use crate::linalg;
use crate::rng;
use crate::scalar::{to_f64, Real};
use crate::steering::{ControllerSolution, SteeringProblem};

/// Closed-loop Monte Carlo trajectories, stored sample-major.
#[derive(Debug, Clone)]
pub struct RolloutEnsemble {
    pub samples: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// Feedback through the saturated signal `z`.
    pub saturated: bool,
    states: Vec<f64>,
    inputs: Vec<f64>,
}

impl RolloutEnsemble {
    /// `x_k` of sample `s`.
    pub fn state(&self, s: usize, k: usize) -> &[f64] {
        let stride = (self.horizon + 1) * self.n;
        &self.states[s * stride + k * self.n..s * stride + (k + 1) * self.n]
    }

    /// `u_k` of sample `s`.
    pub fn input(&self, s: usize, k: usize) -> &[f64] {
        let stride = self.horizon * self.m;
        &self.inputs[s * stride + k * self.m..s * stride + (k + 1) * self.m]
    }

    /// Largest `‖u_k‖∞` over the ensemble.
    pub fn max_input_norm(&self) -> f64 {
        self.inputs.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Samples with some `(H u_k)_s > h_s`, checked without tolerance.
    pub fn input_violations<T: Real>(&self, spec: &HardInputSpec<T>) -> usize {
        let h = linalg::to_f64_matrix(&spec.h_mat);
        let hv: Vec<f64> = spec.h_vec.iter().map(|v| to_f64(*v)).collect();
        (0..self.samples)
            .filter(|&s| {
                (0..self.horizon).any(|k| {
                    let u = self.input(s, k);
                    (0..h.nrows()).any(|r| (0..self.m).map(|a| h[(r, a)] * u[a]).sum::<f64>() > hv[r])
                })
            })
            .count()
    }

    /// Sample mean and covariance (divisor `S − 1`) of `x_k`.
    pub fn moments_at(&self, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut mean = DVector::zeros(n);
        for s in 0..self.samples {
            for (i, v) in self.state(s, k).iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= self.samples as f64;
        let mut cov = DMatrix::zeros(n, n);
        for s in 0..self.samples {
            let x = self.state(s, k);
            for i in 0..n {
                let di = x[i] - mean[i];
                for j in 0..n {
                    cov[(i, j)] += di * (x[j] - mean[j]);
                }
            }
        }
        cov /= (self.samples.max(2) - 1) as f64;
        (mean, cov)
    }
}

/// Closed-loop rollouts of `sol` on `problem`.
pub fn rollout<T: Real>(
    problem: &SteeringProblem<T>,
    sol: &ControllerSolution<T>,
    samples: usize,
    seed: u64,
) -> RolloutEnsemble {
    rollout_scaled(problem, sol, samples, seed, 1.0)
}

/// As [`rollout`] with every normal draw multiplied by `scale`; `0` gives the mean trajectory.
pub fn rollout_scaled<T: Real>(
    problem: &SteeringProblem<T>,
    sol: &ControllerSolution<T>,
    samples: usize,
    seed: u64,
    scale: f64,
) -> RolloutEnsemble {
    let sys = &problem.lifted.system;
    let (nh, n, m, r) = (sys.horizon(), sys.n(), sys.m(), sys.r());
    let a: Vec<DMatrix<f64>> = (0..nh).map(|k| linalg::to_f64_matrix(sys.a(k))).collect();
    let b: Vec<DMatrix<f64>> = (0..nh).map(|k| linalg::to_f64_matrix(sys.b(k))).collect();
    let d: Vec<DMatrix<f64>> = (0..nh).map(|k| linalg::to_f64_matrix(sys.d(k))).collect();
    let gains: Vec<DMatrix<f64>> = sol.gains.iter().map(linalg::to_f64_matrix).collect();
    let v: Vec<f64> = sol.v.iter().map(|x| to_f64(*x)).collect();
    let mu0 = DVector::from_iterator(n, problem.mu0.iter().map(|x| to_f64(*x)));
    let l0 = linalg::to_f64_matrix(
        &linalg::cholesky(&problem.lifted.sigma0, "Sigma_0", None).expect("validated problem has PD Sigma_0"),
    );
    let sat = problem.hard_input.as_ref().map(|h| {
        (
            DVector::from_iterator(n, h.y_max.iter().map(|x| to_f64(*x))),
            DVector::from_iterator(r, h.w_max.iter().map(|x| to_f64(*x))),
        )
    });
    let clip = |x: &DVector<f64>, lim: &DVector<f64>| x.zip_map(lim, |v, l| v.clamp(-l, l));

    let xs = (nh + 1) * n;
    let us = nh * m;
    let mut states = vec![0.0; samples * xs];
    let mut inputs = vec![0.0; samples * us];
    states.par_chunks_mut(xs).zip(inputs.par_chunks_mut(us)).enumerate().for_each(|(s, (xo, uo))| {
        let mut g = rng::stream(seed, s as u64);
        let mut e0 = vec![0.0; n];
        let mut ew = vec![0.0; nh * r];
        rng::fill_normal(&mut g, &mut e0);
        rng::fill_normal(&mut g, &mut ew);
        let y0 = &l0 * DVector::from_vec(e0) * scale;
        let mut x = &mu0 + &y0;
        // Fed-back signal: open-loop deviation, or its saturated counterpart.
        let mut y = match &sat {
            Some((ym, _)) => clip(&y0, ym),
            None => y0,
        };
        xo[..n].copy_from_slice(x.as_slice());
        for k in 0..nh {
            let w = DVector::from_column_slice(&ew[k * r..(k + 1) * r]) * scale;
            let u = DVector::from_column_slice(&v[k * m..(k + 1) * m]) + &gains[k] * &y;
            uo[k * m..(k + 1) * m].copy_from_slice(u.as_slice());
            x = &a[k] * &x + &b[k] * &u + &d[k] * &w;
            let wf = match &sat {
                Some((_, wm)) => clip(&w, wm),
                None => w,
            };
            y = &a[k] * &y + &d[k] * wf;
            xo[(k + 1) * n..(k + 2) * n].copy_from_slice(x.as_slice());
        }
    });
    RolloutEnsemble { samples, seed, n, m, horizon: nh, saturated: sat.is_some(), states, inputs }
}

/// Per-column violation flags of one state.
fn violated<T: Real>(cc: &StateConstraints<T>, x: &[f64], out: &mut [bool]) {
    match cc {
        StateConstraints::None => {}
        StateConstraints::Polytope(p) => {
            for (j, hs) in p.halfspaces.iter().enumerate() {
                let lhs: f64 = hs.alpha.iter().zip(x).map(|(a, v)| to_f64(*a) * v).sum();
                out[j] = lhs > to_f64(hs.beta);
            }
        }
        StateConstraints::Cone(c) => {
            let mut norm2 = 0.0;
            for i in 0..c.a.nrows() {
                let row: f64 = (0..x.len()).map(|j| to_f64(c.a[(i, j)]) * x[j]).sum::<f64>() + to_f64(c.b[i]);
                norm2 += row * row;
            }
            let rhs: f64 = c.c.iter().zip(x).map(|(a, v)| to_f64(*a) * v).sum::<f64>() + to_f64(c.d);
            out[0] = norm2.sqrt() > rhs;
        }
    }
}

/// Empirical joint and marginal violation frequencies over `k = 1..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRisk {
    pub samples: usize,
    pub violations: usize,
    pub joint: f64,
    pub std_err: f64,
    pub steps: usize,
    pub cols: usize,
    /// `steps × cols`, row-major, step `k` at row `k − 1`.
    pub marginals: Vec<f64>,
}

impl EmpiricalRisk {
    pub fn marginal(&self, k: usize, j: usize) -> f64 {
        self.marginals[(k - 1) * self.cols + j]
    }

    /// Joint frequency ≤ Σ marginals + 3 pooled standard errors.
    pub fn boole_consistent(&self) -> bool {
        let s = self.samples as f64;
        let pooled: f64 = self.marginals.iter().map(|p| p * (1.0 - p) / s).sum::<f64>().sqrt();
        self.joint <= self.marginals.iter().sum::<f64>() + 3.0 * (pooled + self.std_err)
    }
}

/// Binomial standard error of a frequency.
pub fn binomial_se(p: f64, samples: usize) -> f64 {
    (p * (1.0 - p) / samples.max(1) as f64).sqrt()
}

pub fn empirical_joint_risk<T: Real>(ens: &RolloutEnsemble, cc: &StateConstraints<T>) -> EmpiricalRisk {
    let cols = cc.allocation_width();
    let nh = ens.horizon;
    let per_sample: Vec<(bool, Vec<bool>)> = (0..ens.samples)
        .into_par_iter()
        .map(|s| {
            let mut flags = vec![false; nh * cols];
            let mut any = false;
            for k in 1..=nh {
                let row = &mut flags[(k - 1) * cols..k * cols];
                violated(cc, ens.state(s, k), row);
                any |= row.iter().any(|f| *f);
            }
            (any, flags)
        })
        .collect();
    let mut counts = vec![0usize; nh * cols];
    let mut joint = 0usize;
    for (any, flags) in &per_sample {
        joint += *any as usize;
        for (c, f) in counts.iter_mut().zip(flags) {
            *c += *f as usize;
        }
    }
    let s = ens.samples.max(1) as f64;
    let p = joint as f64 / s;
    EmpiricalRisk {
        samples: ens.samples,
        violations: joint,
        joint: p,
        std_err: binomial_se(p, ens.samples),
        steps: nh,
        cols,
        marginals: counts.iter().map(|c| *c as f64 / s).collect(),
    }
}

/// Monte Carlo and analytic summary of a solved controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub risk: EmpiricalRisk,
    pub boole_consistent: bool,
    /// `‖E_N X̄ − μ_f‖∞` from the solution.
    pub terminal_mean_error: f64,
    /// `‖x̂_N − μ_f‖∞` from the ensemble.
    pub empirical_terminal_mean_error: f64,
    /// Largest `|x̂_N − μ_f|` in units of its standard error.
    pub terminal_mean_z: f64,
    /// `λ_min(Σ_f − Σ_N)` from the solution.
    pub terminal_lambda_min: f64,
    /// `λ_min(Σ_f − Σ̂_N)` from the ensemble.
    pub empirical_terminal_lambda_min: f64,
    /// `‖Σ̂_N − Σ_N‖_F / ‖Σ_N‖_F`
    pub terminal_cov_rel_error: f64,
    /// `V_N = log det Σ_N`
    pub terminal_volume: Option<f64>,
    pub max_input_norm: f64,
    /// Rollouts violating the hard input bound, when one is imposed.
    pub input_violations: Option<usize>,
}

/// Rolls out `sol` and summarizes it.
pub fn validate<T: Real>(
    problem: &SteeringProblem<T>,
    sol: &ControllerSolution<T>,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if samples < 2 {
        return Err(Error::OutOfRange { what: "validation samples", detail: "need at least 2".into() });
    }
    let ens = rollout(problem, sol, samples, seed);
    Ok(report_from(problem, sol, &ens))
}

pub fn report_from<T: Real>(problem: &SteeringProblem<T>, sol: &ControllerSolution<T>, ens: &RolloutEnsemble) -> ValidationReport {
    let nh = problem.horizon();
    let risk = empirical_joint_risk(ens, &problem.constraints);
    let mu_f = DVector::from_iterator(problem.mu_f.len(), problem.mu_f.iter().map(|v| to_f64(*v)));
    let sigma_f = linalg::to_f64_matrix(&problem.sigma_f);
    let mean_n = DVector::from_iterator(mu_f.len(), sol.mean_at(nh).iter().map(|v| to_f64(*v)));
    let cov_n = linalg::to_f64_matrix(&sol.cov_at(nh));
    let (emp_mean, emp_cov) = ens.moments_at(nh);
    let s = ens.samples as f64;
    let terminal_mean_z = (0..mu_f.len())
        .map(|i| {
            let se = (cov_n[(i, i)] / s).sqrt();
            let dev = (emp_mean[i] - mu_f[i]).abs();
            if se > 0.0 {
                dev / se
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let cov_norm = cov_n.norm();
    ValidationReport {
        samples: ens.samples,
        seed: ens.seed,
        boole_consistent: risk.boole_consistent(),
        risk,
        terminal_mean_error: (&mean_n - &mu_f).amax(),
        empirical_terminal_mean_error: (&emp_mean - &mu_f).amax(),
        terminal_mean_z,
        terminal_lambda_min: linalg::min_eigenvalue(&linalg::symmetrize(&(&sigma_f - &cov_n))),
        empirical_terminal_lambda_min: linalg::min_eigenvalue(&linalg::symmetrize(&(&sigma_f - &emp_cov))),
        terminal_cov_rel_error: if cov_norm > 0.0 { (&emp_cov - &cov_n).norm() / cov_norm } else { emp_cov.norm() },
        terminal_volume: sol.terminal_volume().map(to_f64),
        max_input_norm: ens.max_input_norm(),
        input_violations: problem.hard_input.as_ref().map(|h| ens.input_violations(h)),
    }
}

/// Paired comparison of two controllers under common random numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub first: ValidationReport,
    pub second: ValidationReport,
    /// Samples violating under the first controller only, and under the second only.
    pub discordant: (usize, usize),
}

pub fn compare<T: Real>(
    a: (&SteeringProblem<T>, &ControllerSolution<T>),
    b: (&SteeringProblem<T>, &ControllerSolution<T>),
    samples: usize,
    seed: u64,
) -> Result<Comparison> {
    if samples < 2 {
        return Err(Error::OutOfRange { what: "validation samples", detail: "need at least 2".into() });
    }
    let ea = rollout(a.0, a.1, samples, seed);
    let eb = rollout(b.0, b.1, samples, seed);
    let flags = |ens: &RolloutEnsemble, cc: &StateConstraints<T>| -> Vec<bool> {
        let cols = cc.allocation_width();
        (0..ens.samples)
            .map(|s| {
                let mut row = vec![false; cols];
                (1..=ens.horizon).any(|k| {
                    violated(cc, ens.state(s, k), &mut row);
                    row.iter().any(|f| *f)
                })
            })
            .collect()
    };
    let fa = flags(&ea, &a.0.constraints);
    let fb = flags(&eb, &b.0.constraints);
    let only_a = fa.iter().zip(&fb).filter(|(x, y)| **x && !**y).count();
    let only_b = fa.iter().zip(&fb).filter(|(x, y)| !**x && **y).count();
    Ok(Comparison {
        first: report_from(a.0, a.1, &ea),
        second: report_from(b.0, b.1, &eb),
        discordant: (only_a, only_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{Clarabel, QuadMode, Tolerances};
    use crate::constraints::{Halfspace, PolytopeCC, RiskAllocation};
    use crate::lifting::{lift, LtvSystem};
    use crate::steering::{self, NoiseModel};

    fn problem() -> SteeringProblem<f64> {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.125, 0.5]);
        let d = DMatrix::identity(2, 2) * 0.05;
        let sys = LtvSystem::time_invariant(a, b, d, 5).unwrap();
        let lifted = lift(
            &sys,
            &vec![DMatrix::identity(2, 2); 5],
            &vec![DMatrix::identity(1, 1); 5],
            &(DMatrix::identity(2, 2) * 0.2),
        )
        .unwrap();
        let poly = PolytopeCC::new(vec![Halfspace { alpha: DVector::from_vec(vec![1.0, 0.0]), beta: 4.5 }]).unwrap();
        SteeringProblem {
            lifted,
            mu0: DVector::from_vec(vec![4.0, 0.0]),
            mu_f: DVector::zeros(2),
            sigma_f: DMatrix::identity(2, 2) * 0.15,
            budget: 0.05,
            constraints: StateConstraints::Polytope(poly),
            hard_input: None,
            quad_mode: QuadMode::Native,
        }
    }

    fn solved() -> (SteeringProblem<f64>, ControllerSolution<f64>) {
        let p = problem();
        let noise = NoiseModel::unsaturated(&p.lifted).unwrap();
        let alloc = RiskAllocation::uniform(5, 1, p.budget);
        let out = steering::solve(&p, &alloc, &noise, &Clarabel, &Tolerances::default()).unwrap();
        (p, out.solution)
    }

    #[test]
    fn zero_noise_reproduces_mean() {
        let (p, sol) = solved();
        let ens = rollout_scaled(&p, &sol, 3, 9, 0.0);
        for s in 0..3 {
            for k in 0..=5 {
                let mk = sol.mean_at(k);
                for (i, v) in ens.state(s, k).iter().enumerate() {
                    assert!((v - mk[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn terminal_moments_match_analytic() {
        let (p, sol) = solved();
        let rep = validate(&p, &sol, 100_000, 11).unwrap();
        assert!(rep.terminal_mean_z < 4.0, "z = {}", rep.terminal_mean_z);
        assert!(rep.terminal_cov_rel_error < 0.05, "rel = {}", rep.terminal_cov_rel_error);
        assert!(rep.boole_consistent);
    }

    #[test]
    fn identical_seeds_identical_reports() {
        let (p, sol) = solved();
        let a = serde_json::to_string(&validate(&p, &sol, 2000, 5).unwrap()).unwrap();
        let b = serde_json::to_string(&validate(&p, &sol, 2000, 5).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn whole_space_has_no_risk() {
        let (mut p, sol) = solved();
        p.constraints = StateConstraints::Polytope(
            PolytopeCC::new(vec![Halfspace { alpha: DVector::from_vec(vec![1.0, 0.0]), beta: f64::INFINITY }]).unwrap(),
        );
        let ens = rollout(&p, &sol, 1000, 1);
        assert_eq!(empirical_joint_risk(&ens, &p.constraints).joint, 0.0);
    }
}
