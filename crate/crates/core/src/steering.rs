//! Lower-stage covariance steering program.
//!
//! Policy `u_k = v_k + K_k y_k` with block-diagonal `K`, giving
//! `X̄ = 𝓐μ_0 + 𝓑V` and `X̃ = (M_0 + 𝓑 K M_1) η`, `η ~ 𝒩(0, I)`.
//! Without input saturation `M_0 = M_1 = [𝓐 L_0, 𝓓]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffExpr, ConicBackend, ConicProgram, QuadMode, SolveStatus, Tolerances, Var};
use crate::constraints::{self, ChanceHandle, RiskAllocation, StateConstraints};
use crate::error::{Error, Family, Result};
use crate::hardinput::{self, HardInputSpec};
use crate::lifting::LiftedSystem;
use crate::linalg;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone)]
pub struct SteeringProblem<T: Real> {
    pub lifted: LiftedSystem<T>,
    pub mu0: DVector<T>,
    pub mu_f: DVector<T>,
    pub sigma_f: DMatrix<T>,
    /// Total risk budget Δ.
    pub budget: T,
    pub constraints: StateConstraints<T>,
    pub hard_input: Option<HardInputSpec<T>>,
    pub quad_mode: QuadMode,
}

impl<T: Real> SteeringProblem<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.lifted.n;
        if self.mu0.len() != n || self.mu_f.len() != n {
            return Err(Error::dim(format!("boundary means must have length {n}")));
        }
        if self.sigma_f.shape() != (n, n) {
            return Err(Error::dim(format!("Sigma_f must be {n}x{n}")));
        }
        linalg::cholesky(&self.sigma_f, "Sigma_f", None)?;
        linalg::cholesky(&self.lifted.sigma0, "Sigma_0", None)?;
        if !(self.budget > T::zero() && self.budget <= lit(0.5)) {
            return Err(Error::OutOfRange { what: "risk budget", detail: "must lie in (0, 0.5]".into() });
        }
        self.constraints.validate(n)?;
        if let Some(h) = &self.hard_input {
            h.validate(&self.lifted)?;
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.lifted.horizon
    }
}

/// Factors of the closed-loop deviation, `X̃ = (M_0 + 𝓑 K M_1) η`.
#[derive(Debug, Clone)]
pub struct NoiseModel<T: Real> {
    pub m0: DMatrix<T>,
    pub m1: DMatrix<T>,
}

impl<T: Real> NoiseModel<T> {
    pub fn unsaturated(lifted: &LiftedSystem<T>) -> Result<Self> {
        let m = lifted.noise_factor()?;
        Ok(Self { m0: m.clone(), m1: m })
    }

    pub fn dim(&self) -> usize {
        self.m0.ncols()
    }

    /// `Σ_UU`-style second moment of the fed-back signal, `M_1 M_1ᵀ`.
    pub fn feedback_cov(&self) -> DMatrix<T> {
        &self.m1 * self.m1.transpose()
    }
}

/// Noise model for `problem`, estimating saturated moments when hard input bounds are present.
pub fn noise_model<T: Real>(problem: &SteeringProblem<T>) -> Result<NoiseModel<T>> {
    match &problem.hard_input {
        None => NoiseModel::unsaturated(&problem.lifted),
        Some(spec) => hardinput::saturated_noise_model(&problem.lifted, spec),
    }
}

/// Variable layout: `v(k, a)` then `K_k[a, b]`.
#[derive(Debug, Clone)]
pub struct DecisionVars {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub v: Vec<Var>,
    pub k: Vec<Var>,
}

impl DecisionVars {
    pub fn v(&self, k: usize, a: usize) -> Var {
        self.v[k * self.m + a]
    }

    pub fn k(&self, step: usize, a: usize, b: usize) -> Var {
        self.k[step * self.m * self.n + a * self.n + b]
    }

    pub fn all(&self) -> Vec<Var> {
        self.v.iter().chain(self.k.iter()).copied().collect()
    }
}

/// Affine maps from decision variables to state functionals.
pub struct Layout<'a, T: Real> {
    pub lifted: &'a LiftedSystem<T>,
    pub noise: &'a NoiseModel<T>,
    pub mu0: &'a DVector<T>,
    pub vars: DecisionVars,
    mean_free: DVector<T>,
}

impl<'a, T: Real> Layout<'a, T> {
    pub fn new(lifted: &'a LiftedSystem<T>, noise: &'a NoiseModel<T>, mu0: &'a DVector<T>, vars: DecisionVars) -> Self {
        let mean_free = &lifted.a_cal * mu0;
        Self { lifted, noise, mu0, vars, mean_free }
    }

    /// `αᵀ x̄_k` as an affine expression in `V`.
    pub fn mean_expr(&self, k: usize, alpha: &DVector<T>) -> AffExpr<T> {
        let (n, m) = (self.lifted.n, self.lifted.m);
        let mut e = AffExpr::constant(alpha.dot(&self.mean_free.rows(k * n, n)));
        for kp in 0..k {
            let blk = self.lifted.b_cal.view((k * n, kp * m), (n, m));
            for a in 0..m {
                let c = blk.column(a).dot(alpha);
                e.add_term(self.vars.v(kp, a), c);
            }
        }
        e
    }

    /// `(M_0 + 𝓑 K M_1)ᵀ E_kᵀ α` entry by entry; identically zero entries are dropped.
    pub fn deviation_exprs(&self, k: usize, alpha: &DVector<T>) -> Vec<AffExpr<T>> {
        self.deviation_exprs_full(k, alpha)
            .into_iter()
            .filter(|e| !(e.terms.is_empty() && e.constant == T::zero()))
            .collect()
    }

    /// Same entries without dropping, one per noise coordinate.
    pub fn deviation_exprs_full(&self, k: usize, alpha: &DVector<T>) -> Vec<AffExpr<T>> {
        let (n, m) = (self.lifted.n, self.lifted.m);
        let q = self.noise.dim();
        // 𝓑ᵀE_kᵀα restricted to inputs before step k.
        let mut bw = vec![T::zero(); k * m];
        for kp in 0..k {
            let blk = self.lifted.b_cal.view((k * n, kp * m), (n, m));
            for a in 0..m {
                bw[kp * m + a] = blk.column(a).dot(alpha);
            }
        }
        let m0k = self.noise.m0.rows(k * n, n);
        let mut out = Vec::with_capacity(q);
        for c in 0..q {
            let mut e = AffExpr::constant(m0k.column(c).dot(alpha));
            for kp in 0..k {
                for b in 0..n {
                    let m1v = self.noise.m1[(kp * n + b, c)];
                    if m1v == T::zero() {
                        continue;
                    }
                    for a in 0..m {
                        let w = bw[kp * m + a];
                        if w != T::zero() {
                            e.terms.push((self.vars.k(kp, a, b), w * m1v));
                        }
                    }
                }
            }
            out.push(e);
        }
        out
    }
}

/// Registers `V` and `K` in `prog`.
pub fn add_decision_vars<T: Real>(prog: &mut ConicProgram<T>, lifted: &LiftedSystem<T>) -> DecisionVars {
    let (nh, n, m) = (lifted.horizon, lifted.n, lifted.m);
    let v = prog.add_vars(nh * m);
    let k = prog.add_vars(nh * m * n);
    DecisionVars { horizon: nh, n, m, v, k }
}

/// Objective pieces `xᵀHx + gᵀx + c` over `[V; K]`.
pub struct QuadraticCost<T: Real> {
    pub h: DMatrix<T>,
    pub g: DVector<T>,
    pub c: T,
}

/// Expected cost `E[XᵀQ̄X + UᵀR̄U]` as a quadratic in `[V; vec K]`.
pub fn quadratic_cost<T: Real>(lifted: &LiftedSystem<T>, noise: &NoiseModel<T>, mu0: &DVector<T>) -> QuadraticCost<T> {
    let (nh, n, m) = (lifted.horizon, lifted.n, lifted.m);
    let nv = nh * m;
    let nk = nh * m * n;
    let bq = lifted.b_cal.transpose() * &lifted.q_bar;
    let g_mat = &bq * &lifted.b_cal + &lifted.r_bar;
    let s11 = noise.feedback_cov();
    let s01 = &noise.m0 * noise.m1.transpose();
    let am = &lifted.a_cal * mu0;

    let mut h = DMatrix::zeros(nv + nk, nv + nk);
    h.view_mut((0, 0), (nv, nv)).copy_from(&g_mat);
    for k in 0..nh {
        for a in 0..m {
            for b in 0..n {
                let row = nv + k * m * n + a * n + b;
                for l in 0..nh {
                    for ap in 0..m {
                        let gv = g_mat[(k * m + a, l * m + ap)];
                        if gv == T::zero() {
                            continue;
                        }
                        for bp in 0..n {
                            let col = nv + l * m * n + ap * n + bp;
                            h[(row, col)] = gv * s11[(k * n + b, l * n + bp)];
                        }
                    }
                }
            }
        }
    }
    let mut g = DVector::zeros(nv + nk);
    let gv = (&bq * &am) * lit::<T>(2.0);
    g.rows_mut(0, nv).copy_from(&gv);
    let bqs = &bq * &s01;
    for k in 0..nh {
        for a in 0..m {
            for b in 0..n {
                g[nv + k * m * n + a * n + b] = bqs[(k * m + a, k * n + b)] * lit::<T>(2.0);
            }
        }
    }
    let c = am.dot(&(&lifted.q_bar * &am)) + (&lifted.q_bar * (&noise.m0 * noise.m0.transpose())).trace();
    QuadraticCost { h, g, c }
}

/// Direct evaluation of the expected cost at `(V, K)`.
pub fn evaluate_cost<T: Real>(
    lifted: &LiftedSystem<T>,
    noise: &NoiseModel<T>,
    mu0: &DVector<T>,
    v: &DVector<T>,
    k: &DMatrix<T>,
) -> T {
    let xbar = &lifted.a_cal * mu0 + &lifted.b_cal * v;
    let f = &noise.m0 + &lifted.b_cal * k * &noise.m1;
    let kf = k * &noise.m1;
    xbar.dot(&(&lifted.q_bar * &xbar))
        + v.dot(&(&lifted.r_bar * v))
        + (&lifted.q_bar * &f * f.transpose()).trace()
        + (&lifted.r_bar * &kf * kf.transpose()).trace()
}

/// Assembled program plus bookkeeping.
pub struct Assembled<T: Real> {
    pub program: ConicProgram<T>,
    pub vars: DecisionVars,
    pub chance: Vec<ChanceHandle>,
}

pub fn assemble<T: Real>(
    problem: &SteeringProblem<T>,
    alloc: &RiskAllocation<T>,
    noise: &NoiseModel<T>,
) -> Result<Assembled<T>> {
    let lifted = &problem.lifted;
    let (nh, n) = (lifted.horizon, lifted.n);
    alloc.check_shape(nh, problem.constraints.allocation_width())?;
    for &d in alloc.delta.iter() {
        if !(d > T::zero() && d <= lit(0.5)) {
            return Err(Error::Allocation(format!("entry {} outside (0, 0.5]", crate::scalar::to_f64(d))));
        }
    }
    if noise.m0.nrows() != lifted.state_len() || noise.m1.shape() != noise.m0.shape() {
        return Err(Error::dim("noise factors do not match the lifted system"));
    }

    let mut prog = ConicProgram::new();
    let vars = add_decision_vars(&mut prog, lifted);

    let cost = quadratic_cost(lifted, noise, &problem.mu0);
    prog.add_quadratic_objective(&vars.all(), &cost.h, &cost.g, cost.c, problem.quad_mode)?;

    let layout = Layout::new(lifted, noise, &problem.mu0, vars.clone());

    // Terminal mean.
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = T::one();
        let mut expr = layout.mean_expr(nh, &e);
        expr.add_constant(-problem.mu_f[i]);
        prog.add_eq(expr, Family::TerminalMean, format!("terminal mean {i}"))?;
    }

    // Terminal covariance [[Σ_f, L], [Lᵀ, I]] ⪰ 0 with L = E_N (M_0 + 𝓑KM_1).
    let rows: Vec<Vec<AffExpr<T>>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = T::one();
            layout.deviation_exprs_full(nh, &e)
        })
        .collect();
    let q = rows[0].len();
    let sigma_f = problem.sigma_f.clone();
    prog.add_psd(
        n + q,
        |i, j| {
            if j < n {
                AffExpr::constant(sigma_f[(i, j)])
            } else if i < n {
                rows[i][j - n].clone()
            } else if i == j {
                AffExpr::constant(T::one())
            } else {
                AffExpr::zero()
            }
        },
        Family::TerminalCovariance,
        "terminal covariance",
    )?;

    let chance = constraints::emit(&mut prog, &layout, &problem.constraints, alloc)?;

    if let Some(spec) = &problem.hard_input {
        hardinput::emit_input_constraints(&mut prog, &layout, spec)?;
    }

    Ok(Assembled { program: prog, vars, chance })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: u32,
    pub seconds: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub max_violation: Option<f64>,
    pub reduced_accuracy: bool,
}

/// Optimal controller and its moments.
#[derive(Debug, Clone)]
pub struct ControllerSolution<T: Real> {
    pub status: SolveStatus,
    pub v: DVector<T>,
    /// `K_0, …, K_{N-1}`, each `m × n`.
    pub gains: Vec<DMatrix<T>>,
    /// Objective value reported through the program.
    pub cost: T,
    /// `X̄`
    pub mean: DVector<T>,
    /// `M_0 + 𝓑 K M_1`
    pub factor: DMatrix<T>,
    /// `Σ_X`
    pub cov: DMatrix<T>,
    /// Values of every program variable (auxiliaries included).
    pub x: Vec<T>,
    pub stats: SolverStats,
}

impl<T: Real> ControllerSolution<T> {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Lifted `K` (`Nm × (N+1)n`), last block column zero.
    pub fn k_matrix(&self) -> DMatrix<T> {
        let nh = self.gains.len();
        let (m, n) = self.gains[0].shape();
        let mut k = DMatrix::zeros(nh * m, (nh + 1) * n);
        for (i, g) in self.gains.iter().enumerate() {
            k.view_mut((i * m, i * n), (m, n)).copy_from(g);
        }
        k
    }

    pub fn mean_at(&self, k: usize) -> DVector<T> {
        let n = self.gains[0].ncols();
        self.mean.rows(k * n, n).into_owned()
    }

    pub fn cov_at(&self, k: usize) -> DMatrix<T> {
        let n = self.gains[0].ncols();
        self.cov.view((k * n, k * n), (n, n)).into_owned()
    }

    /// `V_N = log det Σ_N`.
    pub fn terminal_volume(&self) -> Option<T> {
        linalg::log_det_spd(&self.cov_at(self.horizon()))
    }

    /// Standard deviation of `αᵀ x_k`.
    pub fn std_along(&self, k: usize, alpha: &DVector<T>) -> T {
        let n = alpha.len();
        (self.factor.rows(k * n, n).transpose() * alpha).norm()
    }
}

/// Builds the solution from raw variable values.
pub fn extract<T: Real>(
    problem: &SteeringProblem<T>,
    noise: &NoiseModel<T>,
    vars: &DecisionVars,
    result: &conic::SolveResult<T>,
) -> Result<ControllerSolution<T>> {
    if result.status != SolveStatus::Optimal {
        return Err(Error::Solve { status: result.status, family: result.implicated });
    }
    let x = result.x.clone().ok_or_else(|| Error::Program("optimal result without primal values".into()))?;
    Ok(solution_from_values(problem, noise, vars, x, result))
}

fn solution_from_values<T: Real>(
    problem: &SteeringProblem<T>,
    noise: &NoiseModel<T>,
    vars: &DecisionVars,
    x: Vec<T>,
    result: &conic::SolveResult<T>,
) -> ControllerSolution<T> {
    let lifted = &problem.lifted;
    let (nh, n, m) = (lifted.horizon, lifted.n, lifted.m);
    let v = DVector::from_iterator(nh * m, vars.v.iter().map(|var| x[var.0]));
    let gains: Vec<DMatrix<T>> =
        (0..nh).map(|k| DMatrix::from_fn(m, n, |a, b| x[vars.k(k, a, b).0])).collect();
    let mut sol = ControllerSolution {
        status: SolveStatus::Optimal,
        v,
        gains,
        cost: result.objective.unwrap_or_else(|| lit(f64::NAN)),
        mean: DVector::zeros(0),
        factor: DMatrix::zeros(0, 0),
        cov: DMatrix::zeros(0, 0),
        x,
        stats: SolverStats {
            iterations: result.iterations,
            seconds: result.seconds,
            primal_residual: result.primal_residual,
            dual_residual: result.dual_residual,
            gap: result.gap,
            max_violation: result.max_violation,
            reduced_accuracy: result.reduced_accuracy,
        },
    };
    let kmat = sol.k_matrix();
    sol.mean = &lifted.a_cal * &problem.mu0 + &lifted.b_cal * &sol.v;
    sol.factor = &noise.m0 + &lifted.b_cal * &kmat * &noise.m1;
    sol.cov = &sol.factor * sol.factor.transpose();
    sol
}

/// Solution record for a given policy `(V, K_k)`, e.g. one read back from disk.
/// Auxiliary program variables are not available.
pub fn from_policy<T: Real>(
    problem: &SteeringProblem<T>,
    noise: &NoiseModel<T>,
    v: DVector<T>,
    gains: Vec<DMatrix<T>>,
) -> Result<ControllerSolution<T>> {
    let lifted = &problem.lifted;
    if v.len() != lifted.input_len()
        || gains.len() != lifted.horizon
        || gains.iter().any(|g| g.shape() != (lifted.m, lifted.n))
    {
        return Err(Error::dim("policy does not match the problem dimensions"));
    }
    let mut sol = ControllerSolution {
        status: SolveStatus::Optimal,
        v,
        gains,
        cost: T::zero(),
        mean: DVector::zeros(0),
        factor: DMatrix::zeros(0, 0),
        cov: DMatrix::zeros(0, 0),
        x: Vec::new(),
        stats: SolverStats {
            iterations: 0,
            seconds: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            max_violation: None,
            reduced_accuracy: false,
        },
    };
    let kmat = sol.k_matrix();
    sol.cost = evaluate_cost(lifted, noise, &problem.mu0, &sol.v, &kmat);
    sol.mean = &lifted.a_cal * &problem.mu0 + &lifted.b_cal * &sol.v;
    sol.factor = &noise.m0 + &lifted.b_cal * &kmat * &noise.m1;
    sol.cov = &sol.factor * sol.factor.transpose();
    Ok(sol)
}

/// Assembles, solves and extracts in one call.
pub struct SolveOutcome<T: Real> {
    pub solution: ControllerSolution<T>,
    pub chance: Vec<ChanceHandle>,
}

pub fn solve<T: Real>(
    problem: &SteeringProblem<T>,
    alloc: &RiskAllocation<T>,
    noise: &NoiseModel<T>,
    backend: &dyn ConicBackend,
    tol: &Tolerances,
) -> Result<SolveOutcome<T>> {
    let asm = assemble(problem, alloc, noise)?;
    let result = conic::solve(&asm.program, backend, tol);
    let solution = extract(problem, noise, &asm.vars, &result)?;
    Ok(SolveOutcome { solution, chance: asm.chance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{lift, LtvSystem};

    fn small_problem(d: f64) -> SteeringProblem<f64> {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.125, 0.5]);
        let dm = DMatrix::from_row_slice(2, 2, &[d, 0.0, 0.0, d]);
        let nh = 4;
        let sys = LtvSystem::time_invariant(a, b, dm, nh).unwrap();
        let q = vec![DMatrix::identity(2, 2); nh];
        let r = vec![DMatrix::identity(1, 1); nh];
        let s0 = DMatrix::identity(2, 2) * 0.5;
        let lifted = lift(&sys, &q, &r, &s0).unwrap();
        SteeringProblem {
            lifted,
            mu0: DVector::from_vec(vec![5.0, 0.0]),
            mu_f: DVector::zeros(2),
            sigma_f: DMatrix::identity(2, 2) * 0.4,
            budget: 0.05,
            constraints: StateConstraints::None,
            hard_input: None,
            quad_mode: QuadMode::Native,
        }
    }

    #[test]
    fn cost_matches_direct_evaluation() {
        let p = small_problem(0.1);
        let noise = NoiseModel::unsaturated(&p.lifted).unwrap();
        let cost = quadratic_cost(&p.lifted, &noise, &p.mu0);
        let nv = 4;
        let x = DVector::from_fn(nv + 8, |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.3);
        let v = x.rows(0, nv).into_owned();
        let mut k = DMatrix::zeros(4, 10);
        for s in 0..4 {
            for b in 0..2 {
                k[(s, s * 2 + b)] = x[nv + s * 2 + b];
            }
        }
        let direct = evaluate_cost(&p.lifted, &noise, &p.mu0, &v, &k);
        let quad = x.dot(&(&cost.h * &x)) + cost.g.dot(&x) + cost.c;
        assert!((direct - quad).abs() < 1e-9 * direct.abs().max(1.0), "{direct} vs {quad}");
    }

    #[test]
    fn solves_and_meets_terminal_conditions() {
        let p = small_problem(0.05);
        let noise = NoiseModel::unsaturated(&p.lifted).unwrap();
        let alloc = RiskAllocation::uniform(4, 0, p.budget);
        let out = solve(&p, &alloc, &noise, &conic::Clarabel, &Tolerances::default()).unwrap();
        let s = &out.solution;
        assert!((s.mean_at(4) - &p.mu_f).amax() < 1e-6);
        let resid = &p.sigma_f - s.cov_at(4);
        assert!(linalg::min_eigenvalue(&resid) > -1e-7);
        let k = s.k_matrix();
        let direct = evaluate_cost(&p.lifted, &noise, &p.mu0, &s.v, &k);
        assert!(((direct - s.cost) / direct).abs() < 1e-6, "{direct} vs {}", s.cost);
    }
}
