use std::fmt;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::standard::{Cone, StandardForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub max_iter: u32,
    /// Tolerance of the independent post-solve feasibility pass.
    pub check: f64,
    /// Accept the solver's reduced-accuracy solutions if they pass the check.
    pub accept_reduced: bool,
    /// Split sparse semidefinite blocks into cliques before solving.
    pub chordal: bool,
    /// Ruiz equilibration of the problem data. A numerical failure is retried
    /// once with the opposite setting.
    pub equilibrate: bool,
    pub verbose: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            gap_abs: 1e-8,
            gap_rel: 1e-8,
            max_iter: 200,
            check: 1e-6,
            accept_reduced: true,
            chordal: true,
            equilibrate: false,
            verbose: false,
        }
    }
}

/// Raw solver output in standard-form coordinates.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub reduced_accuracy: bool,
    pub x: Vec<f64>,
    /// Dual vector (or infeasibility certificate) per row.
    pub z: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: u32,
    pub seconds: f64,
}

/// Narrow solver interface: standard-form data in, primal point and status out.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, data: &StandardForm, tol: &Tolerances) -> RawSolution;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Clarabel;

fn csc(rows: usize, cols: usize, trip: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut colptr = vec![0usize; cols + 1];
    for &(_, c, _) in trip {
        colptr[c + 1] += 1;
    }
    for c in 0..cols {
        colptr[c + 1] += colptr[c];
    }
    // Triplets arrive sorted by (col, row).
    let rowval = trip.iter().map(|t| t.0).collect();
    let nzval = trip.iter().map(|t| t.2).collect();
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

impl ConicBackend for Clarabel {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, data: &StandardForm, tol: &Tolerances) -> RawSolution {
        let first = solve_once(data, tol, tol.equilibrate);
        if first.status != SolveStatus::NumericalFailure {
            return first;
        }
        log::debug!("numerical failure, retrying with equilibration {}", if tol.equilibrate { "off" } else { "on" });
        let mut second = solve_once(data, tol, !tol.equilibrate);
        second.seconds += first.seconds;
        second
    }
}

fn solve_once(data: &StandardForm, tol: &Tolerances, equilibrate: bool) -> RawSolution {
    let start = Instant::now();
    let n = data.num_vars;
    // Objective normalized to unit largest coefficient; undone on the way out.
    let scale = data.p.iter().map(|t| t.2.abs()).chain(data.q.iter().map(|v| v.abs())).fold(0.0, f64::max);
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let ps: Vec<(usize, usize, f64)> = data.p.iter().map(|&(i, j, v)| (i, j, v / scale)).collect();
    let qs: Vec<f64> = data.q.iter().map(|v| v / scale).collect();
    let p = csc(n, n, &ps);
    let a = csc(data.num_rows(), n, &data.a);
    let cones: Vec<SupportedConeT<f64>> = data
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
            Cone::NonNeg(k) => SupportedConeT::NonnegativeConeT(k),
            Cone::Soc(k) => SupportedConeT::SecondOrderConeT(k),
            Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
        })
        .collect();
    let settings = DefaultSettingsBuilder::default()
        .verbose(tol.verbose)
        .max_iter(tol.max_iter)
        .tol_feas(tol.feasibility)
        .tol_gap_abs(tol.gap_abs)
        .tol_gap_rel(tol.gap_rel)
        .tol_infeas_abs(tol.feasibility)
        .tol_infeas_rel(tol.feasibility)
        .chordal_decomposition_enable(tol.chordal)
        .equilibrate_enable(equilibrate)
        .build()
        .expect("valid solver settings");
    let failed = |start: Instant| RawSolution {
        status: SolveStatus::NumericalFailure,
        reduced_accuracy: false,
        x: Vec::new(),
        z: Vec::new(),
        objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations: 0,
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut solver = match DefaultSolver::new(&p, &qs, &a, &data.b, &cones, settings) {
        Ok(s) => s,
        Err(e) => {
            log::error!("solver setup failed: {e}");
            return failed(start);
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let (status, reduced) = match sol.status {
        SolverStatus::Solved => (SolveStatus::Optimal, false),
        SolverStatus::AlmostSolved => (SolveStatus::Optimal, true),
        SolverStatus::PrimalInfeasible => (SolveStatus::Infeasible, false),
        SolverStatus::AlmostPrimalInfeasible => (SolveStatus::Infeasible, true),
        SolverStatus::DualInfeasible => (SolveStatus::Unbounded, false),
        SolverStatus::AlmostDualInfeasible => (SolveStatus::Unbounded, true),
        _ => (SolveStatus::NumericalFailure, false),
    };
    let status = if reduced && status == SolveStatus::Optimal && !tol.accept_reduced {
        SolveStatus::NumericalFailure
    } else {
        status
    };
    RawSolution {
        status,
        reduced_accuracy: reduced,
        x: sol.x.clone(),
        z: sol.z.iter().map(|v| v * scale).collect(),
        objective: sol.obj_val * scale + data.constant,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        gap: (sol.obj_val - sol.obj_val_dual) * scale,
        iterations: sol.iterations,
        seconds: start.elapsed().as_secs_f64(),
    }
}
