//! Conic modeling layer: variables, affine expressions, linear / second-order /
//! semidefinite constraints, convex quadratic objective, and a solver adapter.

mod backend;
pub mod check;
mod expr;
mod program;
mod standard;

use std::collections::BTreeMap;

pub use backend::{Clarabel, ConicBackend, RawSolution, SolveStatus, Tolerances};
pub use expr::{AffExpr, Var};
pub use program::{tri_index, ConicProgram, Constraint, ConstraintId, QuadMode, Sense, Tagged};
pub use standard::{to_standard_form, Cone, StandardForm};

use crate::error::Family;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone)]
pub struct SolveResult<T: Real> {
    pub status: SolveStatus,
    /// Present iff `status` is `Optimal`.
    pub x: Option<Vec<T>>,
    pub objective: Option<T>,
    pub reduced_accuracy: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: u32,
    pub seconds: f64,
    /// Largest normalized violation found by the independent check.
    pub max_violation: Option<f64>,
    /// Family carrying most of the infeasibility certificate.
    pub implicated: Option<Family>,
}

impl<T: Real> SolveResult<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, v: Var) -> Option<T> {
        self.x.as_ref().map(|x| x[v.0])
    }
}

fn implicated_family<T: Real>(prog: &ConicProgram<T>, data: &StandardForm, z: &[f64]) -> Option<Family> {
    let mut weight: BTreeMap<usize, f64> = BTreeMap::new();
    for (row, owner) in data.row_owner.iter().enumerate() {
        if let Some(v) = z.get(row) {
            *weight.entry(*owner).or_insert(0.0) += v * v;
        }
    }
    let mut per_family: Vec<(Family, f64)> = Vec::new();
    for (owner, w) in weight {
        let fam = prog.constraints()[owner].family;
        match per_family.iter_mut().find(|p| p.0 == fam) {
            Some(p) => p.1 += w,
            None => per_family.push((fam, w)),
        }
    }
    per_family
        .into_iter()
        .filter(|p| p.1.is_finite() && p.1 > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
}

/// Solves `prog` with `backend`, then re-verifies the primal point independently.
///
/// An optimal point failing the independent check is reported as `NumericalFailure`.
pub fn solve<T: Real>(prog: &ConicProgram<T>, backend: &dyn ConicBackend, tol: &Tolerances) -> SolveResult<T> {
    let data = to_standard_form(prog);
    let raw = backend.solve(&data, tol);
    let mut out = SolveResult {
        status: raw.status,
        x: None,
        objective: None,
        reduced_accuracy: raw.reduced_accuracy,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        gap: raw.gap,
        iterations: raw.iterations,
        seconds: raw.seconds,
        max_violation: None,
        implicated: None,
    };
    match raw.status {
        SolveStatus::Optimal => {
            let x: Vec<T> = raw.x.iter().map(|v| lit::<T>(*v)).collect();
            let viol = check::max_violation(prog, &x);
            out.max_violation = Some(viol);
            if !(viol <= tol.check) {
                let worst = check::violated(prog, &x, tol.check);
                log::warn!(
                    "solver point fails independent check (max violation {viol:e}); first: {:?}",
                    worst.first().map(|v| (&v.label, v.amount))
                );
                out.status = SolveStatus::NumericalFailure;
                return out;
            }
            out.objective = Some(prog.objective_value(&x));
            out.x = Some(x);
        }
        SolveStatus::Infeasible => {
            out.implicated = implicated_family(prog, &data, &raw.z);
        }
        _ => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn solve_default(p: &ConicProgram<f64>) -> SolveResult<f64> {
        solve(p, &Clarabel, &Tolerances::default())
    }

    #[test]
    fn min_x_above_one() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        let mut e = AffExpr::constant(1.0);
        e.add_term(x, -1.0);
        p.add_le(e, Family::Other, "x >= 1").unwrap();
        p.add_linear_objective(&AffExpr::var(x));
        let r = solve_default(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value(x).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn square_above_three() {
        for mode in [QuadMode::Native, QuadMode::Epigraph] {
            let mut p = ConicProgram::new();
            let x = p.add_var();
            let mut e = AffExpr::constant(3.0);
            e.add_term(x, -1.0);
            p.add_le(e, Family::Other, "x >= 3").unwrap();
            let h = DMatrix::from_element(1, 1, 1.0);
            p.add_quadratic_objective(&[x], &h, &DVector::zeros(1), 0.0, mode).unwrap();
            let r = solve_default(&p);
            assert!((r.value(x).unwrap() - 3.0).abs() < 1e-6, "{mode:?}");
            assert!((r.objective.unwrap() - 9.0).abs() < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn psd_2x2_max_offdiagonal() {
        let mut p = ConicProgram::new();
        let y = p.add_var();
        p.add_psd(
            2,
            |i, j| if i == j { AffExpr::constant(1.0) } else { AffExpr::var(y) },
            Family::Other,
            "[[1,y],[y,1]]",
        )
        .unwrap();
        p.add_linear_objective(&AffExpr::term(y, -1.0));
        let r = solve_default(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value(y).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_bounds_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_le(AffExpr::var(x), Family::Chance, "x <= 0").unwrap();
        let mut e = AffExpr::constant(1.0);
        e.add_term(x, -1.0);
        p.add_le(e, Family::HardInput, "x >= 1").unwrap();
        p.add_linear_objective(&AffExpr::var(x));
        let r = solve_default(&p);
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.x.is_none());
        assert!(r.implicated.is_some());
    }

    #[test]
    fn linear_objective_only() {
        let mut p = ConicProgram::new();
        let x = p.add_vars(2);
        let h = DMatrix::zeros(2, 2);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        p.add_quadratic_objective(&x, &h, &g, 0.0, QuadMode::Native).unwrap();
        for &v in &x {
            let mut lo = AffExpr::constant(-2.0);
            lo.add_term(v, -1.0);
            p.add_le(lo, Family::Other, "lo").unwrap();
            let mut hi = AffExpr::constant(-2.0);
            hi.add_term(v, 1.0);
            p.add_le(hi, Family::Other, "hi").unwrap();
        }
        let r = solve_default(&p);
        assert!((r.value(x[0]).unwrap() + 2.0).abs() < 1e-6);
    }

    #[test]
    fn soc_projection() {
        // min t s.t. ‖(x − 3, y − 4)‖ ≤ t  →  t = 0 at (3, 4); add x + y ≤ 0 → t = 7/√2.
        let mut p = ConicProgram::new();
        let v = p.add_vars(3);
        let (x, y, t) = (v[0], v[1], v[2]);
        let mut ex = AffExpr::var(x);
        ex.add_constant(-3.0);
        let mut ey = AffExpr::var(y);
        ey.add_constant(-4.0);
        p.add_soc(AffExpr::var(t), vec![ex, ey], Family::Other, "dist").unwrap();
        let mut s = AffExpr::var(x);
        s.add_term(y, 1.0);
        p.add_le(s, Family::Other, "halfplane").unwrap();
        p.add_linear_objective(&AffExpr::var(t));
        let r = solve_default(&p);
        assert!((r.value(t).unwrap() - 7.0 / 2f64.sqrt()).abs() < 1e-6);
    }
}
