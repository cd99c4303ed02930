use nalgebra::{DMatrix, DVector};

use super::expr::{AffExpr, Var};
use crate::error::{Error, Family, Result};
use crate::linalg;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `expr ≤ 0`
    Le,
    /// `expr = 0`
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint<T: Real> {
    Linear { expr: AffExpr<T>, sense: Sense },
    /// `‖x‖₂ ≤ t`
    Soc { t: AffExpr<T>, x: Vec<AffExpr<T>> },
    /// Symmetric `dim × dim` matrix ⪰ 0, upper triangle stored column by column.
    Psd { dim: usize, upper: Vec<AffExpr<T>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tagged<T: Real> {
    pub constraint: Constraint<T>,
    pub family: Family,
    pub label: String,
}

/// How a quadratic objective term is handed to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadMode {
    /// Solver-native `½ xᵀPx`.
    #[default]
    Native,
    /// Epigraph variable with a rotated second-order cone.
    Epigraph,
}

/// Index of the `(i, j)` entry (`i ≤ j`) in column-major upper-triangle storage.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Convex conic program over scalar variables.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram<T: Real> {
    num_vars: usize,
    constraints: Vec<Tagged<T>>,
    /// `xᵀ H x` stored as symmetric triplets with `i ≤ j`, off-diagonals counted once each side.
    quad: Vec<(usize, usize, T)>,
    linear: Vec<(Var, T)>,
    constant: T,
}

impl<T: Real> ConicProgram<T> {
    pub fn new() -> Self {
        Self { num_vars: 0, constraints: Vec::new(), quad: Vec::new(), linear: Vec::new(), constant: T::zero() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add_var(&mut self) -> Var {
        self.num_vars += 1;
        Var(self.num_vars - 1)
    }

    pub fn add_vars(&mut self, count: usize) -> Vec<Var> {
        (0..count).map(|_| self.add_var()).collect()
    }

    pub fn constraints(&self) -> &[Tagged<T>] {
        &self.constraints
    }

    pub fn constraint(&self, id: ConstraintId) -> &Tagged<T> {
        &self.constraints[id.0]
    }

    fn check_expr(&self, e: &AffExpr<T>) -> Result<()> {
        match e.max_var() {
            Some(v) if v >= self.num_vars => {
                Err(Error::Program(format!("expression references unregistered variable {v}")))
            }
            _ => Ok(()),
        }
    }

    fn push(&mut self, constraint: Constraint<T>, family: Family, label: impl Into<String>) -> Result<ConstraintId> {
        match &constraint {
            Constraint::Linear { expr, .. } => self.check_expr(expr)?,
            Constraint::Soc { t, x } => {
                self.check_expr(t)?;
                for e in x {
                    self.check_expr(e)?;
                }
            }
            Constraint::Psd { dim, upper } => {
                if upper.len() != dim * (dim + 1) / 2 {
                    return Err(Error::Program(format!(
                        "PSD constraint of dimension {dim} needs {} entries, got {}",
                        dim * (dim + 1) / 2,
                        upper.len()
                    )));
                }
                for e in upper {
                    self.check_expr(e)?;
                }
            }
        }
        self.constraints.push(Tagged { constraint, family, label: label.into() });
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    /// `expr ≤ 0`
    pub fn add_le(&mut self, expr: AffExpr<T>, family: Family, label: impl Into<String>) -> Result<ConstraintId> {
        self.push(Constraint::Linear { expr, sense: Sense::Le }, family, label)
    }

    /// `expr ≥ 0`
    pub fn add_ge(&mut self, expr: AffExpr<T>, family: Family, label: impl Into<String>) -> Result<ConstraintId> {
        self.add_le(-expr, family, label)
    }

    /// `expr = 0`
    pub fn add_eq(&mut self, expr: AffExpr<T>, family: Family, label: impl Into<String>) -> Result<ConstraintId> {
        self.push(Constraint::Linear { expr, sense: Sense::Eq }, family, label)
    }

    /// `‖x‖₂ ≤ t`
    pub fn add_soc(
        &mut self,
        t: AffExpr<T>,
        x: Vec<AffExpr<T>>,
        family: Family,
        label: impl Into<String>,
    ) -> Result<ConstraintId> {
        self.push(Constraint::Soc { t, x }, family, label)
    }

    /// `M ⪰ 0` where `entry(i, j)` gives the upper-triangle entries `i ≤ j`.
    pub fn add_psd(
        &mut self,
        dim: usize,
        mut entry: impl FnMut(usize, usize) -> AffExpr<T>,
        family: Family,
        label: impl Into<String>,
    ) -> Result<ConstraintId> {
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for j in 0..dim {
            for i in 0..=j {
                upper.push(entry(i, j));
            }
        }
        self.push(Constraint::Psd { dim, upper }, family, label)
    }

    pub fn add_linear_objective(&mut self, expr: &AffExpr<T>) {
        self.linear.extend_from_slice(&expr.terms);
        self.constant += expr.constant;
    }

    /// Adds `xᵀHx + gᵀx + c` with `x = vars`.
    pub fn add_quadratic_objective(
        &mut self,
        vars: &[Var],
        h: &DMatrix<T>,
        g: &DVector<T>,
        c: T,
        mode: QuadMode,
    ) -> Result<()> {
        let n = vars.len();
        if h.shape() != (n, n) || g.len() != n {
            return Err(Error::dim(format!(
                "objective over {n} variables given H {:?} and g of length {}",
                h.shape(),
                g.len()
            )));
        }
        if let Some(v) = vars.iter().find(|v| v.0 >= self.num_vars) {
            return Err(Error::Program(format!("objective references unregistered variable {}", v.0)));
        }
        if !linalg::is_symmetric(h, 1e-9) {
            return Err(Error::NotPositiveSemidefinite { name: "objective Hessian".into(), index: None });
        }
        let hs = linalg::symmetrize(h);
        let scale = hs.amax().max(T::one());
        if n > 0 && linalg::min_eigenvalue(&hs) < -lit::<T>(1e-9) * scale {
            return Err(Error::NotPositiveSemidefinite { name: "objective Hessian".into(), index: None });
        }
        for (i, vi) in vars.iter().enumerate() {
            if g[i] != T::zero() {
                self.linear.push((*vi, g[i]));
            }
        }
        self.constant += c;
        match mode {
            QuadMode::Native => {
                for j in 0..n {
                    for i in 0..=j {
                        let v = hs[(i, j)];
                        if v != T::zero() {
                            let (a, b) = (vars[i].0.min(vars[j].0), vars[i].0.max(vars[j].0));
                            // Off-diagonal pairs appear twice in xᵀHx.
                            let w = if i == j { v } else { v + v };
                            self.quad.push((a, b, w));
                        }
                    }
                }
            }
            QuadMode::Epigraph => {
                let f = linalg::psd_factor(&hs);
                let tol = lit::<T>(1e-12) * scale.sqrt();
                let t = self.add_var();
                let half = lit::<T>(0.5);
                let mut x = Vec::new();
                for col in f.column_iter() {
                    if col.amax() <= tol {
                        continue;
                    }
                    let mut e = AffExpr::zero();
                    for (i, vi) in vars.iter().enumerate() {
                        e.add_term(*vi, col[i]);
                    }
                    x.push(e);
                }
                // ‖Fᵀx‖² ≤ t  ⇔  ‖(Fᵀx, (t − 1)/2)‖ ≤ (t + 1)/2
                let mut tm = AffExpr::term(t, half);
                tm.add_constant(-half);
                x.push(tm);
                let mut tp = AffExpr::term(t, half);
                tp.add_constant(half);
                self.push(Constraint::Soc { t: tp, x }, Family::Objective, "objective epigraph")?;
                self.linear.push((t, T::one()));
            }
        }
        Ok(())
    }

    /// Objective value at `x`.
    pub fn objective_value(&self, x: &[T]) -> T {
        let mut val = self.constant;
        for &(v, c) in &self.linear {
            val += c * x[v.0];
        }
        for &(i, j, w) in &self.quad {
            val += w * x[i] * x[j];
        }
        val
    }

    pub fn quad_terms(&self) -> &[(usize, usize, T)] {
        &self.quad
    }

    pub fn linear_terms(&self) -> &[(Var, T)] {
        &self.linear
    }

    pub fn objective_constant(&self) -> T {
        self.constant
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unregistered_variable() {
        let mut p = ConicProgram::<f64>::new();
        let _ = p.add_var();
        assert!(p.add_le(AffExpr::var(Var(3)), Family::Other, "bad").is_err());
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let mut p = ConicProgram::<f64>::new();
        let v = p.add_vars(2);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = p.add_quadratic_objective(&v, &h, &DVector::zeros(2), 0.0, QuadMode::Native);
        assert!(err.is_err());
    }

    #[test]
    fn tri_index_order() {
        assert_eq!(tri_index(0, 0), 0);
        assert_eq!(tri_index(0, 1), 1);
        assert_eq!(tri_index(1, 1), 2);
        assert_eq!(tri_index(0, 2), 3);
    }
}
