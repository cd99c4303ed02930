//! Independent post-solve feasibility pass over the program's own expressions.

use nalgebra::DMatrix;

use super::program::{ConicProgram, Constraint, Sense};
use crate::error::Family;
use crate::linalg;
use crate::scalar::{to_f64, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: usize,
    pub label: String,
    pub family: Family,
    /// Violation divided by the row scale (largest coefficient or constant, at least one).
    pub amount: f64,
}

/// Normalized violation of every constraint at `x`; nonpositive means satisfied.
pub fn violations<T: Real>(prog: &ConicProgram<T>, x: &[T]) -> Vec<Violation> {
    prog.constraints()
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let amount = match &c.constraint {
                Constraint::Linear { expr, sense } => {
                    let v = to_f64(expr.eval(x));
                    let s = to_f64(expr.scale());
                    match sense {
                        Sense::Le => v / s,
                        Sense::Eq => v.abs() / s,
                    }
                }
                Constraint::Soc { t, x: xs } => {
                    let mut s = to_f64(t.scale());
                    let mut sq = 0.0;
                    for e in xs {
                        let v = to_f64(e.eval(x));
                        sq += v * v;
                        s = s.max(to_f64(e.scale()));
                    }
                    (sq.sqrt() - to_f64(t.eval(x))) / s
                }
                Constraint::Psd { dim, upper } => {
                    let mut m = DMatrix::<f64>::zeros(*dim, *dim);
                    let mut s: f64 = 1.0;
                    let mut k = 0;
                    for j in 0..*dim {
                        for i in 0..=j {
                            let v = to_f64(upper[k].eval(x));
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                            s = s.max(to_f64(upper[k].scale()));
                            k += 1;
                        }
                    }
                    -linalg::min_eigenvalue(&m) / s
                }
            };
            Violation { constraint: idx, label: c.label.clone(), family: c.family, amount }
        })
        .collect()
}

/// Largest normalized violation (zero when everything holds strictly).
pub fn max_violation<T: Real>(prog: &ConicProgram<T>, x: &[T]) -> f64 {
    violations(prog, x).iter().fold(0.0, |acc, v| acc.max(v.amount))
}

/// Constraints violated by more than `tol`.
pub fn violated<T: Real>(prog: &ConicProgram<T>, x: &[T], tol: f64) -> Vec<Violation> {
    violations(prog, x).into_iter().filter(|v| v.amount > tol).collect()
}
