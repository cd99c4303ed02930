//! Chance-constraint emitters (polytope and cone relaxations), risk allocation grids,
//! and post-solve true risks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{AffExpr, ConicProgram, ConstraintId, Var};
use crate::error::{Error, Family, Result};
use crate::normal;
use crate::scalar::{lit, to_f64, Real};
use crate::steering::{ControllerSolution, Layout};

/// Lower bound on every allocated risk.
pub const DELTA_FLOOR: f64 = 1e-9;
/// Upper bound on every allocated risk (strictly below one half).
pub const DELTA_CAP: f64 = 0.5 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace<T: Real> {
    pub alpha: DVector<T>,
    pub beta: T,
}

/// `{x : αⱼᵀx ≤ βⱼ, j = 1..M}`
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeCC<T: Real> {
    pub halfspaces: Vec<Halfspace<T>>,
}

impl<T: Real> PolytopeCC<T> {
    pub fn new(halfspaces: Vec<Halfspace<T>>) -> Result<Self> {
        let p = Self { halfspaces };
        if p.halfspaces.is_empty() {
            return Err(Error::OutOfRange { what: "polytope", detail: "needs at least one halfspace".into() });
        }
        Ok(p)
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        self.halfspaces.iter().all(|h| h.alpha.dot(x) <= h.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    ThreeCut,
    ReverseUnionBound,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricNorm {
    /// Frobenius-norm surrogate, a second-order cone.
    Frobenius,
    /// Exact spectral norm through an arrow LMI.
    #[default]
    SpectralLmi,
}

/// Planar cross-section data for the geometric relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricSpec<T: Real> {
    /// 3×3
    pub a_c: DMatrix<T>,
    pub c_c: DVector<T>,
    /// 2×3, extracts the nonzero rows of `A_c`.
    pub h: DMatrix<T>,
    /// 3×n position selector.
    pub i_p: DMatrix<T>,
}

impl<T: Real> GeometricSpec<T> {
    /// Cross-section with `A_c = diag(a)`; `H` picks the two nonzero entries.
    pub fn from_diagonal(a: [T; 3], c_c: DVector<T>, n: usize) -> Result<Self> {
        let nz: Vec<usize> = (0..3).filter(|&i| a[i] != T::zero()).collect();
        if nz.len() != 2 {
            return Err(Error::OutOfRange { what: "A_c", detail: "needs exactly one zero diagonal entry".into() });
        }
        if n < 3 {
            return Err(Error::dim("geometric relaxation needs at least three states"));
        }
        let mut h = DMatrix::zeros(2, 3);
        h[(0, nz[0])] = T::one();
        h[(1, nz[1])] = T::one();
        let mut i_p = DMatrix::zeros(3, n);
        i_p.view_mut((0, 0), (3, 3)).fill_with_identity();
        Ok(Self { a_c: DMatrix::from_diagonal(&DVector::from_row_slice(&a)), c_c, h, i_p })
    }

    /// `H A_c I_p` (2×n)
    pub fn xi_map(&self) -> DMatrix<T> {
        &self.h * &self.a_c * &self.i_p
    }

    /// `I_pᵀ c_c` (n)
    pub fn radius_map(&self) -> DVector<T> {
        self.i_p.transpose() * &self.c_c
    }
}

/// `{x : ‖Ax + b‖ ≤ cᵀx + d}` with the chosen relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeCC<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: DVector<T>,
    pub d: T,
    pub relaxation: Relaxation,
    pub geometric: Option<GeometricSpec<T>>,
    pub geometric_norm: GeometricNorm,
    /// Splitting weights `βᵢ`, one per row of `A`; `1/rows` when absent.
    pub weights: Option<DVector<T>>,
    /// Fixed reverse-union-bound levels `(ε¹, ε²)` as functions of `βᵢδₖ`; the default levels apply when absent.
    pub rub_levels: Option<RubLevels>,
}

/// Reverse-union-bound levels `εˡ = 1 − sₗ·βᵢδₖ` with `s₁ + s₂ ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubLevels {
    pub s1: f64,
    pub s2: f64,
}

impl Default for RubLevels {
    fn default() -> Self {
        Self { s1: 0.5, s2: 0.5 }
    }
}

/// Rotation of a 3-vector about a coordinate axis.
pub fn axis_rotation<T: Real>(axis: usize, angle: T) -> DMatrix<T> {
    let (s, c) = (angle.sin(), angle.cos());
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let mut r = DMatrix::identity(3, 3);
    r[(i, i)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    r[(j, j)] = c;
    r
}

impl<T: Real> ConeCC<T> {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn weights(&self) -> DVector<T> {
        self.weights.clone().unwrap_or_else(|| {
            let m = self.rows();
            DVector::from_element(m, T::one() / lit::<T>(m as f64))
        })
    }

    /// Membership of a point.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        (&self.a * x + &self.b).norm() <= self.c.dot(x) + self.d
    }

    /// Rotates about `axis` (0 = x, 1 = y, 2 = z) by `angle`: `Ã = A R̄`, `c̃ = R̄ᵀc`,
    /// where `R̄` applies the rotation to position and velocity blocks.
    pub fn rotated(&self, axis: usize, angle: T) -> Result<Self> {
        let n = self.a.ncols();
        if n % 3 != 0 || axis > 2 {
            return Err(Error::dim("rotation needs 3-vector blocks and axis in 0..3"));
        }
        let r3 = axis_rotation(axis, angle);
        let blocks = vec![r3.clone(); n / 3];
        let rbar = crate::linalg::block_diag(&blocks);
        let mut out = self.clone();
        out.a = &self.a * &rbar;
        out.c = rbar.transpose() * &self.c;
        if let Some(g) = &self.geometric {
            let mut g2 = g.clone();
            g2.a_c = &g.a_c * &r3;
            g2.c_c = r3.transpose() * &g.c_c;
            out.geometric = Some(g2);
        }
        Ok(out)
    }

    fn validate(&self, n: usize) -> Result<()> {
        let m = self.rows();
        if self.a.ncols() != n || self.b.len() != m || self.c.len() != n {
            return Err(Error::dim(format!("cone data must act on {n} states")));
        }
        let w = self.weights();
        if w.len() != m || w.iter().any(|v| *v <= T::zero()) {
            return Err(Error::OutOfRange { what: "cone weights", detail: "need one positive weight per row".into() });
        }
        let sum = w.sum();
        if (sum - T::one()).abs() > lit(1e-9) {
            return Err(Error::OutOfRange { what: "cone weights", detail: "must sum to one".into() });
        }
        if let Some(l) = self.rub_levels {
            if !(l.s1 > 0.0 && l.s2 > 0.0 && l.s1 + l.s2 <= 1.0 + 1e-12) {
                return Err(Error::OutOfRange { what: "RUB levels", detail: "need s1, s2 > 0 and s1 + s2 ≤ 1".into() });
            }
        }
        if self.relaxation == Relaxation::Geometric {
            let g = self
                .geometric
                .as_ref()
                .ok_or_else(|| Error::OutOfRange { what: "cone", detail: "geometric relaxation needs A_c, c_c, H".into() })?;
            if g.a_c.shape() != (3, 3) || g.c_c.len() != 3 || g.h.shape() != (2, 3) || g.i_p.shape() != (3, n) {
                return Err(Error::dim("geometric data must be A_c 3×3, c_c 3, H 2×3, I_p 3×n"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum StateConstraints<T: Real> {
    #[default]
    None,
    Polytope(PolytopeCC<T>),
    Cone(ConeCC<T>),
}

impl<T: Real> StateConstraints<T> {
    /// Columns of the allocation grid.
    pub fn allocation_width(&self) -> usize {
        match self {
            StateConstraints::None => 0,
            StateConstraints::Polytope(p) => p.halfspaces.len(),
            StateConstraints::Cone(_) => 1,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            StateConstraints::None => Ok(()),
            StateConstraints::Polytope(p) => {
                for (j, h) in p.halfspaces.iter().enumerate() {
                    if h.alpha.len() != n {
                        return Err(Error::dim(format!("halfspace {j} normal must have length {n}")));
                    }
                    if h.alpha.iter().all(|v| *v == T::zero()) {
                        return Err(Error::OutOfRange { what: "halfspace", detail: format!("normal {j} is zero") });
                    }
                }
                Ok(())
            }
            StateConstraints::Cone(c) => c.validate(n),
        }
    }

    /// Deterministic membership of a state.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        match self {
            StateConstraints::None => true,
            StateConstraints::Polytope(p) => p.contains(x),
            StateConstraints::Cone(c) => c.contains(x),
        }
    }
}

/// Per-step, per-constraint risk grid `δ[k][j]`, `k = 0..N` standing for steps `1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAllocation<T: Real> {
    pub steps: usize,
    pub cols: usize,
    /// Row-major `steps × cols`.
    pub delta: Vec<T>,
    pub budget: T,
    pub floor: T,
}

impl<T: Real> RiskAllocation<T> {
    /// `Δ/(NM)` in every entry, nudged down if rounding overshoots the budget.
    pub fn uniform(steps: usize, cols: usize, budget: T) -> Self {
        let count = steps * cols;
        let each = if count > 0 { budget / lit::<T>(count as f64) } else { T::zero() };
        let mut a = Self { steps, cols, delta: vec![each; count], budget, floor: lit(DELTA_FLOOR) };
        a.enforce_budget();
        a
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn get(&self, k: usize, j: usize) -> T {
        self.delta[k * self.cols + j]
    }

    pub fn set(&mut self, k: usize, j: usize, v: T) {
        self.delta[k * self.cols + j] = v;
    }

    /// Sequential row-major sum; the canonical total used by every budget check.
    pub fn total(&self) -> T {
        self.delta.iter().fold(T::zero(), |acc, v| acc + *v)
    }

    pub fn check_shape(&self, steps: usize, cols: usize) -> Result<()> {
        if self.steps != steps || self.cols != cols || self.delta.len() != steps * cols {
            return Err(Error::Allocation(format!(
                "grid is {}×{}, problem needs {steps}×{cols}",
                self.steps, self.cols
            )));
        }
        Ok(())
    }

    /// Clamps every entry to `[floor, cap]`.
    pub fn clamp(&mut self) {
        let cap = lit::<T>(DELTA_CAP);
        for d in self.delta.iter_mut() {
            *d = d.max(self.floor).min(cap);
        }
    }

    /// Lowers the largest entries until `total() ≤ budget` holds exactly.
    pub fn enforce_budget(&mut self) {
        let eps = T::default_epsilon();
        let mut guard = 0;
        while !self.delta.is_empty() && self.total() > self.budget && guard < 100_000 {
            guard += 1;
            let (idx, _) = self
                .delta
                .iter()
                .enumerate()
                .fold((0, T::zero()), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
            let excess = self.total() - self.budget;
            let v = self.delta[idx];
            let step = excess.max(v * eps);
            self.delta[idx] = (v - step).max(self.floor);
            if self.delta[idx] == v {
                break;
            }
        }
    }

    /// Invariants: budget, floor, cap.
    pub fn validate(&self) -> Result<()> {
        if self.total() > self.budget {
            return Err(Error::Allocation(format!(
                "total {} exceeds budget {}",
                to_f64(self.total()),
                to_f64(self.budget)
            )));
        }
        let cap = lit::<T>(0.5);
        if let Some(d) = self.delta.iter().find(|d| **d < self.floor || **d >= cap) {
            return Err(Error::Allocation(format!("entry {} outside [floor, 0.5)", to_f64(*d))));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceKind {
    Halfspace,
    ThreeCut,
    ReverseUnionBound,
    Geometric,
}

/// One emitted sub-constraint.
#[derive(Debug, Clone)]
pub struct ChanceHandle {
    pub kind: ChanceKind,
    /// Step `1..=N`.
    pub step: usize,
    /// Allocation column.
    pub col: usize,
    /// Halfspace index or cone row.
    pub row: usize,
    pub ids: Vec<ConstraintId>,
    /// `f_{i,k}` for two-sided relaxations, `τ_k` for the geometric one.
    pub aux: Option<Var>,
}

/// `‖z·dev‖ ≤ rhs`, degrading to a linear row when the deviation is deterministic.
fn soc_or_linear<T: Real>(
    prog: &mut ConicProgram<T>,
    rhs: AffExpr<T>,
    dev: &[AffExpr<T>],
    z: T,
    label: String,
) -> Result<Vec<ConstraintId>> {
    if z < T::zero() {
        return Err(Error::OutOfRange { what: "quantile", detail: "negative cone coefficient".into() });
    }
    if z == T::zero() || dev.iter().all(|d| d.is_constant()) {
        let c = dev.iter().fold(T::zero(), |acc, d| acc + d.constant * d.constant).sqrt();
        let mut e = rhs;
        e.add_constant(-z * c);
        return Ok(vec![prog.add_ge(e, Family::Chance, label)?]);
    }
    let x: Vec<AffExpr<T>> = dev.iter().map(|d| d.scaled(z)).collect();
    Ok(vec![prog.add_soc(rhs, x, Family::Chance, label)?])
}

fn unit<T: Real>(row: &DMatrix<T>, i: usize) -> DVector<T> {
    row.row(i).transpose()
}

/// Emits the chance constraints of `cc` for allocation `alloc`.
pub fn emit<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    cc: &StateConstraints<T>,
    alloc: &RiskAllocation<T>,
) -> Result<Vec<ChanceHandle>> {
    match cc {
        StateConstraints::None => Ok(Vec::new()),
        StateConstraints::Polytope(p) => emit_polyhedral(prog, layout, p, alloc),
        StateConstraints::Cone(c) => match c.relaxation {
            Relaxation::ThreeCut => emit_cone_threecut(prog, layout, c, alloc),
            Relaxation::ReverseUnionBound => emit_cone_rub(prog, layout, c, alloc),
            Relaxation::Geometric => emit_cone_geometric(prog, layout, c, alloc),
        },
    }
}

/// `αⱼᵀx̄ₖ + Φ⁻¹(1−δ)·σ ≤ βⱼ` for every step and halfspace.
pub fn emit_polyhedral<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    poly: &PolytopeCC<T>,
    alloc: &RiskAllocation<T>,
) -> Result<Vec<ChanceHandle>> {
    let nh = layout.lifted.horizon;
    alloc.check_shape(nh, poly.halfspaces.len())?;
    let mut out = Vec::new();
    for k in 1..=nh {
        for (j, hs) in poly.halfspaces.iter().enumerate() {
            let delta = to_f64(alloc.get(k - 1, j));
            if !(delta > 0.0 && delta <= 0.5) {
                return Err(Error::Allocation(format!("halfspace risk {delta} outside (0, 0.5]")));
            }
            let z = lit::<T>(normal::upper_quantile(delta));
            let mut rhs = -layout.mean_expr(k, &hs.alpha);
            rhs.add_constant(hs.beta);
            let dev = layout.deviation_exprs(k, &hs.alpha);
            let ids = soc_or_linear(prog, rhs, &dev, z, format!("halfspace {j} step {k}"))?;
            out.push(ChanceHandle { kind: ChanceKind::Halfspace, step: k, col: j, row: j, ids, aux: None });
        }
    }
    Ok(out)
}

/// Radius coupling `‖f_k‖ ≤ cᵀx̄ₖ + d`.
fn radius_soc<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    cone: &ConeCC<T>,
    k: usize,
    f: &[Var],
) -> Result<ConstraintId> {
    let mut t = layout.mean_expr(k, &cone.c);
    t.add_constant(cone.d);
    let x = f.iter().map(|v| AffExpr::var(*v)).collect();
    prog.add_soc(t, x, Family::Chance, format!("cone radius step {k}"))
}

fn check_sub_risk(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 0.5) {
        return Err(Error::Allocation(format!("split risk {level} outside (0, 0.5)")));
    }
    Ok(())
}

/// Three-cut outer approximation of each two-sided row constraint.
pub fn emit_cone_threecut<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    cone: &ConeCC<T>,
    alloc: &RiskAllocation<T>,
) -> Result<Vec<ChanceHandle>> {
    let nh = layout.lifted.horizon;
    alloc.check_shape(nh, 1)?;
    let w = cone.weights();
    let mut out = Vec::new();
    for k in 1..=nh {
        let delta = to_f64(alloc.get(k - 1, 0));
        let f = prog.add_vars(cone.rows());
        for i in 0..cone.rows() {
            let level = to_f64(w[i]) * delta;
            check_sub_risk(level)?;
            let z1 = lit::<T>(normal::upper_quantile(level));
            let z2 = lit::<T>(normal::upper_quantile(level / 2.0));
            let a_i = unit(&cone.a, i);
            let mut mean = layout.mean_expr(k, &a_i);
            mean.add_constant(cone.b[i]);
            let dev = layout.deviation_exprs(k, &a_i);
            let t = prog.add_var();
            let mut ids = Vec::with_capacity(4);
            let label = |s: &str| format!("three-cut {s} row {i} step {k}");
            if dev.is_empty() {
                ids.push(prog.add_ge(AffExpr::var(t), Family::Chance, label("t"))?);
            } else {
                ids.push(prog.add_soc(AffExpr::var(t), dev, Family::Chance, label("t"))?);
            }
            // f + ψ̄ − z₁t ≥ 0
            let mut lo = mean.clone();
            lo.add_term(f[i], T::one()).add_term(t, -z1);
            ids.push(prog.add_ge(lo, Family::Chance, label("lower"))?);
            // f − ψ̄ − z₁t ≥ 0
            let mut hi = -mean;
            hi.add_term(f[i], T::one()).add_term(t, -z1);
            ids.push(prog.add_ge(hi, Family::Chance, label("upper"))?);
            // f − z₂t ≥ 0
            let mut wd = AffExpr::var(f[i]);
            wd.add_term(t, -z2);
            ids.push(prog.add_ge(wd, Family::Chance, label("width"))?);
            out.push(ChanceHandle { kind: ChanceKind::ThreeCut, step: k, col: 0, row: i, ids, aux: Some(f[i]) });
        }
        let id = radius_soc(prog, layout, cone, k, &f)?;
        if let Some(h) = out.last_mut() {
            h.ids.push(id);
        }
    }
    Ok(out)
}

/// Reverse-union-bound split of each two-sided row constraint.
pub fn emit_cone_rub<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    cone: &ConeCC<T>,
    alloc: &RiskAllocation<T>,
) -> Result<Vec<ChanceHandle>> {
    let nh = layout.lifted.horizon;
    alloc.check_shape(nh, 1)?;
    let w = cone.weights();
    let lv = cone.rub_levels.unwrap_or_default();
    let mut out = Vec::new();
    for k in 1..=nh {
        let delta = to_f64(alloc.get(k - 1, 0));
        let f = prog.add_vars(cone.rows());
        for i in 0..cone.rows() {
            let level = to_f64(w[i]) * delta;
            check_sub_risk(level)?;
            let (e1, e2) = (1.0 - lv.s1 * level, 1.0 - lv.s2 * level);
            if e1 <= 0.5 || e2 <= 0.5 {
                return Err(Error::Allocation(format!("RUB levels ({e1}, {e2}) must exceed 0.5")));
            }
            let z1 = lit::<T>(normal::quantile(e1));
            let z2 = lit::<T>(normal::quantile(e2));
            let a_i = unit(&cone.a, i);
            let mut mean = layout.mean_expr(k, &a_i);
            mean.add_constant(cone.b[i]);
            let dev = layout.deviation_exprs(k, &a_i);
            let mut ids = Vec::with_capacity(2);
            // ‖z₁·dev‖ ≤ f − ψ̄
            let mut up = -mean.clone();
            up.add_term(f[i], T::one());
            ids.extend(soc_or_linear(prog, up, &dev, z1, format!("rub upper row {i} step {k}"))?);
            // ‖z₂·dev‖ ≤ f + ψ̄
            let mut dn = mean;
            dn.add_term(f[i], T::one());
            ids.extend(soc_or_linear(prog, dn, &dev, z2, format!("rub lower row {i} step {k}"))?);
            out.push(ChanceHandle {
                kind: ChanceKind::ReverseUnionBound,
                step: k,
                col: 0,
                row: i,
                ids,
                aux: Some(f[i]),
            });
        }
        let id = radius_soc(prog, layout, cone, k, &f)?;
        if let Some(h) = out.last_mut() {
            h.ids.push(id);
        }
    }
    Ok(out)
}

/// `√(2 ln 1/δ)·σ_ξ + ‖ξ̄‖ ≤ r̄` per step, `σ_ξ` bounded by an epigraph variable.
pub fn emit_cone_geometric<T: Real>(
    prog: &mut ConicProgram<T>,
    layout: &Layout<'_, T>,
    cone: &ConeCC<T>,
    alloc: &RiskAllocation<T>,
) -> Result<Vec<ChanceHandle>> {
    let nh = layout.lifted.horizon;
    alloc.check_shape(nh, 1)?;
    let g = cone
        .geometric
        .as_ref()
        .ok_or_else(|| Error::OutOfRange { what: "cone", detail: "geometric relaxation needs A_c, c_c, H".into() })?;
    let xi = g.xi_map();
    let rad = g.radius_map();
    let q = layout.noise.dim();
    let mut out = Vec::new();
    for k in 1..=nh {
        let delta = to_f64(alloc.get(k - 1, 0));
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Allocation(format!("geometric risk {delta} outside (0, 1]")));
        }
        let gamma = lit::<T>((2.0 * (1.0 / delta).ln()).sqrt());
        let rows: Vec<DVector<T>> = (0..2).map(|r| unit(&xi, r)).collect();
        let tau = prog.add_var();
        let mut ids = Vec::new();
        let devs: Vec<Vec<AffExpr<T>>> = rows.iter().map(|a| layout.deviation_exprs_full(k, a)).collect();
        match cone.geometric_norm {
            GeometricNorm::Frobenius => {
                let x: Vec<AffExpr<T>> = devs.iter().flatten().filter(|e| !is_zero(e)).cloned().collect();
                ids.push(prog.add_soc(AffExpr::var(tau), x, Family::Chance, format!("geometric sigma step {k}"))?);
            }
            GeometricNorm::SpectralLmi => {
                // Drop columns that vanish in both rows.
                let keep: Vec<usize> = (0..q).filter(|&c| !(is_zero(&devs[0][c]) && is_zero(&devs[1][c]))).collect();
                let dim = 2 + keep.len();
                ids.push(prog.add_psd(
                    dim,
                    |i, j| {
                        if i == j {
                            AffExpr::var(tau)
                        } else if j < 2 || i >= 2 {
                            AffExpr::zero()
                        } else {
                            devs[i][keep[j - 2]].clone()
                        }
                    },
                    Family::Chance,
                    format!("geometric sigma step {k}"),
                )?);
            }
        }
        let mut r = layout.mean_expr(k, &rad);
        r.add_constant(cone.d);
        r.add_term(tau, -gamma);
        let xbar: Vec<AffExpr<T>> = rows.iter().map(|a| layout.mean_expr(k, a)).collect();
        ids.push(prog.add_soc(r, xbar, Family::Chance, format!("geometric disk step {k}"))?);
        out.push(ChanceHandle { kind: ChanceKind::Geometric, step: k, col: 0, row: 0, ids, aux: Some(tau) });
    }
    Ok(out)
}

fn is_zero<T: Real>(e: &AffExpr<T>) -> bool {
    e.constant == T::zero() && e.terms.iter().all(|p| p.1 == T::zero())
}

/// `ℙ(‖ν‖ ≤ a)` for a standard bivariate normal `ν`.
pub fn disk_probability(a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::OutOfRange { what: "disk radius", detail: format!("{a} is negative") });
    }
    Ok(-(-0.5 * a * a).exp_m1())
}

/// Upper-tail probability of `N(mean, σ²)` above `bound`, with the deterministic limit.
fn exceed(bound: f64, mean: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        normal::sf((bound - mean) / sigma)
    } else if mean <= bound {
        0.0
    } else {
        1.0
    }
}

/// Realized risk of one sub-constraint, in allocation units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskEntry {
    pub kind: ChanceKind,
    pub step: usize,
    pub col: usize,
    pub row: usize,
    pub allocated: f64,
    pub true_risk: f64,
    /// Exact spectral `σ_ξ` for the geometric relaxation.
    pub sigma: Option<f64>,
}

/// True risks: flat entries plus the `steps × cols` grid aggregated by max.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueRisk {
    pub entries: Vec<RiskEntry>,
    pub grid: Vec<f64>,
    pub steps: usize,
    pub cols: usize,
}

impl TrueRisk {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.grid[k * self.cols + j]
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }
}

/// Evaluates the realized violation probability of every emitted sub-constraint.
pub fn true_risk<T: Real>(
    sol: &ControllerSolution<T>,
    cc: &StateConstraints<T>,
    alloc: &RiskAllocation<T>,
    handles: &[ChanceHandle],
) -> TrueRisk {
    let mut grid = vec![0.0f64; alloc.steps * alloc.cols];
    let mut entries = Vec::with_capacity(handles.len());
    let xv = |v: Var| to_f64(sol.x[v.0]);
    for h in handles {
        let k = h.step;
        let delta = to_f64(alloc.get(k - 1, h.col));
        let x = sol.mean_at(k);
        let mut sigma_report = None;
        let risk = match (cc, h.kind) {
            (StateConstraints::Polytope(p), ChanceKind::Halfspace) => {
                let hs = &p.halfspaces[h.row];
                let mean = to_f64(hs.alpha.dot(&x));
                let sigma = to_f64(sol.std_along(k, &hs.alpha));
                exceed(to_f64(hs.beta), mean, sigma)
            }
            (StateConstraints::Cone(c), ChanceKind::ThreeCut | ChanceKind::ReverseUnionBound) => {
                let a_i = unit(&c.a, h.row);
                let beta = to_f64(c.weights()[h.row]);
                if a_i.iter().all(|v| *v == T::zero()) {
                    0.0
                } else {
                    let psi = to_f64(a_i.dot(&x) + c.b[h.row]);
                    let sigma = to_f64(sol.std_along(k, &a_i));
                    let f = h.aux.map(xv).unwrap_or(0.0);
                    let upper = exceed(f, psi, sigma);
                    let lower = exceed(f, -psi, sigma);
                    if h.kind == ChanceKind::ThreeCut {
                        let width = if sigma > 0.0 { 2.0 * normal::sf(f / sigma) } else { 0.0 };
                        upper.max(lower).max(width) / beta
                    } else {
                        let lv = c.rub_levels.unwrap_or_default();
                        (upper / lv.s1).max(lower / lv.s2) / beta
                    }
                }
            }
            (StateConstraints::Cone(c), ChanceKind::Geometric) => {
                let g = c.geometric.as_ref().expect("geometric data validated at emission");
                let xi = g.xi_map();
                let xbar = to_f64((&xi * &x).norm());
                let r = to_f64(g.radius_map().dot(&x) + c.d);
                let n = x.len();
                let m = &xi * sol.factor.rows(k * n, n);
                let spectral = to_f64(m.clone().singular_values().max());
                sigma_report = Some(spectral);
                let sigma = match c.geometric_norm {
                    GeometricNorm::SpectralLmi => spectral,
                    GeometricNorm::Frobenius => to_f64(m.norm()),
                };
                if r <= xbar {
                    1.0
                } else if sigma == 0.0 {
                    0.0
                } else {
                    (-(r - xbar).powi(2) / (2.0 * sigma * sigma)).exp()
                }
            }
            _ => 0.0,
        };
        let cell = &mut grid[(k - 1) * alloc.cols + h.col];
        *cell = cell.max(risk);
        entries.push(RiskEntry {
            kind: h.kind,
            step: k,
            col: h.col,
            row: h.row,
            allocated: delta,
            true_risk: risk,
            sigma: sigma_report,
        });
    }
    TrueRisk { entries, grid, steps: alloc.steps, cols: alloc.cols }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_law_values() {
        assert_eq!(disk_probability(0.0).unwrap(), 0.0);
        assert!((disk_probability(2.0).unwrap() - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((disk_probability(50.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(disk_probability(-1.0).is_err());
    }

    #[test]
    fn uniform_allocation_respects_budget() {
        for (n, m) in [(15, 4), (7, 3), (13, 1), (1, 1), (11, 7)] {
            let a = RiskAllocation::<f64>::uniform(n, m, 0.03);
            assert!(a.total() <= 0.03);
            a.validate().unwrap();
        }
    }

    #[test]
    fn enforce_budget_trims_largest() {
        let mut a = RiskAllocation::<f64>::uniform(2, 2, 0.1);
        a.set(0, 0, 0.08);
        a.enforce_budget();
        assert!(a.total() <= 0.1);
        assert!(a.get(0, 0) < 0.08);
        assert_eq!(a.get(1, 1), 0.025);
    }

    #[test]
    fn rotation_matches_rotated_point() {
        let lam = 15f64.to_radians().tan();
        let cone = ConeCC {
            a: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0])),
            b: DVector::zeros(6),
            c: DVector::from_vec(vec![0.0, lam, 0.0, 0.0, 0.0, 0.0]),
            d: 10.0,
            relaxation: Relaxation::ThreeCut,
            geometric: None,
            geometric_norm: GeometricNorm::SpectralLmi,
            weights: None,
            rub_levels: None,
        };
        let psi = -0.6435;
        let rot = cone.rotated(0, psi).unwrap();
        let r3 = axis_rotation(0, psi);
        let rbar = crate::linalg::block_diag(&[r3.clone(), r3]);
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 300.0
        };
        for _ in 0..1000 {
            let x = DVector::from_fn(6, |_, _| next());
            assert_eq!(rot.contains(&x), cone.contains(&(&rbar * &x)));
        }
    }

    #[test]
    fn true_risk_limits() {
        assert_eq!(exceed(1.0, 1.0, 2.0), 0.5);
        assert!((exceed(2.0, 1.0, 1.0) - 0.158655253931457).abs() < 1e-12);
        assert_eq!(exceed(1.0, 0.5, 0.0), 0.0);
        assert_eq!(exceed(1.0, 1.5, 0.0), 1.0);
    }
}
