use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::scalar::Real;

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

/// Sparse affine expression `Σ cᵢ xᵢ + c₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffExpr<T: Real> {
    pub terms: Vec<(Var, T)>,
    pub constant: T,
}

impl<T: Real> Default for AffExpr<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> AffExpr<T> {
    pub fn zero() -> Self {
        Self { terms: Vec::new(), constant: T::zero() }
    }

    pub fn constant(c: T) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        Self { terms: vec![(v, T::one())], constant: T::zero() }
    }

    pub fn term(v: Var, c: T) -> Self {
        Self { terms: vec![(v, c)], constant: T::zero() }
    }

    pub fn add_term(&mut self, v: Var, c: T) -> &mut Self {
        if c != T::zero() {
            self.terms.push((v, c));
        }
        self
    }

    pub fn add_constant(&mut self, c: T) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &AffExpr<T>, s: T) -> &mut Self {
        if s == T::zero() {
            return self;
        }
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * s)));
        self.constant += other.constant * s;
        self
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(), constant: self.constant * s }
    }

    /// Merges duplicate variables, drops zeros, sorts by variable.
    pub fn canonical(&self) -> Self {
        let mut t = self.terms.clone();
        t.sort_by_key(|p| p.0);
        let mut out: Vec<(Var, T)> = Vec::with_capacity(t.len());
        for (v, c) in t {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|p| p.1 != T::zero());
        Self { terms: out, constant: self.constant }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|p| p.1 == T::zero())
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Largest absolute coefficient or constant, at least one.
    pub fn scale(&self) -> T {
        self.terms.iter().fold(self.constant.abs().max(T::one()), |acc, p| acc.max(p.1.abs()))
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|p| p.0 .0).max()
    }
}

impl<T: Real> From<Var> for AffExpr<T> {
    fn from(v: Var) -> Self {
        AffExpr::var(v)
    }
}

impl<T: Real> Add for AffExpr<T> {
    type Output = AffExpr<T>;
    fn add(mut self, rhs: Self) -> Self {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl<T: Real> AddAssign<&AffExpr<T>> for AffExpr<T> {
    fn add_assign(&mut self, rhs: &AffExpr<T>) {
        self.terms.extend_from_slice(&rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Real> Sub for AffExpr<T> {
    type Output = AffExpr<T>;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Real> Neg for AffExpr<T> {
    type Output = AffExpr<T>;
    fn neg(self) -> Self {
        self.scaled(-T::one())
    }
}

impl<T: Real> Mul<T> for AffExpr<T> {
    type Output = AffExpr<T>;
    fn mul(self, rhs: T) -> Self {
        self.scaled(rhs)
    }
}
