//! Iterative risk allocation: re-solve the steering program while shifting risk from
//! inactive to active chance constraints.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::{ConicBackend, Tolerances};
use crate::constraints::{self, ChanceHandle, RiskAllocation, TrueRisk};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::steering::{self, ControllerSolution, NoiseModel, SteeringProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IraConfig {
    /// `ρ_i = rho0 · rho_decay^i`
    pub rho0: f64,
    pub rho_decay: f64,
    /// Relative cost tolerance: stop when `|ΔJ| ≤ epsilon · max(1, |J|)`.
    pub epsilon: f64,
    /// Activity tolerance: active iff `δ̄ ≥ (1 − eta) δ`.
    pub eta: f64,
    pub max_iter: usize,
    pub floor: f64,
}

impl Default for IraConfig {
    fn default() -> Self {
        Self { rho0: 0.7, rho_decay: 0.98, epsilon: 1e-5, eta: 1e-2, max_iter: 50, floor: constraints::DELTA_FLOOR }
    }
}

impl IraConfig {
    pub fn rho(&self, i: usize) -> f64 {
        self.rho0 * self.rho_decay.powi(i as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, detail: &str| Err(Error::OutOfRange { what, detail: detail.into() });
        if !(self.rho0 > 0.0 && self.rho0 < 1.0 && self.rho_decay > 0.0 && self.rho_decay <= 1.0) {
            return bad("rho schedule", "need 0 < rho0 < 1 and 0 < rho_decay ≤ 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta", "must lie in (0, 1)");
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be positive");
        }
        if !(self.floor > 0.0 && self.floor < 0.5) {
            return bad("floor", "must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `|ΔJ| ≤ ε`
    Converged,
    /// Every constraint inactive.
    AllInactive,
    /// Every constraint active.
    AllActive,
    MaxIterations,
    /// A solve failed after the first iteration; best-so-far returned.
    SolverFailure,
}

/// One solve of the loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IraRecord {
    pub iteration: usize,
    pub cost: f64,
    pub active: usize,
    pub total_delta: f64,
    pub wall_ms: f64,
    pub allocation: Vec<f64>,
    pub true_risk: Vec<f64>,
    pub active_mask: Vec<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IraTrace {
    pub records: Vec<IraRecord>,
}

impl IraTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    /// `iteration,cost,active,total_delta,wall_ms` lines.
    pub fn summary_lines(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| format!("{},{:.12e},{},{:.12e},{:.3}", r.iteration, r.cost, r.active, r.total_delta, r.wall_ms))
            .collect()
    }
}

pub struct IraOutcome<T: Real> {
    pub allocation: RiskAllocation<T>,
    pub solution: ControllerSolution<T>,
    pub handles: Vec<ChanceHandle>,
    pub true_risk: TrueRisk,
    pub trace: IraTrace,
    pub termination: Termination,
    /// Index into the trace of the returned solution.
    pub best_iteration: usize,
    /// Error that ended the loop early, if any.
    pub failure: Option<String>,
}

/// Active iff `δ̄ ≥ (1 − η) δ`.
pub fn classify<T: Real>(alloc: &RiskAllocation<T>, risk: &TrueRisk, eta: f64) -> Vec<bool> {
    alloc.delta.iter().zip(risk.grid.iter()).map(|(d, r)| *r >= (1.0 - eta) * to_f64(*d)).collect()
}

/// Inactive entries move toward their true risk: `δ ← ρδ + (1−ρ)δ̄`.
pub fn tighten<T: Real>(alloc: &RiskAllocation<T>, risk: &TrueRisk, mask: &[bool], rho: f64) -> RiskAllocation<T> {
    let mut out = alloc.clone();
    let rho_t = lit::<T>(rho);
    for (i, d) in out.delta.iter_mut().enumerate() {
        if !mask[i] {
            *d = rho_t * *d + (T::one() - rho_t) * lit::<T>(risk.grid[i]);
        }
    }
    out
}

/// Tightening, then the residual budget split evenly over active entries, then floor, cap and budget.
pub fn reallocate<T: Real>(
    alloc: &RiskAllocation<T>,
    risk: &TrueRisk,
    mask: &[bool],
    rho: f64,
    budget: T,
) -> RiskAllocation<T> {
    let mut out = tighten(alloc, risk, mask, rho);
    out.budget = budget;
    let active = mask.iter().filter(|m| **m).count();
    if active > 0 {
        let res = budget - out.total();
        let share = res / lit::<T>(active as f64);
        for (i, d) in out.delta.iter_mut().enumerate() {
            if mask[i] {
                *d += share;
            }
        }
    }
    out.clamp();
    out.enforce_budget();
    out
}

fn record<T: Real>(
    iteration: usize,
    sol: &ControllerSolution<T>,
    alloc: &RiskAllocation<T>,
    risk: &TrueRisk,
    mask: &[bool],
    started: Instant,
) -> IraRecord {
    IraRecord {
        iteration,
        cost: to_f64(sol.cost),
        active: mask.iter().filter(|m| **m).count(),
        total_delta: to_f64(alloc.total()),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        allocation: alloc.delta.iter().map(|d| to_f64(*d)).collect(),
        true_risk: risk.grid.clone(),
        active_mask: mask.to_vec(),
    }
}

/// Runs the loop from the uniform allocation.
pub fn run_ira<T: Real>(
    problem: &SteeringProblem<T>,
    config: &IraConfig,
    noise: &NoiseModel<T>,
    backend: &dyn ConicBackend,
    tol: &Tolerances,
) -> Result<IraOutcome<T>> {
    config.validate()?;
    problem.validate()?;
    let nh = problem.horizon();
    let cols = problem.constraints.allocation_width();
    let mut alloc = RiskAllocation::uniform(nh, cols, problem.budget);
    alloc.floor = lit(config.floor);

    let mut trace = IraTrace::default();
    let mut best: Option<(usize, RiskAllocation<T>, steering::SolveOutcome<T>, TrueRisk)> = None;
    let mut prev_cost: Option<f64> = None;
    let mut termination = Termination::MaxIterations;
    let mut failure = None;

    for i in 0..config.max_iter {
        let started = Instant::now();
        let out = match steering::solve(problem, &alloc, noise, backend, tol) {
            Ok(o) => o,
            Err(e) if i == 0 => return Err(Error::FirstSolveInfeasible(Box::new(e))),
            Err(e) => {
                log::warn!("solve failed at iteration {i}: {e}");
                failure = Some(e.to_string());
                termination = Termination::SolverFailure;
                break;
            }
        };
        let risk = constraints::true_risk(&out.solution, &problem.constraints, &alloc, &out.chance);
        let mask = classify(&alloc, &risk, config.eta);
        let rec = record(i, &out.solution, &alloc, &risk, &mask, started);
        let cost = rec.cost;
        let active = rec.active;
        log::info!("iteration {i}: J = {cost:.9e}, active {active}/{}, sum delta {:.6e}", mask.len(), rec.total_delta);
        trace.records.push(rec);

        let improved = best.as_ref().map_or(true, |b| cost < to_f64(b.2.solution.cost));
        let next_alloc = if active == 0 || active == mask.len() {
            None
        } else {
            Some(reallocate(&alloc, &risk, &mask, config.rho(i), problem.budget))
        };
        if improved {
            best = Some((i, alloc.clone(), out, risk));
        }

        if let Some(p) = prev_cost {
            if (cost - p).abs() <= config.epsilon * cost.abs().max(1.0) {
                termination = Termination::Converged;
                break;
            }
        }
        prev_cost = Some(cost);
        match next_alloc {
            None => {
                termination = if active == 0 { Termination::AllInactive } else { Termination::AllActive };
                break;
            }
            Some(a) => {
                debug_assert!(a.total() <= problem.budget);
                alloc = a;
            }
        }
    }

    let (best_iteration, allocation, out, true_risk) = best.expect("first iteration either solves or returns");
    Ok(IraOutcome {
        allocation,
        solution: out.solution,
        handles: out.chance,
        true_risk,
        trace,
        termination,
        best_iteration,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::TrueRisk;

    fn risk(grid: Vec<f64>) -> TrueRisk {
        let n = grid.len();
        TrueRisk { entries: Vec::new(), grid, steps: n, cols: 1 }
    }

    fn alloc(v: Vec<f64>, budget: f64) -> RiskAllocation<f64> {
        RiskAllocation { steps: v.len(), cols: 1, delta: v, budget, floor: 1e-9 }
    }

    #[test]
    fn classification_is_closed() {
        let a = alloc(vec![1e-3, 1e-3, 1e-3], 0.01);
        let r = risk(vec![1e-3, 0.0, 0.99e-3]);
        assert_eq!(classify(&a, &r, 1e-2), vec![true, false, true]);
    }

    #[test]
    fn rho_one_is_fixed_point() {
        let a = alloc(vec![0.01, 0.01, 0.01], 0.03);
        let r = risk(vec![0.01, 0.001, 0.002]);
        let mask = classify(&a, &r, 1e-2);
        let b = reallocate(&a, &r, &mask, 1.0, 0.03);
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn rho_zero_jumps_to_true_risk() {
        let a = alloc(vec![0.01, 0.01, 0.01], 0.03);
        let r = risk(vec![0.01, 0.001, 0.002]);
        let mask = vec![true, false, false];
        let t = tighten(&a, &r, &mask, 0.0);
        assert_eq!(t.delta, vec![0.01, 0.001, 0.002]);
        let b = reallocate(&a, &r, &mask, 0.0, 0.03);
        assert!(b.total() <= 0.03);
        assert!((b.get(0, 0) - 0.027).abs() < 1e-12);
    }
}
