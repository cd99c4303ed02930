//! Solve → risk allocation → Monte Carlo validation, with report and CSV artifacts.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use super::config::{build, AllocationMode, Scenario, ScenarioConfig};
use crate::conic::Clarabel;
use crate::constraints::{self, RiskAllocation, RiskEntry, DELTA_CAP};
use crate::error::{Error, Result};
use crate::hardinput;
use crate::ira::{self, IraTrace, Termination};
use crate::linalg;
use crate::steering::{self, ControllerSolution, NoiseModel};
use crate::validation::{self, ValidationReport};

pub const REPORT_FORMAT: &str = "covsteer-report";

/// Per-run overrides of the configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub allocation: Option<AllocationMode>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

/// Versioned header: everything that may differ between otherwise identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format: String,
    pub version: String,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub moments_ms: f64,
    pub iteration_ms: Vec<f64>,
    pub solver_seconds: f64,
    pub validation_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub cost: f64,
    pub active: usize,
    pub total_delta: f64,
}

/// Internal checks every accepted run must pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Invariants {
    /// `‖E_N X̄ − μ_f‖∞ ≤ 1e-6`
    pub terminal_mean: bool,
    /// `λ_min(Σ_f − Σ_N) ≥ −1e-7`
    pub terminal_covariance: bool,
    /// Every iterate has `Σδ ≤ Δ` and `δ ∈ [δ_min, 0.5)`.
    pub risk_budget: bool,
    /// No rollout violates the hard input bound.
    pub input_bound: bool,
}

impl Invariants {
    pub fn all(&self) -> bool {
        self.terminal_mean && self.terminal_covariance && self.risk_budget && self.input_bound
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBody {
    pub name: String,
    pub config: ScenarioConfig,
    pub allocation_mode: AllocationMode,
    pub termination: Option<Termination>,
    pub best_iteration: usize,
    pub cost: f64,
    pub iterations: Vec<IterationSummary>,
    pub steps: usize,
    pub cols: usize,
    pub allocation: Vec<f64>,
    pub true_risk: Vec<f64>,
    /// `Σ δ̄`, the union bound on the joint risk from the per-constraint true risks.
    pub true_risk_sum: f64,
    pub risk_entries: Vec<RiskEntry>,
    pub terminal_mean_error: f64,
    pub terminal_lambda_min: f64,
    pub terminal_volume: Option<f64>,
    /// Largest `(H u_k)_s − h_s` over the saturation box; nonpositive means guaranteed.
    pub worst_case_input_margin: Option<f64>,
    /// Gap between Monte Carlo and closed-form cross moments of the saturated signal.
    pub stein_gap: Option<f64>,
    pub validation: ValidationReport,
    pub invariants: Invariants,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    pub body: ReportBody,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The body alone; identical for identical configuration and seeds.
    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report serializes")
    }
}

/// Saved policy, enough to re-validate without solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub name: String,
    pub cost: f64,
    pub v: Vec<f64>,
    /// `K_k` row-major per step.
    pub gains: Vec<Vec<Vec<f64>>>,
    pub allocation: Vec<f64>,
}

impl SolutionFile {
    pub fn from_solution(name: &str, sol: &ControllerSolution<f64>, alloc: &RiskAllocation<f64>) -> Self {
        Self {
            name: name.into(),
            cost: sol.cost,
            v: sol.v.iter().copied().collect(),
            gains: sol
                .gains
                .iter()
                .map(|g| (0..g.nrows()).map(|i| g.row(i).iter().copied().collect()).collect())
                .collect(),
            allocation: alloc.delta.clone(),
        }
    }

    pub fn policy(&self) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let v = DVector::from_column_slice(&self.v);
        let gains = self
            .gains
            .iter()
            .map(|g| {
                let (r, c) = (g.len(), g.first().map_or(0, |row| row.len()));
                DMatrix::from_fn(r, c, |i, j| g[i][j])
            })
            .collect();
        (v, gains)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }
}

/// Everything produced by one scenario run.
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub noise: NoiseModel<f64>,
    pub solution: ControllerSolution<f64>,
    pub allocation: RiskAllocation<f64>,
    pub trace: IraTrace,
    pub report: Report,
}

pub fn noise_for(scenario: &Scenario) -> Result<(NoiseModel<f64>, Option<f64>)> {
    let p = &scenario.problem;
    match &p.hard_input {
        None => Ok((NoiseModel::unsaturated(&p.lifted)?, None)),
        Some(spec) => {
            let mom = hardinput::moments(&p.lifted, spec)?;
            let gap = mom.initial.stein_gap.max(mom.disturbance.stein_gap);
            Ok((hardinput::noise_model_from_moments(&p.lifted, &mom)?, Some(gap)))
        }
    }
}

fn budget_ok(trace: &IraTrace, budget: f64, floor: f64) -> bool {
    trace.records.iter().all(|r| {
        r.allocation.iter().sum::<f64>() <= budget
            && r.allocation.iter().all(|d| *d >= floor && *d <= DELTA_CAP && *d < 0.5)
    })
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioRun> {
    let started = Instant::now();
    let scenario = build(cfg)?;
    let p = &scenario.problem;
    let mode = opts.allocation.unwrap_or(cfg.risk.allocation);
    let samples = opts.samples.unwrap_or(cfg.monte_carlo.samples);
    let seed = opts.seed.unwrap_or(cfg.monte_carlo.seed);

    let t = Instant::now();
    let (noise, stein_gap) = noise_for(&scenario)?;
    let moments_ms = t.elapsed().as_secs_f64() * 1e3;

    let (solution, allocation, trace, true_risk, termination, best) = match mode {
        AllocationMode::Ira => {
            let out = ira::run_ira(p, &scenario.ira, &noise, &Clarabel, &scenario.tolerances)?;
            (out.solution, out.allocation, out.trace, out.true_risk, Some(out.termination), out.best_iteration)
        }
        AllocationMode::Uniform => {
            let t = Instant::now();
            let mut alloc = RiskAllocation::uniform(p.horizon(), p.constraints.allocation_width(), p.budget);
            alloc.floor = scenario.ira.floor;
            let out = steering::solve(p, &alloc, &noise, &Clarabel, &scenario.tolerances)?;
            let risk = constraints::true_risk(&out.solution, &p.constraints, &alloc, &out.chance);
            let mask = ira::classify(&alloc, &risk, scenario.ira.eta);
            let trace = IraTrace {
                records: vec![ira::IraRecord {
                    iteration: 0,
                    cost: out.solution.cost,
                    active: mask.iter().filter(|m| **m).count(),
                    total_delta: alloc.total(),
                    wall_ms: t.elapsed().as_secs_f64() * 1e3,
                    allocation: alloc.delta.clone(),
                    true_risk: risk.grid.clone(),
                    active_mask: mask,
                }],
            };
            (out.solution, alloc, trace, risk, None, 0)
        }
    };

    let t = Instant::now();
    let validation = validation::validate(p, &solution, samples, seed)?;
    let validation_ms = t.elapsed().as_secs_f64() * 1e3;

    let nh = p.horizon();
    let terminal_mean_error = (solution.mean_at(nh) - &p.mu_f).amax();
    let terminal_lambda_min = linalg::min_eigenvalue(&linalg::symmetrize(&(&p.sigma_f - solution.cov_at(nh))));
    let invariants = Invariants {
        terminal_mean: terminal_mean_error <= 1e-6,
        terminal_covariance: terminal_lambda_min >= -1e-7,
        risk_budget: budget_ok(&trace, p.budget, scenario.ira.floor),
        input_bound: validation.input_violations.map_or(true, |v| v == 0),
    };
    let body = ReportBody {
        name: cfg.name.clone(),
        config: cfg.clone(),
        allocation_mode: mode,
        termination,
        best_iteration: best,
        cost: solution.cost,
        iterations: trace
            .records
            .iter()
            .map(|r| IterationSummary { iteration: r.iteration, cost: r.cost, active: r.active, total_delta: r.total_delta })
            .collect(),
        steps: allocation.steps,
        cols: allocation.cols,
        allocation: allocation.delta.clone(),
        true_risk: true_risk.grid.clone(),
        true_risk_sum: true_risk.grid.iter().sum(),
        risk_entries: true_risk.entries.clone(),
        terminal_mean_error,
        terminal_lambda_min,
        terminal_volume: solution.terminal_volume(),
        worst_case_input_margin: p
            .hard_input
            .as_ref()
            .map(|h| hardinput::worst_case_margin(&p.lifted, h, &solution.v, &solution.gains)),
        stein_gap,
        validation,
        invariants,
    };
    let header = ReportHeader {
        format: REPORT_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        timing: Timing {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            moments_ms,
            iteration_ms: trace.records.iter().map(|r| r.wall_ms).collect(),
            solver_seconds: solution.stats.seconds,
            validation_ms,
        },
    };
    Ok(ScenarioRun { scenario, noise, solution, allocation, trace, report: Report { header, body } })
}

/// Semi-axes and orientation (degrees) of the 3σ ellipse of a planar covariance.
pub fn ellipse_3sigma(cov: &Matrix2<f64>) -> (f64, f64, f64) {
    let eig = cov.symmetric_eigen();
    let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let major = eig.eigenvectors.column(i);
    let angle = major[1].atan2(major[0]).to_degrees();
    // Direction is defined up to sign.
    let angle = if angle > 90.0 {
        angle - 180.0
    } else if angle <= -90.0 {
        angle + 180.0
    } else {
        angle
    };
    (3.0 * eig.eigenvalues[i].max(0.0).sqrt(), 3.0 * eig.eigenvalues[j].max(0.0).sqrt(), angle)
}

fn trajectories_csv(run: &ScenarioRun) -> Result<Vec<u8>> {
    let sol = &run.solution;
    let n = run.scenario.problem.lifted.n;
    let dt = run.scenario.config.horizon.dt_s;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["k".to_string(), "t_s".to_string()];
    head.extend((0..n).map(|i| format!("mean_{i}")));
    head.extend((0..n).map(|i| format!("sigma_{i}")));
    head.extend(["ellipse_major".into(), "ellipse_minor".into(), "ellipse_deg".into()]);
    w.write_record(&head).map_err(csv_err)?;
    for k in 0..=sol.horizon() {
        let mean = sol.mean_at(k);
        let cov = sol.cov_at(k);
        let mut row = vec![k.to_string(), (k as f64 * dt).to_string()];
        row.extend(mean.iter().map(|v| v.to_string()));
        row.extend((0..n).map(|i| cov[(i, i)].max(0.0).sqrt().to_string()));
        let (a, b, deg) = if n >= 2 {
            ellipse_3sigma(&Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]))
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        row.extend([a.to_string(), b.to_string(), deg.to_string()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn allocation_csv(trace: &IraTrace, cols: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "k", "j", "delta", "true_risk", "active"]).map_err(csv_err)?;
    for r in &trace.records {
        for (idx, d) in r.allocation.iter().enumerate() {
            w.write_record([
                r.iteration.to_string(),
                (idx / cols + 1).to_string(),
                (idx % cols).to_string(),
                d.to_string(),
                r.true_risk[idx].to_string(),
                r.active_mask[idx].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn marginals_csv(v: &ValidationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "j", "frequency"]).map_err(csv_err)?;
    let r = &v.risk;
    for k in 1..=r.steps {
        for j in 0..r.cols {
            w.write_record([k.to_string(), j.to_string(), r.marginal(k, j).to_string()]).map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `report.json`, `solution.json`, `trajectories.csv`, `allocation_trace.csv` and `marginals.csv`.
pub fn write_artifacts(run: &ScenarioRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), run.report.to_json())?;
    let sol = SolutionFile::from_solution(&run.scenario.config.name, &run.solution, &run.allocation);
    fs::write(dir.join("solution.json"), serde_json::to_string_pretty(&sol).expect("solution serializes"))?;
    fs::write(dir.join("trajectories.csv"), trajectories_csv(run)?)?;
    fs::write(dir.join("allocation_trace.csv"), allocation_csv(&run.trace, run.allocation.cols.max(1))?)?;
    fs::write(dir.join("marginals.csv"), marginals_csv(&run.report.body.validation)?)?;
    Ok(())
}

/// Re-validates a saved policy against its scenario.
pub fn validate_saved(cfg: &ScenarioConfig, saved: &SolutionFile, samples: usize, seed: u64) -> Result<ValidationReport> {
    let scenario = build(cfg)?;
    let (noise, _) = noise_for(&scenario)?;
    let (v, gains) = saved.policy();
    let sol = steering::from_policy(&scenario.problem, &noise, v, gains)?;
    validation::validate(&scenario.problem, &sol, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_of_rotated_covariance() {
        let c = 30f64.to_radians();
        let r = Matrix2::new(c.cos(), -c.sin(), c.sin(), c.cos());
        let cov = r * Matrix2::new(4.0, 0.0, 0.0, 1.0) * r.transpose();
        let (a, b, deg) = ellipse_3sigma(&cov);
        assert!((a - 6.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!((deg - 30.0).abs() < 1e-9);
    }
}
