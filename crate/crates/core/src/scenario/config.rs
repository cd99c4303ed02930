//! TOML scenario configuration and its translation into a [`SteeringProblem`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dynamics::{self, EARTH_RADIUS_KM, MU_EARTH_KM3_S2};
use crate::conic::{QuadMode, Tolerances};
use crate::constraints::{
    ConeCC, GeometricNorm, GeometricSpec, Halfspace, PolytopeCC, Relaxation, RubLevels, StateConstraints,
};
use crate::error::{Error, Result};
use crate::hardinput::{self, HardInputSpec};
use crate::ira::IraConfig;
use crate::lifting::{lift, LtvSystem};
use crate::linalg;
use crate::steering::SteeringProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dynamics: DynamicsConfig,
    pub horizon: HorizonConfig,
    pub noise: NoiseConfig,
    pub boundary: BoundaryConfig,
    pub cost: CostConfig,
    pub risk: RiskConfig,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub solver: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsConfig {
    Cwh {
        altitude_km: f64,
        #[serde(default = "default_earth_radius")]
        earth_radius_km: f64,
        #[serde(default = "default_mu")]
        mu_km3_s2: f64,
        deputy_mass_kg: f64,
    },
    /// Continuous-time `ẋ = Ax + Bu`, discretized with a zero-order hold.
    Custom { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

fn default_earth_radius() -> f64 {
    EARTH_RADIUS_KM
}

fn default_mu() -> f64 {
    MU_EARTH_KM3_S2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub steps: usize,
    pub dt_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Discrete disturbance matrix `G` (n × r), row-major.
    pub g: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    pub mu_f: Vec<f64>,
    pub sigma_f: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    #[serde(default)]
    pub quad_mode: QuadMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    Uniform,
    #[default]
    Ira,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub budget: f64,
    #[serde(default)]
    pub allocation: AllocationMode,
    #[serde(default)]
    pub ira: IraConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    #[default]
    None,
    Polytope { halfspaces: Vec<HalfspaceConfig> },
    Cone(ConeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceConfig {
    pub alpha: Vec<f64>,
    pub beta: f64,
}

/// Either a line-of-sight cone along `+y` of half-angle `theta_deg`, or explicit `(A, b, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    pub relaxation: Relaxation,
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    /// Cross-section for the geometric relaxation with explicit data: `A_c = diag(a_c_diag)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_c_diag: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_c: Option<Vec<f64>>,
    #[serde(default)]
    pub geometric_norm: GeometricNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rub_levels: Option<RubLevels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<RotationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationConfig {
    /// 0 = x, 1 = y, 2 = z.
    pub axis: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    /// About `x`: turn the `+y` axis onto the initial mean, `ψ = −atan2(μ₀_z, μ₀_y)`.
    #[serde(default)]
    pub align_initial_mean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforcement {
    #[default]
    None,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub u_max: f64,
    #[serde(default)]
    pub enforcement: Enforcement,
    /// Saturation of the initial deviation; `3√diag(Σ₀)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<Vec<f64>>,
    /// Saturation of each disturbance; `3` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_max: Option<Vec<f64>>,
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    #[serde(default = "default_moment_seed")]
    pub moment_seed: u64,
    #[serde(default = "default_backoff")]
    pub backoff: f64,
}

fn default_moment_samples() -> usize {
    hardinput::DEFAULT_SAMPLES
}

fn default_moment_seed() -> u64 {
    hardinput::DEFAULT_SEED
}

fn default_backoff() -> f64 {
    1e-6
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            u_max: f64::INFINITY,
            enforcement: Enforcement::None,
            y_max: None,
            w_max: None,
            moment_samples: default_moment_samples(),
            moment_seed: default_moment_seed(),
            backoff: default_backoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0x00c0_5700 }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| line_col(text, s.start)).unwrap_or_else(|| "<document>".into());
            Error::config(field, e.message().trim().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("{}:{field}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Polyhedral or cone column count of the risk grid.
    pub fn state_dim(&self) -> usize {
        self.boundary.mu0.len()
    }
}

fn line_col(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    format!("line {line}, column {col}")
}

fn matrix(field: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::config(field, "must be a non-empty rectangular array of rows"));
    }
    if let Some((er, ec)) = shape {
        if (r, c) != (er, ec) {
            return Err(Error::config(field, format!("expected {er}×{ec}, found {r}×{c}")));
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(field: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::config(field, format!("expected length {len}, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

fn positive_definite(field: &str, m: &DMatrix<f64>) -> Result<()> {
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::config(field, "must be symmetric"));
    }
    linalg::cholesky(m, field, None).map(|_| ()).map_err(|_| Error::config(field, "must be positive definite"))
}

/// Continuous and discrete dynamics of a scenario.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    /// Orbital rate for CWH dynamics.
    pub omega: Option<f64>,
}

pub fn discretize(cfg: &ScenarioConfig) -> Result<Discretized> {
    let n = cfg.state_dim();
    let (a, b, omega) = match &cfg.dynamics {
        DynamicsConfig::Cwh { altitude_km, earth_radius_km, mu_km3_s2, deputy_mass_kg } => {
            if n != 6 {
                return Err(Error::config("boundary.mu0", "CWH dynamics need 6 states"));
            }
            let omega = dynamics::mean_motion(*mu_km3_s2, earth_radius_km + altitude_km)
                .map_err(|e| Error::config("dynamics", e.to_string()))?;
            let (a, b) =
                dynamics::cwh_matrices(omega, *deputy_mass_kg).map_err(|e| Error::config("dynamics", e.to_string()))?;
            (a, b, Some(omega))
        }
        DynamicsConfig::Custom { a, b } => {
            let a = matrix("dynamics.a", a, Some((n, n)))?;
            let b = matrix("dynamics.b", b, None)?;
            if b.nrows() != n {
                return Err(Error::config("dynamics.b", format!("must have {n} rows")));
            }
            (a, b, None)
        }
    };
    if !(cfg.horizon.dt_s > 0.0 && cfg.horizon.dt_s.is_finite()) {
        return Err(Error::config("horizon.dt_s", "must be positive"));
    }
    let (a_d, b_d) = dynamics::discretize_zoh(&a, &b, cfg.horizon.dt_s)?;
    Ok(Discretized { a, b, a_d, b_d, omega })
}

/// A validated scenario ready to solve.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub dynamics: Discretized,
    pub problem: SteeringProblem<f64>,
    pub ira: IraConfig,
    pub tolerances: Tolerances,
}

pub fn build(cfg: &ScenarioConfig) -> Result<Scenario> {
    let n = cfg.state_dim();
    if n == 0 {
        return Err(Error::config("boundary.mu0", "must not be empty"));
    }
    let nh = cfg.horizon.steps;
    if nh == 0 {
        return Err(Error::config("horizon.steps", "must be at least 1"));
    }
    let dynamics = discretize(cfg)?;
    let m = dynamics.b.ncols();

    let g = matrix("noise.g", &cfg.noise.g, None)?;
    if g.nrows() != n {
        return Err(Error::config("noise.g", format!("must have {n} rows")));
    }
    let b = &cfg.boundary;
    let mu0 = vector("boundary.mu0", &b.mu0, n)?;
    let mu_f = vector("boundary.mu_f", &b.mu_f, n)?;
    let sigma0 = matrix("boundary.sigma0", &b.sigma0, Some((n, n)))?;
    positive_definite("boundary.sigma0", &sigma0)?;
    let sigma_f = matrix("boundary.sigma_f", &b.sigma_f, Some((n, n)))?;
    positive_definite("boundary.sigma_f", &sigma_f)?;

    let q = vector("cost.q_diag", &cfg.cost.q_diag, n)?;
    if q.iter().any(|v| *v < 0.0) {
        return Err(Error::config("cost.q_diag", "entries must be nonnegative"));
    }
    let r = vector("cost.r_diag", &cfg.cost.r_diag, m)?;
    if r.iter().any(|v| *v <= 0.0) {
        return Err(Error::config("cost.r_diag", "entries must be positive"));
    }
    if !(cfg.risk.budget > 0.0 && cfg.risk.budget <= 0.5) {
        return Err(Error::config("risk.budget", "must lie in (0, 0.5]"));
    }
    cfg.risk.ira.validate().map_err(|e| Error::config("risk.ira", e.to_string()))?;

    let sys = LtvSystem::time_invariant(dynamics.a_d.clone(), dynamics.b_d.clone(), g, nh)?;
    let lifted = lift(
        &sys,
        &vec![DMatrix::from_diagonal(&q); nh],
        &vec![DMatrix::from_diagonal(&r); nh],
        &sigma0,
    )?;

    let constraints = state_constraints(cfg, &mu0)?;
    let hard_input = match cfg.input.enforcement {
        Enforcement::None => None,
        Enforcement::Hard => Some(hard_input_spec(cfg, &sigma0, m, sys.r())?),
    };
    let problem = SteeringProblem {
        lifted,
        mu0,
        mu_f,
        sigma_f,
        budget: cfg.risk.budget,
        constraints,
        hard_input,
        quad_mode: cfg.cost.quad_mode,
    };
    problem.validate().map_err(|e| Error::config("scenario", e.to_string()))?;
    Ok(Scenario {
        config: cfg.clone(),
        dynamics,
        problem,
        ira: cfg.risk.ira,
        tolerances: cfg.solver,
    })
}

fn state_constraints(cfg: &ScenarioConfig, mu0: &DVector<f64>) -> Result<StateConstraints<f64>> {
    let n = mu0.len();
    match &cfg.constraints {
        ConstraintConfig::None => Ok(StateConstraints::None),
        ConstraintConfig::Polytope { halfspaces } => {
            let hs = halfspaces
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    Ok(Halfspace { alpha: vector(&format!("constraints.halfspaces[{j}].alpha"), &h.alpha, n)?, beta: h.beta })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = PolytopeCC::new(hs).map_err(|e| Error::config("constraints.halfspaces", e.to_string()))?;
            Ok(StateConstraints::Polytope(p))
        }
        ConstraintConfig::Cone(c) => cone(c, mu0).map(StateConstraints::Cone),
    }
}

fn cone(c: &ConeConfig, mu0: &DVector<f64>) -> Result<ConeCC<f64>> {
    let n = mu0.len();
    let (a, b, cv, geometric) = match c.theta_deg {
        Some(theta) => {
            if c.a.is_some() || c.b.is_some() || c.c.is_some() || c.a_c_diag.is_some() || c.c_c.is_some() {
                return Err(Error::config("constraints.theta_deg", "give either theta_deg or explicit cone data, not both"));
            }
            if !(theta > 0.0 && theta < 90.0) || n < 3 {
                return Err(Error::config("constraints.theta_deg", "must lie in (0, 90) with at least 3 states"));
            }
            let lam = theta.to_radians().tan();
            let mut a = DMatrix::zeros(n, n);
            a[(0, 0)] = 1.0;
            a[(2, 2)] = 1.0;
            let mut cv = DVector::zeros(n);
            cv[1] = lam;
            let g = GeometricSpec::from_diagonal([1.0, 0.0, 1.0], DVector::from_vec(vec![0.0, lam, 0.0]), n)?;
            (a, DVector::zeros(n), cv, Some(g))
        }
        None => {
            let a = matrix("constraints.a", c.a.as_deref().ok_or_else(|| Error::config("constraints.a", "required without theta_deg"))?, None)?;
            if a.ncols() != n {
                return Err(Error::config("constraints.a", format!("must have {n} columns")));
            }
            let b = match &c.b {
                Some(b) => vector("constraints.b", b, a.nrows())?,
                None => DVector::zeros(a.nrows()),
            };
            let cv = vector(
                "constraints.c",
                c.c.as_deref().ok_or_else(|| Error::config("constraints.c", "required without theta_deg"))?,
                n,
            )?;
            let g = match (c.a_c_diag, &c.c_c) {
                (Some(d), Some(cc)) => Some(
                    GeometricSpec::from_diagonal(d, vector("constraints.c_c", cc, 3)?, n)
                        .map_err(|e| Error::config("constraints.a_c_diag", e.to_string()))?,
                ),
                (None, None) => None,
                _ => return Err(Error::config("constraints.c_c", "a_c_diag and c_c go together")),
            };
            (a, b, cv, g)
        }
    };
    let weights = match &c.weights {
        Some(w) => Some(vector("constraints.weights", w, a.nrows())?),
        None => None,
    };
    let mut out = ConeCC {
        a,
        b,
        c: cv,
        d: c.d,
        relaxation: c.relaxation,
        geometric: if c.relaxation == Relaxation::Geometric { geometric } else { None },
        geometric_norm: c.geometric_norm,
        weights,
        rub_levels: c.rub_levels,
    };
    if c.relaxation == Relaxation::Geometric && out.geometric.is_none() {
        return Err(Error::config("constraints.a_c_diag", "the geometric relaxation needs a_c_diag and c_c"));
    }
    if let Some(rot) = &c.rotation {
        if rot.axis > 2 {
            return Err(Error::config("constraints.rotation.axis", "must be 0, 1 or 2"));
        }
        let angle = match (rot.angle_deg, rot.align_initial_mean) {
            (Some(deg), false) => deg.to_radians(),
            (None, true) if rot.axis == 0 => -mu0[2].atan2(mu0[1]),
            (None, true) => return Err(Error::config("constraints.rotation.axis", "alignment is defined about x only")),
            _ => return Err(Error::config("constraints.rotation", "give exactly one of angle_deg and align_initial_mean")),
        };
        out = out.rotated(rot.axis, angle).map_err(|e| Error::config("constraints.rotation", e.to_string()))?;
    }
    Ok(out)
}

fn hard_input_spec(cfg: &ScenarioConfig, sigma0: &DMatrix<f64>, m: usize, r: usize) -> Result<HardInputSpec<f64>> {
    let inp = &cfg.input;
    if !(inp.u_max > 0.0 && inp.u_max.is_finite()) {
        return Err(Error::config("input.u_max", "must be positive and finite for hard enforcement"));
    }
    let n = sigma0.nrows();
    let y_max = match &inp.y_max {
        Some(v) => vector("input.y_max", v, n)?,
        None => DVector::from_fn(n, |i, _| 3.0 * sigma0[(i, i)].sqrt()),
    };
    let w_max = match &inp.w_max {
        Some(v) => vector("input.w_max", v, r)?,
        None => DVector::from_element(r, 3.0),
    };
    if y_max.iter().chain(w_max.iter()).any(|v| *v <= 0.0) {
        return Err(Error::config("input.y_max", "saturation levels must be positive"));
    }
    if inp.moment_samples == 0 {
        return Err(Error::config("input.moment_samples", "must be positive"));
    }
    if !(inp.backoff >= 0.0 && inp.backoff < 1.0) {
        return Err(Error::config("input.backoff", "must lie in [0, 1)"));
    }
    let mut spec = HardInputSpec::box_bound(m, inp.u_max, y_max, w_max);
    spec.samples = inp.moment_samples;
    spec.seed = inp.moment_seed;
    spec.backoff = inp.backoff;
    Ok(spec)
}
