use covsteer::conic::{self, QuadMode, StandardForm, Tolerances};
use covsteer::constraints::{RiskAllocation, StateConstraints};
use covsteer::hardinput::{self, HardInputSpec};
use covsteer::lifting::{lift, LtvSystem};
use covsteer::scenario::config::{ConstraintConfig, DynamicsConfig, Enforcement};
use covsteer::scenario::{build, bundled, discretize_zoh, run_scenario, AllocationMode, RunOptions, ScenarioConfig, BUNDLED};
use covsteer::steering::{self, NoiseModel, SteeringProblem};
use covsteer::validation::binomial_se;
use covsteer::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(name: &str) -> ScenarioConfig {
    bundled(name).unwrap().unwrap()
}

fn diag(m: &[Vec<f64>]) -> Vec<f64> {
    (0..m.len()).map(|i| m[i][i]).collect()
}

fn is_diagonal(m: &[Vec<f64>]) -> bool {
    m.iter().enumerate().all(|(i, row)| row.iter().enumerate().all(|(j, v)| i == j || *v == 0.0))
}

#[test]
fn zoh_input_matrix_matches_simpson_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let a = DMatrix::from_fn(4, 4, |i, j| rng.random_range(-1.0..1.0) - if i == j { 3.5 } else { 0.0 });
        let b = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let dt = 0.75;
        let (ad, bd) = discretize_zoh(&a, &b, dt).unwrap();
        assert!((ad - (&a * dt).exp()).amax() < 1e-12);

        let nodes = 10_000;
        let h = dt / nodes as f64;
        let mut integral = DMatrix::<f64>::zeros(4, 4);
        for i in 0..=nodes {
            let w = if i == 0 || i == nodes { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += (&a * (i as f64 * h)).exp() * w;
        }
        let quad = integral * (h / 3.0) * &b;
        let err = (bd - quad).amax();
        assert!(err < 1e-9, "B_d off by {err:e}");
    }
}

#[test]
fn bundled_scenarios_encode_the_rendezvous_parameters() {
    for (name, _) in BUNDLED {
        let c = cfg(name);
        assert_eq!(&c.name, name);
        let DynamicsConfig::Cwh { altitude_km, earth_radius_km, mu_km3_s2, deputy_mass_kg } = c.dynamics else {
            panic!("{name}: expected CWH dynamics");
        };
        assert_eq!((altitude_km, earth_radius_km, mu_km3_s2, deputy_mass_kg), (800.0, 6378.137, 398600.4418, 300.0));
        assert_eq!(c.horizon.steps, 15);
        assert!(is_diagonal(&c.noise.g));
        assert_eq!(diag(&c.noise.g), [1e-4, 1e-4, 1e-4, 5e-8, 5e-8, 5e-8]);
        assert!(is_diagonal(&c.boundary.sigma0) && is_diagonal(&c.boundary.sigma_f));
        assert_eq!(diag(&c.boundary.sigma0), [10.0, 10.0, 10.0, 1.0, 1.0, 1.0]);
        assert_eq!(diag(&c.boundary.sigma_f), [2.5, 2.5, 2.5, 0.25, 0.25, 0.25]);
        assert_eq!(c.boundary.mu_f, [0.0; 6]);
        assert_eq!(c.cost.q_diag, [10.0, 10.0, 10.0, 1.0, 1.0, 1.0]);
        assert_eq!(c.cost.r_diag, [1000.0; 3]);
        assert_eq!(c.risk.budget, 0.03);
        let ira = &c.risk.ira;
        assert_eq!((ira.rho0, ira.rho_decay, ira.epsilon, ira.eta, ira.max_iter), (0.7, 0.98, 1e-5, 1e-2, 50));
        assert_eq!(c.input.u_max, 30.0);
        match &c.constraints {
            ConstraintConfig::Cone(cone) => {
                assert_eq!(c.boundary.mu0, [10.0, 120.0, 90.0, 0.0, 0.0, 0.0]);
                assert_eq!((cone.theta_deg, cone.d), (Some(15.0), 10.0));
                assert_eq!(c.horizon.dt_s, 4.0);
            }
            ConstraintConfig::Polytope { halfspaces } => {
                assert_eq!(c.boundary.mu0, [90.0, -120.0, 90.0, 0.0, 0.0, 0.0]);
                assert_eq!(halfspaces.len(), 4);
            }
            ConstraintConfig::None => panic!("{name}: no state constraints"),
        }
        let hard = c.input.enforcement == Enforcement::Hard;
        assert_eq!(hard, *name == "rendezvous_hard");
        if !hard {
            assert_eq!(c.horizon.dt_s, 4.0);
        }
    }
    assert_eq!(cfg("rendezvous_uniform").risk.allocation, AllocationMode::Uniform);
    assert_eq!(cfg("rendezvous_poly").risk.allocation, AllocationMode::Ira);
}

#[test]
fn every_bundled_scenario_builds() {
    for (name, _) in BUNDLED {
        let s = build(&cfg(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.problem.lifted.n, 6);
        assert_eq!(s.problem.lifted.m, 3);
    }
}

#[test]
fn config_round_trips_through_toml() {
    for (name, _) in BUNDLED {
        let c = cfg(name);
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again, "{name}");
    }
}

fn replace(name: &str, from: &str, to: &str) -> String {
    let text = BUNDLED.iter().find(|b| b.0 == name).unwrap().1;
    assert!(text.contains(from), "`{from}` not in {name}");
    text.replacen(from, to, 1)
}

fn config_field(text: &str) -> String {
    let err = ScenarioConfig::from_toml(text).and_then(|c| build(&c).map(|_| ()));
    match err {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

#[test]
fn malformed_configs_name_the_offending_field() {
    let bad_sigma0 = replace("rendezvous_poly", "[10.0, 0.0, 0.0, 0.0, 0.0, 0.0]", "[-10.0, 0.0, 0.0, 0.0, 0.0, 0.0]");
    assert_eq!(config_field(&bad_sigma0), "boundary.sigma0");

    let wrong_type = replace("rendezvous_poly", "steps = 15", "steps = \"fifteen\"");
    assert!(config_field(&wrong_type).starts_with("line "));

    let unknown = replace("rendezvous_poly", "steps = 15", "steps = 15\nstepz = 3");
    assert!(config_field(&unknown).starts_with("line "));

    let budget = replace("rendezvous_poly", "budget = 0.03", "budget = 0.7");
    assert!(ScenarioConfig::from_toml(&budget).and_then(|c| build(&c).map(|_| ())).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edited_configs_round_trip(steps in 1usize..40, dt in 0.5f64..20.0, budget in 1e-3f64..0.5, seed in any::<u64>()) {
        let mut c = cfg("rendezvous_poly");
        c.horizon.steps = steps;
        c.horizon.dt_s = dt;
        c.risk.budget = budget;
        c.monte_carlo.seed = seed;
        prop_assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}

#[test]
fn standard_form_dump_round_trips() {
    let s = build(&cfg("rendezvous_cone_geo")).unwrap();
    let noise = NoiseModel::unsaturated(&s.problem.lifted).unwrap();
    let cols = s.problem.constraints.allocation_width();
    let alloc = RiskAllocation::uniform(s.problem.horizon(), cols, s.problem.budget);
    let asm = steering::assemble(&s.problem, &alloc, &noise).unwrap();
    let data = conic::to_standard_form(&asm.program);
    let text = data.dump();
    let parsed = StandardForm::parse(&text).unwrap();
    assert_eq!(parsed, data);
    assert_eq!(parsed.dump(), text);
}

fn small_problem(hard_input: Option<HardInputSpec<f64>>) -> SteeringProblem<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.125, 0.5]);
    let d = DMatrix::identity(2, 2) * 0.05;
    let horizon = 5;
    let sys = LtvSystem::time_invariant(a, b, d, horizon).unwrap();
    let q = vec![DMatrix::identity(2, 2); horizon];
    let r = vec![DMatrix::identity(1, 1); horizon];
    let lifted = lift(&sys, &q, &r, &(DMatrix::identity(2, 2) * 0.5)).unwrap();
    SteeringProblem {
        lifted,
        mu0: DVector::from_vec(vec![4.0, -1.0]),
        mu_f: DVector::zeros(2),
        sigma_f: DMatrix::identity(2, 2) * 0.3,
        budget: 0.05,
        constraints: StateConstraints::None,
        hard_input,
        quad_mode: QuadMode::Native,
    }
}

#[test]
fn unbounded_saturation_without_input_rows_matches_unsaturated_program() {
    let plain = small_problem(None);
    let noise = NoiseModel::unsaturated(&plain.lifted).unwrap();
    let alloc = RiskAllocation::uniform(plain.horizon(), 0, plain.budget);
    let tol = Tolerances::default();
    let base = steering::solve(&plain, &alloc, &noise, &conic::Clarabel, &tol).unwrap().solution.cost;

    let mut spec = HardInputSpec::box_bound(1, 1.0, DVector::from_element(2, 1e9), DVector::from_element(2, 1e9));
    spec.h_mat = DMatrix::zeros(0, 1);
    spec.h_vec = DVector::zeros(0);
    spec.samples = 4096;
    let hard = small_problem(Some(spec.clone()));
    let sat = hardinput::saturated_noise_model(&hard.lifted, &spec).unwrap();
    let cost = steering::solve(&hard, &alloc, &sat, &conic::Clarabel, &tol).unwrap().solution.cost;
    assert!(((cost - base) / base).abs() < 1e-6, "{cost} vs {base}");
}

#[test]
fn scalar_clipped_second_moment_matches_quadrature() {
    let sigma = DMatrix::from_element(1, 1, 1.0);
    let max = DVector::from_element(1, 1.0);
    let samples = 1_000_000;
    let mom = hardinput::saturated_moments(&sigma, &max, samples, 11).unwrap();

    // 𝔼[min(|y|, 1)²] by composite Simpson on [0, 8].
    let nodes = 20_000;
    let h = 8.0 / nodes as f64;
    let pdf = |y: f64| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=nodes {
        let y = i as f64 * h;
        let w = if i == 0 || i == nodes { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * y.min(1.0).powi(2) * pdf(y);
    }
    let exact = 2.0 * acc * h / 3.0;
    let var_phi2 = 0.5 - exact * exact;
    let se = (var_phi2 / samples as f64).sqrt();
    assert!((mom.second[(0, 0)] - exact).abs() < 3.0 * se, "{} vs {exact}", mom.second[(0, 0)]);

    // Stein: 𝔼[y φ(y)] = ℙ(|y| ≤ 1) = 2Φ(1) − 1.
    let stein = 0.682_689_492_137_085_9;
    assert!((mom.cross[(0, 0)] - stein).abs() < 3e-3, "{} vs {stein}", mom.cross[(0, 0)]);
}

#[test]
fn per_step_violations_stay_within_allocated_risk() {
    let samples = 20_000;
    for name in ["rendezvous_uniform", "rendezvous_cone_tc"] {
        let run = run_scenario(&cfg(name), &RunOptions { allocation: Some(AllocationMode::Uniform), samples: Some(samples), seed: None })
            .unwrap();
        let risk = &run.report.body.validation.risk;
        for (i, (p, d)) in risk.marginals.iter().zip(&run.allocation.delta).enumerate() {
            let limit = d + 3.0 * binomial_se(*d, samples).max(1.0 / samples as f64);
            assert!(*p <= limit, "{name}: entry {i} frequency {p} above {d}");
        }
        assert!(run.report.body.invariants.all(), "{name}: {:?}", run.report.body.invariants);
    }
}
