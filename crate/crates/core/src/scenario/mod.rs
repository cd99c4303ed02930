//! Rendezvous scenarios: configuration, CWH dynamics, and end-to-end runs.

pub mod config;
pub mod dynamics;
pub mod run;

pub use config::{build, AllocationMode, Scenario, ScenarioConfig};
pub use dynamics::{cwh_matrices, discretize_zoh, mean_motion};
pub use run::{run_scenario, write_artifacts, Report, RunOptions, ScenarioRun, SolutionFile};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("rendezvous_poly", include_str!("../../scenarios/rendezvous_poly.toml")),
    ("rendezvous_uniform", include_str!("../../scenarios/rendezvous_uniform.toml")),
    ("rendezvous_cone_tc", include_str!("../../scenarios/rendezvous_cone_tc.toml")),
    ("rendezvous_cone_rub", include_str!("../../scenarios/rendezvous_cone_rub.toml")),
    ("rendezvous_cone_geo", include_str!("../../scenarios/rendezvous_cone_geo.toml")),
    ("rendezvous_hard", include_str!("../../scenarios/rendezvous_hard.toml")),
];

pub fn bundled(name: &str) -> Option<crate::Result<ScenarioConfig>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| ScenarioConfig::from_toml(text))
}
