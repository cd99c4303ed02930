//! Chance-constrained covariance steering for discrete linear stochastic systems,
//! with iterative risk allocation, polyhedral and cone state constraints, and
//! Monte Carlo validation.

// Links the system reference BLAS/LAPACK used by the semidefinite cone.
extern crate netlib_src;

pub mod conic;
pub mod constraints;
pub mod error;
pub mod hardinput;
pub mod ira;
pub mod lifting;
pub mod linalg;
pub mod normal;
pub mod rng;
pub mod scenario;
pub mod scalar;
pub mod steering;
pub mod validation;

pub use error::{Error, Family, Result};
pub use scalar::Real;

pub type LtvSystemF64 = lifting::LtvSystem<f64>;
pub type LiftedSystemF64 = lifting::LiftedSystem<f64>;
pub type SteeringProblemF64 = steering::SteeringProblem<f64>;
pub type NoiseModelF64 = steering::NoiseModel<f64>;
pub type ControllerSolutionF64 = steering::ControllerSolution<f64>;
pub type StateConstraintsF64 = constraints::StateConstraints<f64>;
pub type PolytopeCCF64 = constraints::PolytopeCC<f64>;
pub type ConeCCF64 = constraints::ConeCC<f64>;
pub type RiskAllocationF64 = constraints::RiskAllocation<f64>;
pub type HardInputSpecF64 = hardinput::HardInputSpec<f64>;
pub type IraOutcomeF64 = ira::IraOutcome<f64>;
pub type ConicProgramF64 = conic::ConicProgram<f64>;
