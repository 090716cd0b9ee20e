//! Monte Carlo laboratory for Hoelder regularity of solutions to linear
//! parabolic SPDEs with additive noise on the unit cube.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`,
//! see [`Real`]); the aliases below fix it to `f64`, which is what the
//! command-line tool and the experiments use.

pub mod experiments;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod mild_solver;
pub mod noise;
pub mod operators;
pub mod regularity;
pub mod scalar;
pub mod semigroup;
pub mod stats;

pub use experiments::{BackendChoice, ExperimentError, ExperimentPlan, OperatorPreset};
pub use field::Provenance;
pub use grid::{build_dyadic_mesh, neighbor_offsets, Domain, DyadicMesh, GridError, SpatialGrid};
pub use mild_solver::{exact_covariance, MildSolver, SolverError, SolverOptions};
pub use noise::{make_forcing, sample_path, Modulation, NoiseCondition, NoiseError, NoisePath, ProfileSpec, Shape};
pub use operators::{OperatorError, OperatorForm, ScalarField};
pub use regularity::{HolderMode, HolderReport, RegularityError};
pub use scalar::Real;
pub use semigroup::{BackendKind, FdScheme, SemigroupError};

pub type SpaceTimeGrid = grid::SpaceTimeGrid<f64>;
pub type SpaceTimeField = field::SpaceTimeField<f64>;
pub type OperatorSpec = operators::OperatorSpec<f64>;
pub type SemigroupBackend = semigroup::SemigroupBackend<f64>;
pub type ForcingSpec = noise::ForcingSpec<f64>;
