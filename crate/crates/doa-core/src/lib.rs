//! Maximum-likelihood direction-of-arrival estimation in unknown uniform
//! sensor noise: EM, MEM and SAGE iterations for deterministic and stochastic
//! source-signal models, a seeded snapshot simulator, and a Monte Carlo
//! harness that emits convergence and scatter data as CSV/JSON.

pub mod array;
pub mod em;
pub mod error;
pub mod figures;
pub mod likelihood;
pub mod mem;
pub mod runner;
pub mod sage;
pub mod search;
pub mod sim;
pub mod solver;
pub mod surrogate;

/// Complex double precision scalar used throughout.
pub type C64 = num_complex::Complex64;

pub use array::{
    projection_stats, steering_matrix, steering_vector, ArrayGeometry, Direction,
    ProjectionStats, SteeringVector,
};
pub use error::{Error, Result};
pub use sim::{gen_deterministic, gen_stochastic, sample_covariance, RngStream, SnapshotMatrix};
