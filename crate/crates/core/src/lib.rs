//! Implicit two-step Peer triplets for ODE-constrained optimal control:
//! coefficients and their verification, forward and adjoint marching,
//! reduced gradients, projected-gradient optimization and error-driven mesh
//! adaptation.

pub mod error;
pub mod integrator;
pub mod linalg;
pub mod mesh;
pub mod optimize;
pub mod problem;
pub mod triplet;
pub mod verify;

pub use error::{PeerError, Result};
pub use integrator::{adjoint_sweep, forward_sweep, solve_kkt, SolverOptions, SweepStats, TrajectorySolution};
pub use problem::{ControlBounds, ControlProblem, Grid, StageBlock};
pub use triplet::{assemble_b, build_triplet, Boundary, GridClass, PeerTriplet, KNOWN_TRIPLETS};
