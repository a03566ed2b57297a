//! Discrete-velocity solver for the hard-sphere Boltzmann equation.
//!
//! The collision integral is evaluated by direct quadrature over node pairs
//! and a fixed set of impact directions. Post-collisional velocities fall
//! between nodes and are read by multilinear interpolation, zero outside the
//! velocity box. Spatial problems use Strang splitting with semi-Lagrangian
//! free flight and an open boundary.

mod grid;
mod kernel;
mod steppers;

pub use grid::{AngularQuadrature, DistributionField, SpatialGrid, VelocityGrid};
pub use kernel::{
    conservative_fix, entropy_and_dissipation, mean_free_time, moments, q_collision, slice_moments, total_moments,
    CollisionOperator, Moments, DEFAULT_NODE_BUDGET, LOG_FLOOR,
};
pub use steppers::{
    free_transport, picard_duhamel, step_homogeneous, step_homogeneous_with, step_inhomogeneous, CoMovingState,
    PicardOutcome, StepReport, STABILITY_BUDGET,
};
