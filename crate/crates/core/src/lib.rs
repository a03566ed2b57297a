//! Hard-sphere particle systems in the low-density limit and the Boltzmann
//! equation they converge to.

pub(crate) mod cells;
pub mod boltzmann;
pub mod dense;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod graphs;
pub mod phase;
pub mod rng;
pub mod sampler;
pub mod union_find;
pub mod ursell;

pub use dynamics::{mean_free_time_estimate, predict_collision, reverse_velocities, run, CollisionEvent, EventLog};
pub use error::{Error, Result};
pub use phase::{maxwellian, scatter, Configuration, ModelParams, PhasePoint, Vector};
pub use rng::RngStream;
pub use sampler::{sample_configuration, sample_configuration_n, InitialDataSpec, InitialKind};
