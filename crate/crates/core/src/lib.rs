//! Simulation and analysis of queue-length-based wireless scheduling.
//!
//! A finite-state i.i.d. channel offers one convex rate region per slot; a
//! policy maps the (observed) queue state to normalized weights, and the
//! scheduler serves the weighted-max vertex. Around that loop the crate
//! provides sampling checks of the sufficient stability conditions on the
//! weight map, trace statistics for the necessary ones, Lyapunov potentials
//! with drift estimates, trace classification, and a scenario harness.

pub mod conditions;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod policies;
pub mod queueing;
pub mod rate_region;
pub mod rng;
pub mod stability;
pub mod vector;

pub use error::{Error, Result};
pub use policies::{Policy, PolicySpec};
pub use queueing::{simulate, step, ArrivalModel, ObservationModel, SimTrace};
pub use rate_region::{ChannelModel, RatePolytope};
pub use vector::{QueueState, RateVector, WeightVector};
