//! Simulation and analysis of the Kumar–Seidman–Rybko–Stolyar network under
//! a randomized hold/flush policy.

pub mod engine;
pub mod error;
pub mod experiments;
pub mod netmodel;
pub mod policy;
pub mod rng;
pub mod stats;

pub use engine::{CapExceeded, EventKind, EventRecord, SimState, Trajectory};
pub use error::{Error, Result};
pub use netmodel::{build_ksrs, NetworkSpec, QState};
pub use policy::{derive_params, PolicyParams, Regime};
pub use rng::RngStream;
