//! SIS epidemics on clustered contact networks and minimum-cost selection of
//! intervention clusters that keep every node's endemic infection
//! probability under a target.
//!
//! * [`netgraph`]: networks, cluster sets and their random generators.
//! * [`npi`]: intervention-scaled infection rates and cost metrics.
//! * [`dynamics`]: reproduction number, ODE integration, endemic solvers.
//! * [`covering`]: threshold constraints, greedy cover, baselines.
//! * [`experiment`]: seeded instances, trajectory comparisons, sweeps.
//! * [`verify`]: executable checks of the structural properties the
//!   optimizer relies on.
//! * [`cli`]: the `npi` command-line front end.

pub mod cli;
pub mod covering;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod netgraph;
pub mod npi;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
