//! Simulation and verification laboratory for a two-level branching
//! model: virus particles reproducing inside cells that divide and split
//! their contents binomially. Exact particle-model simulation, the
//! measure-valued diffusion limit, the Feynman-Kac dual process, and
//! numeric checks tying the three together.

pub mod analytics;
pub mod dual;
pub mod error;
pub mod fenwick;
pub mod harness;
pub mod limit;
pub mod params;
pub mod particle;
pub mod polynomial;
pub mod rng;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use params::Params;
pub use state::{DualState, LimitState, ParticleState};
