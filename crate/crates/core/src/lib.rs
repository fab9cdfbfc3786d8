//! Bisexual Galton-Watson branching processes and their quasi-stationary
//! behaviour.
//!
//! The crate simulates multitype bisexual Galton-Watson processes, computes
//! the eigen-data of their concave growth operator, builds truncated
//! sub-Markov kernels with their quasi-stationary distributions, and checks
//! Lyapunov drift and exponential-convergence criteria numerically.

pub mod error;
pub mod io;
pub mod kernel;
pub mod lyapunov;
pub mod model;
pub mod montecarlo;
pub mod presets;
pub mod qsdfamily;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use kernel::{QsdEstimate, TruncatedKernel};
pub use model::{MatingFunction, ModelSpec, OffspringLaw, Prob, StateVector};
pub use montecarlo::TrajectoryBatch;
pub use rng::CounterRng;
pub use spectral::SpectralResult;
