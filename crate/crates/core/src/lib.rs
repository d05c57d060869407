//! Norm-based importance sampling for regularized linear classification
//! losses, hard instances on which small samples must fail, and a Monte Carlo
//! harness to measure both.

pub mod bench;
pub mod error;
pub mod hardness;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod objective;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use hardness::{HardInstance, HardKind};
pub use losses::{LossKind, LossSpec, RegKind};
pub use model::{Constants, Instance, ObjectiveSpec};
pub use sampler::{Convention, CountedSample, Sampler, ScoreKind, WeightedSample};
