pub mod ablation;
pub mod baselines;
pub mod checkpoint;
pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
