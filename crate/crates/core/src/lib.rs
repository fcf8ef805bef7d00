pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod link;
pub mod model;
pub mod optim;
pub mod paths;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
