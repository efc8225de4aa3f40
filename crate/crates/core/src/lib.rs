//! Traffic incident impact prediction with in-context examples.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod gateway;
pub mod model;
pub mod normalize;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod traffic;

pub use error::{Error, Result};
pub use model::*;
