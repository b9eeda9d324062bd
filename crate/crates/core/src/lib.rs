//! Finite state-action approximation of continuous-space Markov games and
//! ε-Nash certification of the resulting policies.

pub mod error;
pub mod json;
pub mod model;
pub mod quantize;
pub mod solve;
pub mod stage_nash;
pub mod truncate;
pub mod verify;

pub use error::{Error, Result};
