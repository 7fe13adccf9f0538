//! Decoder-only transformers with compact positional encoding: a reference
//! implementation of the attention model, constructive learners, a small
//! trainer and the experiment harness around them.

pub mod cli;
pub mod constructive;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod remote;
pub mod sequence;
pub mod trainer;

pub use error::{Error, Result};
