pub mod acoustic;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nnet;
pub mod tagger;

pub use error::{Error, Result};
