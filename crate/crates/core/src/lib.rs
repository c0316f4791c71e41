pub mod error;
pub mod audio;
pub mod cli_io;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod text;
pub mod training;

pub use error::{Error, Result};
