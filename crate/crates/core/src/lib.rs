pub mod dataio;
pub mod detect;
pub mod error;
pub mod numerics;
pub mod projection;
pub mod stats;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
