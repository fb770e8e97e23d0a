pub mod codec;
pub mod correlation;
pub mod detector;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod midi;
pub mod pianoroll;
pub mod prior;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
