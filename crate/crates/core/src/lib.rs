//! Signal-side core of the ChatBCI workspace: the recording container,
//! conditioning, exploratory analyses, the compact convolutional decoder,
//! its training loop, and figure rendering.

pub mod analysis;
pub mod data;
pub mod decoder;
pub mod error;
pub mod figures;
pub mod preprocess;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
