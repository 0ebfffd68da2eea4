//! Recurrent one-step video super-resolution on synthetic data.

pub mod data;
mod error;
pub mod backbone;
pub mod flow;
pub mod losses;
pub mod adversarial;
pub mod trainer;
pub mod eval;
pub mod resample;

pub use error::{Result, VsrError};
