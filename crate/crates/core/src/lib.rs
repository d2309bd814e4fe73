//! Joint segmentation of driving trajectories into motion primitives and
//! learning of a reusable primitive library.

pub mod baseline;
pub mod cli;
pub mod cuts;
pub mod dmp;
pub mod error;
pub mod eval;
pub mod library;
mod seeding;
pub mod segmentation;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
