pub mod annotations;
pub mod bilateral;
pub mod error;
pub mod eval;
mod exact;
pub mod image;
pub mod io;
pub mod losses;
pub mod solver;
pub mod synth;
pub mod tonemap;

pub use error::{Error, Result};
