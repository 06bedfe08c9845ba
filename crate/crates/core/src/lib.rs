pub mod attacks;
pub mod datasets;
pub mod defenses;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod numeric;
pub mod plot;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
