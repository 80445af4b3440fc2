pub mod error;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod modes;
pub mod observation;
pub mod posterior;
pub mod prior;
pub mod solver;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
pub use field::{NormOrder, SpectralField};
pub use modes::{ModeSet, WaveIndex};
