//! Gated recurrent cells, their ablations, and the weighted-sum view of the
//! memory cell, with enough training machinery to compare them.

pub mod cells;
pub mod checkpoint;
pub mod decomposition;
pub mod error;
pub mod model;
pub mod numerics;
pub mod params;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
