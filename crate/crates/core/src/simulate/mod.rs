//! Simulation studies: synthetic spatial data, contamination by swapping,
//! detection metrics and the experiment harnesses built on them.

mod contamination;
mod fields;
mod harness;
mod metrics;

pub use contamination::*;
pub use fields::*;
pub use harness::*;
pub use metrics::*;
