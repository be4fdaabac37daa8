#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod par;

pub use error::{Error, Result};
pub use numerics::SymmetricMatrix;
pub mod detect;
pub mod mcd;
pub mod simulate;
pub mod spatial;
pub mod ssmrcd;
