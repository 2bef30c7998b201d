#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod catalog;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod io;
pub mod par;
pub mod rotation;
pub mod search;
pub mod selfsim;

pub use dynamics::{GroupElement, PhaseState};
pub use error::{KhepError, Result};
