//! Minimal neural-network substrate: a reverse-mode tape over 2-d arrays,
//! parameter sets, initialization, and Adam.

pub mod adam;
pub mod tape;

pub use adam::{xavier, zeros_row, Adam, ParamSet};
pub use tape::{Gradients, Tape, Var};
