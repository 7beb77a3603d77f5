//! Reverse-mode autodiff substrate: tape, ops, parameters, Adam, and
//! gradient checking.

pub mod gradcheck;
pub mod params;
pub mod tape;

pub use gradcheck::grad_check;
pub use params::{init_linear, AdamConfig, Binding, ParameterStore, NONNEG_GROUP};
pub use tape::{backward, Tape, Var};
