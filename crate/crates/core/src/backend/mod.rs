//! Sliding-window back end.

pub mod estimator;
pub mod factors;
pub mod marginalization;
pub mod solver;
pub mod state;
pub mod window;
