//! Surrogate-based solution of two-stage stochastic programs with mixed-integer
//! recourse: an embedded LP/MILP solver, ReLU networks and their MILP encoding,
//! a DC power-flow application and the alternating sample/train/optimize loop.

pub mod alternating;
pub mod encoder;
pub mod grid;
pub mod lp;
pub mod milp;
pub mod neural;
pub mod parallel;
pub mod two_stage;
