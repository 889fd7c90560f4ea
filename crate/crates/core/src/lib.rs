//! Control barrier functions for linear plants with an input delay and a
//! finite window of disturbance preview.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod filter;
pub mod lprev;
pub mod matops;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
pub use lprev::{BarrierEval, LPrevEngine, SolverSettings};
pub use matops::{conv_const, expm, Mat, Vector};
pub use plant::{DelaySystem, DisturbanceSignal, InputHistory, PreviewWindow};
pub use filter::{solve_qp_scalar, Policy};
pub use sim::{simulate, Scenario, SimTrace};
