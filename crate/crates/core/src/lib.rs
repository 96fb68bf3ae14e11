//! Constant-product AMM execution laboratory.
//!
//! Pool mechanics, stochastic rate and depth simulation, optimal execution
//! strategies for a pool that follows an external oracle, finite-difference
//! HJB solvers, calibration and an event-replay backtester.

// `!(x > 0.0)` guards are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backtest;
pub mod cpmm;
pub mod dynamics;
pub mod estimation;
pub mod ode;
pub mod stats;
pub mod strategy;
pub mod pde;
