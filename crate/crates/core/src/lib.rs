//! Rolling-window portfolio construction and backtesting.
//!
//! The pipeline runs bottom-up through the modules: [`market_data`] turns
//! price files into a return matrix, [`estimators`] computes the moments of
//! each estimation window, [`strategies`] turns moments into weights with
//! the help of [`solver`], [`backtest`] rolls the window through time, and
//! [`metrics`] and [`analytics`] summarize the realized portfolios.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod backtest;
pub mod estimators;
pub mod market_data;
pub mod metrics;
pub mod solver;
pub mod strategies;
