//! Rolling-window, daily-rebalanced simulation.
//!
//! For every out-of-sample row `t` (0-based, `t >= M`) the weights come from
//! rows `t-M .. t-1` only. The solves for different dates are independent
//! and run in parallel; fallbacks and wealth are then folded in date order.

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::market_data::ReturnMatrix;
use crate::metrics::drifted_weights as drift;
use crate::solver::{BudgetMode, ConstraintSet};
use crate::strategies::{allocate, fallback_weights, Decision, FallbackReason, StrategyConfig, StrategyError, StrategyId, WeightVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("need more than {window} return rows, got {periods}")]
    TooShort { periods: usize, window: usize },
    #[error("constraint set has {found} assets, return matrix has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("the return matrix has no shortable asset")]
    NoShortableAsset,
    #[error("{strategy} on {date}: {source}")]
    Strategy {
        strategy: StrategyId,
        date: NaiveDate,
        #[source]
        source: StrategyError,
    },
    #[error("{strategy} wiped out on {date}: 1 + x'r = {gross}")]
    WipedOut {
        strategy: StrategyId,
        date: NaiveDate,
        gross: f64,
    },
    #[error(transparent)]
    Config(StrategyError),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

/// Annotations for one rebalance date.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DateFlags {
    pub fallback: Option<FallbackReason>,
    pub eigen_floored: bool,
    /// `false` when the solver hit its iteration cap.
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub strategy_id: StrategyId,
    pub budget_mode: BudgetMode,
    pub assets: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub weights: Vec<WeightVector>,
    /// Asset returns realized on each out-of-sample date.
    pub asset_returns: Vec<Vec<f64>>,
    pub portfolio_returns: Vec<f64>,
    pub wealth: Vec<f64>,
    pub flags: Vec<DateFlags>,
}

impl BacktestResult {
    pub fn terminal_wealth(&self) -> f64 {
        self.wealth.last().copied().unwrap_or(f64::NAN)
    }

    pub fn weight_rows(&self) -> Vec<&[f64]> {
        self.weights.iter().map(|w| w.weights.as_slice()).collect()
    }
}

/// Seed for the solver on row `t`, derived from the run seed.
pub fn date_seed(seed: u64, t: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Buy-and-hold weights after one day, `x_i (1 + r_i) / (1 + x'r)`.
pub fn drifted_weights(x_prev: &WeightVector, r_prev: &[f64]) -> std::result::Result<Vec<f64>, crate::metrics::MetricsError> {
    drift(&x_prev.weights, r_prev)
}

pub fn run(matrix: &ReturnMatrix, strategy: StrategyId, cfg: &StrategyConfig, constraints: &ConstraintSet) -> Result<BacktestResult> {
    cfg.validate().map_err(BacktestError::Config)?;
    let m = cfg.window_size;
    let periods = matrix.n_periods();
    if periods <= m {
        return Err(BacktestError::TooShort { periods, window: m });
    }
    if constraints.n_assets() != matrix.n_assets() {
        return Err(BacktestError::DimensionMismatch {
            expected: matrix.n_assets(),
            found: constraints.n_assets(),
        });
    }
    let rows = matrix.rows();
    let dates = matrix.dates();
    let fail = |t: usize, source| BacktestError::Strategy {
        strategy,
        date: dates[t],
        source,
    };

    let decisions: Vec<Decision> = (m..periods)
        .into_par_iter()
        .map(|t| allocate(strategy, &rows[t - m..t], cfg, constraints, date_seed(cfg.seed, t)).map_err(|e| fail(t, e)))
        .collect::<Result<_>>()?;

    let budget_mode = cfg.budget_mode(strategy);
    let resolved = constraints.clone().with_budget_mode(budget_mode);
    let n_out = periods - m;
    let mut result = BacktestResult {
        strategy_id: strategy,
        budget_mode,
        assets: matrix.assets().to_vec(),
        dates: dates[m..].to_vec(),
        weights: Vec::with_capacity(n_out),
        asset_returns: rows[m..].to_vec(),
        portfolio_returns: Vec::with_capacity(n_out),
        wealth: Vec::with_capacity(n_out),
        flags: Vec::with_capacity(n_out),
    };
    let mut wealth = cfg.initial_wealth;
    for (k, decision) in decisions.into_iter().enumerate() {
        let t = m + k;
        let mut flags = DateFlags {
            converged: true,
            ..Default::default()
        };
        let x = match decision {
            Decision::Weights { x, report } => {
                if let Some(r) = report {
                    flags.eigen_floored = r.eigen_floored;
                    flags.converged = r.converged;
                    flags.iterations = r.iterations;
                }
                x
            }
            Decision::Fallback(reason) => {
                flags.fallback = Some(reason);
                let previous = result.weights.last().map(|w: &WeightVector| w.weights.as_slice());
                fallback_weights(previous, &resolved).map_err(|e| fail(t, e))?
            }
        };
        let p: f64 = x.iter().zip(&rows[t]).map(|(w, r)| w * r).sum();
        if !(1.0 + p > 0.0) {
            return Err(BacktestError::WipedOut {
                strategy,
                date: dates[t],
                gross: 1.0 + p,
            });
        }
        wealth *= 1.0 + p;
        result.weights.push(WeightVector {
            weights: x,
            as_of: dates[t],
            strategy_id: strategy,
            estimator_kind: strategy.estimator_kind(),
        });
        result.portfolio_returns.push(p);
        result.wealth.push(wealth);
        result.flags.push(flags);
    }
    Ok(result)
}

/// Runs `strategy` on the full universe and on the universe without the
/// shortable asset (long-only, `Σ x_i <= 1`).
pub fn run_universe_pair(
    matrix: &ReturnMatrix,
    strategy: StrategyId,
    cfg: &StrategyConfig,
    constraints: &ConstraintSet,
) -> Result<(BacktestResult, BacktestResult)> {
    let s = matrix.shortable_index().ok_or(BacktestError::NoShortableAsset)?;
    let with = run(matrix, strategy, cfg, constraints)?;
    let reduced = matrix.without_asset(s);
    let without = run(&reduced, strategy, cfg, &ConstraintSet::long_only(reduced.n_assets()))?;
    Ok((with, without))
}
