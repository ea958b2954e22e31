//! Cross-strategy summaries: comparison tables, asset/portfolio
//! co-movement tables, with/without terminal-return deltas and density data.
//!
//! Co-movement is measured between daily asset returns and daily portfolio
//! returns over the out-of-sample period, with `n − 1` normalization.

use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

use crate::backtest::BacktestResult;
use crate::market_data::ReturnMatrix;
use crate::metrics::{self, MetricSettings, MetricsError, MetricsReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("no backtest results supplied")]
    Empty,
    #[error("result for {strategy} covers different dates than {reference}")]
    MismatchedDates { strategy: String, reference: String },
    #[error("return matrix does not contain the out-of-sample dates of {0}")]
    Misaligned(String),
    #[error("{0} has zero variance; correlation is undefined")]
    ZeroVariance(String),
    #[error("need at least {needed} observations, got {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("all observations are equal; no density can be estimated")]
    ZeroSpread,
    #[error("bin count must be positive")]
    NoBins,
    #[error("strategy {0} is missing from one of the tables")]
    UnpairedStrategy(String),
    #[error("{strategy}: {source}")]
    Metrics {
        strategy: String,
        #[source]
        source: MetricsError,
    },
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UniverseTag {
    WithShort,
    WithoutShort,
}

impl fmt::Display for UniverseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UniverseTag::WithShort => "with_short",
            UniverseTag::WithoutShort => "without_short",
        })
    }
}

/// Column labels of a comparison table, in order.
pub const COMPARISON_COLUMNS: [&str; 8] = ["CEQ", "TO", "S", "TR", "SR", "ASR", "skew", "kurt"];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub universe: UniverseTag,
    pub date_range: (NaiveDate, NaiveDate),
    /// One report per strategy, ordered by identifier string.
    pub rows: Vec<MetricsReport>,
}

impl ComparisonTable {
    /// Cells of one row in [`COMPARISON_COLUMNS`] order; `None` marks a
    /// metric that is undefined for the series.
    pub fn cells(row: &MetricsReport) -> [Option<f64>; 8] {
        [
            Some(row.ceq),
            Some(row.turnover),
            Some(row.sortino),
            Some(row.terminal_return),
            row.sharpe,
            row.asr,
            row.skew,
            row.kurt,
        ]
    }

    pub fn row(&self, strategy: &str) -> Option<&MetricsReport> {
        self.rows.iter().find(|r| r.strategy_id == strategy)
    }
}

/// Metrics for every result, one row per strategy.
pub fn build_comparison(
    results: &[BacktestResult],
    settings: &MetricSettings,
    universe: UniverseTag,
) -> Result<ComparisonTable> {
    let first = results.first().ok_or(AnalyticsError::Empty)?;
    for r in results {
        if r.dates != first.dates {
            return Err(AnalyticsError::MismatchedDates {
                strategy: r.strategy_id.to_string(),
                reference: first.strategy_id.to_string(),
            });
        }
    }
    let mut rows = results
        .iter()
        .map(|r| {
            let id = r.strategy_id.to_string();
            metrics::evaluate(&id, &r.weight_rows(), &r.asset_returns, &r.portfolio_returns, settings)
                .map_err(|source| AnalyticsError::Metrics { strategy: id, source })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.strategy_id.cmp(&b.strategy_id));
    Ok(ComparisonTable {
        universe,
        date_range: (first.dates[0], *first.dates.last().expect("non-empty backtest")),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoMovement {
    Covariance,
    Correlation,
}

impl fmt::Display for CoMovement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoMovement::Covariance => "covariance",
            CoMovement::Correlation => "correlation",
        })
    }
}

/// Asset-by-strategy co-movement table.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMomentTable {
    pub kind: CoMovement,
    pub assets: Vec<String>,
    pub strategies: Vec<String>,
    /// `cells[asset][strategy]`.
    pub cells: Vec<Vec<f64>>,
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Co-movement of each asset's daily returns with the strategy's daily
/// portfolio returns over the result's dates.
pub fn asset_portfolio_covariance(matrix: &ReturnMatrix, result: &BacktestResult, kind: CoMovement) -> Result<Vec<f64>> {
    let name = result.strategy_id.to_string();
    let n_out = result.dates.len();
    if n_out < 2 {
        return Err(AnalyticsError::TooFewObservations { needed: 2, found: n_out });
    }
    let start = matrix
        .dates()
        .iter()
        .position(|d| *d == result.dates[0])
        .ok_or_else(|| AnalyticsError::Misaligned(name.clone()))?;
    if matrix.dates().get(start..start + n_out) != Some(&result.dates[..]) {
        return Err(AnalyticsError::Misaligned(name));
    }
    let p = &result.portfolio_returns;
    let var_p = covariance(p, p);
    (0..matrix.n_assets())
        .map(|i| {
            let a: Vec<f64> = matrix.rows()[start..start + n_out].iter().map(|r| r[i]).collect();
            let c = covariance(&a, p);
            match kind {
                CoMovement::Covariance => Ok(c),
                CoMovement::Correlation => {
                    let var_a = covariance(&a, &a);
                    if var_a <= 0.0 {
                        return Err(AnalyticsError::ZeroVariance(matrix.assets()[i].clone()));
                    }
                    if var_p <= 0.0 {
                        return Err(AnalyticsError::ZeroVariance(name.clone()));
                    }
                    Ok((c / (var_a.sqrt() * var_p.sqrt())).clamp(-1.0, 1.0))
                }
            }
        })
        .collect()
}

/// Full table over several strategies, columns ordered by identifier.
pub fn cross_moment_table(matrix: &ReturnMatrix, results: &[BacktestResult], kind: CoMovement) -> Result<CrossMomentTable> {
    let mut sorted: Vec<&BacktestResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.strategy_id.to_string());
    let columns = sorted
        .iter()
        .map(|r| asset_portfolio_covariance(matrix, r, kind))
        .collect::<Result<Vec<_>>>()?;
    let cells = (0..matrix.n_assets())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    Ok(CrossMomentTable {
        kind,
        assets: matrix.assets().to_vec(),
        strategies: sorted.iter().map(|r| r.strategy_id.to_string()).collect(),
        cells,
    })
}

/// Terminal return of one strategy with and without the shortable asset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrDelta {
    pub strategy_id: String,
    pub with_short: f64,
    pub without_short: f64,
    /// `with_short − without_short`.
    pub delta: f64,
}

pub fn tr_delta(with: &ComparisonTable, without: &ComparisonTable) -> Result<Vec<TrDelta>> {
    if with.rows.len() != without.rows.len() {
        let missing = with
            .rows
            .iter()
            .chain(&without.rows)
            .find(|r| with.row(&r.strategy_id).is_none() || without.row(&r.strategy_id).is_none())
            .map(|r| r.strategy_id.clone())
            .unwrap_or_default();
        return Err(AnalyticsError::UnpairedStrategy(missing));
    }
    with.rows
        .iter()
        .map(|w| {
            let wo = without
                .row(&w.strategy_id)
                .ok_or_else(|| AnalyticsError::UnpairedStrategy(w.strategy_id.clone()))?;
            Ok(TrDelta {
                strategy_id: w.strategy_id.clone(),
                with_short: w.terminal_return,
                without_short: wo.terminal_return,
                delta: w.terminal_return - wo.terminal_return,
            })
        })
        .collect()
}

/// Plot-ready density estimate of a return series.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityData {
    /// `bins + 1` edges from the sample minimum to the maximum.
    pub bin_edges: Vec<f64>,
    /// Histogram heights normalized so their integral is 1.
    pub histogram: Vec<f64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub kde: Vec<f64>,
}

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_GRID_POINTS: usize = 256;
const MIN_DENSITY_OBSERVATIONS: usize = 10;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^{−1/5}`. Falls
/// back to σ alone when the IQR is zero.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let sd = metrics::variance(sorted).map(f64::sqrt).unwrap_or(0.0);
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Histogram and Gaussian kernel density. The result depends only on the
/// multiset of returns, not their order.
pub fn density_data(returns: &[f64], bins: usize, grid_points: usize) -> Result<DensityData> {
    if returns.len() < MIN_DENSITY_OBSERVATIONS {
        return Err(AnalyticsError::TooFewObservations {
            needed: MIN_DENSITY_OBSERVATIONS,
            found: returns.len(),
        });
    }
    if bins == 0 || grid_points < 2 {
        return Err(AnalyticsError::NoBins);
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(AnalyticsError::ZeroSpread);
    }
    let n = sorted.len() as f64;

    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let histogram = counts.iter().map(|&c| c as f64 / (n * width)).collect();

    let h = silverman_bandwidth(&sorted);
    let (g0, g1) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (g1 - g0) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|k| g0 + k as f64 * step).collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let kde = grid
        .iter()
        .map(|&g| norm * sorted.iter().map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(DensityData {
        bin_edges,
        histogram,
        bandwidth: h,
        grid,
        kde,
    })
}
