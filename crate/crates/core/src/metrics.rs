//! Performance metrics of a realized portfolio return series.
//!
//! Normalizations: the mean uses `1/n`, the variance `1/(n-1)`. Skewness
//! and kurtosis are expectations of standardized powers, so they use `1/n`
//! throughout (including the standard deviation inside them). Sortino's
//! downside deviation is `sqrt((1/n) Σ min(r - r_f, 0)²)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} observations, got {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("return series has zero variance")]
    ZeroVariance,
    #[error("return {value} at position {index} is <= -1")]
    ReturnBelowMinusOne { index: usize, value: f64 },
    #[error("drifted turnover needs the realized returns of every holding period")]
    MissingReturns,
    #[error("weights at position {index} have length {found}, expected {expected}")]
    Ragged { index: usize, expected: usize, found: usize },
    #[error("portfolio wiped out: 1 + x'r = {gross}")]
    WipedOut { gross: f64 },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Adjusted Sharpe ratio variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AsrForm {
    /// `1 + (S/6)·SR − (K/24)·SR²`.
    #[default]
    Bracket,
    /// `SR · [1 + (S/6)·SR − (K/24)·SR²]`.
    PezierWhite,
}

impl fmt::Display for AsrForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AsrForm::Bracket => "bracket",
            AsrForm::PezierWhite => "pezier_white",
        })
    }
}

impl std::str::FromStr for AsrForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bracket" => Ok(AsrForm::Bracket),
            "pezier_white" => Ok(AsrForm::PezierWhite),
            other => Err(format!("expected bracket|pezier_white, got {other:?}")),
        }
    }
}

impl AsrForm {
    /// The score for given Sharpe ratio, skewness and kurtosis (already in
    /// the convention the caller wants to penalize).
    pub fn score(self, sharpe: f64, skew: f64, kurt: f64) -> f64 {
        let bracket = 1.0 + skew / 6.0 * sharpe - kurt / 24.0 * sharpe * sharpe;
        match self {
            AsrForm::Bracket => bracket,
            AsrForm::PezierWhite => sharpe * bracket,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KurtosisConvention {
    /// Standardized fourth moment minus 3.
    #[default]
    Excess,
    /// Standardized fourth moment.
    Raw,
}

impl KurtosisConvention {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            KurtosisConvention::Excess => raw - 3.0,
            KurtosisConvention::Raw => raw,
        }
    }
}

impl fmt::Display for KurtosisConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KurtosisConvention::Excess => "excess",
            KurtosisConvention::Raw => "raw",
        })
    }
}

impl std::str::FromStr for KurtosisConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "excess" => Ok(KurtosisConvention::Excess),
            "raw" => Ok(KurtosisConvention::Raw),
            other => Err(format!("expected excess|raw, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TurnoverMode {
    /// Compare against the previous target weights.
    #[default]
    Target,
    /// Compare against the previous weights after one day of drift.
    Drifted,
}

impl fmt::Display for TurnoverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TurnoverMode::Target => "target",
            TurnoverMode::Drifted => "drifted",
        })
    }
}

impl std::str::FromStr for TurnoverMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "target" => Ok(TurnoverMode::Target),
            "drifted" => Ok(TurnoverMode::Drifted),
            other => Err(format!("expected target|drifted, got {other:?}")),
        }
    }
}

fn need(returns: &[f64], n: usize) -> Result<()> {
    if returns.len() < n {
        return Err(MetricsError::TooFewObservations {
            needed: n,
            found: returns.len(),
        });
    }
    Ok(())
}

pub fn mean(returns: &[f64]) -> Result<f64> {
    need(returns, 1)?;
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// Sample variance over `n - 1`.
pub fn variance(returns: &[f64]) -> Result<f64> {
    need(returns, 2)?;
    let m = mean(returns)?;
    Ok(returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (returns.len() - 1) as f64)
}

fn is_zero_spread(returns: &[f64], var: f64) -> bool {
    let scale = returns.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    var.sqrt() <= 1e-14 * scale || var == 0.0
}

/// Buy-and-hold weights one day after rebalancing to `x`:
/// `x_i (1 + r_i) / (1 + x'r)`.
pub fn drifted_weights(x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let gross = 1.0 + x.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    if !(gross > 0.0) {
        return Err(MetricsError::WipedOut { gross });
    }
    Ok(x.iter().zip(r).map(|(xi, ri)| xi * (1.0 + ri) / gross).collect())
}

/// Mean over rebalancing steps of `Σ_i |x_{t+1,i} − x_{t+,i}|`.
///
/// `returns[k]` is the asset-return row realized while `weights[k]` was
/// held; it is only needed in drifted mode. With `count_initial` the first
/// purchase from an all-cash position counts as a step.
pub fn turnover<W: AsRef<[f64]>, R: AsRef<[f64]>>(
    weights: &[W],
    mode: TurnoverMode,
    returns: Option<&[R]>,
    count_initial: bool,
) -> Result<f64> {
    let needed = if count_initial { 1 } else { 2 };
    if weights.len() < needed {
        return Err(MetricsError::TooFewObservations {
            needed,
            found: weights.len(),
        });
    }
    let n = weights[0].as_ref().len();
    for (index, w) in weights.iter().enumerate() {
        if w.as_ref().len() != n {
            return Err(MetricsError::Ragged {
                index,
                expected: n,
                found: w.as_ref().len(),
            });
        }
    }
    if mode == TurnoverMode::Drifted && returns.is_none_or(|r| r.len() + 1 < weights.len()) {
        return Err(MetricsError::MissingReturns);
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    if count_initial {
        total += weights[0].as_ref().iter().map(|v| v.abs()).sum::<f64>();
        steps += 1;
    }
    for k in 1..weights.len() {
        let before = match mode {
            TurnoverMode::Target => weights[k - 1].as_ref().to_vec(),
            TurnoverMode::Drifted => {
                let r = returns.expect("checked above")[k - 1].as_ref();
                drifted_weights(weights[k - 1].as_ref(), r)?
            }
        };
        total += weights[k].as_ref().iter().zip(&before).map(|(a, b)| (a - b).abs()).sum::<f64>();
        steps += 1;
    }
    Ok(total / steps as f64)
}

/// `Π (1 + r_t)`.
pub fn terminal_return(returns: &[f64]) -> Result<f64> {
    let mut w = 1.0;
    for (index, &r) in returns.iter().enumerate() {
        if !(r > -1.0) {
            return Err(MetricsError::ReturnBelowMinusOne { index, value: r });
        }
        w *= 1.0 + r;
    }
    Ok(w)
}

/// Sortino ratio. `+inf` when no observation falls below `r_f`; check
/// [`SortinoValue::no_downside`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortinoValue {
    pub value: f64,
    pub no_downside: bool,
}

pub fn sortino(returns: &[f64], risk_free: f64) -> Result<SortinoValue> {
    let m = mean(returns)?;
    let downside = returns.iter().map(|r| (r - risk_free).min(0.0).powi(2)).sum::<f64>() / returns.len() as f64;
    if downside == 0.0 {
        return Ok(SortinoValue {
            value: f64::INFINITY,
            no_downside: true,
        });
    }
    Ok(SortinoValue {
        value: (m - risk_free) / downside.sqrt(),
        no_downside: false,
    })
}

/// `mean − (γ/2) variance`.
pub fn certainty_equivalent_from_moments(mean: f64, variance: f64, gamma: f64) -> f64 {
    mean - gamma / 2.0 * variance
}

pub fn certainty_equivalent(returns: &[f64], gamma: f64) -> Result<f64> {
    Ok(certainty_equivalent_from_moments(mean(returns)?, variance(returns)?, gamma))
}

/// `(mean − r_f) / sd` with the `n − 1` standard deviation.
pub fn realized_sharpe(returns: &[f64], risk_free: f64) -> Result<f64> {
    let v = variance(returns)?;
    if is_zero_spread(returns, v) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((mean(returns)? - risk_free) / v.sqrt())
}

/// Sample skewness and kurtosis (convention applied to the kurtosis).
pub fn realized_moments(returns: &[f64], convention: KurtosisConvention) -> Result<(f64, f64)> {
    need(returns, 3)?;
    let n = returns.len() as f64;
    let m = mean(returns)?;
    let m2 = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n;
    if is_zero_spread(returns, m2) {
        return Err(MetricsError::ZeroVariance);
    }
    let m3 = returns.iter().map(|r| (r - m).powi(3)).sum::<f64>() / n;
    let m4 = returns.iter().map(|r| (r - m).powi(4)).sum::<f64>() / n;
    Ok((m3 / m2.powf(1.5), convention.apply(m4 / (m2 * m2))))
}

/// Adjusted Sharpe ratio of a realized series.
pub fn realized_asr(returns: &[f64], risk_free: f64, form: AsrForm, convention: KurtosisConvention) -> Result<f64> {
    let sr = realized_sharpe(returns, risk_free)?;
    let (skew, kurt) = realized_moments(returns, convention)?;
    Ok(form.score(sr, skew, kurt))
}

/// Every metric for one strategy's realized returns. Metrics that are
/// undefined for the series (e.g. Sharpe with zero variance) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub strategy_id: String,
    pub turnover: f64,
    pub terminal_return: f64,
    pub sortino: f64,
    pub sortino_no_downside: bool,
    pub ceq: f64,
    pub sharpe: Option<f64>,
    pub asr: Option<f64>,
    pub skew: Option<f64>,
    pub kurt: Option<f64>,
    pub mean: f64,
    pub variance: f64,
}

/// Settings shared by the metric computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    pub risk_free_rate: f64,
    pub gamma: f64,
    pub turnover_mode: TurnoverMode,
    pub count_initial_turnover: bool,
    pub asr_form: AsrForm,
    pub kurtosis: KurtosisConvention,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            risk_free_rate: 0.0,
            gamma: 5.0,
            turnover_mode: TurnoverMode::Target,
            count_initial_turnover: false,
            asr_form: AsrForm::Bracket,
            kurtosis: KurtosisConvention::Excess,
        }
    }
}

/// Builds a report from per-date weights, asset returns and portfolio returns.
pub fn evaluate<W: AsRef<[f64]>, R: AsRef<[f64]>>(
    strategy_id: &str,
    weights: &[W],
    asset_returns: &[R],
    portfolio_returns: &[f64],
    settings: &MetricSettings,
) -> Result<MetricsReport> {
    let turnover = if weights.len() < 2 && !settings.count_initial_turnover {
        0.0
    } else {
        turnover(
            weights,
            settings.turnover_mode,
            Some(asset_returns),
            settings.count_initial_turnover,
        )?
    };
    let s = sortino(portfolio_returns, settings.risk_free_rate)?;
    let moments = realized_moments(portfolio_returns, settings.kurtosis).ok();
    Ok(MetricsReport {
        strategy_id: strategy_id.to_string(),
        turnover,
        terminal_return: terminal_return(portfolio_returns)?,
        sortino: s.value,
        sortino_no_downside: s.no_downside,
        ceq: certainty_equivalent(portfolio_returns, settings.gamma)?,
        sharpe: realized_sharpe(portfolio_returns, settings.risk_free_rate).ok(),
        asr: realized_asr(
            portfolio_returns,
            settings.risk_free_rate,
            settings.asr_form,
            settings.kurtosis,
        )
        .ok(),
        skew: moments.map(|m| m.0),
        kurt: moments.map(|m| m.1),
        mean: mean(portfolio_returns)?,
        variance: variance(portfolio_returns)?,
    })
}
