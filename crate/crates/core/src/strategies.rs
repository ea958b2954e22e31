//! The ten allocation rules (six families, four of them in AM and GM form).
//!
//! Each rule maps one estimation window to a weight vector. Rules that can
//! fail on economic grounds (unreachable target, no positive excess return,
//! zero variance) return [`Decision::Fallback`]; the backtest resolves it by
//! holding the previous weights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimators::{
    self, EstimateOptions, EstimationError, EstimatorKind, MomentDenominator, MomentEstimates,
};
use crate::metrics::{AsrForm, KurtosisConvention};
use crate::solver::{
    floor_covariance, project_feasible, solve_nonlinear, solve_qp, BudgetMode, ConstraintSet, NonlinearOptions,
    Objective, ReturnFloor, Sense, SolverError, SolverReport, EIGEN_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid strategy config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("adjusted Sharpe needs coskewness and cokurtosis estimates")]
    MissingTensors,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    Ew,
    GmvAm,
    GmvGm,
    TAm,
    TGm,
    SrAm,
    SrGm,
    AsrAm,
    AsrGm,
    Crra,
}

impl StrategyId {
    pub const ALL: [StrategyId; 10] = [
        StrategyId::Ew,
        StrategyId::GmvAm,
        StrategyId::GmvGm,
        StrategyId::TAm,
        StrategyId::TGm,
        StrategyId::SrAm,
        StrategyId::SrGm,
        StrategyId::AsrAm,
        StrategyId::AsrGm,
        StrategyId::Crra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Ew => "EW",
            StrategyId::GmvAm => "GMV-AM",
            StrategyId::GmvGm => "GMV-GM",
            StrategyId::TAm => "T-AM",
            StrategyId::TGm => "T-GM",
            StrategyId::SrAm => "SR-AM",
            StrategyId::SrGm => "SR-GM",
            StrategyId::AsrAm => "ASR-AM",
            StrategyId::AsrGm => "ASR-GM",
            StrategyId::Crra => "CRRA",
        }
    }

    /// The mean estimator the rule consumes; `None` for EW and CRRA.
    pub fn estimator_kind(self) -> Option<EstimatorKind> {
        match self {
            StrategyId::GmvAm | StrategyId::TAm | StrategyId::SrAm | StrategyId::AsrAm => Some(EstimatorKind::Am),
            StrategyId::GmvGm | StrategyId::TGm | StrategyId::SrGm | StrategyId::AsrGm => Some(EstimatorKind::Gm),
            StrategyId::Ew | StrategyId::Crra => None,
        }
    }

    fn default_budget_mode(self) -> BudgetMode {
        match self {
            StrategyId::GmvAm | StrategyId::GmvGm => BudgetMode::Equality,
            _ => BudgetMode::Inequality,
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

/// Weights chosen for one rebalance date.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub as_of: NaiveDate,
    pub strategy_id: StrategyId,
    pub estimator_kind: Option<EstimatorKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub risk_free_rate: f64,
    pub target_return: f64,
    pub gamma: f64,
    pub window_size: usize,
    pub initial_wealth: f64,
    /// Per-strategy overrides; GMV defaults to equality, the rest to inequality.
    pub budget_modes: BTreeMap<StrategyId, BudgetMode>,
    pub asr_form: AsrForm,
    pub kurtosis: KurtosisConvention,
    pub moment_denominator: MomentDenominator,
    pub solver_starts: usize,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            risk_free_rate: 0.0,
            target_return: 2.6e-4,
            gamma: 5.0,
            window_size: 90,
            initial_wealth: 1.0,
            budget_modes: BTreeMap::new(),
            asr_form: AsrForm::Bracket,
            kurtosis: KurtosisConvention::Excess,
            moment_denominator: MomentDenominator::Sample,
            solver_starts: NonlinearOptions::default().starts,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some((field, reason)) => Err(StrategyError::InvalidConfig { field, reason }),
            None => Ok(()),
        }
    }

    /// Every invalid field with its reason, in declaration order.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !self.risk_free_rate.is_finite() {
            out.push(("risk_free_rate", "must be finite".into()));
        }
        if !self.target_return.is_finite() {
            out.push(("target_return", "must be finite".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            out.push(("gamma", format!("must be a finite value >= 0, got {}", self.gamma)));
        }
        if self.window_size < 2 {
            out.push(("window_size", format!("must be >= 2, got {}", self.window_size)));
        }
        if !(self.initial_wealth > 0.0 && self.initial_wealth.is_finite()) {
            out.push(("initial_wealth", format!("must be positive, got {}", self.initial_wealth)));
        }
        if self.solver_starts == 0 {
            out.push(("solver_starts", "must be >= 1".into()));
        }
        out
    }

    pub fn budget_mode(&self, id: StrategyId) -> BudgetMode {
        self.budget_modes.get(&id).copied().unwrap_or(id.default_budget_mode())
    }

    pub fn solver_options(&self, seed: u64) -> NonlinearOptions {
        NonlinearOptions::default().with_starts(self.solver_starts).with_seed(seed)
    }
}

/// Why a rule declined to produce new weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    InfeasibleTarget,
    NoPositiveExcessReturn,
    ZeroVariance,
}

impl fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FallbackReason::InfeasibleTarget => "infeasible_target",
            FallbackReason::NoPositiveExcessReturn => "no_positive_excess_return",
            FallbackReason::ZeroVariance => "zero_variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Weights { x: Vec<f64>, report: Option<SolverReport> },
    Fallback(FallbackReason),
}

impl Decision {
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Decision::Weights { x, .. } => Some(x),
            Decision::Fallback(_) => None,
        }
    }
}

/// Weights to hold when a rule falls back: the previous weights, or the
/// equal-weight point projected onto the constraint set on the first date.
pub fn fallback_weights(previous: Option<&[f64]>, constraints: &ConstraintSet) -> Result<Vec<f64>> {
    match previous {
        Some(p) => Ok(p.to_vec()),
        None => Ok(project_feasible(&equally_weighted(constraints.n_assets()), constraints)?),
    }
}

/// `1/N` in every asset.
pub fn equally_weighted(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Minimum variance subject to `μ'x >= target`.
pub fn mpt_target(est: &MomentEstimates, cfg: &StrategyConfig, c: &ConstraintSet) -> Result<Decision> {
    let floor = ReturnFloor {
        mu: est.mu.iter().copied().collect(),
        target: cfg.target_return,
    };
    match solve_qp(&est.sigma, c, Some(&floor)) {
        Ok(report) => Ok(Decision::Weights {
            x: report.x_star.clone(),
            report: Some(report),
        }),
        Err(SolverError::InfeasibleReturnFloor { .. }) => Ok(Decision::Fallback(FallbackReason::InfeasibleTarget)),
        Err(e) => Err(e.into()),
    }
}

/// Minimum variance over the constraint set as given.
pub fn global_min_variance(est: &MomentEstimates, c: &ConstraintSet) -> Result<Decision> {
    let report = solve_qp(&est.sigma, c, None)?;
    Ok(Decision::Weights {
        x: report.x_star.clone(),
        report: Some(report),
    })
}

fn has_no_variance(sigma: &DMatrix<f64>) -> bool {
    let sym = (sigma + sigma.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().all(|&e| e <= EIGEN_FLOOR)
}

/// `(μ'x − r_f) / √(x'Σx)`, with Σ floored to be positive definite.
#[derive(Debug, Clone)]
pub struct SharpeObjective {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    risk_free: f64,
}

impl SharpeObjective {
    pub fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>, risk_free: f64) -> Result<Self> {
        let (sigma, _) = floor_covariance(sigma)?;
        Ok(Self {
            mu: mu.clone(),
            sigma,
            risk_free,
        })
    }
}

impl Objective for SharpeObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_row_slice(x);
        let v = x.dot(&(&self.sigma * &x));
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        (self.mu.dot(&x) - self.risk_free) / v.sqrt()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let x = DVector::from_row_slice(x);
        let sx = &self.sigma * &x;
        let v = x.dot(&sx);
        let s = v.sqrt();
        let sr = (self.mu.dot(&x) - self.risk_free) / s;
        for i in 0..grad.len() {
            grad[i] = self.mu[i] / s - sr * sx[i] / v;
        }
    }
}

/// Maximum Sharpe ratio (tangency portfolio).
pub fn max_sharpe(
    est: &MomentEstimates,
    cfg: &StrategyConfig,
    c: &ConstraintSet,
    opts: &NonlinearOptions,
) -> Result<Decision> {
    if has_no_variance(&est.sigma) {
        return Ok(Decision::Fallback(FallbackReason::ZeroVariance));
    }
    let objective = SharpeObjective::new(&est.mu, &est.sigma, cfg.risk_free_rate)?;
    let report = solve_nonlinear(&objective, Sense::Maximize, c, opts)?;
    if !(report.objective_value > 0.0) {
        return Ok(Decision::Fallback(FallbackReason::NoPositiveExcessReturn));
    }
    Ok(Decision::Weights {
        x: report.x_star.clone(),
        report: Some(report),
    })
}

/// Mean CRRA utility of the window's portfolio returns.
///
/// As an [`Objective`] it evaluates `(1/M) Σ ((1+p)^{1−γ} − 1)/(1−γ)`, which
/// differs from the textbook utility by a constant and stays accurate near
/// `γ = 1`; [`CrraObjective::utility`] gives the unshifted value.
#[derive(Debug, Clone)]
pub struct CrraObjective {
    window: Vec<Vec<f64>>,
    gamma: f64,
}

impl CrraObjective {
    pub fn new<R: AsRef<[f64]>>(window: &[R], gamma: f64) -> Self {
        Self {
            window: window.iter().map(|r| r.as_ref().to_vec()).collect(),
            gamma,
        }
    }

    fn is_log(&self) -> bool {
        self.gamma == 1.0
    }

    /// `(1/M) Σ (1 + x'r_j)^{1−γ}/(1−γ)`, or the mean log for `γ = 1`.
    pub fn utility(&self, x: &[f64]) -> f64 {
        let shifted = self.value(x);
        if self.is_log() {
            shifted
        } else {
            shifted + 1.0 / (1.0 - self.gamma)
        }
    }

    fn portfolio_return(row: &[f64], x: &[f64]) -> f64 {
        row.iter().zip(x).map(|(r, w)| r * w).sum()
    }
}

impl Objective for CrraObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let m = self.window.len() as f64;
        let mut total = 0.0;
        for row in &self.window {
            let p = Self::portfolio_return(row, x);
            if !(1.0 + p > 0.0) {
                return f64::NEG_INFINITY;
            }
            let l = p.ln_1p();
            total += if self.is_log() {
                l
            } else {
                ((1.0 - self.gamma) * l).exp_m1() / (1.0 - self.gamma)
            };
        }
        total / m
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let m = self.window.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for row in &self.window {
            let p = Self::portfolio_return(row, x);
            let w = (-self.gamma * p.ln_1p()).exp() / m;
            for (g, r) in grad.iter_mut().zip(row) {
                *g += w * r;
            }
        }
    }
}

/// Maximum expected CRRA utility over the raw window.
pub fn max_crra<R: AsRef<[f64]>>(
    window: &[R],
    cfg: &StrategyConfig,
    c: &ConstraintSet,
    opts: &NonlinearOptions,
) -> Result<Decision> {
    if window.is_empty() {
        return Err(EstimationError::EmptyWindow.into());
    }
    let objective = CrraObjective::new(window, cfg.gamma);
    let report = solve_nonlinear(&objective, Sense::Maximize, c, opts)?;
    Ok(Decision::Weights {
        x: report.x_star.clone(),
        report: Some(report),
    })
}

/// Adjusted Sharpe ratio with portfolio skewness and kurtosis taken from
/// the coskewness and cokurtosis matrices.
#[derive(Debug, Clone)]
pub struct AdjustedSharpeObjective {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    rm3: DMatrix<f64>,
    rm4: DMatrix<f64>,
    risk_free: f64,
    form: AsrForm,
    kurtosis: KurtosisConvention,
}

struct AsrParts {
    sr: f64,
    skew: f64,
    kurt: f64,
    v: f64,
    sx: DVector<f64>,
}

impl AdjustedSharpeObjective {
    pub fn new(est: &MomentEstimates, risk_free: f64, form: AsrForm, kurtosis: KurtosisConvention) -> Result<Self> {
        let (rm3, rm4) = match (&est.rm3, &est.rm4) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            _ => return Err(StrategyError::MissingTensors),
        };
        let (sigma, _) = floor_covariance(&est.sigma)?;
        Ok(Self {
            mu: est.mu.clone(),
            sigma,
            rm3,
            rm4,
            risk_free,
            form,
            kurtosis,
        })
    }

    fn parts(&self, x: &[f64]) -> Option<AsrParts> {
        let xv = DVector::from_row_slice(x);
        let sx = &self.sigma * &xv;
        let v = xv.dot(&sx);
        if !(v > 0.0) {
            return None;
        }
        let s = v.sqrt();
        Some(AsrParts {
            sr: (self.mu.dot(&xv) - self.risk_free) / s,
            skew: estimators::third_moment(&self.rm3, x) / (v * s),
            kurt: self.kurtosis.apply(estimators::fourth_moment(&self.rm4, x) / (v * v)),
            v,
            sx,
        })
    }
}

impl Objective for AdjustedSharpeObjective {
    fn value(&self, x: &[f64]) -> f64 {
        match self.parts(x) {
            Some(p) => self.form.score(p.sr, p.skew, p.kurt),
            None => f64::NEG_INFINITY,
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let Some(p) = self.parts(x) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return;
        };
        let n = x.len();
        let s = p.v.sqrt();
        let mut g3 = vec![0.0; n];
        let mut g4 = vec![0.0; n];
        estimators::third_moment_gradient(&self.rm3, x, &mut g3);
        estimators::fourth_moment_gradient(&self.rm4, x, &mut g4);
        // the convention shift is constant, so dK uses the raw value
        let raw_kurt = estimators::fourth_moment(&self.rm4, x) / (p.v * p.v);
        let bracket = 1.0 + p.skew / 6.0 * p.sr - p.kurt / 24.0 * p.sr * p.sr;
        for i in 0..n {
            let d_sr = self.mu[i] / s - p.sr * p.sx[i] / p.v;
            let d_skew = g3[i] / (p.v * s) - 3.0 * p.skew * p.sx[i] / p.v;
            let d_kurt = g4[i] / (p.v * p.v) - 4.0 * raw_kurt * p.sx[i] / p.v;
            let d_bracket = (p.sr * d_skew + p.skew * d_sr) / 6.0
                - (p.sr * p.sr * d_kurt + 2.0 * p.kurt * p.sr * d_sr) / 24.0;
            grad[i] = match self.form {
                AsrForm::Bracket => d_bracket,
                AsrForm::PezierWhite => bracket * d_sr + p.sr * d_bracket,
            };
        }
    }
}

/// Maximum adjusted Sharpe ratio.
pub fn max_adjusted_sharpe(
    est: &MomentEstimates,
    cfg: &StrategyConfig,
    c: &ConstraintSet,
    opts: &NonlinearOptions,
) -> Result<Decision> {
    let objective = AdjustedSharpeObjective::new(est, cfg.risk_free_rate, cfg.asr_form, cfg.kurtosis)?;
    if has_no_variance(&est.sigma) {
        return Ok(Decision::Fallback(FallbackReason::ZeroVariance));
    }
    let report = solve_nonlinear(&objective, Sense::Maximize, c, opts)?;
    Ok(Decision::Weights {
        x: report.x_star.clone(),
        report: Some(report),
    })
}

/// Runs rule `id` on one window. The constraint set's budget mode is
/// replaced by the one configured for `id`.
pub fn allocate<R: AsRef<[f64]>>(
    id: StrategyId,
    window: &[R],
    cfg: &StrategyConfig,
    constraints: &ConstraintSet,
    seed: u64,
) -> Result<Decision> {
    let c = constraints.clone().with_budget_mode(cfg.budget_mode(id));
    let opts = cfg.solver_options(seed);
    let moments = |kind, tensors| {
        estimators::estimate(
            window,
            EstimateOptions::new(kind)
                .with_tensors(tensors)
                .denominator(cfg.moment_denominator),
        )
    };
    match id {
        StrategyId::Ew => Ok(Decision::Weights {
            x: equally_weighted(c.n_assets()),
            report: None,
        }),
        StrategyId::Crra => max_crra(window, cfg, &c, &opts),
        StrategyId::GmvAm | StrategyId::GmvGm => {
            let est = moments(id.estimator_kind().expect("GMV has a kind"), false)?;
            global_min_variance(&est, &c)
        }
        StrategyId::TAm | StrategyId::TGm => {
            let est = moments(id.estimator_kind().expect("T has a kind"), false)?;
            mpt_target(&est, cfg, &c)
        }
        StrategyId::SrAm | StrategyId::SrGm => {
            let est = moments(id.estimator_kind().expect("SR has a kind"), false)?;
            max_sharpe(&est, cfg, &c, &opts)
        }
        StrategyId::AsrAm | StrategyId::AsrGm => {
            let est = moments(id.estimator_kind().expect("ASR has a kind"), true)?;
            max_adjusted_sharpe(&est, cfg, &c, &opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::FEASIBILITY_TOL;
    use proptest::prelude::*;

    fn est(mu: &[f64], sigma: DMatrix<f64>) -> MomentEstimates {
        MomentEstimates {
            mu: DVector::from_row_slice(mu),
            sigma,
            rm3: None,
            rm4: None,
            window_size: 2,
            estimator_kind: EstimatorKind::Am,
            as_of: None,
        }
    }

    fn diag(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(xs))
    }

    fn weights(d: &Decision) -> Vec<f64> {
        d.weights().expect("expected weights").to_vec()
    }

    /// All points of a 2-asset grid with step `h` satisfying `x1 + x2 <= 1`.
    fn simplex_grid(h: f64) -> Vec<[f64; 2]> {
        let k = (1.0 / h).round() as usize;
        let mut pts = Vec::new();
        for i in 0..=k {
            for j in 0..=(k - i) {
                pts.push([i as f64 * h, j as f64 * h]);
            }
        }
        pts
    }

    #[test]
    fn ids_round_trip() {
        for id in StrategyId::ALL {
            assert_eq!(id.as_str().parse::<StrategyId>().unwrap(), id);
        }
        assert!("SR".parse::<StrategyId>().is_err());
    }

    #[test]
    fn equal_weights() {
        assert_eq!(equally_weighted(8), vec![0.125; 8]);
        assert_eq!(equally_weighted(1), vec![1.0]);
        assert_eq!(equally_weighted(2), vec![0.5, 0.5]);
    }

    #[test]
    fn config_validation() {
        assert!(StrategyConfig::default().validate().is_ok());
        let cfg = StrategyConfig {
            gamma: -1.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(StrategyError::InvalidConfig { field: "gamma", .. })));
        let cfg = StrategyConfig {
            window_size: 1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(StrategyError::InvalidConfig { field: "window_size", .. })));
        assert_eq!(StrategyConfig::default().budget_mode(StrategyId::GmvGm), BudgetMode::Equality);
        assert_eq!(StrategyConfig::default().budget_mode(StrategyId::TAm), BudgetMode::Inequality);
    }

    #[test]
    fn mpt_feasible_target() {
        let e = est(&[0.001, 0.0005], diag(&[1e-4, 1e-4]));
        let d = mpt_target(&e, &StrategyConfig::default(), &ConstraintSet::long_only(2)).unwrap();
        let x = weights(&d);
        assert!(0.001 * x[0] + 0.0005 * x[1] >= 2.6e-4 - 1e-10);
    }

    #[test]
    fn mpt_unreachable_target_falls_back() {
        let e = est(&[1e-4, 5e-5, -1e-4], diag(&[1e-4, 1e-4, 1e-4]));
        let c = ConstraintSet::standard(3, Some(2));
        let d = mpt_target(&e, &StrategyConfig::default(), &c).unwrap();
        assert_eq!(d, Decision::Fallback(FallbackReason::InfeasibleTarget));
    }

    #[test]
    fn mpt_matches_grid() {
        let mu = [4e-4, 1e-4];
        let var = [4e-4, 1e-4];
        let e = est(&mu, diag(&var));
        let d = mpt_target(&e, &StrategyConfig::default(), &ConstraintSet::long_only(2)).unwrap();
        let x = weights(&d);
        let obj = |p: &[f64; 2]| var[0] * p[0] * p[0] + var[1] * p[1] * p[1];
        let best = simplex_grid(1e-3)
            .into_iter()
            .filter(|p| mu[0] * p[0] + mu[1] * p[1] >= 2.6e-4)
            .min_by(|a, b| obj(a).total_cmp(&obj(b)))
            .unwrap();
        // the floor binds, so grid points only approach the optimum along the floor line
        assert!((x[0] - best[0]).abs() <= 3e-3 && (x[1] - best[1]).abs() <= 3e-3, "{x:?} vs {best:?}");
        assert!(obj(&[x[0], x[1]]) <= obj(&best) + 1e-12);
    }

    #[test]
    fn gmv_inverse_variance() {
        let c = ConstraintSet::long_only(2).with_budget_mode(BudgetMode::Equality);
        let x = weights(&global_min_variance(&est(&[0.0, 0.0], diag(&[1.0, 4.0])), &c).unwrap());
        assert!((x[0] - 0.8).abs() < 1e-9 && (x[1] - 0.2).abs() < 1e-9);

        // grid oracle on the budget line
        let best = (0..=1000)
            .map(|k| k as f64 / 1000.0)
            .min_by(|a, b| (a * a + 4.0 * (1.0 - a).powi(2)).total_cmp(&(b * b + 4.0 * (1.0 - b).powi(2))))
            .unwrap();
        assert!((x[0] - best).abs() <= 1e-3);

        let c = ConstraintSet::long_only(5).with_budget_mode(BudgetMode::Equality);
        let x = weights(&global_min_variance(&est(&[0.0; 5], DMatrix::identity(5, 5)), &c).unwrap());
        assert!(x.iter().all(|v| (v - 0.2).abs() < 1e-9));

        let c = ConstraintSet::long_only(3).with_budget_mode(BudgetMode::Equality);
        let x = weights(&global_min_variance(&est(&[0.0; 3], diag(&[0.0, 1.0, 1.0])), &c).unwrap());
        assert!((x[0] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn sharpe_matches_grid_and_tie_break() {
        let mu = [0.02, 0.01];
        let c = ConstraintSet::long_only(2);
        let d = max_sharpe(
            &est(&mu, DMatrix::identity(2, 2)),
            &StrategyConfig::default(),
            &c,
            &NonlinearOptions::default(),
        )
        .unwrap();
        let x = weights(&d);
        assert!(x[0] > x[1]);
        let sr = |p: &[f64; 2]| {
            let v = p[0] * p[0] + p[1] * p[1];
            if v == 0.0 {
                f64::NEG_INFINITY
            } else {
                (mu[0] * p[0] + mu[1] * p[1]) / v.sqrt()
            }
        };
        let grid_best = simplex_grid(1e-3).iter().map(sr).fold(f64::NEG_INFINITY, f64::max);
        assert!(sr(&[x[0], x[1]]) >= grid_best - 1e-6);
        // the optimal ray is (2, 1); the point on it closest to (0.5, 0.5)
        assert!((x[0] - 0.6).abs() < 1e-6 && (x[1] - 0.3).abs() < 1e-6, "{x:?}");

        let d = max_sharpe(
            &est(&[0.01, 0.01], DMatrix::identity(2, 2) * 4e-4),
            &StrategyConfig::default(),
            &c,
            &NonlinearOptions::default(),
        )
        .unwrap();
        let x = weights(&d);
        assert!((x[0] - 0.5).abs() < 1e-6 && (x[1] - 0.5).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn sharpe_without_positive_excess_falls_back() {
        let c = ConstraintSet::standard(3, Some(2));
        let e = est(&[-0.01, -0.02, 0.0], DMatrix::identity(3, 3) * 1e-4);
        let d = max_sharpe(&e, &StrategyConfig::default(), &c, &NonlinearOptions::default()).unwrap();
        assert_eq!(d, Decision::Fallback(FallbackReason::NoPositiveExcessReturn));

        let e = est(&[0.01, 0.02, 0.0], DMatrix::zeros(3, 3));
        let d = max_sharpe(&e, &StrategyConfig::default(), &c, &NonlinearOptions::default()).unwrap();
        assert_eq!(d, Decision::Fallback(FallbackReason::ZeroVariance));
    }

    #[test]
    fn crra_flat_window_gives_equal_weight() {
        let window = vec![vec![0.0; 3]; 10];
        let c = ConstraintSet::long_only(3);
        let x = weights(&max_crra(&window, &StrategyConfig::default(), &c, &NonlinearOptions::default()).unwrap());
        assert!(x.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12), "{x:?}");
    }

    #[test]
    fn crra_single_asset_grid() {
        let window = vec![vec![0.1], vec![-0.05]];
        let c = ConstraintSet::long_only(1);
        let cfg = StrategyConfig::default();
        let x = weights(&max_crra(&window, &cfg, &c, &NonlinearOptions::default()).unwrap())[0];
        let u = |w: f64| {
            ((1.0 + 0.1 * w).powf(-4.0) / -4.0 + (1.0 - 0.05 * w).powf(-4.0) / -4.0) / 2.0
        };
        let best = (0..=10_000)
            .map(|k| k as f64 * 1e-4)
            .max_by(|a, b| u(*a).total_cmp(&u(*b)))
            .unwrap();
        assert!((x - best).abs() <= 1e-4, "{x} vs {best}");
        let obj = CrraObjective::new(&window, 5.0);
        assert!((obj.utility(&[best]) - u(best)).abs() < 1e-15);
    }

    #[test]
    fn crra_log_branch_is_continuous() {
        let window = vec![vec![0.03, -0.01], vec![-0.02, 0.015], vec![0.01, 0.0], vec![0.025, -0.005]];
        let c = ConstraintSet::long_only(2);
        let opts = NonlinearOptions::default();
        let solve = |gamma| {
            let cfg = StrategyConfig {
                gamma,
                ..Default::default()
            };
            weights(&max_crra(&window, &cfg, &c, &opts).unwrap())
        };
        let log = solve(1.0);
        for g in [1.0 - 1e-6, 1.0 + 1e-6] {
            let x = solve(g);
            assert!(x.iter().zip(&log).all(|(a, b)| (a - b).abs() < 1e-4), "{x:?} vs {log:?}");
        }
    }

    #[test]
    fn crra_gamma_zero_is_mean_maximization() {
        let window = vec![vec![0.01, 0.02, -0.01], vec![0.0, -0.01, 0.03], vec![0.02, 0.01, 0.0]];
        let c = ConstraintSet::long_only(3);
        let cfg = StrategyConfig {
            gamma: 0.0,
            ..Default::default()
        };
        let opts = NonlinearOptions::default();
        let x = weights(&max_crra(&window, &cfg, &c, &opts).unwrap());
        let mean: Vec<f64> = (0..3).map(|i| window.iter().map(|r| r[i]).sum::<f64>() / 3.0).collect();
        let m2 = mean.clone();
        let linear = (
            move |x: &[f64]| x.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>(),
            move |_: &[f64], g: &mut [f64]| g.copy_from_slice(&m2),
        );
        let y = solve_nonlinear(&linear, Sense::Maximize, &c, &opts).unwrap().x_star;
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-8), "{x:?} vs {y:?}");
    }

    fn tensor_est(window: &[Vec<f64>]) -> MomentEstimates {
        estimators::estimate(window, EstimateOptions::new(EstimatorKind::Am).with_tensors(true)).unwrap()
    }

    #[test]
    fn asr_single_asset_grid() {
        let window = vec![vec![0.02], vec![-0.01], vec![0.03], vec![-0.02], vec![0.015], vec![0.0]];
        let e = tensor_est(&window);
        let c = ConstraintSet::long_only(1);
        for form in [AsrForm::Bracket, AsrForm::PezierWhite] {
            let cfg = StrategyConfig {
                asr_form: form,
                ..Default::default()
            };
            let obj = AdjustedSharpeObjective::new(&e, 0.0, form, KurtosisConvention::Excess).unwrap();
            let d = max_adjusted_sharpe(&e, &cfg, &c, &NonlinearOptions::default()).unwrap();
            let x = weights(&d);
            let grid = (1..=10_000)
                .map(|k| obj.value(&[k as f64 * 1e-4]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(obj.value(&x) >= grid - 1e-9);
        }
    }

    #[test]
    fn asr_symmetric_two_point_grid() {
        // each column alternates between two values, so portfolio skew is 0
        let window: Vec<Vec<f64>> = (0..8)
            .map(|t| if t % 2 == 0 { vec![0.03, 0.01] } else { vec![-0.01, 0.0] })
            .collect();
        let e = tensor_est(&window);
        let c = ConstraintSet::long_only(2);
        let obj = AdjustedSharpeObjective::new(&e, 0.0, AsrForm::Bracket, KurtosisConvention::Excess).unwrap();
        let x = weights(&max_adjusted_sharpe(&e, &StrategyConfig::default(), &c, &NonlinearOptions::default()).unwrap());
        assert!(e.portfolio_skewness(&x).unwrap().abs() < 1e-9);
        let grid = simplex_grid(1e-3)
            .iter()
            .map(|p| obj.value(p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(obj.value(&x) >= grid - 1e-6);
    }

    #[test]
    fn asr_penalizes_negative_skew() {
        // A: nine small gains, one crash; B: symmetric; equal mean and variance
        let a = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, -0.09];
        let b = [0.03, -0.03, -0.03, 0.03, 0.03, -0.03, 0.03, -0.03, -0.03, 0.03];
        let window: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| vec![x + 0.005, y + 0.005]).collect();
        let e = tensor_est(&window);
        assert!(e.portfolio_skewness(&[1.0, 0.0]).unwrap() < -2.0);
        let c = ConstraintSet::long_only(2);
        let opts = NonlinearOptions::default();
        let cfg = StrategyConfig::default();
        let sr = weights(&max_sharpe(&e, &cfg, &c, &opts).unwrap());
        let asr = weights(&max_adjusted_sharpe(&e, &cfg, &c, &opts).unwrap());
        assert!(asr[0] <= sr[0] + 1e-6, "asr {asr:?} sr {sr:?}");
    }

    #[test]
    fn allocate_applies_budget_mode() {
        let window: Vec<Vec<f64>> = (0..20)
            .map(|t| vec![0.01 * ((t % 3) as f64 - 1.0), 0.02 * ((t % 2) as f64 - 0.5)])
            .collect();
        let c = ConstraintSet::long_only(2);
        let cfg = StrategyConfig::default();
        let x = weights(&allocate(StrategyId::GmvAm, &window, &cfg, &c, 0).unwrap());
        assert!((x[0] + x[1] - 1.0).abs() < 1e-9);
        for id in StrategyId::ALL {
            if let Decision::Weights { x, .. } = allocate(id, &window, &cfg, &c, 0).unwrap() {
                assert!(c.clone().with_budget_mode(cfg.budget_mode(id)).is_feasible(&x, FEASIBILITY_TOL));
            }
        }
    }

    #[test]
    fn fallback_resolution() {
        let c = ConstraintSet::standard(3, Some(2));
        assert_eq!(fallback_weights(Some(&[0.2, 0.3, 0.1]), &c).unwrap(), vec![0.2, 0.3, 0.1]);
        let x = fallback_weights(None, &c).unwrap();
        assert!(x.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let eq = c.with_budget_mode(BudgetMode::Equality);
        let x = fallback_weights(None, &eq).unwrap();
        assert!(eq.is_feasible(&x, FEASIBILITY_TOL));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sharpe_argmax_scale_invariant(
            mu in proptest::collection::vec(0.001f64..0.02, 3),
            d in proptest::collection::vec(1e-4f64..1e-3, 3),
            k in 0.1f64..10.0,
        ) {
            let c = ConstraintSet::long_only(3);
            let opts = NonlinearOptions::default();
            let cfg = StrategyConfig::default();
            let a = weights(&max_sharpe(&est(&mu, diag(&d)), &cfg, &c, &opts).unwrap());
            let mu2: Vec<f64> = mu.iter().map(|m| m * k.sqrt()).collect();
            let d2: Vec<f64> = d.iter().map(|v| v * k).collect();
            let b = weights(&max_sharpe(&est(&mu2, diag(&d2)), &cfg, &c, &opts).unwrap());
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6), "{:?} vs {:?}", a, b);
        }

        #[test]
        fn outputs_are_feasible(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let window: Vec<Vec<f64>> = (0..15)
                .map(|_| (0..4).map(|_| rng.gen_range(-0.05..0.06)).collect())
                .collect();
            let c = ConstraintSet::standard(4, Some(3));
            let cfg = StrategyConfig::default();
            for id in StrategyId::ALL {
                if let Decision::Weights { x, .. } = allocate(id, &window, &cfg, &c, seed).unwrap() {
                    let cc = c.clone().with_budget_mode(cfg.budget_mode(id));
                    prop_assert!(cc.is_feasible(&x, FEASIBILITY_TOL), "{} {:?}", id, x);
                    prop_assert!(x.iter().all(|v| v.is_finite()));
                }
            }
        }
    }
}
