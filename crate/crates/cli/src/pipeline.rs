//! End-to-end run: load prices, backtest every strategy on each requested
//! universe, summarize, and write the output files.
//!
//! All outputs are rendered in memory first. Each file is then written to a
//! temporary file in the output directory and renamed into place, so a
//! failed run never leaves a truncated file behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rollfolio_core::analytics::{
    build_comparison, cross_moment_table, density_data, tr_delta, CoMovement, ComparisonTable, CrossMomentTable,
    TrDelta, UniverseTag, COMPARISON_COLUMNS,
};
use rollfolio_core::backtest::{run, BacktestError, BacktestResult};
use rollfolio_core::market_data::{align_calendars, compute_returns, parse_prices, DataError, FormatSpec, ReturnMatrix};
use rollfolio_core::solver::ConstraintSet;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigIssue, RunConfig, UniverseMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),
    #[error("data error: {0}")]
    Data(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Solver(_) => 4,
            PipelineError::Output(_) | PipelineError::Internal(_) => 1,
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<BacktestError> for PipelineError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::TooShort { .. } | BacktestError::NoShortableAsset => PipelineError::Data(e.to_string()),
            BacktestError::Config(_) => PipelineError::Config(vec![ConfigIssue::new("strategy", e.to_string())]),
            _ => PipelineError::Solver(e.to_string()),
        }
    }
}

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub data_digest: String,
    pub results: Vec<(UniverseTag, BacktestResult)>,
    pub comparisons: Vec<ComparisonTable>,
    pub tr_delta: Option<Vec<TrDelta>>,
    /// File name to contents, in name order.
    pub files: BTreeMap<String, String>,
}

impl RunSummary {
    pub fn result(&self, universe: UniverseTag, strategy: &str) -> Option<&BacktestResult> {
        self.results
            .iter()
            .find(|(u, r)| *u == universe && r.strategy_id.as_str() == strategy)
            .map(|(_, r)| r)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".into())
}

pub fn load_matrix(cfg: &RunConfig) -> Result<(ReturnMatrix, String), PipelineError> {
    let path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| PipelineError::Config(vec![ConfigIssue::new("data_path", "no data file given")]))?;
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let spec = FormatSpec {
        delimiter: cfg.delimiter as u8,
        date_column: cfg.date_column.clone(),
        date_format: cfg.date_format.clone(),
        asset_columns: cfg.assets.iter().map(|a| (a.clone(), a.clone())).collect(),
    };
    // parse_prices already logs its warnings
    let loaded = parse_prices(bytes.as_slice(), &spec)?;
    let aligned = if loaded.series.len() >= 2 {
        align_calendars(&loaded.series)?
    } else {
        loaded.series
    };
    let matrix = compute_returns(&aligned, cfg.shortable_asset.as_deref())?;
    let matrix = match (cfg.date_from, cfg.date_to) {
        (None, None) => matrix,
        (from, to) => {
            let start = from.unwrap_or(matrix.dates()[0]);
            let end = to.unwrap_or(*matrix.dates().last().expect("non-empty matrix"));
            matrix.slice_window(start, end)?
        }
    };
    Ok((matrix, digest))
}

fn universes(cfg: &RunConfig, matrix: &ReturnMatrix) -> Result<Vec<(UniverseTag, ReturnMatrix, ConstraintSet)>, PipelineError> {
    let full = || (UniverseTag::WithShort, matrix.clone(), ConstraintSet::standard(matrix.n_assets(), matrix.shortable_index()));
    let reduced = || -> Result<_, PipelineError> {
        let s = matrix
            .shortable_index()
            .ok_or_else(|| PipelineError::Data("no shortable asset to remove".into()))?;
        let m = matrix.without_asset(s);
        let c = ConstraintSet::long_only(m.n_assets());
        Ok((UniverseTag::WithoutShort, m, c))
    };
    Ok(match cfg.universe_mode {
        UniverseMode::WithShort => vec![full()],
        UniverseMode::WithoutShort => vec![reduced()?],
        UniverseMode::Both => vec![full(), reduced()?],
    })
}

/// Runs every backtest and renders all output files in memory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let issues = cfg.check();
    if !issues.is_empty() {
        return Err(PipelineError::Config(issues));
    }
    let (matrix, digest) = load_matrix(cfg)?;
    let universes = universes(cfg, &matrix)?;

    let jobs: Vec<(usize, usize)> = (0..universes.len())
        .flat_map(|u| (0..cfg.strategies.len()).map(move |s| (u, s)))
        .collect();
    let runs: Vec<BacktestResult> = jobs
        .par_iter()
        .map(|&(u, s)| {
            let (_, m, c) = &universes[u];
            run(m, cfg.strategies[s], &cfg.strategy, c).map_err(PipelineError::from)
        })
        .collect::<Result<_, _>>()?;

    let settings = cfg.metric_settings();
    let mut files = BTreeMap::new();
    let mut results = Vec::new();
    let mut comparisons = Vec::new();
    for (u, (tag, m, _)) in universes.iter().enumerate() {
        let batch: Vec<BacktestResult> = jobs
            .iter()
            .zip(&runs)
            .filter(|((ju, _), _)| *ju == u)
            .map(|(_, r)| r.clone())
            .collect();
        let table = build_comparison(&batch, &settings, *tag).map_err(|e| PipelineError::Internal(e.to_string()))?;
        files.insert(format!("comparison_{tag}.csv"), render_comparison(&table, &batch));
        files.insert(format!("crossmoments_{tag}.csv"), render_crossmoments(m, &batch));
        for r in &batch {
            let id = r.strategy_id;
            files.insert(format!("weights_{id}_{tag}.csv"), render_weights(r));
            files.insert(format!("returns_{id}_{tag}.csv"), render_returns(r));
            files.insert(format!("density_{id}_{tag}.csv"), render_density(r, cfg));
        }
        comparisons.push(table);
        results.extend(batch.into_iter().map(|r| (*tag, r)));
    }
    let deltas = if comparisons.len() == 2 {
        let d = tr_delta(&comparisons[0], &comparisons[1]).map_err(|e| PipelineError::Internal(e.to_string()))?;
        files.insert("tr_delta.csv".into(), render_tr_delta(&d));
        Some(d)
    } else {
        None
    };
    files.insert("manifest.txt".into(), render_manifest(cfg, &digest, &matrix, &results));
    Ok(RunSummary {
        data_digest: digest,
        results,
        comparisons,
        tr_delta: deltas,
        files,
    })
}

/// Writes every file of `summary` into `dir`; the manifest goes last.
pub fn write_outputs(summary: &RunSummary, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let ordered = summary
        .files
        .iter()
        .filter(|(n, _)| n.as_str() != "manifest.txt")
        .chain(summary.files.get_key_value("manifest.txt"));
    for (name, contents) in ordered {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        let path = dir.join(name);
        tmp.persist(&path).map_err(|e| PipelineError::Output(e.error))?;
        written.push(path);
    }
    Ok(written)
}

fn render_weights(r: &BacktestResult) -> String {
    let mut out = format!("date,{},fallback\n", r.assets.join(","));
    for (w, f) in r.weights.iter().zip(&r.flags) {
        let cells: Vec<String> = w.weights.iter().map(|x| num(*x)).collect();
        let flag = f.fallback.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", w.as_of, cells.join(","), flag).unwrap();
    }
    out
}

fn render_returns(r: &BacktestResult) -> String {
    let mut out = String::from("date,portfolio_return,wealth\n");
    for ((d, p), w) in r.dates.iter().zip(&r.portfolio_returns).zip(&r.wealth) {
        writeln!(out, "{d},{},{}", num(*p), num(*w)).unwrap();
    }
    out
}

fn render_density(r: &BacktestResult, cfg: &RunConfig) -> String {
    let mut out = String::from("kind,lo,hi,density\n");
    match density_data(&r.portfolio_returns, cfg.density_bins, cfg.density_grid_points) {
        Ok(d) => {
            for (k, h) in d.histogram.iter().enumerate() {
                writeln!(out, "histogram,{},{},{}", num(d.bin_edges[k]), num(d.bin_edges[k + 1]), num(*h)).unwrap();
            }
            for (g, v) in d.grid.iter().zip(&d.kde) {
                writeln!(out, "kde,{},{},{}", num(*g), num(*g), num(*v)).unwrap();
            }
        }
        Err(e) => log::warn!("no density for {}: {e}", r.strategy_id),
    }
    out
}

fn render_comparison(table: &ComparisonTable, batch: &[BacktestResult]) -> String {
    let mut out = format!(
        "strategy,{},sortino_no_downside,budget_mode,fallback_dates,universe,from,to\n",
        COMPARISON_COLUMNS.join(",")
    );
    for row in &table.rows {
        let r = batch
            .iter()
            .find(|r| r.strategy_id.as_str() == row.strategy_id)
            .expect("row comes from the batch");
        let cells: Vec<String> = ComparisonTable::cells(row).iter().map(|c| opt(*c)).collect();
        let fallbacks = r.flags.iter().filter(|f| f.fallback.is_some()).count();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.strategy_id,
            cells.join(","),
            row.sortino_no_downside,
            r.budget_mode,
            fallbacks,
            table.universe,
            table.date_range.0,
            table.date_range.1
        )
        .unwrap();
    }
    out
}

fn render_crossmoments(matrix: &ReturnMatrix, batch: &[BacktestResult]) -> String {
    let mut sorted: Vec<&BacktestResult> = batch.iter().collect();
    sorted.sort_by_key(|r| r.strategy_id.as_str());
    let names: Vec<&str> = sorted.iter().map(|r| r.strategy_id.as_str()).collect();
    let mut out = format!("kind,asset,{}\n", names.join(","));
    for kind in [CoMovement::Covariance, CoMovement::Correlation] {
        // strategies whose series is undefined for this kind become NA columns
        let columns: Vec<Option<CrossMomentTable>> = sorted
            .iter()
            .map(|r| cross_moment_table(matrix, std::slice::from_ref(*r), kind).ok())
            .collect();
        for (i, asset) in matrix.assets().iter().enumerate() {
            let cells: Vec<String> = columns.iter().map(|c| opt(c.as_ref().map(|t| t.cells[i][0]))).collect();
            writeln!(out, "{kind},{asset},{}", cells.join(",")).unwrap();
        }
    }
    out
}

fn render_tr_delta(rows: &[TrDelta]) -> String {
    let mut out = String::from("strategy,tr_with_short,tr_without_short,delta\n");
    for d in rows {
        writeln!(out, "{},{},{},{}", d.strategy_id, num(d.with_short), num(d.without_short), num(d.delta)).unwrap();
    }
    out
}

fn render_manifest(cfg: &RunConfig, digest: &str, matrix: &ReturnMatrix, results: &[(UniverseTag, BacktestResult)]) -> String {
    let mut out = String::new();
    writeln!(out, "# rollfolio run manifest; the body below is a valid config for `rollfolio run`").unwrap();
    writeln!(out, "# version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "# data_sha256 = {digest}").unwrap();
    writeln!(out, "# assets = {}", matrix.assets().join(",")).unwrap();
    writeln!(
        out,
        "# return_rows = {} ({} .. {})",
        matrix.n_periods(),
        matrix.dates()[0],
        matrix.dates()[matrix.n_periods() - 1]
    )
    .unwrap();
    for (tag, r) in results {
        let mut fallbacks: BTreeMap<String, usize> = BTreeMap::new();
        for f in &r.flags {
            if let Some(x) = f.fallback {
                *fallbacks.entry(x.to_string()).or_default() += 1;
            }
        }
        let floored = r.flags.iter().filter(|f| f.eigen_floored).count();
        let unconverged = r.flags.iter().filter(|f| !f.converged).count();
        let fb: Vec<String> = fallbacks.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(
            out,
            "# flags {tag} {}: budget_mode={} fallbacks=[{}] eigen_floored={floored} not_converged={unconverged}",
            r.strategy_id,
            r.budget_mode,
            fb.join(" ")
        )
        .unwrap();
    }
    out.push_str(&cfg.to_toml());
    out
}
