//! Price loading, calendar alignment and simple-return construction.
//!
//! Input files are delimited text with a header row: one date column and
//! one close-price column per asset. Empty cells (or `NA`, `null`, `-`)
//! mark a missing observation; the date then drops out when calendars are
//! intersected.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: cannot parse date {value:?} with format {format:?}")]
    BadDate {
        row: usize,
        value: String,
        format: String,
    },
    #[error("row {row}, asset {asset}: cannot parse price {value:?}")]
    BadPrice {
        row: usize,
        asset: String,
        value: String,
    },
    #[error("row {row}, asset {asset}: price {value} is not positive")]
    NonPositivePrice { row: usize, asset: String, value: f64 },
    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: NaiveDate },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("series {asset}: {reason}")]
    InvalidSeries { asset: String, reason: String },
    #[error("calendar alignment needs at least 2 series, got {0}")]
    TooFewSeries(usize),
    #[error("the series share no common date")]
    EmptyIntersection,
    #[error("series are not aligned: {0}")]
    Unaligned(String),
    #[error("need at least 2 aligned prices, got {0}")]
    TooShort(usize),
    #[error("unknown asset {0:?}")]
    UnknownAsset(String),
    #[error("no return rows between {start} and {end}")]
    EmptySlice { start: NaiveDate, end: NaiveDate },
    #[error("return matrix: {0}")]
    InvalidMatrix(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Dated closing prices of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    asset_id: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    /// Builds a series; dates must be strictly increasing and prices positive.
    pub fn new(asset_id: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let asset_id = asset_id.into();
        for w in observations.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DataError::InvalidSeries {
                    asset: asset_id,
                    reason: format!("dates not strictly increasing at {}", w[1].0),
                });
            }
        }
        if let Some(&(date, price)) = observations.iter().find(|(_, p)| !(*p > 0.0 && p.is_finite())) {
            return Err(DataError::InvalidSeries {
                asset: asset_id,
                reason: format!("price {price} on {date} is not positive"),
            });
        }
        Ok(Self {
            asset_id,
            observations,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.observations.iter().map(|(d, _)| *d)
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|(_, p)| *p)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Column mapping for [`load_prices`].
#[derive(Debug, Clone, PartialEq)]
pub struct FormatSpec {
    pub delimiter: u8,
    pub date_column: String,
    /// `chrono` format string for the date column.
    pub date_format: String,
    /// `(column header, asset id)` pairs. Empty means every non-date column,
    /// using the header as the id.
    pub asset_columns: Vec<(String, String)>,
}

impl Default for FormatSpec {
    fn default() -> Self {
        Self {
            delimiter: b',',
            date_column: "date".to_string(),
            date_format: "%Y-%m-%d".to_string(),
            asset_columns: Vec::new(),
        }
    }
}

/// Series read from a file plus non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPrices {
    pub series: Vec<PriceSeries>,
    pub warnings: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "na" | "null" | "NULL" | "-" | "NaN" | "nan")
}

/// Reads one price series per mapped column. Row numbers in errors and
/// warnings are 1-based and count the header as row 1.
pub fn load_prices(path: impl AsRef<Path>, spec: &FormatSpec) -> Result<LoadedPrices> {
    let path = path.as_ref();
    let io_err = |e: &dyn std::fmt::Display| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(|e| io_err(&e))?;
    parse_prices(file, spec).map_err(|e| match e {
        DataError::Io { message, .. } => io_err(&message),
        other => other,
    })
}

/// Same as [`load_prices`] but over any reader.
pub fn parse_prices(reader: impl std::io::Read, spec: &FormatSpec) -> Result<LoadedPrices> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::MalformedHeader(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let date_idx = find(&spec.date_column).ok_or_else(|| {
        DataError::MalformedHeader(format!("date column {:?} not found", spec.date_column))
    })?;

    let mut columns: Vec<(usize, String)> = Vec::new();
    if spec.asset_columns.is_empty() {
        for (i, h) in headers.iter().enumerate() {
            if i != date_idx {
                if h.is_empty() {
                    return Err(DataError::MalformedHeader(format!("column {} has an empty name", i + 1)));
                }
                columns.push((i, h.to_string()));
            }
        }
    } else {
        for (col, id) in &spec.asset_columns {
            let i = find(col).ok_or_else(|| DataError::MalformedHeader(format!("asset column {col:?} not found")))?;
            columns.push((i, id.clone()));
        }
    }
    if columns.is_empty() {
        return Err(DataError::MalformedHeader("no asset columns".into()));
    }
    let mut seen = BTreeSet::new();
    for (_, id) in &columns {
        if !seen.insert(id.as_str()) {
            return Err(DataError::MalformedHeader(format!("asset {id:?} mapped twice")));
        }
    }

    let mut warnings = Vec::new();
    // (date, row, prices) with None marking a missing cell
    let mut rows: Vec<(NaiveDate, usize, Vec<Option<f64>>)> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| DataError::Io {
            path: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let raw_date = &record[date_idx];
        let date = NaiveDate::parse_from_str(raw_date, &spec.date_format).map_err(|_| DataError::BadDate {
            row,
            value: raw_date.to_string(),
            format: spec.date_format.clone(),
        })?;
        let mut prices = Vec::with_capacity(columns.len());
        for (i, id) in &columns {
            let cell = &record[*i];
            if is_missing(cell) {
                prices.push(None);
                continue;
            }
            let value: f64 = cell.replace(',', "").parse().map_err(|_| DataError::BadPrice {
                row,
                asset: id.clone(),
                value: cell.to_string(),
            })?;
            if !(value > 0.0 && value.is_finite()) {
                return Err(DataError::NonPositivePrice {
                    row,
                    asset: id.clone(),
                    value,
                });
            }
            prices.push(Some(value));
        }
        rows.push((date, row, prices));
    }

    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        let msg = "dates are not in ascending order; rows re-sorted".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        rows.sort_by_key(|(d, row, _)| (*d, *row));
    }
    for w in rows.windows(2) {
        if w[1].0 == w[0].0 {
            return Err(DataError::DuplicateDate {
                row: w[1].1,
                date: w[1].0,
            });
        }
    }

    let mut series = Vec::with_capacity(columns.len());
    for (c, (_, id)) in columns.iter().enumerate() {
        let obs: Vec<(NaiveDate, f64)> = rows.iter().filter_map(|(d, _, p)| p[c].map(|v| (*d, v))).collect();
        let missing = rows.len() - obs.len();
        if missing > 0 {
            let msg = format!("asset {id}: {missing} missing observation(s)");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        series.push(PriceSeries::new(id.clone(), obs)?);
    }
    Ok(LoadedPrices { series, warnings })
}

/// Restricts every series to the dates present in all of them.
pub fn align_calendars(series: &[PriceSeries]) -> Result<Vec<PriceSeries>> {
    if series.len() < 2 {
        return Err(DataError::TooFewSeries(series.len()));
    }
    let mut common: BTreeSet<NaiveDate> = series[0].dates().collect();
    for s in &series[1..] {
        let dates: BTreeSet<NaiveDate> = s.dates().collect();
        common = common.intersection(&dates).copied().collect();
    }
    if common.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    Ok(series
        .iter()
        .map(|s| PriceSeries {
            asset_id: s.asset_id.clone(),
            observations: s.observations.iter().filter(|(d, _)| common.contains(d)).copied().collect(),
        })
        .collect())
}

/// T×N simple returns. Row `t` holds the return from `dates[t-1]`'s price
/// to `dates[t]`'s price; `dates` lists only the end date of each return.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: Vec<Vec<f64>>,
    shortable_index: Option<usize>,
}

impl ReturnMatrix {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        returns: Vec<Vec<f64>>,
        shortable_index: Option<usize>,
    ) -> Result<Self> {
        if dates.len() != returns.len() {
            return Err(DataError::InvalidMatrix(format!(
                "{} dates but {} rows",
                dates.len(),
                returns.len()
            )));
        }
        if let Some(row) = returns.iter().position(|r| r.len() != assets.len()) {
            return Err(DataError::InvalidMatrix(format!(
                "row {row} has {} columns, expected {}",
                returns[row].len(),
                assets.len()
            )));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::InvalidMatrix("dates not strictly increasing".into()));
        }
        if returns.iter().flatten().any(|r| !(r.is_finite() && *r > -1.0)) {
            return Err(DataError::InvalidMatrix("every return must be finite and > -1".into()));
        }
        if let Some(s) = shortable_index {
            if s >= assets.len() {
                return Err(DataError::InvalidMatrix(format!("shortable index {s} out of range")));
            }
        }
        Ok(Self {
            dates,
            assets,
            returns,
            shortable_index,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.returns.iter().map(|r| r[i]).collect()
    }

    pub fn shortable_index(&self) -> Option<usize> {
        self.shortable_index
    }

    /// Number of return rows (T).
    pub fn n_periods(&self) -> usize {
        self.returns.len()
    }

    /// Number of assets (N).
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == id)
    }

    /// Rows whose date lies in `[start, end]`, asset order preserved.
    pub fn slice_window(&self, start: NaiveDate, end: NaiveDate) -> Result<ReturnMatrix> {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        if start > end || lo >= hi {
            return Err(DataError::EmptySlice { start, end });
        }
        Ok(ReturnMatrix {
            dates: self.dates[lo..hi].to_vec(),
            assets: self.assets.clone(),
            returns: self.returns[lo..hi].to_vec(),
            shortable_index: self.shortable_index,
        })
    }

    /// The first `len` rows.
    pub fn truncate(&self, len: usize) -> ReturnMatrix {
        let len = len.min(self.returns.len());
        ReturnMatrix {
            dates: self.dates[..len].to_vec(),
            assets: self.assets.clone(),
            returns: self.returns[..len].to_vec(),
            shortable_index: self.shortable_index,
        }
    }

    /// Drops one asset column. The shortable marker follows its asset and
    /// disappears if that asset is the one removed.
    pub fn without_asset(&self, index: usize) -> ReturnMatrix {
        let keep = |i: usize| i != index;
        ReturnMatrix {
            dates: self.dates.clone(),
            assets: self.assets.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, a)| a.clone()).collect(),
            returns: self
                .returns
                .iter()
                .map(|r| r.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, v)| *v).collect())
                .collect(),
            shortable_index: match self.shortable_index {
                Some(s) if s == index => None,
                Some(s) if s > index => Some(s - 1),
                other => other,
            },
        }
    }
}

/// Simple returns `P_t / P_{t-1} - 1` from aligned price series.
pub fn compute_returns(series: &[PriceSeries], shortable_id: Option<&str>) -> Result<ReturnMatrix> {
    let first = series.first().ok_or(DataError::TooShort(0))?;
    for s in &series[1..] {
        if s.len() != first.len() || s.dates().zip(first.dates()).any(|(a, b)| a != b) {
            return Err(DataError::Unaligned(format!(
                "{} and {} have different calendars",
                first.asset_id, s.asset_id
            )));
        }
    }
    if first.len() < 2 {
        return Err(DataError::TooShort(first.len()));
    }
    let shortable_index = match shortable_id {
        Some(id) => Some(
            series
                .iter()
                .position(|s| s.asset_id == id)
                .ok_or_else(|| DataError::UnknownAsset(id.to_string()))?,
        ),
        None => None,
    };
    let dates: Vec<NaiveDate> = first.dates().skip(1).collect();
    let returns = (1..first.len())
        .map(|t| {
            series
                .iter()
                .map(|s| s.observations[t].1 / s.observations[t - 1].1 - 1.0)
                .collect()
        })
        .collect();
    ReturnMatrix::new(
        dates,
        series.iter().map(|s| s.asset_id.clone()).collect(),
        returns,
        shortable_index,
    )
}
