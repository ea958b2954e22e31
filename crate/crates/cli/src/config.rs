//! Run configuration.
//!
//! The document is TOML with flat keys; per-strategy budget overrides use
//! dotted keys (`budget_mode.GMV-AM = "inequality"`). Precedence, lowest
//! first: built-in defaults, the config file, command-line flags. Every
//! unknown key is an error, and all problems are reported together.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use rollfolio_core::analytics::{DEFAULT_BINS, DEFAULT_GRID_POINTS};
use rollfolio_core::metrics::{MetricSettings, TurnoverMode};
use rollfolio_core::solver::BudgetMode;
use rollfolio_core::strategies::{StrategyConfig, StrategyId};
use toml::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniverseMode {
    WithShort,
    WithoutShort,
    Both,
}

impl fmt::Display for UniverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UniverseMode::WithShort => "with_short",
            UniverseMode::WithoutShort => "without_short",
            UniverseMode::Both => "both",
        })
    }
}

impl FromStr for UniverseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with" | "with_short" => Ok(UniverseMode::WithShort),
            "without" | "without_short" => Ok(UniverseMode::WithoutShort),
            "both" => Ok(UniverseMode::Both),
            other => Err(format!("expected with|without|both, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub date_column: String,
    pub date_format: String,
    pub delimiter: char,
    /// Asset columns to load; empty means every non-date column.
    pub assets: Vec<String>,
    pub shortable_asset: Option<String>,
    pub strategies: Vec<StrategyId>,
    pub strategy: StrategyConfig,
    pub turnover_mode: TurnoverMode,
    pub count_initial_turnover: bool,
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    pub universe_mode: UniverseMode,
    pub output_dir: PathBuf,
    pub density_bins: usize,
    pub density_grid_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            date_column: "date".into(),
            date_format: "%Y-%m-%d".into(),
            delimiter: ',',
            assets: Vec::new(),
            shortable_asset: None,
            strategies: StrategyId::ALL.to_vec(),
            strategy: StrategyConfig::default(),
            turnover_mode: TurnoverMode::Target,
            count_initial_turnover: false,
            date_from: None,
            date_to: None,
            universe_mode: UniverseMode::WithShort,
            output_dir: PathBuf::from("out"),
            density_bins: DEFAULT_BINS,
            density_grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl RunConfig {
    pub fn metric_settings(&self) -> MetricSettings {
        MetricSettings {
            risk_free_rate: self.strategy.risk_free_rate,
            gamma: self.strategy.gamma,
            turnover_mode: self.turnover_mode,
            count_initial_turnover: self.count_initial_turnover,
            asr_form: self.strategy.asr_form,
            kurtosis: self.strategy.kurtosis,
        }
    }

    /// Semantic checks that do not depend on the data.
    pub fn check(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        for (field, reason) in self.strategy.violations() {
            issues.push(ConfigIssue::new(field, reason));
        }
        if self.strategies.is_empty() {
            issues.push(ConfigIssue::new("strategies", "at least one strategy is required"));
        }
        if let (Some(a), Some(b)) = (self.date_from, self.date_to) {
            if a > b {
                issues.push(ConfigIssue::new("date_from", format!("{a} is after date_to {b}")));
            }
        }
        if self.universe_mode != UniverseMode::WithShort && self.shortable_asset.is_none() {
            issues.push(ConfigIssue::new(
                "universe_mode",
                format!("{} needs shortable_asset to be set", self.universe_mode),
            ));
        }
        if self.density_bins == 0 {
            issues.push(ConfigIssue::new("density_bins", "must be >= 1"));
        }
        if self.density_grid_points < 2 {
            issues.push(ConfigIssue::new("density_grid_points", "must be >= 2"));
        }
        if !self.delimiter.is_ascii() {
            issues.push(ConfigIssue::new("delimiter", "must be a single ASCII character"));
        }
        issues
    }

    /// The resolved configuration as a TOML document that
    /// [`validate_config`] accepts and maps back to `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        let q = |s: &str| Value::String(s.to_string()).to_string();
        let f = |x: f64| Value::Float(x).to_string();
        if let Some(p) = &self.data_path {
            line("data_path", q(&p.to_string_lossy()));
        }
        line("date_column", q(&self.date_column));
        line("date_format", q(&self.date_format));
        line("delimiter", q(&self.delimiter.to_string()));
        line(
            "assets",
            Value::Array(self.assets.iter().map(|a| Value::String(a.clone())).collect()).to_string(),
        );
        if let Some(s) = &self.shortable_asset {
            line("shortable_asset", q(s));
        }
        line(
            "strategies",
            Value::Array(self.strategies.iter().map(|s| Value::String(s.to_string())).collect()).to_string(),
        );
        line("risk_free_rate", f(self.strategy.risk_free_rate));
        line("target_return", f(self.strategy.target_return));
        line("gamma", f(self.strategy.gamma));
        line("window_size", self.strategy.window_size.to_string());
        line("initial_wealth", f(self.strategy.initial_wealth));
        line("asr_form", q(&self.strategy.asr_form.to_string()));
        line("kurtosis_convention", q(&self.strategy.kurtosis.to_string()));
        line("moment_denominator", q(&self.strategy.moment_denominator.to_string()));
        line("solver_starts", self.strategy.solver_starts.to_string());
        line("seed", self.strategy.seed.to_string());
        line("turnover_mode", q(&self.turnover_mode.to_string()));
        line("count_initial_turnover", self.count_initial_turnover.to_string());
        if let Some(d) = self.date_from {
            line("date_from", q(&d.to_string()));
        }
        if let Some(d) = self.date_to {
            line("date_to", q(&d.to_string()));
        }
        line("universe_mode", q(&self.universe_mode.to_string()));
        line("output_dir", q(&self.output_dir.to_string_lossy()));
        line("density_bins", self.density_bins.to_string());
        line("density_grid_points", self.density_grid_points.to_string());
        for id in StrategyId::ALL {
            line(&format!("budget_mode.{id}"), q(&self.strategy.budget_mode(id).to_string()));
        }
        out
    }
}

/// One problem in a config document, tagged with its key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Values supplied on the command line; `None` leaves the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data_path: Option<PathBuf>,
    pub strategies: Option<String>,
    pub date_from: Option<String>,
    pub date_to: Option<String>,
    pub universe_mode: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

struct Reader {
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn wrong(&mut self, key: &str, want: &str, v: &Value) {
        self.issues
            .push(ConfigIssue::new(key, format!("expected {want}, got {}", type_name(v))));
    }

    fn string(&mut self, key: &str, v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.wrong(key, "string", v);
                None
            }
        }
    }

    fn float(&mut self, key: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.wrong(key, "number", v);
                None
            }
        }
    }

    fn count(&mut self, key: &str, v: &Value) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(i) => {
                self.issues.push(ConfigIssue::new(key, format!("must be >= 0, got {i}")));
                None
            }
            _ => {
                self.wrong(key, "integer", v);
                None
            }
        }
    }

    fn boolean(&mut self, key: &str, v: &Value) -> Option<bool> {
        match v {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.wrong(key, "boolean", v);
                None
            }
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str, v: &Value) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let s = self.string(key, v)?;
        self.parse_str(key, &s)
    }

    fn parse_str<T: FromStr>(&mut self, key: &str, s: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        match s.parse() {
            Ok(t) => Some(t),
            Err(e) => {
                self.issues.push(ConfigIssue::new(key, e.to_string()));
                None
            }
        }
    }

    fn date(&mut self, key: &str, v: &Value) -> Option<NaiveDate> {
        let text = match v {
            Value::String(s) => s.clone(),
            Value::Datetime(d) => d.to_string(),
            _ => {
                self.wrong(key, "date", v);
                return None;
            }
        };
        self.date_str(key, &text)
    }

    fn date_str(&mut self, key: &str, text: &str) -> Option<NaiveDate> {
        match NaiveDate::parse_from_str(text, "%Y-%m-%d") {
            Ok(d) => Some(d),
            Err(_) => {
                self.issues
                    .push(ConfigIssue::new(key, format!("expected a YYYY-MM-DD date, got {text:?}")));
                None
            }
        }
    }

    fn strings(&mut self, key: &str, v: &Value) -> Option<Vec<String>> {
        match v {
            Value::Array(items) => {
                let mut out = Vec::new();
                for (k, item) in items.iter().enumerate() {
                    out.push(self.string(&format!("{key}[{k}]"), item)?);
                }
                Some(out)
            }
            _ => {
                self.wrong(key, "array of strings", v);
                None
            }
        }
    }

    fn strategies(&mut self, key: &str, names: &[String]) -> Option<Vec<StrategyId>> {
        let mut ids = Vec::new();
        for name in names {
            let id: StrategyId = self.parse_str(key, name.trim())?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        Some(ids)
    }
}

/// Parses a config document and applies command-line overrides. Returns
/// every problem found, each naming its key.
pub fn validate_config(doc: &str, overrides: &Overrides) -> Result<RunConfig, Vec<ConfigIssue>> {
    let table: toml::Table = doc
        .parse()
        .map_err(|e: toml::de::Error| vec![ConfigIssue::new("<document>", e.message().to_string())])?;
    let mut cfg = RunConfig::default();
    let mut r = Reader { issues: Vec::new() };

    for (key, v) in &table {
        let k = key.as_str();
        match k {
            "data_path" => cfg.data_path = r.string(k, v).map(PathBuf::from).or(cfg.data_path),
            "date_column" => cfg.date_column = r.string(k, v).unwrap_or(cfg.date_column),
            "date_format" => cfg.date_format = r.string(k, v).unwrap_or(cfg.date_format),
            "delimiter" => {
                if let Some(s) = r.string(k, v) {
                    let mut chars = s.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => cfg.delimiter = c,
                        _ => r.issues.push(ConfigIssue::new(k, format!("expected one character, got {s:?}"))),
                    }
                }
            }
            "assets" => cfg.assets = r.strings(k, v).unwrap_or_default(),
            "shortable_asset" => cfg.shortable_asset = r.string(k, v).filter(|s| !s.is_empty()),
            "strategies" => {
                if let Some(names) = r.strings(k, v) {
                    if let Some(ids) = r.strategies(k, &names) {
                        cfg.strategies = ids;
                    }
                }
            }
            "risk_free_rate" => cfg.strategy.risk_free_rate = r.float(k, v).unwrap_or(cfg.strategy.risk_free_rate),
            "target_return" => cfg.strategy.target_return = r.float(k, v).unwrap_or(cfg.strategy.target_return),
            "gamma" => cfg.strategy.gamma = r.float(k, v).unwrap_or(cfg.strategy.gamma),
            "window_size" => {
                if let Some(m) = r.count(k, v) {
                    cfg.strategy.window_size = m as usize;
                }
            }
            "initial_wealth" => cfg.strategy.initial_wealth = r.float(k, v).unwrap_or(cfg.strategy.initial_wealth),
            "asr_form" => cfg.strategy.asr_form = r.parsed(k, v).unwrap_or(cfg.strategy.asr_form),
            "kurtosis_convention" => cfg.strategy.kurtosis = r.parsed(k, v).unwrap_or(cfg.strategy.kurtosis),
            "moment_denominator" => {
                cfg.strategy.moment_denominator = r.parsed(k, v).unwrap_or(cfg.strategy.moment_denominator)
            }
            "solver_starts" => {
                if let Some(n) = r.count(k, v) {
                    cfg.strategy.solver_starts = n as usize;
                }
            }
            "seed" => cfg.strategy.seed = r.count(k, v).unwrap_or(cfg.strategy.seed),
            "turnover_mode" => cfg.turnover_mode = r.parsed(k, v).unwrap_or(cfg.turnover_mode),
            "count_initial_turnover" => cfg.count_initial_turnover = r.boolean(k, v).unwrap_or(false),
            "date_from" => cfg.date_from = r.date(k, v),
            "date_to" => cfg.date_to = r.date(k, v),
            "universe_mode" => cfg.universe_mode = r.parsed(k, v).unwrap_or(cfg.universe_mode),
            "output_dir" => cfg.output_dir = r.string(k, v).map(PathBuf::from).unwrap_or(cfg.output_dir),
            "density_bins" => {
                if let Some(n) = r.count(k, v) {
                    cfg.density_bins = n as usize;
                }
            }
            "density_grid_points" => {
                if let Some(n) = r.count(k, v) {
                    cfg.density_grid_points = n as usize;
                }
            }
            "budget_mode" => match v {
                Value::Table(modes) => {
                    let mut parsed = BTreeMap::new();
                    for (name, mode) in modes {
                        let path = format!("budget_mode.{name}");
                        let id = match name.parse::<StrategyId>() {
                            Ok(id) => id,
                            Err(_) => {
                                r.issues.push(ConfigIssue::new(path, "unknown key (not a strategy id)"));
                                continue;
                            }
                        };
                        if let Some(m) = r.parsed::<BudgetMode>(&path, mode) {
                            parsed.insert(id, m);
                        }
                    }
                    cfg.strategy.budget_modes = parsed;
                }
                _ => r.wrong(k, "table of strategy = mode", v),
            },
            _ => r.issues.push(ConfigIssue::new(k, "unknown key")),
        }
    }

    if let Some(p) = &overrides.data_path {
        cfg.data_path = Some(p.clone());
    }
    if let Some(list) = &overrides.strategies {
        let names: Vec<String> = list.split(',').map(str::to_string).filter(|s| !s.trim().is_empty()).collect();
        if let Some(ids) = r.strategies("--strategies", &names) {
            cfg.strategies = ids;
        }
    }
    if let Some(d) = &overrides.date_from {
        cfg.date_from = r.date_str("--from", d);
    }
    if let Some(d) = &overrides.date_to {
        cfg.date_to = r.date_str("--to", d);
    }
    if let Some(u) = &overrides.universe_mode {
        if let Some(mode) = r.parse_str("--universe", u) {
            cfg.universe_mode = mode;
        }
    }
    if let Some(o) = &overrides.output_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = overrides.seed {
        cfg.strategy.seed = s;
    }

    let mut issues = r.issues;
    issues.extend(cfg.check());
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}
