//! Acceptance suite: every criterion prints one PASS/FAIL line, and the
//! process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollfolio::config::{validate_config, Overrides, RunConfig, UniverseMode};
use rollfolio::pipeline::{run_pipeline, write_outputs, RunSummary};
use rollfolio_core::analytics::UniverseTag;
use rollfolio_core::backtest::run;
use rollfolio_core::estimators::{
    arithmetic_mean, coskewness_matrix, cokurtosis_matrix, estimate, geometric_mean, EstimateOptions, EstimatorKind,
    MomentDenominator, MomentEstimates,
};
use rollfolio_core::market_data::ReturnMatrix;
use rollfolio_core::metrics::{
    certainty_equivalent_from_moments, realized_moments, terminal_return, turnover, AsrForm, KurtosisConvention,
    TurnoverMode,
};
use rollfolio_core::solver::{BudgetMode, ConstraintSet, NonlinearOptions, Objective};
use rollfolio_core::strategies::{
    global_min_variance, max_adjusted_sharpe, max_crra, max_sharpe, mpt_target, AdjustedSharpeObjective,
    CrraObjective, Decision, SharpeObjective, StrategyConfig, StrategyId,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_window(rng: &mut ChaCha8Rng, m: usize, n: usize, drift: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..n).map(|_| drift + rng.gen_range(-0.05..0.05)).collect())
        .collect()
}

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    (0..n).map(|k| start + chrono::Duration::days(k as i64)).collect()
}

fn matrix(rows: Vec<Vec<f64>>, shortable: Option<usize>) -> ReturnMatrix {
    let n = rows[0].len();
    ReturnMatrix::new(dates(rows.len()), (0..n).map(|i| format!("A{i}")).collect(), rows, shortable).unwrap()
}

/// Direct sample skewness and raw kurtosis of a series, with the given
/// divisor for the variance and `1/n` for the third and fourth moments.
fn direct_moments(p: &[f64], variance_divisor: f64) -> (f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / variance_divisor;
    let m3 = p.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = p.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m3 / var.powf(1.5), m4 / (var * var))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-4)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(4..=20);
        let window = random_window(&mut rng, m, n, 0.0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = window.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        for denom in [MomentDenominator::Uniform, MomentDenominator::Sample] {
            let est = estimate(&window, EstimateOptions::new(EstimatorKind::Am).with_tensors(true).denominator(denom)).unwrap();
            let skew = est.portfolio_skewness(&x).unwrap();
            let kurt = est.portfolio_raw_kurtosis(&x).unwrap();
            let (s_ref, k_ref) = match denom {
                // metrics::realized_moments is the independent 1/n implementation
                MomentDenominator::Uniform => realized_moments(&p, KurtosisConvention::Raw).unwrap(),
                MomentDenominator::Sample => direct_moments(&p, (m - 1) as f64),
            };
            for (a, b) in [(skew, s_ref), (kurt, k_ref)] {
                worst = worst.max((a - b).abs() / b.abs().max(1e-4));
                check(rel_close(a, b, 1e-10), || format!("case {case} ({denom}): tensor {a} vs direct {b}"))?;
            }
        }
    }
    let dt = t0.elapsed();
    check(dt < Duration::from_secs(5), || format!("took {dt:?}"))?;
    Ok(format!("200 pairs x 2 normalizations, worst rel err {worst:.1e}, {dt:.2?}"))
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, m) = (3usize, 7usize);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let window = random_window(&mut rng, m, n, 0.001);
        let mu = arithmetic_mean(&window).unwrap();
        let rm3 = coskewness_matrix(&window, &mu).unwrap();
        let rm4 = cokurtosis_matrix(&window, &mu).unwrap();
        let c = |t: usize, i: usize| window[t][i] - mu[i];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s3 = 0.0;
                    for t in 0..m {
                        s3 += c(t, i) * c(t, j) * c(t, k);
                    }
                    let d3 = (rm3[(i, j * n + k)] - s3 / m as f64).abs();
                    worst = worst.max(d3);
                    check(d3 <= 1e-12, || format!("RM3[{i},{j}{k}] off by {d3}"))?;
                    for l in 0..n {
                        let mut s4 = 0.0;
                        for t in 0..m {
                            s4 += c(t, i) * c(t, j) * c(t, k) * c(t, l);
                        }
                        let d4 = (rm4[(i, (j * n + k) * n + l)] - s4 / m as f64).abs();
                        worst = worst.max(d4);
                        check(d4 <= 1e-12, || format!("RM4[{i},{j}{k}{l}] off by {d4}"))?;
                    }
                }
            }
        }
    }
    let dt = t0.elapsed();
    check(dt < Duration::from_secs(1), || format!("took {dt:?}"))?;
    Ok(format!("50 windows, worst abs err {worst:.1e}, {dt:.2?}"))
}

fn moments(mu: &[f64], sigma: DMatrix<f64>) -> MomentEstimates {
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

fn weights(d: &Decision) -> Result<Vec<f64>, String> {
    d.weights().map(<[f64]>::to_vec).ok_or_else(|| format!("unexpected fallback {d:?}"))
}

fn criterion_3() -> Outcome {
    let eq = |n| ConstraintSet::long_only(n).with_budget_mode(BudgetMode::Equality);
    let diag = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 4.0]));
    let x = weights(&global_min_variance(&moments(&[0.0, 0.0], diag), &eq(2)).map_err(|e| e.to_string())?)?;
    check((x[0] - 0.8).abs() <= 1e-6 && (x[1] - 0.2).abs() <= 1e-6, || format!("diag(1,4) gave {x:?}"))?;
    for n in 1..=8 {
        for s2 in [1e-6, 1e-4, 1.0, 25.0] {
            let x = weights(&global_min_variance(&moments(&vec![0.0; n], DMatrix::identity(n, n) * s2), &eq(n)).map_err(|e| e.to_string())?)?;
            check(x.iter().all(|v| (v - 1.0 / n as f64).abs() <= 1e-6), || format!("N={n}, s2={s2}: {x:?}"))?;
        }
    }
    Ok("diag(1,4) -> (0.8, 0.2); s2*I -> 1/N for N = 1..8".into())
}

/// Uniform feasible samples for `c`; equality budgets are sampled on the
/// budget hyperplane.
fn feasible_samples(rng: &mut ChaCha8Rng, c: &ConstraintSet, count: usize) -> Vec<Vec<f64>> {
    let n = c.n_assets();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x: Vec<f64> = (0..n).map(|i| rng.gen_range(c.lower()[i]..=c.upper()[i])).collect();
        if c.budget_mode() == BudgetMode::Equality {
            let long: Vec<usize> = (0..n).filter(|&i| Some(i) != c.shortable_index()).collect();
            let s: f64 = long.iter().map(|&i| x[i]).sum();
            if s <= 0.0 {
                continue;
            }
            for &i in &long {
                x[i] *= c.long_budget_cap() / s;
            }
        }
        if c.is_feasible(&x, 1e-12) {
            out.push(x);
        }
    }
    out
}

fn variance(sigma: &DMatrix<f64>, x: &[f64]) -> f64 {
    let x = DVector::from_row_slice(x);
    x.dot(&(sigma * &x))
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let opts = NonlinearOptions::default().with_seed(4);
    let mut worst_gap = f64::NEG_INFINITY;
    for fixture in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + fixture);
        let window = random_window(&mut rng, 40, 3, 0.002);
        let est = estimate(&window, EstimateOptions::new(EstimatorKind::Am).with_tensors(true)).unwrap();
        let c = ConstraintSet::standard(3, Some(2));
        let cfg = StrategyConfig {
            target_return: 0.5 * est.mu.max(),
            ..Default::default()
        };
        let samples = feasible_samples(&mut rng, &c, 100_000);
        let mut record = |name: &str, solver: f64, best_sample: f64| -> Result<(), String> {
            let gap = best_sample - solver;
            worst_gap = worst_gap.max(gap);
            check(gap <= 1e-6, || format!("fixture {fixture} {name}: sample {best_sample} beats solver {solver}"))
        };

        // MPT target: minimize variance subject to the return floor
        let x = weights(&mpt_target(&est, &cfg, &c).map_err(|e| e.to_string())?)?;
        let mu: Vec<f64> = est.mu.iter().copied().collect();
        let best = samples
            .iter()
            .filter(|s| s.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() >= cfg.target_return)
            .map(|s| -variance(&est.sigma, s))
            .fold(f64::NEG_INFINITY, f64::max);
        record("MPT", -variance(&est.sigma, &x), best)?;

        let ceq = c.clone().with_budget_mode(BudgetMode::Equality);
        let x = weights(&global_min_variance(&est, &ceq).map_err(|e| e.to_string())?)?;
        let best = feasible_samples(&mut rng, &ceq, 100_000)
            .iter()
            .map(|s| -variance(&est.sigma, s))
            .fold(f64::NEG_INFINITY, f64::max);
        record("GMV", -variance(&est.sigma, &x), best)?;

        let sharpe = SharpeObjective::new(&est.mu, &est.sigma, 0.0).map_err(|e| e.to_string())?;
        let x = weights(&max_sharpe(&est, &cfg, &c, &opts).map_err(|e| e.to_string())?)?;
        let best = samples.iter().map(|s| sharpe.value(s)).fold(f64::NEG_INFINITY, f64::max);
        record("SR", sharpe.value(&x), best)?;

        let crra = CrraObjective::new(&window, cfg.gamma);
        let x = weights(&max_crra(&window, &cfg, &c, &opts).map_err(|e| e.to_string())?)?;
        let best = samples.iter().map(|s| crra.utility(s)).fold(f64::NEG_INFINITY, f64::max);
        record("CRRA", crra.utility(&x), best)?;

        for form in [AsrForm::Bracket, AsrForm::PezierWhite] {
            let cfg = StrategyConfig {
                asr_form: form,
                ..cfg.clone()
            };
            let obj = AdjustedSharpeObjective::new(&est, 0.0, form, KurtosisConvention::Excess).map_err(|e| e.to_string())?;
            let x = weights(&max_adjusted_sharpe(&est, &cfg, &c, &opts).map_err(|e| e.to_string())?)?;
            let best = samples.iter().map(|s| obj.value(s)).fold(f64::NEG_INFINITY, f64::max);
            record(&format!("ASR-{form}"), obj.value(&x), best)?;
        }
    }
    let dt = t0.elapsed();
    check(dt < Duration::from_secs(60), || format!("took {dt:?}"))?;
    Ok(format!("6 objectives x 5 fixtures x 1e5 samples, max sample-minus-solver {worst_gap:.1e}, {dt:.2?}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let window = random_window(&mut rng, 60, 4, 0.001);
    let est = estimate(&window, EstimateOptions::new(EstimatorKind::Gm).with_tensors(true)).unwrap();
    let c = ConstraintSet::standard(4, Some(3));
    let sharpe = SharpeObjective::new(&est.mu, &est.sigma, 0.0).unwrap();
    let asr_bracket = AdjustedSharpeObjective::new(&est, 0.0, AsrForm::Bracket, KurtosisConvention::Excess).unwrap();
    let asr_pw = AdjustedSharpeObjective::new(&est, 0.0, AsrForm::PezierWhite, KurtosisConvention::Excess).unwrap();
    let crra = CrraObjective::new(&window, 5.0);
    let objectives: [(&str, &dyn Objective); 4] =
        [("Sharpe", &sharpe), ("ASR-bracket", &asr_bracket), ("ASR-pezier_white", &asr_pw), ("CRRA", &crra)];
    let points: Vec<Vec<f64>> = feasible_samples(&mut rng, &c, 400)
        .into_iter()
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>() > 0.01)
        .take(100)
        .collect();
    check(points.len() == 100, || "not enough sample points".into())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (name, obj) in objectives {
        for x in &points {
            let mut g = vec![0.0; 4];
            obj.gradient(x, &mut g);
            let fd: Vec<f64> = (0..4)
                .map(|i| {
                    let mut up = x.clone();
                    let mut dn = x.clone();
                    up[i] += h;
                    dn[i] -= h;
                    (obj.value(&up) - obj.value(&dn)) / (2.0 * h)
                })
                .collect();
            let scale = g.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |a, (p, q)| a.max((p - q).abs())) / scale.max(1e-12);
            worst = worst.max(err);
            check(err <= 1e-4, || format!("{name} at {x:?}: analytic {g:?} vs fd {fd:?}"))?;
        }
    }
    Ok(format!("Sharpe, ASR (both forms), CRRA at 100 points each, worst rel err {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for w in 0..1000 {
        let m = rng.gen_range(2..=120);
        let n = rng.gen_range(1..=8);
        let window: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| if w % 2 == 0 { rng.gen_range(0.0..0.1) } else { rng.gen_range(-0.5..0.5) }).collect())
            .collect();
        let am = arithmetic_mean(&window).unwrap();
        let gm = geometric_mean(&window).unwrap();
        for i in 0..n {
            check(gm[i] <= am[i] + 1e-12, || format!("window {w} asset {i}: GM {} > AM {}", gm[i], am[i]))?;
        }
    }
    Ok("1000 windows, GM <= AM elementwise".into())
}

fn criterion_7() -> Outcome {
    let cfg = StrategyConfig {
        window_size: 90,
        ..Default::default()
    };
    let mx = matrix(vec![vec![0.001; 8]; 100], Some(7));
    let r = run(&mx, StrategyId::Ew, &cfg, &ConstraintSet::standard(8, Some(7))).map_err(|e| e.to_string())?;
    let tr = terminal_return(&r.portfolio_returns).unwrap();
    let expected = 1.001f64.powi(10);
    check(r.dates.len() == 10, || format!("{} out-of-sample dates", r.dates.len()))?;
    check((tr - expected).abs() <= 1e-12 && (r.terminal_wealth() - expected).abs() <= 1e-12, || {
        format!("terminal return {tr}, wealth {}", r.terminal_wealth())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let small = StrategyConfig {
        window_size: 10,
        ..Default::default()
    };
    for k in 0..5 {
        let n = 2 + k;
        let mx = matrix(random_window(&mut rng, 40, n, 0.0), Some(n - 1));
        let r = run(&mx, StrategyId::Ew, &small, &ConstraintSet::standard(n, Some(n - 1))).map_err(|e| e.to_string())?;
        let to = turnover::<_, Vec<f64>>(&r.weight_rows(), TurnoverMode::Target, None, false).unwrap();
        check(to == 0.0, || format!("EW turnover {to} with N = {n}"))?;
    }
    Ok(format!("EW TO = 0 on 5 fixtures; TR = {tr:.16} vs 1.001^10 = {expected:.16}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows = random_window(&mut rng, 34, 4, 0.001);
    let full = matrix(rows, Some(3));
    let c = ConstraintSet::standard(4, Some(3));
    let cfg = StrategyConfig {
        window_size: 20,
        seed: 8,
        ..Default::default()
    };
    for id in StrategyId::ALL {
        let reference = run(&full, id, &cfg, &c).map_err(|e| e.to_string())?;
        for cut in [21, 25, 29, 33] {
            let truncated = run(&full.truncate(cut), id, &cfg, &c).map_err(|e| e.to_string())?;
            let k = truncated.weights.len();
            check(reference.weights[..k] == truncated.weights[..], || format!("{id}: weights differ after truncating to {cut} rows"))?;
        }
    }
    Ok("10 strategies x 4 truncation points, weights bitwise equal".into())
}

fn criterion_9() -> Outcome {
    let ceq = certainty_equivalent_from_moments(0.01, 0.002, 5.0);
    check(ceq == 0.005, || format!("CEQ = {ceq:e}"))?;
    let tr = terminal_return(&[1.0, -0.5]).unwrap();
    check(tr == 1.0, || format!("TR = {tr}"))?;
    for sr in [0.0, 0.3, -1.2, 4.0] {
        let b = AsrForm::Bracket.score(sr, 0.0, 0.0);
        check(b == 1.0, || format!("bracket at SR = {sr} is {b}"))?;
    }
    Ok("CEQ = 0.005, TR = 1.0, bracket at zero skew = 1 (exact)".into())
}

fn data_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_prices.csv")
}

fn synthetic_config(out: PathBuf) -> RunConfig {
    let doc = "shortable_asset = \"VIX\"\nuniverse_mode = \"both\"\nseed = 11\n";
    let overrides = Overrides {
        data_path: Some(data_path()),
        output_dir: Some(out),
        ..Default::default()
    };
    validate_config(doc, &overrides).expect("valid config")
}

fn criterion_10(first: &RunSummary, dir: &std::path::Path) -> Outcome {
    let snapshot: Vec<(String, Vec<u8>)> = first
        .files
        .keys()
        .map(|name| std::fs::read(dir.join(name)).map(|b| (name.clone(), b)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = synthetic_config(dir.to_path_buf());
    let second = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    write_outputs(&second, dir).map_err(|e| e.to_string())?;
    check(first.files.len() == second.files.len(), || "different file sets".into())?;
    for (name, a) in &snapshot {
        let b = std::fs::read(dir.join(name)).map_err(|e| e.to_string())?;
        check(*a == b, || format!("{name} differs between runs"))?;
    }
    check(first.comparisons.iter().all(|t| t.rows.len() == 10), || "comparison table without 10 rows".into())?;
    Ok(format!("{} files byte-identical across two runs, incl. 10-row comparison tables", first.files.len()))
}

fn criterion_11(summary: &RunSummary) -> Outcome {
    let with = summary.result(UniverseTag::WithShort, "EW").ok_or("no with_short EW run")?;
    let without = summary.result(UniverseTag::WithoutShort, "EW").ok_or("no without_short EW run")?;
    check(with.assets.len() == 8 && without.assets.len() == 7, || {
        format!("N = {} and {}", with.assets.len(), without.assets.len())
    })?;
    check(with.weights.iter().all(|w| w.weights.iter().all(|&x| x == 1.0 / 8.0)), || "with_short EW weights are not 1/8".into())?;
    check(without.weights.iter().all(|w| w.weights.iter().all(|&x| x == 1.0 / 7.0)), || "without_short EW weights are not 1/7".into())?;
    let delta = summary.tr_delta.as_ref().ok_or("no TR delta table")?;
    let mut ids: Vec<&str> = delta.iter().map(|d| d.strategy_id.as_str()).collect();
    ids.sort_unstable();
    let mut expected: Vec<&str> = StrategyId::ALL.iter().map(|s| s.as_str()).collect();
    expected.sort_unstable();
    check(ids == expected, || format!("TR delta rows {ids:?}"))?;
    let csv = summary.files.get("tr_delta.csv").ok_or("tr_delta.csv missing")?;
    check(csv.lines().count() == 11, || "tr_delta.csv should have a header plus 10 rows".into())?;
    Ok("N = 8 / 7, EW weights exactly 1/8 and 1/7, TR delta with 10 rows".into())
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let guarded = |f: &dyn Fn() -> Outcome| -> Outcome {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        })
    };
    results.push((1, "tensor-collapse oracle", guarded(&criterion_1)));
    results.push((2, "brute-force co-moment oracle", guarded(&criterion_2)));
    results.push((3, "GMV closed form", guarded(&criterion_3)));
    results.push((4, "solver optimality sampling", guarded(&criterion_4)));
    results.push((5, "gradient checks", guarded(&criterion_5)));
    results.push((6, "GM <= AM", guarded(&criterion_6)));
    results.push((7, "EW turnover and compounding", guarded(&criterion_7)));
    results.push((8, "no look-ahead", guarded(&criterion_8)));
    results.push((9, "metric formula fixtures", guarded(&criterion_9)));

    // the first pipeline run is shared by criteria 10 and 11
    let dir = tempfile::tempdir().expect("temp dir");
    let first = catch_unwind(AssertUnwindSafe(|| -> Result<RunSummary, String> {
        let cfg = synthetic_config(dir.path().to_path_buf());
        if cfg.universe_mode != UniverseMode::Both {
            return Err("config did not resolve to universe mode both".into());
        }
        let s = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        write_outputs(&s, dir.path()).map_err(|e| e.to_string())?;
        Ok(s)
    }))
    .unwrap_or_else(|_| Err("pipeline panicked".into()));
    match &first {
        Ok(s) => {
            results.push((10, "end-to-end determinism", guarded(&|| criterion_10(s, dir.path()))));
            results.push((11, "universe-pair structure", guarded(&|| criterion_11(s))));
        }
        Err(e) => {
            results.push((10, "end-to-end determinism", Err(e.clone())));
            results.push((11, "universe-pair structure", Err(e.clone())));
        }
    }

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("acceptance {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("acceptance {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
