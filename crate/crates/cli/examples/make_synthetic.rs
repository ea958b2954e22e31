//! Writes the bundled synthetic price file.
//!
//! Six crypto assets trade every calendar day and share a common factor
//! with fat-tailed shocks; GOLD and VIX trade on weekdays only. VIX follows
//! a mean-reverting log process that jumps when the crypto factor drops. A
//! handful of cells are left blank to exercise the missing-value path.
//!
//! Usage: `cargo run -p rollfolio --example make_synthetic -- data/synthetic_prices.csv`

use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

const SEED: u64 = 20_201_231;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/synthetic_prices.csv".into());
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let t4 = StudentT::new(4.0).unwrap();

    // name, start price, factor beta, idiosyncratic scale
    let cryptos = [
        ("BTC", 7200.0, 1.0, 0.012),
        ("ETH", 130.0, 1.2, 0.018),
        ("BNB", 13.7, 1.1, 0.022),
        ("ADA", 0.033, 1.3, 0.028),
        ("XRP", 0.19, 1.15, 0.026),
    ];
    let mut crypto_px: Vec<f64> = cryptos.iter().map(|c| c.1).collect();
    let mut usdt_dev = 0.0f64;
    let mut gold = 1520.0f64;
    let mut log_vix = 14.0f64.ln();
    let long_run_vix = 19.0f64.ln();
    let mut weekly_factor = 0.0;

    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap();
    let holidays = [
        NaiveDate::from_ymd_opt(2020, 1, 20).unwrap(),
        NaiveDate::from_ymd_opt(2020, 7, 3).unwrap(),
        NaiveDate::from_ymd_opt(2020, 12, 25).unwrap(),
    ];

    let mut out = String::from("date,BTC,ETH,BNB,USDT,ADA,XRP,GOLD,VIX\n");
    let mut day = start;
    while day <= end {
        let factor = 0.0024 + 0.026 * t4.sample(&mut rng) / 2f64.sqrt();
        weekly_factor += factor;
        for (px, (_, _, beta, idio)) in crypto_px.iter_mut().zip(&cryptos) {
            let r = (beta * factor + idio * std_normal.sample(&mut rng)).max(-0.6);
            *px *= 1.0 + r;
        }
        usdt_dev = 0.7 * usdt_dev + 0.0012 * std_normal.sample(&mut rng);

        let weekday = !matches!(day.weekday(), Weekday::Sat | Weekday::Sun);
        let trading = weekday && !holidays.contains(&day);
        if trading {
            let shock = (-weekly_factor).max(0.0);
            gold *= 1.0 + 0.0002 + 0.009 * std_normal.sample(&mut rng) + 0.02 * shock;
            log_vix += 0.06 * (long_run_vix - log_vix) + 0.065 * std_normal.sample(&mut rng) + 1.5 * shock
                - 0.3 * (weekly_factor.max(0.0));
            weekly_factor = 0.0;
        }

        let cell = |v: f64, digits: usize| format!("{v:.digits$}");
        let mut row = day.format("%Y-%m-%d").to_string();
        for (k, px) in crypto_px.iter().enumerate() {
            // one blank crypto cell roughly every other month
            let blank = rng.gen_bool(1.0 / 60.0);
            let digits = if *px < 1.0 { 6 } else { 4 };
            row.push(',');
            if !blank {
                row.push_str(&cell(*px, digits));
            }
            if k == 2 {
                row.push(',');
                row.push_str(&cell(1.0 + usdt_dev, 6));
            }
        }
        if trading {
            write!(row, ",{},{}", cell(gold, 2), cell(log_vix.exp(), 2)).unwrap();
        } else {
            row.push_str(",,");
        }
        out.push_str(&row);
        out.push('\n');
        day += Duration::days(1);
    }
    std::fs::write(&path, out).expect("write synthetic prices");
    eprintln!("wrote {path}");
}
