//! Regenerates the checked-in fixtures under `fixtures/`.
//!
//! Seeds are screened with the monitor itself: the H₁ stream must alarm after
//! the jump, the H₀ stream must stay quiet, and the price panel must alarm
//! within 15 rows after the planted change and not before it.
//!
//! cargo run --release -p covwatch --example make_fixtures

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use covwatch::ingest::{prepare_returns, IngestOptions};
use covwatch::monitor::{self, MonitorOutcome};
use covwatch::sim::{rep_rng, Change, EntryDistribution, Generator, Nu4Mode, ScenarioSpec};
use covwatch::{critical_value, estimate_nu4, CalibrationSpec, MonitorConfig, StreamState, TestFunction, WeightSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

const ALPHA: f64 = 0.05;
const PANEL_TICKERS: usize = 40;
const PANEL_ROWS: usize = 301;
const PANEL_PLANT: usize = 200;
const PANEL_SCALE: f64 = 3.0;

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn threshold() -> f64 {
    let spec = CalibrationSpec::new(0.0, 200_000, 0).expect("valid calibration");
    critical_value(ALPHA, 0.0, &spec, None).expect("critical value")
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) {
    let mut w = csv::Writer::from_path(path).expect("create fixture");
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();
}

fn write_matrix(path: &Path, cols: &DMatrix<f64>) {
    let header: Vec<String> = (1..=cols.nrows()).map(|j| format!("x{j}")).collect();
    let rows = cols.column_iter().map(|c| c.iter().map(|v| format!("{v:.12}")).collect());
    write_rows(path, &header, rows);
}

/// Reparse through the same text the fixture holds so screening sees the
/// rounded values.
fn rounded(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| format!("{v:.12}").parse().unwrap())
}

fn run_monitor(history: &DMatrix<f64>, k1: usize, stream: &DMatrix<f64>, c_alpha: f64) -> MonitorOutcome {
    let f = TestFunction::Log1p;
    let nu4 = estimate_nu4(&history.columns(0, k1).into_owned()).unwrap();
    let cfg = MonitorConfig::new(history.ncols(), ALPHA, WeightSpec::power_law(0.0).unwrap(), f.clone(), c_alpha, nu4).unwrap();
    let mut state = StreamState::init(history, k1, f).unwrap();
    let feed = stream.column_iter().map(|c| Ok(c.into_owned()));
    monitor::run(&cfg, &mut state, feed).unwrap()
}

struct StreamFixture {
    seed: u64,
    history: DMatrix<f64>,
    stream: DMatrix<f64>,
    outcome: MonitorOutcome,
}

fn stream_fixture(change: Change, k_star: Option<usize>, steps: usize, c_alpha: f64, accept: impl Fn(&MonitorOutcome) -> bool) -> StreamFixture {
    for seed in 1.. {
        let spec = ScenarioSpec {
            p: 20,
            k1: 60,
            k2_init: 60,
            distribution: EntryDistribution::Gaussian,
            change,
            k_star,
            horizon: Some(steps),
            reps: 1,
            seed,
            nu4: Nu4Mode::Estimate,
        };
        let gen = Generator::new(&spec).unwrap();
        let mut rng = rep_rng(seed, 0);
        let n = spec.n();
        let all: Vec<DVector<f64>> = (1..=n + steps).map(|k| gen.generate(k, &mut rng)).collect();
        let history = rounded(DMatrix::from_columns(&all[..n]));
        let stream = rounded(DMatrix::from_columns(&all[n..]));
        let outcome = run_monitor(&history, spec.k1, &stream, c_alpha);
        if accept(&outcome) {
            return StreamFixture {
                seed,
                history,
                stream,
                outcome,
            };
        }
    }
    unreachable!()
}

fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Prices for `PANEL_TICKERS` tickers with independent returns whose
/// standard deviation is multiplied by `√PANEL_SCALE` after return row
/// `PANEL_PLANT`. T05 has too many gaps, T07 starts with a gap, T10 has a
/// few interior gaps and T12 one large outlier.
fn price_panel(seed: u64) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rng = rep_rng(seed, 0);
    let dates = business_days(NaiveDate::from_ymd_opt(2019, 1, 2).unwrap(), PANEL_ROWS);
    let tickers: Vec<String> = (0..PANEL_TICKERS).map(|j| format!("T{j:02}")).collect();
    let vols: Vec<f64> = (0..PANEL_TICKERS).map(|j| 0.01 + 0.02 * j as f64 / PANEL_TICKERS as f64).collect();
    let mut prices = vec![vec![0.0; PANEL_TICKERS]; PANEL_ROWS];
    for j in 0..PANEL_TICKERS {
        let mut p = 50.0 + j as f64;
        prices[0][j] = p;
        for (r, row) in prices.iter_mut().enumerate().skip(1) {
            let z: f64 = rng.sample(StandardNormal);
            let scale = if r > PANEL_PLANT { PANEL_SCALE.sqrt() } else { 1.0 };
            let shock = if j == 12 && r == 40 { 12.0 * vols[j] } else { vols[j] * scale * z };
            p *= shock.exp();
            row[j] = p;
        }
    }
    let missing = |r: usize, j: usize| match j {
        5 => r % 12 == 3,
        7 => r < 3,
        10 => matches!(r, 50 | 51 | 120),
        _ => false,
    };
    let header = std::iter::once("date".to_string()).chain(tickers).collect();
    let rows = (0..PANEL_ROWS)
        .map(|r| {
            std::iter::once(dates[r].to_string())
                .chain((0..PANEL_TICKERS).map(|j| if missing(r, j) { String::new() } else { format!("{:.4}", prices[r][j]) }))
                .collect()
        })
        .collect();
    (header, rows)
}

fn panel_fixture(dir: &Path, c_alpha: f64) -> serde_json::Value {
    let (k1, k2) = (40, 40);
    for seed in 1.. {
        let (header, rows) = price_panel(seed);
        let path = dir.join("prices_planted.csv");
        write_rows(&path, &header, rows.into_iter());
        let opts = IngestOptions {
            top: Some(30),
            ..IngestOptions::default()
        };
        let (panel, _) = prepare_returns(fs::File::open(&path).unwrap(), &opts).unwrap();
        let data = panel.observations();
        let n = k1 + k2;
        let history = data.columns(0, n).into_owned();
        let stream = data.columns(n, data.ncols() - n).into_owned();
        let outcome = run_monitor(&history, k1, &stream, c_alpha);
        let ok = outcome.k_hat.is_some_and(|k| k > PANEL_PLANT && k <= PANEL_PLANT + 15);
        if ok {
            let k = outcome.k_hat.unwrap();
            return json!({
                "seed": seed,
                "plant_row": PANEL_PLANT,
                "plant_date": panel.dates[PANEL_PLANT - 1].to_string(),
                "variance_scale": PANEL_SCALE,
                "k1": k1,
                "k2": k2,
                "top": 30,
                "detected_row": k,
                "detected_date": panel.dates[k - 1].to_string(),
            });
        }
    }
    unreachable!()
}

fn write_ingest_fixtures(dir: &Path) {
    fs::write(
        dir.join("ingest_ffill.csv"),
        "date,AAA,BBB,CCC\n\
         2020-01-01,100,,50\n\
         2020-01-02,,20,51\n\
         2020-01-03,,21,52\n\
         2020-01-04,103,22,53\n",
    )
    .unwrap();

    // 80 alternating ±1 and one outlier at 81/√19, eight sd above the mean
    let mut text = String::from("date,A\n");
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 81);
    for (i, d) in dates.iter().enumerate() {
        let v = match i {
            80 => 81.0 / 19f64.sqrt(),
            _ if i % 2 == 0 => 1.0,
            _ => -1.0,
        };
        text.push_str(&format!("{d},{v:?}\n"));
    }
    fs::write(dir.join("ingest_winsor.csv"), text).unwrap();

    // sample sds 0.02, 0.05, 0.01
    let mut text = String::from("date,A,B,C\n");
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 2);
    for (d, sign) in dates.iter().zip([1.0, -1.0]) {
        let v = |sd: f64| sign * sd / 2f64.sqrt();
        text.push_str(&format!("{d},{:?},{:?},{:?}\n", v(0.02), v(0.05), v(0.01)));
    }
    fs::write(dir.join("ingest_topk.csv"), text).unwrap();
}

fn main() {
    let dir = out_dir();
    fs::create_dir_all(&dir).unwrap();
    let c_alpha = threshold();
    println!("threshold {c_alpha}");

    let jump_after = 30;
    let h1 = stream_fixture(Change::Homogeneous { sigma2: 2.0 }, Some(120 + jump_after), 120, c_alpha, |o| {
        o.k_hat.is_some_and(|k| k > 120 + jump_after)
    });
    write_matrix(&dir.join("monitor_h1_history.csv"), &h1.history);
    write_matrix(&dir.join("monitor_h1_stream.csv"), &h1.stream);
    println!("h1 seed {} alarm {:?}", h1.seed, h1.outcome.k_hat);

    let h0 = stream_fixture(Change::None, None, 240, c_alpha, |o| !o.alarmed);
    write_matrix(&dir.join("monitor_h0_history.csv"), &h0.history);
    write_matrix(&dir.join("monitor_h0_stream.csv"), &h0.stream);
    println!("h0 seed {}", h0.seed);

    let panel = panel_fixture(&dir, c_alpha);
    println!("panel {panel}");
    write_ingest_fixtures(&dir);

    let manifest = json!({
        "threshold": {"alpha": ALPHA, "gamma": 0.0, "paths": 200_000, "seed": 0, "value": c_alpha},
        "monitor": {
            "p": 20, "k1": 60, "n": 120, "f": "log1p",
            "h1": {"seed": h1.seed, "sigma2": 2.0, "k_star": 120 + jump_after, "stream_rows": 120, "detected_k": h1.outcome.k_hat},
            "h0": {"seed": h0.seed, "stream_rows": 240},
        },
        "panel": panel,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
}
