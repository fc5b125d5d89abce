use std::fs::File;
use std::path::{Path, PathBuf};

use covwatch::ingest::{prepare_returns, read_observations, IngestOptions};
use covwatch::monitor::{self, Monitor};
use covwatch::{estimate_nu4, MonitorConfig, StepMoments, StreamState, TestFunction, WeightSpec};
use proptest::prelude::*;

const THRESHOLD: f64 = 1.330488606381368;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn manifest() -> serde_json::Value {
    serde_json::from_reader(File::open(fixture("manifest.json")).unwrap()).unwrap()
}

#[test]
fn planted_panel_alarms_at_recorded_row() {
    let recorded = manifest()["panel"].clone();
    let opts = IngestOptions {
        top: Some(30),
        ..IngestOptions::default()
    };
    let (panel, report) = prepare_returns(File::open(fixture("prices_planted.csv")).unwrap(), &opts).unwrap();
    let dropped: Vec<&str> = report.dropped.iter().map(|d| d.ticker.as_str()).collect();
    assert!(dropped.contains(&"T05") && dropped.contains(&"T07"));
    assert_eq!(panel.tickers.len(), 30);

    let data = panel.observations();
    let (k1, n) = (40, 80);
    let history = data.columns(0, n).into_owned();
    let nu4 = estimate_nu4(&history.columns(0, k1).into_owned()).unwrap();
    let f = TestFunction::Log1p;
    let cfg = MonitorConfig::new(n, 0.05, WeightSpec::power_law(0.0).unwrap(), f.clone(), THRESHOLD, nu4).unwrap();
    let mut state = StreamState::init(&history, k1, f).unwrap();
    let feed = (n..data.ncols()).map(|j| Ok(data.column(j).into_owned()));
    let outcome = monitor::run(&cfg, &mut state, feed).unwrap();

    let k = outcome.k_hat.unwrap();
    assert_eq!(k as u64, recorded["detected_row"].as_u64().unwrap());
    assert_eq!(panel.dates[k - 1].to_string(), recorded["detected_date"].as_str().unwrap());
    assert_eq!(outcome.trajectory.len(), k - n);
}

#[test]
fn null_fixture_stays_below_threshold() {
    let history = read_observations(File::open(fixture("monitor_h0_history.csv")).unwrap()).unwrap().data;
    let stream = read_observations(File::open(fixture("monitor_h0_stream.csv")).unwrap()).unwrap().data;
    let k1 = 60;
    let nu4 = estimate_nu4(&history.columns(0, k1).into_owned()).unwrap();
    let f = TestFunction::Log1p;
    let cfg = MonitorConfig::new(history.ncols(), 0.05, WeightSpec::power_law(0.0).unwrap(), f.clone(), THRESHOLD, nu4).unwrap();
    let mut state = StreamState::init(&history, k1, f).unwrap();
    let outcome = monitor::run(&cfg, &mut state, stream.column_iter().map(|c| Ok(c.into_owned()))).unwrap();
    assert!(!outcome.alarmed);
    assert_eq!(outcome.trajectory.len(), stream.ncols());
    assert!(outcome.trajectory.iter().all(|r| r.t_stat <= THRESHOLD));
}

fn unit_moments() -> StepMoments {
    StepMoments {
        mu: 0.0,
        sigma2: 1.0,
        k2: 1,
        c2_k: 0.1,
    }
}

proptest! {
    #[test]
    fn alarm_is_first_crossing(
        increments in prop::collection::vec(-3.0f64..3.0, 1..200),
        n in 10usize..100,
        gamma in 0.0f64..0.49,
        c in 0.2f64..2.0,
    ) {
        let cfg = MonitorConfig::new(n, 0.05, WeightSpec::power_law(gamma).unwrap(), TestFunction::Linear, c, 3.0).unwrap();
        let mut mon = Monitor::new(cfg.clone()).unwrap();
        let m = unit_moments();
        let mut psi = 0.0;
        let mut first = None;
        for (idx, &l) in increments.iter().enumerate() {
            let i = idx + 1;
            let out = mon.advance(l, &m).unwrap();
            psi += l / (n as f64).sqrt();
            prop_assert!((out.psi - psi).abs() < 1e-12);
            if i <= cfg.weight.burn_in_len(n) {
                prop_assert_eq!(out.weight, 0.0);
            }
            prop_assert_eq!(out.alarm, out.t_stat > c);
            if out.alarm && first.is_none() {
                first = Some(n + i);
            }
        }
        prop_assert_eq!(mon.k_hat(), first);
        let outcome = mon.finish();
        prop_assert_eq!(outcome.alarmed, first.is_some());
    }

    #[test]
    fn flipping_increment_signs_keeps_alarm_time(
        increments in prop::collection::vec(-3.0f64..3.0, 1..120),
        gamma in 0.0f64..0.49,
    ) {
        let n = 40;
        let cfg = MonitorConfig::new(n, 0.05, WeightSpec::power_law(gamma).unwrap(), TestFunction::Linear, 1.0, 3.0).unwrap();
        let m = unit_moments();
        let run = |sign: f64| {
            let mut mon = Monitor::new(cfg.clone()).unwrap().without_trajectory();
            for &l in &increments {
                mon.advance(sign * l, &m).unwrap();
            }
            mon.k_hat()
        };
        prop_assert_eq!(run(1.0), run(-1.0));
    }
}
