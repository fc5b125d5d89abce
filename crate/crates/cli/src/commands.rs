use std::fs::{self, File};
use std::io::{self, BufWriter, Read};
use std::path::Path;

use covwatch::critval::{threshold_for, CritvalEntry};
use covwatch::ingest::{prepare_returns, read_observations, IngestOptions, ObservationReader, VolatilityBasis};
use covwatch::monitor::{self, MonitorOutcome};
use covwatch::sim::{emit_report, ReportFormat, SimPlan};
use covwatch::{
    delay_regime, estimate_nu4, CalibrationSpec, ChangeProfile, CritvalCache, Error, Grid, MonitorConfig, Result,
    SpectralParams, StreamState, WeightSpec,
};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::{Cli, Command, Format, RuleArgs, WeightKind};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.common.seed.unwrap_or(0);
    let out = cli.common.out.as_deref();
    match &cli.command {
        Command::Critval {
            alpha,
            gamma,
            paths,
            cache,
            fine_grid,
        } => critval(*alpha, *gamma, *paths, seed, cache.as_deref(), *fine_grid, out),
        Command::Monitor {
            history,
            stream,
            k1,
            rule,
        } => monitor_cmd(history, stream.as_deref(), *k1, rule, seed, out),
        Command::Simulate {
            config,
            reps,
            format,
            runtime,
            critval_cache,
        } => simulate(config, *reps, cli.common.seed, *format, *runtime, critval_cache.as_deref(), out),
        Command::Analyze {
            prices,
            top,
            k1,
            k2,
            winsor_sd,
            max_missing,
            rank_raw,
            rule,
        } => {
            let opts = IngestOptions {
                max_missing_rate: *max_missing,
                winsor_sd: *winsor_sd,
                top: Some(*top),
                basis: if *rank_raw { VolatilityBasis::Raw } else { VolatilityBasis::Winsorized },
            };
            analyze(prices, &opts, *k1, *k2, rule, seed, out)
        }
        Command::DetectCheck {
            c1,
            c2,
            tau1,
            tau2,
            f,
            kstar,
            n,
        } => {
            let params = SpectralParams::new(*c1, *c2, 3.0)?;
            let profile = ChangeProfile::direct(*tau1, *tau2)?;
            let report = delay_regime(&profile, f, *kstar, *n, &params)?;
            write_json(&report, out)
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
    ))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn with_cache<T>(path: Option<&Path>, f: impl FnOnce(Option<&mut CritvalCache>) -> Result<T>) -> Result<T> {
    match path {
        None => f(None),
        Some(p) => {
            let mut cache = CritvalCache::load(p)?;
            let before = cache.entries.len();
            let value = f(Some(&mut cache))?;
            if cache.entries.len() != before {
                cache.save(p)?;
            }
            Ok(value)
        }
    }
}

fn critval(
    alpha: f64,
    gamma: f64,
    paths: usize,
    seed: u64,
    cache: Option<&Path>,
    fine_grid: bool,
    out: Option<&Path>,
) -> Result<()> {
    let grid = if fine_grid { Grid::fine() } else { Grid::standard() };
    let spec = CalibrationSpec::new(gamma, paths, seed)?.with_grid(grid);
    let value = with_cache(cache, |c| {
        if c.as_ref().and_then(|c| c.get(alpha, gamma, &spec)).is_some() {
            info!("cache hit for alpha = {alpha}, gamma = {gamma}");
        }
        covwatch::critical_value(alpha, gamma, &spec, c)
    })?;
    println!("{value}");
    if let Some(p) = out {
        let entry = CritvalEntry {
            alpha,
            gamma,
            paths,
            grid,
            seed,
            value,
        };
        write_json(&entry, Some(p))?;
    }
    Ok(())
}

fn weight_spec(rule: &RuleArgs) -> Result<WeightSpec> {
    let w = match rule.weight {
        WeightKind::PowerLaw => WeightSpec::power_law(rule.gamma)?,
        WeightKind::Log => WeightSpec::log(rule.alpha)?,
    };
    Ok(match rule.burn_in {
        Some(b) => w.with_burn_in(b),
        None => w,
    })
}

/// Monitor configuration for a history of `n` columns whose first `k1` form
/// the baseline.
fn monitor_config(rule: &RuleArgs, history: &DMatrix<f64>, k1: usize, seed: u64) -> Result<MonitorConfig> {
    let n = history.ncols();
    if k1 >= n {
        return Err(Error::InvalidConfig(format!("history has {n} rows, need more than k1 = {k1}")));
    }
    let weight = weight_spec(rule)?;
    let nu4 = match rule.nu4 {
        Some(v) => v,
        None => estimate_nu4(&history.columns(0, k1).into_owned())?,
    };
    let c_alpha = match rule.c_alpha {
        Some(c) => c,
        None => {
            let spec = CalibrationSpec {
                weight,
                paths: rule.paths,
                grid: Grid::standard(),
                seed,
            };
            spec.validate()?;
            with_cache(rule.critval_cache.as_deref(), |c| threshold_for(&weight, rule.alpha, &spec, c))?
        }
    };
    info!("n = {n}, nu4 = {nu4}, threshold = {c_alpha}");
    MonitorConfig::new(n, rule.alpha, weight, rule.f.clone(), c_alpha, nu4)
}

fn run_monitor<I>(config: &MonitorConfig, history: &DMatrix<f64>, k1: usize, feed: I) -> Result<MonitorOutcome>
where
    I: IntoIterator<Item = Result<DVector<f64>>>,
{
    let mut state = StreamState::init(history, k1, config.f.clone())?;
    monitor::run(config, &mut state, feed)
}

fn monitor_cmd(
    history: &Path,
    stream: Option<&Path>,
    k1: usize,
    rule: &RuleArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let table = read_observations(open(history)?)?;
    let config = monitor_config(rule, &table.data, k1, seed)?;
    let input: Box<dyn Read> = match stream {
        None => Box::new(io::stdin().lock()),
        Some(p) if p == Path::new("-") => Box::new(io::stdin().lock()),
        Some(p) => Box::new(open(p)?),
    };
    let mut reader = ObservationReader::new(input)?;
    let mut labels = Vec::new();
    let feed = std::iter::from_fn(|| reader.next_labeled()).map(|r| {
        r.map(|(label, y)| {
            labels.push(label);
            y
        })
    });
    let outcome = run_monitor(&config, &table.data, k1, feed)?;
    if let Some(p) = out {
        outcome.write_trajectory_csv(create(p)?)?;
    }
    match outcome.k_hat {
        Some(k) => {
            let label = labels.get(k - config.n - 1).cloned().flatten();
            match label {
                Some(d) => println!("DETECTED at k={k} ({d})"),
                None => println!("DETECTED at k={k}"),
            }
        }
        None => println!("no detection"),
    }
    Ok(())
}

fn simulate(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    format: Format,
    runtime: bool,
    cache: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let mut text = String::new();
    open(config)?.read_to_string(&mut text)?;
    let plan = SimPlan::from_json(&text)?.with_overrides(reps, seed);
    let report = with_cache(cache, |c| plan.run(c, runtime))?;
    let format = match format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    };
    match out {
        Some(p) => emit_report(&report, format, create(p)?),
        None => emit_report(&report, format, io::stdout().lock()),
    }
}

#[derive(Debug, Serialize)]
struct Detection {
    detected: bool,
    k_hat: Option<usize>,
    date: Option<String>,
    n: usize,
    c_alpha: f64,
    nu4: f64,
    f: String,
    weight: String,
}

fn analyze(
    prices: &Path,
    opts: &IngestOptions,
    k1: usize,
    k2: usize,
    rule: &RuleArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let (panel, manifest) = prepare_returns(open(prices)?, opts)?;
    let data = panel.observations();
    let n = k1 + k2;
    if data.ncols() <= n {
        return Err(Error::InvalidConfig(format!(
            "{} return rows leave nothing to monitor after k1 + k2 = {n}",
            data.ncols()
        )));
    }
    let history = data.columns(0, n).into_owned();
    let config = monitor_config(rule, &history, k1, seed)?;
    let feed = (n..data.ncols()).map(|j| Ok(data.column(j).into_owned()));
    let outcome = run_monitor(&config, &history, k1, feed)?;
    let date = outcome.k_hat.map(|k| panel.dates[k - 1].to_string());

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        outcome.write_trajectory_csv(create(&dir.join("trajectory.csv"))?)?;
        panel.write_csv(create(&dir.join("returns.csv"))?)?;
        write_json(&manifest, Some(&dir.join("manifest.json")))?;
        let detection = Detection {
            detected: outcome.alarmed,
            k_hat: outcome.k_hat,
            date: date.clone(),
            n,
            c_alpha: config.c_alpha,
            nu4: config.nu4,
            f: config.f.name().to_string(),
            weight: config.weight.label(),
        };
        write_json(&detection, Some(&dir.join("detection.json")))?;
    }
    match (outcome.k_hat, date) {
        (Some(k), Some(d)) => println!("DETECTED at k={k} ({d})"),
        _ => println!("no detection"),
    }
    Ok(())
}
