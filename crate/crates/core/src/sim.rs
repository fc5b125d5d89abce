//! Simulation study: data generators, change scenarios and batched
//! size / power / detection-delay experiments.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critval::{threshold_for, CalibrationSpec, CritvalCache, Grid};
use crate::error::{Error, Result};
use crate::moments::{estimate_nu4, step_moments, TestFunction};
use crate::monitor::{summarize_alarms, Monitor, MonitorConfig, MonitorOutcome, WeightSpec};
use crate::stream::{LssPath, StreamState};

/// Entry distribution, always standardized to mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryDistribution {
    Gaussian,
    /// `Unif(−√3, √3)`, fourth moment 1.8.
    UniformSqrt3,
    /// `t(10)/√1.25`, fourth moment 4.
    StudentT10Scaled,
}

impl EntryDistribution {
    pub fn fourth_moment(&self) -> f64 {
        match self {
            Self::Gaussian => 3.0,
            Self::UniformSqrt3 => 1.8,
            Self::StudentT10Scaled => 4.0,
        }
    }

    pub fn sampler(&self) -> EntrySampler {
        match self {
            Self::Gaussian => EntrySampler::Gaussian,
            Self::UniformSqrt3 => EntrySampler::Uniform(Uniform::new(-(3f64.sqrt()), 3f64.sqrt())),
            Self::StudentT10Scaled => {
                EntrySampler::Student(StudentT::new(10.0).expect("10 degrees of freedom is valid"), 1.25f64.sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EntrySampler {
    Gaussian,
    Uniform(Uniform<f64>),
    Student(StudentT<f64>, f64),
}

impl Distribution<f64> for EntrySampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Uniform(u) => u.sample(rng),
            Self::Student(t, scale) => t.sample(rng) / scale,
        }
    }
}

/// Post-change covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Change {
    None,
    /// `σ²I`
    Homogeneous { sigma2: f64 },
    /// Diagonal 2, off-diagonal `ρ^{|j−k|}`.
    ToeplitzCorr { rho: f64 },
    /// `1.5I + δ Σ_{i≤5} eᵢeᵢᵀ`
    Spike { delta: f64 },
}

impl Change {
    pub fn label(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Homogeneous { .. } => "homogeneous",
            Self::ToeplitzCorr { .. } => "toeplitz_corr",
            Self::Spike { .. } => "spike",
        }
    }

    pub fn magnitude(&self) -> Option<f64> {
        match *self {
            Self::None => None,
            Self::Homogeneous { sigma2 } => Some(sigma2),
            Self::ToeplitzCorr { rho } => Some(rho),
            Self::Spike { delta } => Some(delta),
        }
    }

    /// The post-change covariance matrix.
    pub fn covariance(&self, p: usize) -> DMatrix<f64> {
        match *self {
            Self::None => DMatrix::identity(p, p),
            Self::Homogeneous { sigma2 } => DMatrix::identity(p, p) * sigma2,
            Self::ToeplitzCorr { rho } => {
                DMatrix::from_fn(p, p, |i, j| if i == j { 2.0 } else { rho.powi(i.abs_diff(j) as i32) })
            }
            Self::Spike { delta } => DMatrix::from_fn(p, p, |i, j| match (i == j, i < SPIKE_RANK) {
                (true, true) => 1.5 + delta,
                (true, false) => 1.5,
                _ => 0.0,
            }),
        }
    }
}

pub const SPIKE_RANK: usize = 5;

#[derive(Debug, Clone)]
enum Root {
    Identity,
    Scalar(f64),
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

/// How the fourth moment used for standardization is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nu4Mode {
    /// Estimated once per replication from the baseline sample.
    #[default]
    Estimate,
    /// The distribution's population value.
    Population,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub p: usize,
    pub k1: usize,
    pub k2_init: usize,
    pub distribution: EntryDistribution,
    pub change: Change,
    /// Last pre-change index; observations after it use the changed covariance.
    #[serde(default)]
    pub k_star: Option<usize>,
    /// Monitoring steps after the origin; defaults to `2n`.
    #[serde(default)]
    pub horizon: Option<usize>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub nu4: Nu4Mode,
}

impl ScenarioSpec {
    pub fn n(&self) -> usize {
        self.k1 + self.k2_init
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(2 * self.n())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k1 <= self.p {
            return Err(Error::InvalidConfig(format!("need 0 < p < k1, got p = {}, k1 = {}", self.p, self.k1)));
        }
        if self.k2_init == 0 {
            return Err(Error::InvalidConfig("k2_init must be positive".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be positive".into()));
        }
        if self.horizon() == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        match self.change {
            Change::None => {}
            Change::Homogeneous { sigma2 } if sigma2 > 0.0 => {}
            Change::ToeplitzCorr { rho } if rho.abs() < 1.0 => {}
            Change::Spike { delta } if delta > -1.5 => {}
            other => return Err(Error::InvalidConfig(format!("invalid change {other:?}"))),
        }
        if !matches!(self.change, Change::None) && self.k_star.is_none() {
            return Err(Error::InvalidConfig("a change needs k_star".into()));
        }
        if let Nu4Mode::Fixed(v) = self.nu4 {
            if !(v >= 1.0) {
                return Err(Error::InvalidConfig(format!("fixed nu4 = {v} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Draws observations for a scenario with the covariance square root
/// precomputed.
#[derive(Debug, Clone)]
pub struct Generator {
    p: usize,
    k_star: Option<usize>,
    sampler: EntrySampler,
    root: Root,
}

impl Generator {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        let p = spec.p;
        let root = match spec.change {
            Change::None => Root::Identity,
            Change::Homogeneous { sigma2 } => Root::Scalar(sigma2.sqrt()),
            Change::Spike { delta } => Root::Diagonal(DVector::from_fn(p, |i, _| {
                if i < SPIKE_RANK {
                    (1.5 + delta).sqrt()
                } else {
                    1.5f64.sqrt()
                }
            })),
            Change::ToeplitzCorr { .. } => Root::Lower(
                nalgebra::Cholesky::new(spec.change.covariance(p))
                    .ok_or_else(|| Error::InvalidConfig("post-change covariance is not positive definite".into()))?
                    .l(),
            ),
        };
        Ok(Self {
            p,
            k_star: spec.k_star,
            sampler: spec.distribution.sampler(),
            root,
        })
    }

    /// Observation at absolute time `k` (1-based).
    pub fn generate<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        let x = DVector::from_fn(self.p, |_, _| self.sampler.sample(rng));
        if self.k_star.is_none_or(|ks| k <= ks) {
            return x;
        }
        match &self.root {
            Root::Identity => x,
            Root::Scalar(s) => x * *s,
            Root::Diagonal(d) => x.component_mul(d),
            Root::Lower(l) => l * x,
        }
    }
}

/// One observation from a freshly built generator.
pub fn generate_observation<R: Rng + ?Sized>(spec: &ScenarioSpec, k: usize, rng: &mut R) -> Result<DVector<f64>> {
    Ok(Generator::new(spec)?.generate(k, rng))
}

/// Independent random stream for replication `rep`.
pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// A monitoring rule to evaluate: weight plus threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub weight: WeightSpec,
    pub c_alpha: f64,
}

struct Replication {
    history: DMatrix<f64>,
    nu4: f64,
    rng: ChaCha8Rng,
}

fn start_replication(spec: &ScenarioSpec, gen: &Generator, rep: usize) -> Result<Replication> {
    let mut rng = rep_rng(spec.seed, rep);
    let n = spec.n();
    let mut history = DMatrix::zeros(spec.p, n);
    for k in 1..=n {
        history.set_column(k - 1, &gen.generate(k, &mut rng));
    }
    let nu4 = match spec.nu4 {
        Nu4Mode::Estimate => estimate_nu4(&history.columns(0, spec.k1).into_owned())?,
        Nu4Mode::Population => spec.distribution.fourth_moment(),
        Nu4Mode::Fixed(v) => v,
    };
    Ok(Replication { history, nu4, rng })
}

/// Run one replication with every `(function, rule)` pair. Returns the alarm
/// time per pair, functions outermost.
pub fn run_replication(
    spec: &ScenarioSpec,
    gen: &Generator,
    functions: &[TestFunction],
    rules: &[Rule],
    alpha: f64,
    rep: usize,
) -> Result<Vec<Option<usize>>> {
    let Replication { history, nu4, mut rng } = start_replication(spec, gen, rep)?;
    let n = spec.n();
    let mut state = StreamState::init(&history, spec.k1, TestFunction::Linear)?;
    let mut monitors = Vec::with_capacity(functions.len() * rules.len());
    for f in functions {
        for r in rules {
            let cfg = MonitorConfig::new(n, alpha, r.weight, f.clone(), r.c_alpha, nu4)?;
            monitors.push(Monitor::new(cfg)?.without_trajectory());
        }
    }
    let mut prev = state.lss_many(functions, LssPath::Fast)?;
    for i in 1..=spec.horizon() {
        let k = n + i;
        state.observe(&gen.generate(k, &mut rng))?;
        let cur = state.lss_many(functions, LssPath::Fast)?;
        for (fi, f) in functions.iter().enumerate() {
            let group = &mut monitors[fi * rules.len()..(fi + 1) * rules.len()];
            if group.iter().all(Monitor::is_alarmed) {
                continue;
            }
            let moments = step_moments(f, spec.p, spec.k1, k, nu4)?;
            let l = cur[fi] - prev[fi];
            for m in group.iter_mut().filter(|m| !m.is_alarmed()) {
                m.advance(l, &moments)?;
            }
        }
        prev = cur;
        if monitors.iter().all(Monitor::is_alarmed) {
            break;
        }
    }
    Ok(monitors.iter().map(Monitor::k_hat).collect())
}

/// Standardized increments `(L_k − μ_k)/σ_k` for the first `steps` monitoring
/// steps of replication `rep`, with no stopping. One path per function, all
/// from the same observations.
pub fn standardized_paths(spec: &ScenarioSpec, fs: &[TestFunction], steps: usize, rep: usize) -> Result<Vec<Vec<f64>>> {
    let gen = Generator::new(spec)?;
    let Replication { history, nu4, mut rng } = start_replication(spec, &gen, rep)?;
    let n = spec.n();
    let mut state = StreamState::init(&history, spec.k1, TestFunction::Linear)?;
    let mut out = vec![Vec::with_capacity(steps); fs.len()];
    let mut prev = state.lss_many(fs, LssPath::Fast)?;
    for i in 1..=steps {
        let k = n + i;
        state.observe(&gen.generate(k, &mut rng))?;
        let cur = state.lss_many(fs, LssPath::Fast)?;
        for (j, f) in fs.iter().enumerate() {
            let m = step_moments(f, spec.p, spec.k1, k, nu4)?;
            out[j].push((cur[j] - prev[j] - m.mu) / m.sigma());
        }
        prev = cur;
    }
    Ok(out)
}

/// Full monitor outcomes (with trajectories) for replications `reps`.
pub fn monitor_paths(
    spec: &ScenarioSpec,
    f: &TestFunction,
    rule: &Rule,
    alpha: f64,
    reps: std::ops::Range<usize>,
) -> Result<Vec<MonitorOutcome>> {
    let gen = Generator::new(spec)?;
    reps.into_par_iter()
        .map(|rep| {
            let Replication { history, nu4, mut rng } = start_replication(spec, &gen, rep)?;
            let n = spec.n();
            let mut state = StreamState::init(&history, spec.k1, f.clone())?;
            let cfg = MonitorConfig::new(n, alpha, rule.weight, f.clone(), rule.c_alpha, nu4)?;
            let feed = (1..=spec.horizon()).map(|i| Ok(gen.generate(n + i, &mut rng)));
            crate::monitor::run(&cfg, &mut state, feed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub distribution: EntryDistribution,
    pub f: String,
    pub weight: String,
    pub c_alpha: f64,
    pub k_star: Option<usize>,
    pub magnitude: Option<f64>,
    pub size_or_power: f64,
    pub edd: Option<f64>,
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub alpha: f64,
    pub horizon_rule: String,
    pub cells: Vec<CellResult>,
}

/// Run every `(function, rule)` pair of a scenario over all replications.
pub fn run_scenario(
    spec: &ScenarioSpec,
    functions: &[TestFunction],
    rules: &[Rule],
    alpha: f64,
    record_runtime: bool,
) -> Result<Vec<CellResult>> {
    spec.validate()?;
    if functions.is_empty() || rules.is_empty() {
        return Err(Error::InvalidConfig("need at least one function and one rule".into()));
    }
    let started = Instant::now();
    let gen = Generator::new(spec)?;
    let per_rep: Vec<Vec<Option<usize>>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| run_replication(spec, &gen, functions, rules, alpha, rep))
        .collect::<Result<_>>()?;
    let runtime = record_runtime.then(|| started.elapsed().as_secs_f64());
    let mut cells = Vec::new();
    for (fi, f) in functions.iter().enumerate() {
        for (ri, r) in rules.iter().enumerate() {
            let idx = fi * rules.len() + ri;
            let alarms: Vec<Option<usize>> = per_rep.iter().map(|v| v[idx]).collect();
            let (rate, edd) = match spec.k_star {
                Some(ks) if !matches!(spec.change, Change::None) => {
                    let s = summarize_alarms(&alarms, ks)?;
                    (s.power, s.edd)
                }
                _ => (alarms.iter().filter(|a| a.is_some()).count() as f64 / alarms.len() as f64, None),
            };
            cells.push(CellResult {
                scenario: spec.change.label().to_string(),
                distribution: spec.distribution,
                f: f.name().to_string(),
                weight: r.weight.label(),
                c_alpha: r.c_alpha,
                k_star: spec.k_star,
                magnitude: spec.change.magnitude(),
                size_or_power: rate,
                edd,
                reps: spec.reps,
                runtime_secs: runtime,
            });
        }
    }
    Ok(cells)
}

/// A single `(function, weight)` cell.
pub fn run_cell(spec: &ScenarioSpec, f: &TestFunction, weight: WeightSpec, alpha: f64, c_alpha: f64) -> Result<CellResult> {
    let rule = Rule { weight, c_alpha };
    Ok(run_scenario(spec, std::slice::from_ref(f), &[rule], alpha, false)?.remove(0))
}

/// A weight with an optional explicit threshold; missing thresholds are
/// resolved by [`threshold_for`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    #[serde(flatten)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub c_alpha: Option<f64>,
}

fn default_calibration_paths() -> usize {
    200_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    #[serde(default = "default_calibration_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            paths: default_calibration_paths(),
            seed: 0,
        }
    }
}

/// A batch of scenarios sharing functions, rules and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub alpha: f64,
    pub functions: Vec<TestFunction>,
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    pub scenarios: Vec<ScenarioSpec>,
}

impl SimPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.functions.is_empty() || self.rules.is_empty() || self.scenarios.is_empty() {
            return Err(Error::InvalidConfig("plan needs functions, rules and scenarios".into()));
        }
        for r in &self.rules {
            r.weight.validate()?;
            if let Some(c) = r.c_alpha {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidConfig(format!("threshold {c} must be positive")));
                }
            }
        }
        self.scenarios.iter().try_for_each(ScenarioSpec::validate)
    }

    /// Override replication count and seed of every scenario.
    pub fn with_overrides(mut self, reps: Option<usize>, seed: Option<u64>) -> Self {
        for s in &mut self.scenarios {
            if let Some(r) = reps {
                s.reps = r;
            }
            if let Some(sd) = seed {
                s.seed = sd;
            }
        }
        self
    }

    pub fn resolve_rules(&self, mut cache: Option<&mut CritvalCache>) -> Result<Vec<Rule>> {
        self.rules
            .iter()
            .map(|r| {
                let c_alpha = match r.c_alpha {
                    Some(c) => c,
                    None => {
                        let spec = CalibrationSpec {
                            weight: r.weight,
                            paths: self.calibration.paths,
                            grid: Grid::standard(),
                            seed: self.calibration.seed,
                        };
                        threshold_for(&r.weight, self.alpha, &spec, cache.as_deref_mut())?
                    }
                };
                Ok(Rule { weight: r.weight, c_alpha })
            })
            .collect()
    }

    pub fn run(&self, cache: Option<&mut CritvalCache>, record_runtime: bool) -> Result<SimReport> {
        self.validate()?;
        let rules = self.resolve_rules(cache)?;
        let mut cells = Vec::new();
        for s in &self.scenarios {
            cells.extend(run_scenario(s, &self.functions, &rules, self.alpha, record_runtime)?);
        }
        Ok(SimReport {
            alpha: self.alpha,
            horizon_rule: "2n unless set per scenario".into(),
            cells,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report<W: Write>(report: &SimReport, format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                "scenario",
                "distribution",
                "f",
                "weight",
                "c_alpha",
                "k_star",
                "magnitude",
                "size_or_power",
                "edd",
                "reps",
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
            for c in &report.cells {
                let dist = serde_json::to_value(c.distribution)?;
                w.write_record([
                    c.scenario.clone(),
                    dist.as_str().unwrap_or_default().to_string(),
                    c.f.clone(),
                    c.weight.clone(),
                    c.c_alpha.to_string(),
                    c.k_star.map(|k| k.to_string()).unwrap_or_default(),
                    c.magnitude.map(|m| m.to_string()).unwrap_or_default(),
                    c.size_or_power.to_string(),
                    c.edd.map(|e| e.to_string()).unwrap_or_default(),
                    c.reps.to_string(),
                ])
                .map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Ψ trajectories with the boundary `±c/ρ(t)` for external plotting.
pub fn write_plot_data<W: Write>(outcomes: &[MonitorOutcome], weight: &WeightSpec, c_alpha: f64, n: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "i", "t", "Psi", "upper", "lower"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for (path, o) in outcomes.iter().enumerate() {
        for row in &o.trajectory {
            let t = row.i as f64 / n as f64;
            let bound = c_alpha / weight.rho(t);
            w.write_record([
                path.to_string(),
                row.i.to_string(),
                t.to_string(),
                row.psi.to_string(),
                bound.to_string(),
                (-bound).to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
