//! Weighted CUSUM of standardized spectral increments and the stopping rule.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{step_moments, StepMoments, TestFunction};
use crate::stream::{LssPath, StreamState};

/// Weight function shape. Both families decay like `1/t` at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// `(1+t)^{γ−1} t^{−γ}` with `0 ≤ γ < ½`.
    PowerLaw { gamma: f64 },
    /// `(1+t)^{−½} (−2 log α + log(1+t))^{−½}`, used with threshold 1.
    Log { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    #[serde(flatten)]
    pub family: WeightFamily,
    /// Burn-in length; `None` means `⌈ln n⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

impl WeightSpec {
    pub fn power_law(gamma: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma = {gamma} must lie in [0, 0.5)")));
        }
        Ok(Self {
            family: WeightFamily::PowerLaw { gamma },
            burn_in: None,
        })
    }

    pub fn log(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            family: WeightFamily::Log { alpha },
            burn_in: None,
        })
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            WeightFamily::PowerLaw { gamma } => Self::power_law(gamma).map(|_| ()),
            WeightFamily::Log { alpha } => check_alpha(alpha),
        }
    }

    /// `ρ(t)` without the burn-in indicator.
    pub fn rho(&self, t: f64) -> f64 {
        match self.family {
            WeightFamily::PowerLaw { gamma } => (1.0 + t).powf(gamma - 1.0) * t.powf(-gamma),
            WeightFamily::Log { alpha } => {
                1.0 / ((1.0 + t).sqrt() * (-2.0 * alpha.ln() + t.ln_1p()).sqrt())
            }
        }
    }

    pub fn burn_in_len(&self, n: usize) -> usize {
        self.burn_in.unwrap_or_else(|| default_burn_in(n))
    }

    /// Whether the threshold is fixed at 1 rather than calibrated.
    pub fn has_unit_threshold(&self) -> bool {
        matches!(self.family, WeightFamily::Log { .. })
    }

    pub fn label(&self) -> String {
        match self.family {
            WeightFamily::PowerLaw { gamma } => format!("rho1(gamma={gamma})"),
            WeightFamily::Log { alpha } => format!("rho2(alpha={alpha})"),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// `⌈ln n⌉`.
pub fn default_burn_in(n: usize) -> usize {
    (n as f64).ln().ceil().max(0.0) as usize
}

/// `w(n, i) = ρ(i/n)·1{i > ℓ_n}`.
pub fn weight_value(spec: &WeightSpec, i: usize, n: usize) -> f64 {
    if i <= spec.burn_in_len(n) {
        0.0
    } else {
        spec.rho(i as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Monitoring origin `k1 + k2°`.
    pub n: usize,
    pub alpha: f64,
    pub weight: WeightSpec,
    pub f: TestFunction,
    pub c_alpha: f64,
    pub nu4: f64,
}

impl MonitorConfig {
    pub fn new(n: usize, alpha: f64, weight: WeightSpec, f: TestFunction, c_alpha: f64, nu4: f64) -> Result<Self> {
        let cfg = Self {
            n,
            alpha,
            weight,
            f,
            c_alpha,
            nu4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.weight.validate()?;
        if !(self.c_alpha > 0.0 && self.c_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("threshold {} must be positive", self.c_alpha)));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig("monitoring origin n must be at least 2".into()));
        }
        if !(self.nu4 >= 1.0) {
            return Err(Error::InvalidConfig(format!("nu4 = {} must be at least 1", self.nu4)));
        }
        Ok(())
    }
}

/// Result of one CUSUM update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub ltilde: f64,
    pub psi: f64,
    pub weight: f64,
    pub t_stat: f64,
    pub alarm: bool,
}

/// One CUSUM update from the raw increment `l` at monitoring offset `i`.
pub fn step(config: &MonitorConfig, moments: &StepMoments, psi_prev: f64, i: usize, l: f64) -> Result<StepOutcome> {
    let ltilde = (l - moments.mu) / moments.sigma();
    if !ltilde.is_finite() {
        return Err(Error::NonfiniteStatistic(config.n + i));
    }
    let psi = psi_prev + ltilde / (config.n as f64).sqrt();
    let weight = weight_value(&config.weight, i, config.n);
    let t_stat = weight * psi.abs();
    Ok(StepOutcome {
        ltilde,
        psi,
        weight,
        t_stat,
        alarm: t_stat > config.c_alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub i: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    pub sigma: f64,
    #[serde(rename = "Ltilde")]
    pub ltilde: f64,
    #[serde(rename = "Psi")]
    pub psi: f64,
    pub weight: f64,
    #[serde(rename = "T")]
    pub t_stat: f64,
    #[serde(with = "bool_as_int")]
    pub alarm: bool,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        Ok(u8::deserialize(d)? != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorOutcome {
    pub alarmed: bool,
    /// Absolute time index of the alarm.
    pub k_hat: Option<usize>,
    pub trajectory: Vec<TrajectoryRow>,
}

impl MonitorOutcome {
    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trajectory {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        if self.trajectory.is_empty() {
            w.write_record(["k", "i", "L", "mu", "sigma", "Ltilde", "Psi", "weight", "T", "alarm"])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Null moments indexed by absolute time, computed ahead for a range and on
/// demand outside it.
#[derive(Debug, Clone)]
pub struct MomentTable {
    f: TestFunction,
    p: usize,
    k1: usize,
    nu4: f64,
    start: usize,
    values: Vec<StepMoments>,
}

impl MomentTable {
    pub fn new(f: TestFunction, p: usize, k1: usize, nu4: f64) -> Self {
        Self {
            f,
            p,
            k1,
            nu4,
            start: 0,
            values: Vec::new(),
        }
    }

    /// Precompute moments for steps `k_from..=k_to`.
    pub fn precompute(f: TestFunction, p: usize, k1: usize, nu4: f64, k_from: usize, k_to: usize) -> Result<Self> {
        let values = (k_from..=k_to)
            .map(|k| step_moments(&f, p, k1, k, nu4))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            f,
            p,
            k1,
            nu4,
            start: k_from,
            values,
        })
    }

    pub fn get(&self, k: usize) -> Result<StepMoments> {
        if k >= self.start {
            if let Some(m) = self.values.get(k - self.start) {
                return Ok(*m);
            }
        }
        step_moments(&self.f, self.p, self.k1, k, self.nu4)
    }
}

/// A running monitor: single owner, advanced one increment at a time.
#[derive(Debug, Clone)]
pub struct Monitor {
    config: MonitorConfig,
    psi: f64,
    i: usize,
    k_hat: Option<usize>,
    record: bool,
    trajectory: Vec<TrajectoryRow>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            psi: 0.0,
            i: 0,
            k_hat: None,
            record: true,
            trajectory: Vec::new(),
        })
    }

    /// Keep only the running state, not the per-step rows.
    pub fn without_trajectory(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn k_hat(&self) -> Option<usize> {
        self.k_hat
    }

    pub fn is_alarmed(&self) -> bool {
        self.k_hat.is_some()
    }

    /// Feed the increment observed at absolute time `n + i` for the next `i`.
    pub fn advance(&mut self, l: f64, moments: &StepMoments) -> Result<StepOutcome> {
        self.i += 1;
        let k = self.config.n + self.i;
        let out = step(&self.config, moments, self.psi, self.i, l).map_err(|e| match e {
            Error::NonfiniteStatistic(_) => Error::NonfiniteStatistic(k),
            other => other,
        })?;
        self.psi = out.psi;
        if out.alarm && self.k_hat.is_none() {
            self.k_hat = Some(k);
        }
        if self.record {
            self.trajectory.push(TrajectoryRow {
                k,
                i: self.i,
                l,
                mu: moments.mu,
                sigma: moments.sigma(),
                ltilde: out.ltilde,
                psi: out.psi,
                weight: out.weight,
                t_stat: out.t_stat,
                alarm: out.alarm,
            });
        }
        Ok(out)
    }

    pub fn finish(self) -> MonitorOutcome {
        MonitorOutcome {
            alarmed: self.k_hat.is_some(),
            k_hat: self.k_hat,
            trajectory: self.trajectory,
        }
    }
}

/// Consume observations until an alarm or the end of the feed.
pub fn run<I>(config: &MonitorConfig, stream: &mut StreamState, feed: I) -> Result<MonitorOutcome>
where
    I: IntoIterator<Item = Result<DVector<f64>>>,
{
    if stream.k() != config.n {
        return Err(Error::InvalidConfig(format!(
            "stream is at k = {}, monitoring origin is n = {}",
            stream.k(),
            config.n
        )));
    }
    if stream.test_function() != &config.f {
        return Err(Error::InvalidConfig("stream and monitor use different test functions".into()));
    }
    let table = MomentTable::new(config.f.clone(), stream.dim(), stream.k1(), config.nu4);
    let mut monitor = Monitor::new(config.clone())?;
    for y in feed {
        let y = y?;
        let l = stream.push_via(&y, LssPath::Fast)?;
        let moments = table.get(stream.k())?;
        if monitor.advance(l, &moments)?.alarm {
            break;
        }
    }
    Ok(monitor.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub power: f64,
    pub edd: Option<f64>,
}

/// Alarm rate and expected detection delay `Σ(k̂−k*)₊ / #{k̂ ≥ k*}`.
pub fn edd_and_power(outcomes: &[MonitorOutcome], k_star: usize) -> Result<DetectionSummary> {
    let k_hats: Vec<Option<usize>> = outcomes.iter().map(|o| o.k_hat).collect();
    summarize_alarms(&k_hats, k_star)
}

/// Same as [`edd_and_power`] from alarm times alone.
pub fn summarize_alarms(k_hats: &[Option<usize>], k_star: usize) -> Result<DetectionSummary> {
    if k_hats.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let alarms: Vec<usize> = k_hats.iter().flatten().copied().collect();
    let power = alarms.len() as f64 / k_hats.len() as f64;
    let late = alarms.iter().filter(|&&k| k >= k_star).count();
    let total: usize = alarms.iter().map(|&k| k.saturating_sub(k_star)).sum();
    let edd = (late > 0).then(|| total as f64 / late as f64);
    Ok(DetectionSummary { power, edd })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(weight: WeightSpec, c: f64) -> MonitorConfig {
        MonitorConfig::new(300, 0.05, weight, TestFunction::Linear, c, 3.0).unwrap()
    }

    fn unit_moments() -> StepMoments {
        StepMoments {
            mu: 0.0,
            sigma2: 1.0,
            k2: 150,
            c2_k: 1.0,
        }
    }

    #[test]
    fn weight_examples() {
        let w = WeightSpec::power_law(0.0).unwrap();
        assert!((weight_value(&w, 300, 300) - 0.5).abs() < 1e-15);
        assert_eq!(default_burn_in(300), 6);
        assert_eq!(weight_value(&w, 6, 300), 0.0);
        assert!(weight_value(&w, 7, 300) > 0.0);
        let w2 = WeightSpec::log(0.05).unwrap();
        assert!((weight_value(&w2, 300, 300) - 0.273_493_436_891).abs() < 1e-10);
        assert!(WeightSpec::power_law(0.5).is_err());
        assert!(WeightSpec::log(1.5).is_err());
    }

    #[test]
    fn zero_increments_never_alarm() {
        let mut m = Monitor::new(cfg(WeightSpec::power_law(0.0).unwrap(), 1.33027)).unwrap();
        for _ in 0..100 {
            let o = m.advance(0.0, &unit_moments()).unwrap();
            assert_eq!(o.psi, 0.0);
            assert_eq!(o.t_stat, 0.0);
        }
        assert!(!m.finish().alarmed);
    }

    #[test]
    fn single_unit_jump_cannot_cross_table_threshold() {
        let c = cfg(WeightSpec::power_law(0.0).unwrap(), 1.33027);
        let l = (300f64).sqrt();
        for i in [7, 50, 300, 900] {
            let o = step(&c, &unit_moments(), 0.0, i, l).unwrap();
            assert!((o.t_stat - c.weight.rho(i as f64 / 300.0)).abs() < 1e-12);
            assert!(!o.alarm);
        }
    }

    #[test]
    fn unit_threshold_boundary_for_log_weight() {
        let c = cfg(WeightSpec::log(0.05).unwrap(), 1.0);
        let i = 300;
        let boundary = 1.0 / c.weight.rho(1.0);
        let just_below = step(&c, &unit_moments(), boundary - 1e-9, i, 0.0).unwrap();
        let just_above = step(&c, &unit_moments(), boundary + 1e-9, i, 0.0).unwrap();
        assert!(!just_below.alarm);
        assert!(just_above.alarm);
    }

    #[test]
    fn nonfinite_statistic_reported() {
        let c = cfg(WeightSpec::power_law(0.0).unwrap(), 1.0);
        let m = StepMoments {
            sigma2: 0.0,
            ..unit_moments()
        };
        assert!(matches!(step(&c, &m, 0.0, 10, 1.0), Err(Error::NonfiniteStatistic(_))));
    }

    #[test]
    fn burn_in_suppresses_alarms() {
        let mut m = Monitor::new(cfg(WeightSpec::power_law(0.0).unwrap(), 0.01)).unwrap();
        for i in 1..=6 {
            let o = m.advance(1e6, &unit_moments()).unwrap();
            assert!(!o.alarm, "alarm at i = {i}");
        }
        assert!(m.advance(1e6, &unit_moments()).unwrap().alarm);
        assert_eq!(m.k_hat(), Some(307));
    }

    #[test]
    fn edd_examples() {
        let all: Vec<Option<usize>> = vec![Some(360); 5];
        let s = summarize_alarms(&all, 350).unwrap();
        assert_eq!(s.power, 1.0);
        assert_eq!(s.edd, Some(10.0));
        let none = vec![None; 3];
        let s = summarize_alarms(&none, 350).unwrap();
        assert_eq!(s.power, 0.0);
        assert_eq!(s.edd, None);
        // delays 5, −3, 7 and no alarm
        let mixed = vec![Some(355), Some(347), Some(357), None];
        let s = summarize_alarms(&mixed, 350).unwrap();
        assert_eq!(s.power, 0.75);
        assert_eq!(s.edd, Some(6.0));
        assert_eq!(summarize_alarms(&[], 350), Err(Error::EmptyBatch));
    }

    #[test]
    fn trajectory_csv_header() {
        let mut m = Monitor::new(cfg(WeightSpec::power_law(0.0).unwrap(), 1.33)).unwrap();
        m.advance(0.5, &unit_moments()).unwrap();
        let mut buf = Vec::new();
        m.finish().write_trajectory_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,i,L,mu,sigma,Ltilde,Psi,weight,T,alarm");
        assert!(lines.next().unwrap().starts_with("301,1,0.5,0.0,1.0,"));
        let empty = MonitorOutcome {
            alarmed: false,
            k_hat: None,
            trajectory: vec![],
        };
        let mut buf = Vec::new();
        empty.write_trajectory_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,i,L"));
    }

    #[test]
    fn weight_spec_json() {
        let w = WeightSpec::power_law(0.25).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"family":"power_law","gamma":0.25}"#);
        let back: WeightSpec = serde_json::from_str(r#"{"family":"log","alpha":0.05}"#).unwrap();
        assert_eq!(back, WeightSpec::log(0.05).unwrap());
    }
}
