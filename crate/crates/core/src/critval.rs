//! Monte Carlo critical values for `sup_t ρ(t)|W(t)|` and a file-backed cache.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{WeightFamily, WeightSpec};

/// Time grid: step `dt_fine` on `[t_min, t_mid]`, then `dt_coarse` up to `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_min: f64,
    pub t_mid: f64,
    pub t_max: f64,
    pub dt_fine: f64,
    pub dt_coarse: f64,
}

impl Grid {
    /// Uniform grid `0.01, 0.02, …, 10`, the default.
    pub fn standard() -> Self {
        Self {
            t_min: 0.01,
            t_mid: 5.0,
            t_max: 10.0,
            dt_fine: 0.01,
            dt_coarse: 0.01,
        }
    }

    /// `[1e−4, 100]` with steps `1e−3` up to 10 and `1e−2` beyond.
    pub fn fine() -> Self {
        Self {
            t_min: 1e-4,
            t_mid: 10.0,
            t_max: 100.0,
            dt_fine: 1e-3,
            dt_coarse: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t_min > 0.0
            && self.t_min < self.t_mid
            && self.t_mid < self.t_max
            && self.dt_fine > 0.0
            && self.dt_coarse > 0.0
            && self.t_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid grid {self:?}")))
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n_fine = ((self.t_mid - self.t_min) / self.dt_fine + 1e-9).floor() as usize;
        let last = self.t_min + n_fine as f64 * self.dt_fine;
        let n_coarse = ((self.t_max - last) / self.dt_coarse + 1e-9).floor() as usize;
        let mut pts = Vec::with_capacity(n_fine + n_coarse + 1);
        pts.extend((0..=n_fine).map(|j| self.t_min + j as f64 * self.dt_fine));
        pts.extend((1..=n_coarse).map(|j| last + j as f64 * self.dt_coarse));
        pts
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub weight: WeightSpec,
    pub paths: usize,
    pub grid: Grid,
    pub seed: u64,
}

impl CalibrationSpec {
    pub fn new(gamma: f64, paths: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            weight: WeightSpec::power_law(gamma)?,
            paths,
            grid: Grid::standard(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.weight.validate()?;
        if self.paths == 0 {
            return Err(Error::InvalidConfig("at least one path is required".into()));
        }
        Ok(())
    }
}

/// Suprema of `w_j·|W(t_j)|` over the grid for each of several weight
/// profiles, sharing the same Brownian paths. `weights[w][j]` is the weight of
/// profile `w` at grid point `j`. Path `i` draws from its own ChaCha stream, so
/// results do not depend on the thread count.
pub fn simulate_sup_profiles(grid: &[f64], weights: &[Vec<f64>], paths: usize, seed: u64) -> Vec<Vec<f64>> {
    for w in weights {
        assert_eq!(w.len(), grid.len(), "weight profile length must match the grid");
    }
    let steps: Vec<f64> = grid
        .iter()
        .scan(0.0, |prev, &t| {
            let dt = t - *prev;
            *prev = t;
            Some(dt.sqrt())
        })
        .collect();
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sup = vec![0.0f64; weights.len()];
            let mut w = 0.0f64;
            for (j, sd) in steps.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                w += sd * z;
                let a = w.abs();
                for (s, prof) in sup.iter_mut().zip(weights) {
                    let v = prof[j] * a;
                    if v > *s {
                        *s = v;
                    }
                }
            }
            sup
        })
        .collect();
    (0..weights.len())
        .map(|k| per_path.iter().map(|s| s[k]).collect())
        .collect()
}

/// Per-path suprema for one calibration spec.
pub fn simulate_sup(spec: &CalibrationSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let grid = spec.grid.points();
    let profile: Vec<f64> = grid.iter().map(|&t| spec.weight.rho(t)).collect();
    Ok(simulate_sup_profiles(&grid, &[profile], spec.paths, spec.seed).remove(0))
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_type7(samples: &[f64], prob: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of an empty sample");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

fn quantile_sorted(v: &[f64], prob: f64) -> f64 {
    let h = (v.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `(1−α)`-quantile of the simulated suprema, consulting the cache first.
pub fn critical_value(alpha: f64, gamma: f64, spec: &CalibrationSpec, cache: Option<&mut CritvalCache>) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let spec = CalibrationSpec {
        weight: WeightSpec::power_law(gamma)?,
        ..*spec
    };
    let key = CacheKey::new(alpha, gamma, &spec);
    if let Some(c) = cache.as_ref().and_then(|c| c.lookup(&key)) {
        return Ok(c);
    }
    let value = quantile_type7(&simulate_sup(&spec)?, 1.0 - alpha);
    if let Some(c) = cache {
        c.insert(key, value);
    }
    Ok(value)
}

/// Alarm threshold for a weight: 1 for the logarithmic weight, otherwise the
/// simulated critical value of the power-law weight.
pub fn threshold_for(weight: &WeightSpec, alpha: f64, spec: &CalibrationSpec, cache: Option<&mut CritvalCache>) -> Result<f64> {
    match weight.family {
        WeightFamily::Log { .. } => Ok(1.0),
        WeightFamily::PowerLaw { gamma } => critical_value(alpha, gamma, spec, cache),
    }
}

/// One critical value per `(α, γ)` pair, all from a single set of paths.
pub fn critical_table(alphas: &[f64], gammas: &[f64], paths: usize, grid: &Grid, seed: u64) -> Result<Vec<CritvalEntry>> {
    grid.validate()?;
    let pts = grid.points();
    let specs = gammas
        .iter()
        .map(|&g| WeightSpec::power_law(g))
        .collect::<Result<Vec<_>>>()?;
    let profiles: Vec<Vec<f64>> = specs.iter().map(|w| pts.iter().map(|&t| w.rho(t)).collect()).collect();
    let sups = simulate_sup_profiles(&pts, &profiles, paths, seed);
    let mut out = Vec::new();
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
        }
    }
    for (&gamma, s) in gammas.iter().zip(sups) {
        let mut sorted = s;
        sorted.sort_by(f64::total_cmp);
        for &alpha in alphas {
            out.push(CritvalEntry {
                alpha,
                gamma,
                paths,
                grid: *grid,
                seed,
                value: quantile_sorted(&sorted, 1.0 - alpha),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritvalEntry {
    pub alpha: f64,
    pub gamma: f64,
    pub paths: usize,
    pub grid: Grid,
    pub seed: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CacheKey {
    alpha: f64,
    gamma: f64,
    paths: usize,
    grid: Grid,
    seed: u64,
}

impl CacheKey {
    fn new(alpha: f64, gamma: f64, spec: &CalibrationSpec) -> Self {
        Self {
            alpha,
            gamma,
            paths: spec.paths,
            grid: spec.grid,
            seed: spec.seed,
        }
    }

    fn matches(&self, e: &CritvalEntry) -> bool {
        e.alpha == self.alpha && e.gamma == self.gamma && e.paths == self.paths && e.grid == self.grid && e.seed == self.seed
    }
}

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritvalCache {
    pub version: u32,
    pub entries: Vec<CritvalEntry>,
}

impl Default for CritvalCache {
    fn default() -> Self {
        Self {
            version: CACHE_VERSION,
            entries: Vec::new(),
        }
    }
}

impl CritvalCache {
    pub fn from_json(text: &str) -> Result<Self> {
        let cache: Self = serde_json::from_str(text)?;
        if cache.version != CACHE_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported cache version {} (expected {CACHE_VERSION})",
                cache.version
            )));
        }
        Ok(cache)
    }

    /// Load from disk; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Cached value for an `(α, γ)` pair under a calibration spec.
    pub fn get(&self, alpha: f64, gamma: f64, spec: &CalibrationSpec) -> Option<f64> {
        self.lookup(&CacheKey::new(alpha, gamma, spec))
    }

    fn lookup(&self, key: &CacheKey) -> Option<f64> {
        self.entries.iter().find(|e| key.matches(e)).map(|e| e.value)
    }

    fn insert(&mut self, key: CacheKey, value: f64) {
        self.put(CritvalEntry {
            alpha: key.alpha,
            gamma: key.gamma,
            paths: key.paths,
            grid: key.grid,
            seed: key.seed,
            value,
        });
    }

    pub fn put(&mut self, entry: CritvalEntry) {
        let key = CacheKey {
            alpha: entry.alpha,
            gamma: entry.gamma,
            paths: entry.paths,
            grid: entry.grid,
            seed: entry.seed,
        };
        match self.entries.iter_mut().find(|e| key.matches(e)) {
            Some(e) => e.value = entry.value,
            None => self.entries.push(entry),
        }
    }
}
