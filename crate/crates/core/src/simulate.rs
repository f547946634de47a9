//! Seeded Monte Carlo studies: estimator bias, confidence coverage and test
//! level/power.
//!
//! Every replicate (or block of replicates) draws from its own ChaCha20 stream
//! keyed by `(seed, stream index)`, and results are aggregated in index order,
//! so a report depends only on its configuration and seed.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::hypothesis::{self, CBetaPivot, TestMethod};
use crate::intervals;
use crate::macl::{self, MaclOptions};
use crate::mixture_em::{self, MixtureFitOptions};
use crate::model::{Bounds, PairedDataset, PairedObservation, VarianceForm, VarianceModel};

/// Identifier of the generator recorded in every report.
pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.9/seed_from_u64+set_stream";
const FIXED_MEANS_STREAM: u64 = u64::MAX;
const BLOCK: usize = 10_000;

pub const DEFAULT_REPS_MACL: usize = 1000;
pub const DEFAULT_REPS_MIXTURE: usize = 200;
pub const DEFAULT_REPS_COVERAGE: usize = 100_000;
pub const DEFAULT_REPS_POWER: usize = 10_000;

/// ChaCha20 generator for one substream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Means resampled once per study from the given values.
    FixedResample(Vec<f64>),
    /// Means resampled afresh for every replicate.
    RandomResample(Vec<f64>),
    UniformContinuous { lo: f64, hi: f64 },
    UniformDiscrete { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
    /// Bounds attached to the generated datasets.
    pub bounds: Bounds,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, n: usize, seed: u64) -> Result<Self> {
        let s = Scenario {
            kind,
            n,
            seed,
            bounds: Bounds::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("scenario needs n >= 1".into()));
        }
        match &self.kind {
            ScenarioKind::FixedResample(m) | ScenarioKind::RandomResample(m) => {
                if m.is_empty() || m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "resampling scenarios need a non-empty list of finite means".into(),
                    ));
                }
            }
            ScenarioKind::UniformContinuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidArgument(format!("bad uniform range ({lo}, {hi})")));
                }
            }
            ScenarioKind::UniformDiscrete { lo, hi } => {
                if lo > hi {
                    return Err(Error::InvalidArgument(format!("bad discrete range {lo}..{hi}")));
                }
            }
        }
        if self.bounds.lo >= self.bounds.hi {
            return Err(Error::InvalidArgument("scenario bounds need a < b".into()));
        }
        Ok(())
    }

    fn draw_from(&self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        match &self.kind {
            ScenarioKind::FixedResample(m) | ScenarioKind::RandomResample(m) => {
                (0..self.n).map(|_| m[rng.random_range(0..m.len())]).collect()
            }
            ScenarioKind::UniformContinuous { lo, hi } => {
                (0..self.n).map(|_| rng.random_range(*lo..*hi)).collect()
            }
            ScenarioKind::UniformDiscrete { lo, hi } => {
                (0..self.n).map(|_| rng.random_range(*lo..=*hi) as f64).collect()
            }
        }
    }

    /// Latent means for replicate `rep`.
    pub fn means(&self, rep: u64) -> Vec<f64> {
        match self.kind {
            ScenarioKind::FixedResample(_) => self.draw_from(&mut stream_rng(self.seed, FIXED_MEANS_STREAM)),
            _ => self.draw_from(&mut stream_rng(self.seed, rep)),
        }
    }

    /// One mean drawn from the scenario's distribution.
    fn draw_one(&self, rng: &mut ChaCha20Rng) -> f64 {
        match &self.kind {
            ScenarioKind::FixedResample(m) | ScenarioKind::RandomResample(m) => m[rng.random_range(0..m.len())],
            ScenarioKind::UniformContinuous { lo, hi } => rng.random_range(*lo..*hi),
            ScenarioKind::UniformDiscrete { lo, hi } => rng.random_range(*lo..=*hi) as f64,
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    /// `uniform(lo,hi)`, `discrete(lo,hi)`, `fixed(path)` or `random(path)`;
    /// paths are read relative to the working directory.
    fn from_str(s: &str) -> Result<Self> {
        parse_scenario(s, None)
    }
}

fn parse_scenario(s: &str, base: Option<&Path>) -> Result<ScenarioKind> {
    let s = s.trim();
    let (name, rest) = s
        .split_once('(')
        .ok_or_else(|| Error::InvalidArgument(format!("cannot parse scenario '{s}'")))?;
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::InvalidArgument(format!("cannot parse scenario '{s}'")))?;
    let nums = || -> Result<(f64, f64)> {
        let v = parse_list(inner)?;
        match v.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => Err(Error::InvalidArgument(format!("scenario '{s}' needs two numbers"))),
        }
    };
    let means = || -> Result<Vec<f64>> {
        let p = PathBuf::from(inner.trim());
        let p = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        crate::io::read_means_path(&p)
    };
    match name.trim() {
        "uniform" => {
            let (lo, hi) = nums()?;
            Ok(ScenarioKind::UniformContinuous { lo, hi })
        }
        "discrete" => {
            let (lo, hi) = nums()?;
            if lo.fract() != 0.0 || hi.fract() != 0.0 {
                return Err(Error::InvalidArgument("discrete scenario needs integer limits".into()));
            }
            Ok(ScenarioKind::UniformDiscrete {
                lo: lo as i64,
                hi: hi as i64,
            })
        }
        "fixed" => Ok(ScenarioKind::FixedResample(means()?)),
        "random" => Ok(ScenarioKind::RandomResample(means()?)),
        other => Err(Error::InvalidArgument(format!("unknown scenario kind '{other}'"))),
    }
}

/// Comma list (`7,7.5,8`) or inclusive range with step (`7:14:0.1`).
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse number list '{s}'"));
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, end, step] = parts.as_slice() else {
            return Err(bad());
        };
        if !(*step > 0.0) || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        // Rounded to 12 significant digits so 7:14:0.1 yields 7.1, not 7.1000000000000005.
        return Ok((0..=count)
            .map(|k| {
                let v = start + step * k as f64;
                format!("{v:.12}").parse().unwrap_or(v)
            })
            .collect());
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

/// Draws `y1, y2 ~ N(mu_i, h(theta, mu_i))` for the scenario's means.
pub fn generate_replicate(scenario: &Scenario, model: &VarianceModel, rep: u64) -> Result<PairedDataset> {
    scenario.validate()?;
    let mus = scenario.means(rep);
    // Noise always comes from the replicate's own stream; the fixed scenario
    // draws its means from a reserved stream instead.
    let mut rng = stream_rng(scenario.seed, rep);
    if !matches!(scenario.kind, ScenarioKind::FixedResample(_)) {
        // Skip past the draws used for the means.
        scenario.draw_from(&mut rng);
    }
    let mut pairs = Vec::with_capacity(mus.len());
    for (i, mu) in mus.into_iter().enumerate() {
        let sd = model.variance_at(mu)?.sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        pairs.push(PairedObservation {
            id: format!("sim{i}"),
            y1: mu + sd * z1,
            y2: mu + sd * z2,
        });
    }
    PairedDataset::new(pairs, scenario.bounds)
}

pub fn generate_dataset(scenario: &Scenario, model: &VarianceModel) -> Result<PairedDataset> {
    generate_replicate(scenario, model, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Macl,
    Mixture,
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "macl" => Ok(Estimator::Macl),
            "mixture" => Ok(Estimator::Mixture),
            other => Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub parameter: String,
    pub true_value: f64,
    pub mean_bias: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub method: Estimator,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    /// Mixture fits that hit the iteration cap.
    pub unconverged: usize,
    pub rows: Vec<ParamRow>,
    pub estimates: Vec<Vec<f64>>,
    pub seed: u64,
    pub rng: String,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EstimatorOptions {
    pub macl: MaclOptions,
    pub mixture: MixtureFitOptions,
}

pub fn estimator_study(
    scenario: &Scenario,
    truth: &VarianceModel,
    reps: usize,
    method: Estimator,
    opts: &EstimatorOptions,
) -> Result<EstimatorReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("a study needs at least 2 replicates".into()));
    }
    scenario.validate()?;
    let started = Instant::now();
    let form = truth.form();
    let outcomes: Vec<Result<(Vec<f64>, bool)>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate_replicate(scenario, truth, rep)?;
            match method {
                Estimator::Macl => macl::macl_fit(&data, form, &opts.macl).map(|f| (f.theta_hat, true)),
                Estimator::Mixture => {
                    mixture_em::fit_mixture(&data, form, &opts.mixture).map(|(e, _)| (e.theta_hat, e.converged))
                }
            }
        })
        .collect();
    let mut estimates = Vec::new();
    let mut failures = 0;
    let mut unconverged = 0;
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((theta, converged)) => {
                if !converged {
                    unconverged += 1;
                }
                estimates.push(theta);
            }
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures * 10 > reps || estimates.len() < 2 {
        return Err(Error::Study { failures, reps });
    }
    let m = estimates.len() as f64;
    let rows = truth
        .theta()
        .iter()
        .enumerate()
        .map(|(j, &tv)| {
            let mean = estimates.iter().map(|t| t[j]).sum::<f64>() / m;
            let var = estimates.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            ParamRow {
                parameter: format!("theta{}", j + 1),
                true_value: tv,
                mean_bias: mean - tv,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(EstimatorReport {
        method,
        n: scenario.n,
        reps,
        failures,
        unconverged,
        rows,
        estimates,
        seed: scenario.seed,
        rng: RNG_ALGORITHM.to_string(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMethod {
    /// Exact single-mean pivot set (unbounded).
    Exact,
    /// Plug-in single-mean interval.
    Naive,
    /// Projected bivariate region for the difference.
    Region,
    Bonferroni,
    /// Plug-in interval for the difference.
    NaiveDiff,
}

impl CoverageMethod {
    pub fn is_one_parameter(self) -> bool {
        matches!(self, CoverageMethod::Exact | CoverageMethod::Naive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoverageMethod::Exact => "exact",
            CoverageMethod::Naive => "naive",
            CoverageMethod::Region => "region",
            CoverageMethod::Bonferroni => "bonferroni",
            CoverageMethod::NaiveDiff => "naive-diff",
        }
    }
}

impl FromStr for CoverageMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(CoverageMethod::Exact),
            "naive" => Ok(CoverageMethod::Naive),
            "region" => Ok(CoverageMethod::Region),
            "bonferroni" => Ok(CoverageMethod::Bonferroni),
            "naive-diff" => Ok(CoverageMethod::NaiveDiff),
            other => Err(Error::InvalidArgument(format!("unknown coverage method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoverageMode {
    /// One observation per replicate at each listed mean.
    OneParameter { mu_values: Vec<f64> },
    /// Null pairs (`mu1 = mu2`) with means drawn from the scenario.
    TwoSample { scenario: Scenario },
}

#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub theta_true: VarianceModel,
    pub theta_fit: VarianceModel,
    pub mode: CoverageMode,
    pub alpha: f64,
    pub reps: usize,
    pub methods: Vec<CoverageMethod>,
    pub bounds: Bounds,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub mu: Option<f64>,
    pub method: CoverageMethod,
    pub reps: usize,
    pub coverage: f64,
    pub non_coverage: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub rows: Vec<CoverageRow>,
    pub seed: u64,
    pub rng: String,
    pub elapsed_secs: f64,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Splits `reps` into fixed blocks; each block gets its own stream.
fn blocks(reps: usize) -> Vec<(u64, usize)> {
    (0..reps.div_ceil(BLOCK))
        .map(|b| (b as u64, BLOCK.min(reps - b * BLOCK)))
        .collect()
}

pub fn coverage_study(cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("coverage study needs reps >= 1".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
    }
    let started = Instant::now();
    let mut rows = Vec::new();
    match &cfg.mode {
        CoverageMode::OneParameter { mu_values } => {
            if let Some(m) = cfg.methods.iter().find(|m| !m.is_one_parameter()) {
                return Err(Error::InvalidArgument(format!(
                    "method {} needs the two-sample mode",
                    m.as_str()
                )));
            }
            for (k, &mu) in mu_values.iter().enumerate() {
                let sd = cfg.theta_true.variance_at(mu)?.sqrt();
                let counts: Vec<Result<Vec<usize>>> = blocks(cfg.reps)
                    .into_par_iter()
                    .map(|(b, size)| {
                        let mut rng = stream_rng(cfg.seed, ((k as u64) << 32) | b);
                        let mut hits = vec![0usize; cfg.methods.len()];
                        for _ in 0..size {
                            let z: f64 = rng.sample(StandardNormal);
                            let y = mu + sd * z;
                            for (slot, m) in hits.iter_mut().zip(&cfg.methods) {
                                let covered = match m {
                                    CoverageMethod::Exact => {
                                        intervals::ci_mu_exact(y, &cfg.theta_fit, cfg.alpha, None)?.contains(mu)
                                    }
                                    _ => intervals::ci_mu_naive(y, &cfg.theta_fit, cfg.alpha)?.contains(mu),
                                };
                                *slot += covered as usize;
                            }
                        }
                        Ok(hits)
                    })
                    .collect();
                let mut total = vec![0usize; cfg.methods.len()];
                for c in counts {
                    for (t, v) in total.iter_mut().zip(c?) {
                        *t += v;
                    }
                }
                for (m, hits) in cfg.methods.iter().zip(total) {
                    let cov = hits as f64 / cfg.reps as f64;
                    rows.push(CoverageRow {
                        mu: Some(mu),
                        method: *m,
                        reps: cfg.reps,
                        coverage: cov,
                        non_coverage: 1.0 - cov,
                        se: binomial_se(cov, cfg.reps),
                    });
                }
            }
        }
        CoverageMode::TwoSample { scenario } => {
            if let Some(m) = cfg.methods.iter().find(|m| m.is_one_parameter()) {
                return Err(Error::InvalidArgument(format!(
                    "method {} needs the one-parameter mode",
                    m.as_str()
                )));
            }
            let counts: Vec<Result<Vec<usize>>> = blocks(cfg.reps)
                .into_par_iter()
                .map(|(b, size)| {
                    let mut rng = stream_rng(cfg.seed, b);
                    let mut hits = vec![0usize; cfg.methods.len()];
                    for _ in 0..size {
                        let mu = scenario.draw_one(&mut rng);
                        let sd = cfg.theta_true.variance_at(mu)?.sqrt();
                        let z1: f64 = rng.sample(StandardNormal);
                        let z2: f64 = rng.sample(StandardNormal);
                        let (y1, y2) = (mu + sd * z1, mu + sd * z2);
                        for (slot, m) in hits.iter_mut().zip(&cfg.methods) {
                            let covered = match m {
                                CoverageMethod::Region => intervals::region_contains(
                                    y1,
                                    y2,
                                    &cfg.theta_fit,
                                    cfg.alpha,
                                    cfg.bounds,
                                    0.0,
                                )?,
                                CoverageMethod::Bonferroni => {
                                    intervals::ci_diff_bonferroni(y1, y2, &cfg.theta_fit, cfg.alpha, cfg.bounds)?
                                        .contains(0.0)
                                }
                                _ => intervals::ci_diff_naive(y1, y2, &cfg.theta_fit, cfg.alpha)?.contains(0.0),
                            };
                            *slot += covered as usize;
                        }
                    }
                    Ok(hits)
                })
                .collect();
            let mut total = vec![0usize; cfg.methods.len()];
            for c in counts {
                for (t, v) in total.iter_mut().zip(c?) {
                    *t += v;
                }
            }
            for (m, hits) in cfg.methods.iter().zip(total) {
                let cov = hits as f64 / cfg.reps as f64;
                rows.push(CoverageRow {
                    mu: None,
                    method: *m,
                    reps: cfg.reps,
                    coverage: cov,
                    non_coverage: 1.0 - cov,
                    se: binomial_se(cov, cfg.reps),
                });
            }
        }
    }
    Ok(CoverageReport {
        alpha: cfg.alpha,
        rows,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct PowerConfig {
    pub theta: VarianceModel,
    pub mu_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub reps: usize,
    pub beta: f64,
    /// Nominal test level; a p-value at or below it counts as a rejection.
    pub level: f64,
    pub bounds: Bounds,
    pub seed: u64,
    pub cbeta_pivot: CBetaPivot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub mu: f64,
    pub k: f64,
    pub method: TestMethod,
    pub reps: usize,
    pub rejection_rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub level: f64,
    pub beta: f64,
    pub rows: Vec<PowerRow>,
    pub seed: u64,
    pub rng: String,
    pub elapsed_secs: f64,
}

/// For each `(mu, k)`: `Y1 ~ N(mu, h(mu))`, `Y2 ~ N(mu_k, h(mu_k))` with
/// `mu_k = mu + k sqrt(h(mu))`, and the share of p-values at or below `level`.
pub fn power_study(cfg: &PowerConfig) -> Result<PowerReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("power study needs reps >= 1".into()));
    }
    let started = Instant::now();
    let cells: Vec<(f64, f64)> = cfg
        .mu_grid
        .iter()
        .flat_map(|&mu| cfg.k_grid.iter().map(move |&k| (mu, k)))
        .collect();
    let mut rows = Vec::new();
    for (c, &(mu, k)) in cells.iter().enumerate() {
        let sd1 = cfg.theta.variance_at(mu)?.sqrt();
        let mu_k = mu + k * sd1;
        let sd2 = cfg.theta.variance_at(mu_k)?.sqrt();
        let counts: Vec<Result<[usize; 3]>> = blocks(cfg.reps)
            .into_par_iter()
            .map(|(b, size)| {
                let mut rng = stream_rng(cfg.seed, ((c as u64) << 32) | b);
                let mut hits = [0usize; 3];
                for _ in 0..size {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let (y1, y2) = (mu + sd1 * z1, mu_k + sd2 * z2);
                    for (slot, m) in hits.iter_mut().zip(TestMethod::ALL) {
                        let p = hypothesis::pvalue(m, y1, y2, &cfg.theta, cfg.bounds, cfg.beta, cfg.cbeta_pivot)?;
                        *slot += (p.p_value <= cfg.level) as usize;
                    }
                }
                Ok(hits)
            })
            .collect();
        let mut total = [0usize; 3];
        for h in counts {
            for (t, v) in total.iter_mut().zip(h?) {
                *t += v;
            }
        }
        for (m, hits) in TestMethod::ALL.into_iter().zip(total) {
            let rate = hits as f64 / cfg.reps as f64;
            rows.push(PowerRow {
                mu,
                k,
                method: m,
                reps: cfg.reps,
                rejection_rate: rate,
                se: binomial_se(rate, cfg.reps),
            });
        }
    }
    Ok(PowerReport {
        level: cfg.level,
        beta: cfg.beta,
        rows,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Estimator,
    Coverage,
    Power,
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "estimator" => Ok(StudyKind::Estimator),
            "coverage" => Ok(StudyKind::Coverage),
            "power" => Ok(StudyKind::Power),
            other => Err(Error::InvalidArgument(format!("unknown study '{other}'"))),
        }
    }
}

/// Flat `key = value` study configuration. Unknown keys are rejected.
///
/// Keys: `theta`, `form`, `scenario`, `n`, `reps`, `seed`, `alpha`, `beta`,
/// `mu_grid`, `k_grid`, plus `method` (macl|mixture), `theta_fit`, `methods`,
/// `mode` (one-parameter|two-sample), `level`, `a`, `b`, `d` and `cbeta_pivot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub form: VarianceForm,
    pub theta: Vec<f64>,
    pub theta_fit: Option<Vec<f64>>,
    pub scenario: ScenarioKind,
    pub n: usize,
    pub reps: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub level: f64,
    pub mu_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub method: Estimator,
    pub methods: Vec<String>,
    pub mode: String,
    pub bounds: Bounds,
    pub d: f64,
    pub cbeta_pivot: CBetaPivot,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            form: VarianceForm::ExpLinear,
            theta: vec![5.0, -1.0],
            theta_fit: None,
            scenario: ScenarioKind::UniformContinuous { lo: 8.0, hi: 12.0 },
            n: 2000,
            reps: None,
            seed: 1,
            alpha: 0.05,
            beta: hypothesis::SIMULATION_BETA,
            level: 0.05,
            mu_grid: parse_list("7:14:0.1").expect("static grid"),
            k_grid: vec![0.0, 1.0, 2.0, 3.0],
            method: Estimator::Macl,
            methods: Vec::new(),
            mode: "one-parameter".into(),
            bounds: Bounds::default(),
            d: mixture_em::DEFAULT_D,
            cbeta_pivot: CBetaPivot::PairMean,
        }
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, None)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse_with_base(&text, path.parent())
    }

    fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = StudyConfig::default();
        let (mut a, mut b) = (cfg.bounds.lo, cfg.bounds.hi);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = lineno + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Data {
                row,
                message: format!("expected key=value, got '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let wrap = |e: Error| Error::Data {
                row,
                message: e.to_string(),
            };
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Data {
                    row,
                    message: format!("bad number '{v}' for {key}"),
                })
            };
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>().map_err(|_| Error::Data {
                    row,
                    message: format!("bad integer '{v}' for {key}"),
                })
            };
            match key {
                "theta" => cfg.theta = parse_list(value).map_err(wrap)?,
                "theta_fit" => cfg.theta_fit = Some(parse_list(value).map_err(wrap)?),
                "form" => cfg.form = value.parse().map_err(wrap)?,
                "scenario" => cfg.scenario = parse_scenario(value, base).map_err(wrap)?,
                "n" => cfg.n = int(value)? as usize,
                "reps" => cfg.reps = Some(int(value)? as usize),
                "seed" => cfg.seed = int(value)?,
                "alpha" => cfg.alpha = num(value)?,
                "beta" => cfg.beta = num(value)?,
                "level" => cfg.level = num(value)?,
                "mu_grid" => cfg.mu_grid = parse_list(value).map_err(wrap)?,
                "k_grid" => cfg.k_grid = parse_list(value).map_err(wrap)?,
                "method" => cfg.method = value.parse().map_err(wrap)?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "mode" => cfg.mode = value.to_string(),
                "a" => a = num(value)?,
                "b" => b = num(value)?,
                "d" => cfg.d = num(value)?,
                "cbeta_pivot" => cfg.cbeta_pivot = value.parse().map_err(wrap)?,
                other => {
                    return Err(Error::Data {
                        row,
                        message: format!("unknown config key '{other}'"),
                    })
                }
            }
        }
        cfg.bounds = Bounds::new(a, b)?;
        VarianceModel::new(cfg.form, cfg.theta.clone())?;
        if let Some(t) = &cfg.theta_fit {
            VarianceModel::new(cfg.form, t.clone())?;
        }
        Ok(cfg)
    }

    fn truth(&self) -> VarianceModel {
        VarianceModel::new(self.form, self.theta.clone()).expect("validated at parse time")
    }

    fn fit_model(&self) -> VarianceModel {
        match &self.theta_fit {
            Some(t) => VarianceModel::new(self.form, t.clone()).expect("validated at parse time"),
            None => self.truth(),
        }
    }

    fn scenario(&self) -> Result<Scenario> {
        let s = Scenario {
            kind: self.scenario.clone(),
            n: self.n,
            seed: self.seed,
            bounds: self.bounds,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StudyReport {
    Estimator(EstimatorReport),
    Coverage(CoverageReport),
    Power(PowerReport),
}

pub fn run_study(kind: StudyKind, cfg: &StudyConfig) -> Result<StudyReport> {
    match kind {
        StudyKind::Estimator => {
            let reps = cfg.reps.unwrap_or(match cfg.method {
                Estimator::Macl => DEFAULT_REPS_MACL,
                Estimator::Mixture => DEFAULT_REPS_MIXTURE,
            });
            let opts = EstimatorOptions {
                macl: MaclOptions::default(),
                mixture: MixtureFitOptions {
                    d: cfg.d,
                    ..Default::default()
                },
            };
            estimator_study(&cfg.scenario()?, &cfg.truth(), reps, cfg.method, &opts).map(StudyReport::Estimator)
        }
        StudyKind::Coverage => {
            let mode = match cfg.mode.as_str() {
                "one-parameter" => CoverageMode::OneParameter {
                    mu_values: cfg.mu_grid.clone(),
                },
                "two-sample" => CoverageMode::TwoSample {
                    scenario: cfg.scenario()?,
                },
                other => return Err(Error::InvalidArgument(format!("unknown coverage mode '{other}'"))),
            };
            let methods = if cfg.methods.is_empty() {
                match mode {
                    CoverageMode::OneParameter { .. } => vec![CoverageMethod::Exact, CoverageMethod::Naive],
                    CoverageMode::TwoSample { .. } => vec![
                        CoverageMethod::Region,
                        CoverageMethod::Bonferroni,
                        CoverageMethod::NaiveDiff,
                    ],
                }
            } else {
                cfg.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?
            };
            coverage_study(&CoverageConfig {
                theta_true: cfg.truth(),
                theta_fit: cfg.fit_model(),
                mode,
                alpha: cfg.alpha,
                reps: cfg.reps.unwrap_or(DEFAULT_REPS_COVERAGE),
                methods,
                bounds: cfg.bounds,
                seed: cfg.seed,
            })
            .map(StudyReport::Coverage)
        }
        StudyKind::Power => power_study(&PowerConfig {
            theta: cfg.truth(),
            mu_grid: cfg.mu_grid.clone(),
            k_grid: cfg.k_grid.clone(),
            reps: cfg.reps.unwrap_or(DEFAULT_REPS_POWER),
            beta: cfg.beta,
            level: cfg.level,
            bounds: cfg.bounds,
            seed: cfg.seed,
            cbeta_pivot: cfg.cbeta_pivot,
        })
        .map(StudyReport::Power),
    }
}

#[derive(Serialize)]
struct EstimatorCsvRow<'a> {
    method: &'a str,
    n: usize,
    reps: usize,
    failures: usize,
    parameter: &'a str,
    true_value: f64,
    bias: f64,
    std: f64,
}

#[derive(Serialize)]
struct CoverageCsvRow<'a> {
    mu: Option<f64>,
    method: &'a str,
    reps: usize,
    coverage: f64,
    non_coverage: f64,
    se: f64,
}

#[derive(Serialize)]
struct PowerCsvRow<'a> {
    mu: f64,
    k: f64,
    method: &'a str,
    reps: usize,
    rejection_rate: f64,
    se: f64,
}

impl StudyReport {
    /// One CSV row per table cell. Timing is left out so reruns are byte-identical.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        match self {
            StudyReport::Estimator(r) => {
                let method = match r.method {
                    Estimator::Macl => "macl",
                    Estimator::Mixture => "mixture",
                };
                for row in &r.rows {
                    out.serialize(EstimatorCsvRow {
                        method,
                        n: r.n,
                        reps: r.reps,
                        failures: r.failures,
                        parameter: &row.parameter,
                        true_value: row.true_value,
                        bias: row.mean_bias,
                        std: row.std,
                    })
                    .map_err(io)?;
                }
            }
            StudyReport::Coverage(r) => {
                for row in &r.rows {
                    out.serialize(CoverageCsvRow {
                        mu: row.mu,
                        method: row.method.as_str(),
                        reps: row.reps,
                        coverage: row.coverage,
                        non_coverage: row.non_coverage,
                        se: row.se,
                    })
                    .map_err(io)?;
                }
            }
            StudyReport::Power(r) => {
                for row in &r.rows {
                    out.serialize(PowerCsvRow {
                        mu: row.mu,
                        k: row.k,
                        method: row.method.as_str(),
                        reps: row.reps,
                        rejection_rate: row.rejection_rate,
                        se: row.se,
                    })
                    .map_err(io)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Upper `1 - alpha` chi-squared(2) quantile, re-exported for study users.
pub fn region_threshold(alpha: f64) -> Result<f64> {
    dist::chi2_2_quantile(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, seed: u64) -> Scenario {
        Scenario::new(ScenarioKind::UniformContinuous { lo: 8.0, hi: 12.0 }, n, seed).unwrap()
    }

    #[test]
    fn vanishing_noise_reproduces_means() {
        let s = uniform(100, 3);
        let d = generate_dataset(&s, &VarianceModel::exp_linear(-50.0, 0.0)).unwrap();
        for (p, mu) in d.pairs().iter().zip(s.means(0)) {
            assert!((p.y1 - mu).abs() < 1e-9 && (p.y2 - mu).abs() < 1e-9);
        }
    }

    #[test]
    fn discrete_frequencies() {
        let s = Scenario::new(ScenarioKind::UniformDiscrete { lo: 8, hi: 12 }, 100_000, 5).unwrap();
        let mus = s.means(0);
        for v in 8..=12 {
            let f = mus.iter().filter(|&&m| m == v as f64).count() as f64 / mus.len() as f64;
            assert!((f - 0.2).abs() < 0.005, "{v}: {f}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let m = VarianceModel::exp_linear(5.0, -1.0);
        let a = generate_dataset(&uniform(500, 42), &m).unwrap();
        let b = generate_dataset(&uniform(500, 42), &m).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&uniform(500, 43), &m).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_scenario_shares_means_across_replicates() {
        let pool: Vec<f64> = (0..50).map(|k| 8.0 + 0.08 * k as f64).collect();
        let fixed = Scenario::new(ScenarioKind::FixedResample(pool.clone()), 30, 9).unwrap();
        assert_eq!(fixed.means(0), fixed.means(7));
        let random = Scenario::new(ScenarioKind::RandomResample(pool), 30, 9).unwrap();
        assert_ne!(random.means(0), random.means(7));
        assert!(Scenario::new(ScenarioKind::RandomResample(vec![]), 3, 1).is_err());
        assert!(Scenario::new(ScenarioKind::UniformContinuous { lo: 2.0, hi: 1.0 }, 3, 1).is_err());
    }

    #[test]
    fn standardized_differences_have_unit_moments() {
        let m = VarianceModel::exp_linear(5.0, -0.5);
        let s = uniform(1_000_000, 8);
        let d = generate_dataset(&s, &m).unwrap();
        let mus = s.means(0);
        let z: Vec<f64> = d
            .pairs()
            .iter()
            .zip(&mus)
            .map(|(p, &mu)| (p.y1 - p.y2) / (2.0 * m.h(mu)).sqrt())
            .collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("7,7.5, 8").unwrap(), vec![7.0, 7.5, 8.0]);
        let g = parse_list("7:14:0.1").unwrap();
        assert_eq!(g.len(), 71);
        assert_eq!(g[1], 7.1);
        assert_eq!(*g.last().unwrap(), 14.0);
        assert!(parse_list("a,b").is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = StudyConfig::parse(
            "# large-variance setting\ntheta = 5,-0.5\nform=exp-linear\nscenario=uniform(8,12)\nn=200\nreps=10\nseed=7\n",
        )
        .unwrap();
        assert_eq!(cfg.theta, vec![5.0, -0.5]);
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.reps, Some(10));
        assert!(matches!(
            StudyConfig::parse("theta=5,-1\nbogus=3\n"),
            Err(Error::Data { row: 2, .. })
        ));
        assert!(StudyConfig::parse("theta=5\n").is_err());
    }

    #[test]
    fn exact_one_parameter_coverage() {
        let truth = VarianceModel::exp_linear(5.0, -0.5);
        let report = coverage_study(&CoverageConfig {
            theta_true: truth.clone(),
            theta_fit: truth,
            mode: CoverageMode::OneParameter { mu_values: vec![9.0] },
            alpha: 0.05,
            reps: 100_000,
            methods: vec![CoverageMethod::Exact],
            bounds: Bounds::default(),
            seed: 12,
        })
        .unwrap();
        let r = &report.rows[0];
        assert!((r.non_coverage - 0.05).abs() < 0.002, "{}", r.non_coverage);
    }

    #[test]
    fn study_is_reproducible() {
        let cfg = StudyConfig::parse("theta=5,-1\nn=200\nreps=4\nseed=3\n").unwrap();
        let a = run_study(StudyKind::Estimator, &cfg).unwrap();
        let b = run_study(StudyKind::Estimator, &cfg).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = StudyConfig::parse("theta=5,-1\nn=300\nreps=6\nseed=31\n").unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_study(StudyKind::Estimator, &cfg)).unwrap();
        let b = four.install(|| run_study(StudyKind::Estimator, &cfg)).unwrap();
        match (a, b) {
            (StudyReport::Estimator(x), StudyReport::Estimator(y)) => {
                assert_eq!(x.estimates, y.estimates);
                assert_eq!(x.rows, y.rows);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn too_few_reps_rejected() {
        let m = VarianceModel::exp_linear(5.0, -1.0);
        assert!(estimator_study(&uniform(100, 1), &m, 1, Estimator::Macl, &Default::default()).is_err());
    }
}
