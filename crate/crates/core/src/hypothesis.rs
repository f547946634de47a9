//! p-values for `H0: mu1 = mu2` from one pair of observations.
//!
//! Under the null `(Y1 - Y2)^2 / (2 h(theta, mu))` is chi-squared(1), but the
//! common mean `mu` is a nuisance parameter. The naive test plugs in the pair
//! mean; the conservative test takes the supremum over `[a, b]`; the
//! Berger-Boos test takes the supremum over a `1 - beta` confidence set for
//! `mu` and adds `beta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::intervals::{self, golden_min, Interval};
use crate::model::{Bounds, VarianceModel};

/// Default `beta` for data analysis.
pub const DEFAULT_BETA: f64 = 1e-6;
/// Default `beta` in the power simulations.
pub const SIMULATION_BETA: f64 = 1e-3;
const SUP_GRID: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Naive,
    Conservative,
    BergerBoos,
}

impl TestMethod {
    pub const ALL: [TestMethod; 3] = [TestMethod::Naive, TestMethod::Conservative, TestMethod::BergerBoos];

    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::Naive => "naive",
            TestMethod::Conservative => "conservative",
            TestMethod::BergerBoos => "berger-boos",
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "naive" => Ok(TestMethod::Naive),
            "conservative" => Ok(TestMethod::Conservative),
            "berger-boos" => Ok(TestMethod::BergerBoos),
            other => Err(Error::InvalidArgument(format!("unknown test method '{other}'"))),
        }
    }
}

/// Pivot used to build the nuisance confidence set of the Berger-Boos test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CBetaPivot {
    /// `(Ybar - mu)^2 / (h(mu) / 2)` against chi-squared(1).
    #[default]
    PairMean,
    /// `((y1 - mu)^2 + (y2 - mu)^2) / h(mu)` against chi-squared(2).
    TwoObservation,
}

impl FromStr for CBetaPivot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pair-mean" => Ok(CBetaPivot::PairMean),
            "two-obs" | "two-observation" => Ok(CBetaPivot::TwoObservation),
            other => Err(Error::InvalidArgument(format!("unknown C_beta pivot '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    /// `(y1 - y2)^2 / (2 h)` with `h` at the plug-in or supremum point.
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub beta: Option<f64>,
    /// The mean at which `h` was evaluated.
    pub mu_sup: Option<f64>,
    /// Set when the nuisance confidence set missed `[a, b]` entirely.
    pub empty_nuisance_set: bool,
}

fn check_pair(y1: f64, y2: f64) -> Result<()> {
    if y1.is_finite() && y2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "observations must be finite, got ({y1}, {y2})"
        )))
    }
}

pub fn pvalue_naive(y1: f64, y2: f64, model: &VarianceModel) -> Result<TestResult> {
    check_pair(y1, y2)?;
    let mid = 0.5 * (y1 + y2);
    let d = y1 - y2;
    let stat = d * d / (2.0 * model.variance_at(mid)?);
    Ok(TestResult {
        method: TestMethod::Naive,
        statistic: Some(stat),
        p_value: dist::chi2_1_sf(stat),
        beta: None,
        mu_sup: Some(mid),
        empty_nuisance_set: false,
    })
}

/// `sup_{mu in [lo, hi]} P(Z^2 > d2 / (2 h(mu)))`, returning `(p, argmax)`.
fn sup_tail(d2: f64, model: &VarianceModel, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let tail = |mu: f64| dist::chi2_1_sf(d2 / (2.0 * model.h(mu)));
    model.variance_at(lo)?;
    model.variance_at(hi)?;
    if let Some(t2) = model.exp_linear_slope() {
        // h is monotone, so the tail probability peaks where h is largest.
        let mu = if t2 > 0.0 { hi } else { lo };
        return Ok((tail(mu), mu));
    }
    if lo == hi {
        return Ok((tail(lo), lo));
    }
    let step = (hi - lo) / (SUP_GRID - 1) as f64;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..SUP_GRID {
        let mu = lo + step * k as f64;
        let v = tail(mu);
        if v > best.0 {
            best = (v, mu);
        }
    }
    let (a, b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let (mu, neg) = golden_min(|mu| -tail(mu), a, b, 60);
    if -neg > best.0 {
        best = (-neg, mu);
    }
    Ok(best)
}

pub fn pvalue_conservative(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    bounds: Bounds,
) -> Result<TestResult> {
    check_pair(y1, y2)?;
    let d2 = (y1 - y2).powi(2);
    let (p, mu) = sup_tail(d2, model, bounds.lo, bounds.hi)?;
    Ok(TestResult {
        method: TestMethod::Conservative,
        statistic: Some(d2 / (2.0 * model.h(mu))),
        p_value: p,
        beta: None,
        mu_sup: Some(mu),
        empty_nuisance_set: false,
    })
}

/// Hull of the `1 - beta` confidence set for the common mean under the null,
/// intersected with `bounds`. `None` when the intersection is empty.
pub fn nuisance_set(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    bounds: Bounds,
    beta: f64,
    pivot: CBetaPivot,
) -> Result<Option<Interval>> {
    match pivot {
        CBetaPivot::PairMean => {
            // Ybar ~ N(mu, h(mu) / 2) exactly under the null.
            let half = model.scaled(0.5);
            match intervals::ci_mu_exact(0.5 * (y1 + y2), &half, beta, Some(bounds)) {
                Ok(set) => Ok(Some(set.hull)),
                Err(Error::EmptySet(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        CBetaPivot::TwoObservation => {
            model.check_on(bounds)?;
            let q = dist::chi2_2_quantile(beta)?;
            let comps = intervals::invert_on_grid(
                |mu| ((y1 - mu).powi(2) + (y2 - mu).powi(2)) / model.h(mu),
                q,
                bounds,
                &[0.5 * (y1 + y2)],
            );
            Ok(match (comps.first(), comps.last()) {
                (Some(f), Some(l)) => Some(Interval::new(f.lo, l.hi)),
                _ => None,
            })
        }
    }
}

pub fn pvalue_berger_boos(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    bounds: Bounds,
    beta: f64,
) -> Result<TestResult> {
    pvalue_berger_boos_with(y1, y2, model, bounds, beta, CBetaPivot::PairMean)
}

pub fn pvalue_berger_boos_with(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    bounds: Bounds,
    beta: f64,
    pivot: CBetaPivot,
) -> Result<TestResult> {
    check_pair(y1, y2)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    let d2 = (y1 - y2).powi(2);
    let Some(set) = nuisance_set(y1, y2, model, bounds, beta, pivot)? else {
        log::info!("nuisance set for ({y1}, {y2}) misses the bounds; p-value is beta");
        return Ok(TestResult {
            method: TestMethod::BergerBoos,
            statistic: None,
            p_value: beta,
            beta: Some(beta),
            mu_sup: None,
            empty_nuisance_set: true,
        });
    };
    let (p, mu) = sup_tail(d2, model, set.lo, set.hi)?;
    Ok(TestResult {
        method: TestMethod::BergerBoos,
        statistic: Some(d2 / (2.0 * model.h(mu))),
        p_value: (p + beta).min(1.0),
        beta: Some(beta),
        mu_sup: Some(mu),
        empty_nuisance_set: false,
    })
}

/// Dispatches on `method`; `beta` is ignored unless it is Berger-Boos.
pub fn pvalue(
    method: TestMethod,
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    bounds: Bounds,
    beta: f64,
    pivot: CBetaPivot,
) -> Result<TestResult> {
    match method {
        TestMethod::Naive => pvalue_naive(y1, y2, model),
        TestMethod::Conservative => pvalue_conservative(y1, y2, model, bounds),
        TestMethod::BergerBoos => pvalue_berger_boos_with(y1, y2, model, bounds, beta, pivot),
    }
}
