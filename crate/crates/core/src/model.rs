//! Paired-replicate data model and parametric variance functions.
//!
//! Each peptide `i` is measured twice on the natural-log scale,
//! `Y_i1, Y_i2 ~ N(mu_i, h(theta, mu_i))` independently, with `mu_i` unknown.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default support of the latent means, on the natural-log intensity scale.
pub const DEFAULT_BOUNDS: Bounds = Bounds { lo: 7.3, hi: 13.9 };

/// Functional form of the variance function `h(theta, mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceForm {
    /// `exp(t1 + t2 * mu)`
    ExpLinear,
    /// `exp(t1) * mu^t2`, defined for `mu > 0`
    Power,
    /// `exp(t1 + t2 * mu) + exp(t3)`
    #[serde(rename = "exp-linear-const")]
    ExpLinearPlusConst,
}

impl VarianceForm {
    pub fn n_params(self) -> usize {
        match self {
            VarianceForm::ExpLinear | VarianceForm::Power => 2,
            VarianceForm::ExpLinearPlusConst => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarianceForm::ExpLinear => "exp-linear",
            VarianceForm::Power => "power",
            VarianceForm::ExpLinearPlusConst => "exp-linear-const",
        }
    }
}

impl fmt::Display for VarianceForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exp-linear" => Ok(VarianceForm::ExpLinear),
            "power" => Ok(VarianceForm::Power),
            "exp-linear-const" => Ok(VarianceForm::ExpLinearPlusConst),
            other => Err(Error::InvalidArgument(format!(
                "unknown variance form '{other}' (expected exp-linear, power or exp-linear-const)"
            ))),
        }
    }
}

/// A variance function with its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    form: VarianceForm,
    theta: Vec<f64>,
}

/// Value, gradient and Hessian of `h` with respect to `theta` at one `mu`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VarianceDerivs {
    pub h: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl VarianceModel {
    pub fn new(form: VarianceForm, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != form.n_params() {
            return Err(Error::InvalidArgument(format!(
                "{form} takes {} coefficients, got {}",
                form.n_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coefficients must be finite, got {theta:?}"
            )));
        }
        Ok(VarianceModel { form, theta })
    }

    pub fn exp_linear(t1: f64, t2: f64) -> Self {
        VarianceModel::new(VarianceForm::ExpLinear, vec![t1, t2]).expect("finite coefficients")
    }

    pub fn form(&self) -> VarianceForm {
        self.form
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `h(theta, mu)`, checked for domain and finiteness.
    pub fn variance_at(&self, mu: f64) -> Result<f64> {
        if self.form == VarianceForm::Power && mu <= 0.0 {
            return Err(Error::Domain(format!(
                "power variance requires mu > 0, got {mu}"
            )));
        }
        let h = self.h(mu);
        if h.is_finite() && h > 0.0 {
            Ok(h)
        } else {
            Err(Error::NonFiniteVariance { mu })
        }
    }

    /// Unchecked evaluation for inner loops; callers guarantee the domain.
    #[inline]
    pub(crate) fn h(&self, mu: f64) -> f64 {
        let t = &self.theta;
        match self.form {
            VarianceForm::ExpLinear => (t[0] + t[1] * mu).exp(),
            VarianceForm::Power => (t[0] + t[1] * mu.ln()).exp(),
            VarianceForm::ExpLinearPlusConst => (t[0] + t[1] * mu).exp() + t[2].exp(),
        }
    }

    pub(crate) fn derivs(&self, mu: f64) -> VarianceDerivs {
        let t = &self.theta;
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        let (h, x, a) = match self.form {
            VarianceForm::ExpLinear => {
                let a = (t[0] + t[1] * mu).exp();
                (a, mu, a)
            }
            VarianceForm::Power => {
                let x = mu.ln();
                let a = (t[0] + t[1] * x).exp();
                (a, x, a)
            }
            VarianceForm::ExpLinearPlusConst => {
                let a = (t[0] + t[1] * mu).exp();
                let c = t[2].exp();
                grad[2] = c;
                hess[2][2] = c;
                (a + c, mu, a)
            }
        };
        grad[0] = a;
        grad[1] = a * x;
        hess[0][0] = a;
        hess[0][1] = a * x;
        hess[1][0] = a * x;
        hess[1][1] = a * x * x;
        VarianceDerivs { h, grad, hess }
    }

    /// The model for `c * h(theta, mu)`, `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let shift = c.ln();
        let mut theta = self.theta.clone();
        theta[0] += shift;
        if self.form == VarianceForm::ExpLinearPlusConst {
            theta[2] += shift;
        }
        VarianceModel {
            form: self.form,
            theta,
        }
    }

    /// Slope of an exp-linear model, `None` for the other forms.
    pub fn exp_linear_slope(&self) -> Option<f64> {
        (self.form == VarianceForm::ExpLinear).then(|| self.theta[1])
    }

    /// Checks that `h` is positive and finite at both ends of `bounds`
    /// (and, for the power form, that the bounds are positive).
    pub fn check_on(&self, bounds: Bounds) -> Result<()> {
        self.variance_at(bounds.lo)?;
        self.variance_at(bounds.hi)?;
        Ok(())
    }
}

/// Free-function form of [`VarianceModel::variance_at`].
pub fn variance_at(model: &VarianceModel, mu: f64) -> Result<f64> {
    model.variance_at(mu)
}

/// Closed interval `[lo, hi]` with `lo <= hi` for the latent means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "bounds must be finite with a <= b, got ({lo}, {hi})"
            )));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl Default for Bounds {
    fn default() -> Self {
        DEFAULT_BOUNDS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedObservation {
    pub id: String,
    pub y1: f64,
    pub y2: f64,
}

impl PairedObservation {
    pub fn new(id: impl Into<String>, y1: f64, y2: f64) -> Result<Self> {
        let id = id.into();
        if !(y1.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pair '{id}' has non-finite intensity ({y1}, {y2})"
            )));
        }
        Ok(PairedObservation { id, y1, y2 })
    }

    pub fn stats(&self) -> PairStats {
        pair_stats(self)
    }
}

/// Pair mean and within-pair variance statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub ybar: f64,
    /// `(y1 - y2)^2 / 2`, the sum of squared deviations about `ybar`.
    pub s2: f64,
}

pub fn pair_stats(pair: &PairedObservation) -> PairStats {
    let d = pair.y1 - pair.y2;
    PairStats {
        ybar: 0.5 * (pair.y1 + pair.y2),
        s2: 0.5 * d * d,
    }
}

/// `N` pairs plus the assumed support `[a, b]` of their latent means.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pairs: Vec<PairedObservation>,
    bounds: Bounds,
}

impl PairedDataset {
    /// Wraps pairs as given. Tied pairs are kept; use [`PairedDataset::ingest`]
    /// for data read from an experiment.
    pub fn new(pairs: Vec<PairedObservation>, bounds: Bounds) -> Result<Self> {
        if bounds.lo >= bounds.hi {
            return Err(Error::InvalidArgument(format!(
                "dataset bounds need a < b, got ({}, {})",
                bounds.lo, bounds.hi
            )));
        }
        for p in &pairs {
            if !(p.y1.is_finite() && p.y2.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "pair '{}' has non-finite intensity",
                    p.id
                )));
            }
        }
        Ok(PairedDataset { pairs, bounds })
    }

    /// Builds a dataset from experiment pairs, dropping pairs whose two
    /// replicates are exactly equal. Returns the dataset and the number dropped.
    pub fn ingest(pairs: Vec<PairedObservation>, bounds: Bounds) -> Result<(Self, usize)> {
        let before = pairs.len();
        let kept: Vec<_> = pairs.into_iter().filter(|p| p.y1 != p.y2).collect();
        let dropped = before - kept.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} pair(s) with identical replicate values");
        }
        Ok((PairedDataset::new(kept, bounds)?, dropped))
    }

    pub fn pairs(&self) -> &[PairedObservation] {
        &self.pairs
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn stats(&self) -> Vec<PairStats> {
        self.pairs.iter().map(pair_stats).collect()
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self> {
        if bounds.lo >= bounds.hi {
            return Err(Error::InvalidArgument("dataset bounds need a < b".into()));
        }
        self.bounds = bounds;
        Ok(self)
    }
}

/// Exact expectations of the two exp-linear MACL estimating equations,
/// evaluated at the true coefficients for the given latent means.
///
/// Both components vanish only in the homoscedastic case `t2 = 0`; otherwise
/// they measure how far the plug-in equations are from unbiased.
pub fn estimating_equation_bias(theta: [f64; 2], mus: &[f64]) -> Result<(f64, f64)> {
    if mus.is_empty() {
        return Err(Error::InvalidArgument(
            "estimating_equation_bias needs at least one mean".into(),
        ));
    }
    let [t1, t2] = theta;
    let n = mus.len() as f64;
    let (mut first, mut mean_mu, mut second) = (0.0, 0.0, 0.0);
    for &mu in mus {
        let v = (t1 + t2 * mu).exp();
        let inflation = (0.25 * t2 * t2 * v).exp();
        first += inflation;
        mean_mu += mu;
        second += (mu - 0.5 * t2 * v) * inflation;
    }
    Ok((1.0 - first / n, (mean_mu - second) / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn variance_examples() {
        let m = VarianceModel::exp_linear(0.0, 0.0);
        assert_eq!(m.variance_at(5.0).unwrap(), 1.0);
        let p = VarianceModel::new(VarianceForm::Power, vec![0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(p.variance_at(3.0).unwrap(), 9.0, epsilon = 1e-12);
        let fitted = VarianceModel::exp_linear(4.84, -0.927);
        // 40-digit reference: 0.0098068907758513900...
        assert_abs_diff_eq!(
            fitted.variance_at(10.21).unwrap(),
            0.009_806_890_775_851_39,
            epsilon = 1e-15
        );
        let c = VarianceModel::new(VarianceForm::ExpLinearPlusConst, vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.variance_at(1.0).unwrap(), 2.0);
    }

    #[test]
    fn variance_errors() {
        let p = VarianceModel::new(VarianceForm::Power, vec![0.0, 2.0]).unwrap();
        assert!(matches!(p.variance_at(0.0), Err(Error::Domain(_))));
        assert!(matches!(p.variance_at(-1.0), Err(Error::Domain(_))));
        let big = VarianceModel::exp_linear(800.0, 0.0);
        assert!(matches!(
            big.variance_at(1.0),
            Err(Error::NonFiniteVariance { .. })
        ));
        assert!(VarianceModel::new(VarianceForm::ExpLinear, vec![1.0]).is_err());
        assert!(VarianceModel::new(VarianceForm::ExpLinear, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn form_parsing() {
        for f in [
            VarianceForm::ExpLinear,
            VarianceForm::Power,
            VarianceForm::ExpLinearPlusConst,
        ] {
            assert_eq!(f.as_str().parse::<VarianceForm>().unwrap(), f);
        }
        assert!("loess".parse::<VarianceForm>().is_err());
    }

    #[test]
    fn pair_stats_examples() {
        let s = pair_stats(&PairedObservation::new("a", 3.3, 3.3).unwrap());
        assert_eq!((s.ybar, s.s2), (3.3, 0.0));
        let s = pair_stats(&PairedObservation::new("b", 8.0, 10.0).unwrap());
        assert_eq!((s.ybar, s.s2), (9.0, 2.0));
        let s = pair_stats(&PairedObservation::new("c", 7.5, 8.0).unwrap());
        assert_eq!((s.ybar, s.s2), (7.75, 0.125));
    }

    #[test]
    fn pair_stats_identity_holds_on_many_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1_000_000 {
            let y1: f64 = rng.random_range(-20.0..20.0);
            let y2: f64 = rng.random_range(-20.0..20.0);
            let s = pair_stats(&PairedObservation {
                id: String::new(),
                y1,
                y2,
            });
            let direct = (y1 - s.ybar).powi(2) + (y2 - s.ybar).powi(2);
            worst = worst.max((direct - s.s2).abs() / direct.max(1.0));
        }
        assert!(worst < 1e-13, "worst relative gap {worst}");
    }

    #[test]
    fn ingestion_drops_ties() {
        let pairs = vec![
            PairedObservation::new("a", 1.0, 1.0).unwrap(),
            PairedObservation::new("b", 1.0, 2.0).unwrap(),
        ];
        let (d, dropped) = PairedDataset::ingest(pairs, Bounds::default()).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(d.len(), 1);
        assert_eq!(d.pairs()[0].id, "b");
        assert!(PairedDataset::new(vec![], Bounds { lo: 2.0, hi: 2.0 }).is_err());
    }

    #[test]
    fn bias_oracle_examples() {
        let (e1, e2) = estimating_equation_bias([3.0, 0.0], &[7.0, 9.0, 12.5]).unwrap();
        assert_eq!((e1, e2), (0.0, 0.0));
        // 40-digit reference values.
        let (e1, _) = estimating_equation_bias([5.0, -1.0], &[10.0]).unwrap();
        assert_abs_diff_eq!(e1, -0.001_685_906_294_532_658, epsilon = 1e-15);
        let (e1, _) = estimating_equation_bias([5.0, -0.5], &[8.0]).unwrap();
        assert_abs_diff_eq!(e1, -0.185_177_573_337_975_9, epsilon = 1e-14);
        let (_, e2) = estimating_equation_bias([5.0, -1.0], &[10.0]).unwrap();
        assert_abs_diff_eq!(e2, -0.020_233_716_218_498_31, epsilon = 1e-14);
        assert!(estimating_equation_bias([5.0, -1.0], &[]).is_err());
    }

    #[test]
    fn bias_vanishes_as_slope_shrinks() {
        let mus = [8.0, 9.5, 11.0, 12.0];
        let mut last = f64::INFINITY;
        for k in 4..14 {
            let t2 = -0.5f64.powi(k);
            let (e1, e2) = estimating_equation_bias([2.0, t2], &mus).unwrap();
            let size = e1.abs() + e2.abs();
            assert!(size < last);
            last = size;
        }
        assert!(last < 1e-3);
    }

    proptest! {
        #[test]
        fn exp_linear_decreasing_for_negative_slope(
            t1 in -5.0..5.0f64, t2 in -2.0..-0.01f64, mu in 0.0..15.0f64, dmu in 0.001..2.0f64
        ) {
            let m = VarianceModel::exp_linear(t1, t2);
            prop_assert!(m.h(mu + dmu) < m.h(mu));
        }

        #[test]
        fn derivs_match_finite_differences(
            t1 in -3.0..3.0f64, t2 in -1.0..1.0f64, t3 in -3.0..1.0f64, mu in 1.0..10.0f64
        ) {
            for model in [
                VarianceModel::new(VarianceForm::ExpLinear, vec![t1, t2]).unwrap(),
                VarianceModel::new(VarianceForm::Power, vec![t1, t2]).unwrap(),
                VarianceModel::new(VarianceForm::ExpLinearPlusConst, vec![t1, t2, t3]).unwrap(),
            ] {
                let d = model.derivs(mu);
                let k = model.theta().len();
                for j in 0..k {
                    let eps = 1e-6;
                    let mut up = model.theta().to_vec();
                    let mut dn = up.clone();
                    up[j] += eps;
                    dn[j] -= eps;
                    let mu_up = VarianceModel::new(model.form(), up).unwrap();
                    let mu_dn = VarianceModel::new(model.form(), dn).unwrap();
                    let fd = (mu_up.h(mu) - mu_dn.h(mu)) / (2.0 * eps);
                    prop_assert!((fd - d.grad[j]).abs() <= 1e-6 * (1.0 + d.grad[j].abs()));
                    let gu = mu_up.derivs(mu).grad;
                    let gd = mu_dn.derivs(mu).grad;
                    for l in 0..k {
                        let fd2 = (gu[l] - gd[l]) / (2.0 * eps);
                        prop_assert!((fd2 - d.hess[j][l]).abs() <= 1e-5 * (1.0 + d.hess[j][l].abs()));
                    }
                }
            }
        }
    }
}
