//! Maximum approximate conditional likelihood (MACL) fit of the variance
//! function, plus the inconsistent homoscedastic MLE kept as a baseline.
//!
//! MACL plugs the pair means into the modified likelihood, which turns the
//! fit into a weighted variance regression of `S_i^2` on `Ybar_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PairedDataset, VarianceForm, VarianceModel};
use crate::solver::{self, SolveOptions, VarianceTerm};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub form: VarianceForm,
    pub theta_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute estimating-equation value at `theta_hat`.
    pub residual_norm: f64,
}

impl FitResult {
    pub fn model(&self) -> VarianceModel {
        VarianceModel::new(self.form, self.theta_hat.clone()).expect("fitted coefficients are finite")
    }
}

#[derive(Debug, Clone)]
pub struct MaclOptions {
    pub init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    /// Per-coefficient values to hold fixed; `None` entries are estimated.
    pub pinned: Option<Vec<Option<f64>>>,
}

impl Default for MaclOptions {
    fn default() -> Self {
        MaclOptions {
            init: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            pinned: None,
        }
    }
}

impl MaclOptions {
    /// Constant variance `h = exp(t1)`, i.e. exp-linear with the slope held at 0.
    pub fn homoscedastic() -> Self {
        MaclOptions {
            pinned: Some(vec![None, Some(0.0)]),
            ..Default::default()
        }
    }
}

/// Least-squares line of `ln(S^2 + 1e-12)` against the pair mean (or its log
/// for the power form).
pub fn default_init(data: &PairedDataset, form: VarianceForm) -> Result<Vec<f64>> {
    let stats = data.stats();
    let n = stats.len() as f64;
    if stats.is_empty() {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let xs: Vec<f64> = stats
        .iter()
        .map(|s| match form {
            VarianceForm::Power => s.ybar.ln(),
            _ => s.ybar,
        })
        .collect();
    let ys: Vec<f64> = stats.iter().map(|s| (s.s2 + LOG_FLOOR).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    Ok(match form {
        VarianceForm::ExpLinear | VarianceForm::Power => vec![intercept, slope],
        VarianceForm::ExpLinearPlusConst => {
            // Constant floor one decade below the smallest fitted exp-linear variance.
            let low = xs
                .iter()
                .map(|x| intercept + slope * x)
                .fold(f64::INFINITY, f64::min);
            vec![intercept, slope, low - std::f64::consts::LN_10]
        }
    })
}

/// Fits `theta` by solving the MACL estimating equations
/// `sum_i dh/dtheta_j / h^2 (S_i^2 - h(theta, Ybar_i)) = 0`.
pub fn macl_fit(data: &PairedDataset, form: VarianceForm, opts: &MaclOptions) -> Result<FitResult> {
    if data.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "MACL needs at least 3 pairs, got {}",
            data.len()
        )));
    }
    let stats = data.stats();
    if stats.iter().all(|s| s.s2 == 0.0) {
        return Err(Error::DegenerateData(
            "every pair has identical replicates".into(),
        ));
    }
    if form == VarianceForm::Power {
        if let Some(s) = stats.iter().find(|s| s.ybar <= 0.0) {
            return Err(Error::Domain(format!(
                "power form needs positive pair means, found {}",
                s.ybar
            )));
        }
    }
    let init = match &opts.init {
        Some(t) => t.clone(),
        None => default_init(data, form)?,
    };
    let terms: Vec<VarianceTerm> = stats
        .iter()
        .map(|s| VarianceTerm {
            weight: 1.0,
            mu: s.ybar,
            target: s.s2,
        })
        .collect();
    let pinned = opts
        .pinned
        .clone()
        .unwrap_or_else(|| vec![None; form.n_params()]);
    let sol = solver::solve(
        form,
        &init,
        &terms,
        &SolveOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
            pinned,
        },
    )?;
    Ok(FitResult {
        form,
        theta_hat: sol.theta,
        converged: sol.converged,
        iterations: sol.iterations,
        residual_norm: sol.residual,
    })
}

/// Left-hand sides of the two exp-linear estimating equations at `theta`.
pub fn exp_linear_equations(data: &PairedDataset, theta: [f64; 2]) -> (f64, f64) {
    let n = data.len() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for s in data.stats() {
        let w = s.s2 * (-theta[0] - theta[1] * s.ybar).exp();
        a += w;
        b += s.ybar;
        c += s.ybar * w;
    }
    (1.0 - a / n, (b - c) / n)
}

/// `N^-1 sum (y1 - y2)^2 / 4`: the full-likelihood MLE of a constant variance,
/// which converges to half the true value.
pub fn mle_homoscedastic(data: &PairedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let sum: f64 = data
        .pairs()
        .iter()
        .map(|p| (p.y1 - p.y2).powi(2) / 4.0)
        .sum();
    Ok(sum / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, PairedObservation};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn dataset(pairs: &[(f64, f64)]) -> PairedDataset {
        PairedDataset::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| PairedObservation::new(format!("p{i}"), a, b).unwrap())
                .collect(),
            Bounds::new(-100.0, 100.0).unwrap(),
        )
        .unwrap()
    }

    fn simulate(theta: [f64; 2], n: usize, seed: u64) -> PairedDataset {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let u = Uniform::new(8.0, 12.0).unwrap();
        let m = VarianceModel::exp_linear(theta[0], theta[1]);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let mu = u.sample(&mut rng);
                let nd = Normal::new(mu, m.h(mu).sqrt()).unwrap();
                (nd.sample(&mut rng), nd.sample(&mut rng))
            })
            .collect();
        dataset(&pairs)
    }

    #[test]
    fn homoscedastic_closed_form() {
        // With h = exp(t1) the maximiser is exp(t1) = mean S^2 = (2 + 0) / 2.
        let d = dataset(&[(0.0, 2.0), (1.0, 1.0), (0.0, 2.0), (1.0, 1.0)]);
        let fit = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::homoscedastic()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0].exp() - 1.0).abs() < 1e-9);
        assert_eq!(fit.theta_hat[1], 0.0);
    }

    #[test]
    fn mle_examples() {
        assert_eq!(mle_homoscedastic(&dataset(&[(0.0, 2.0)])).unwrap(), 1.0);
        assert_eq!(
            mle_homoscedastic(&dataset(&[(4.0, 4.0), (4.0, 4.0)])).unwrap(),
            0.0
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let d = dataset(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert!(matches!(
            macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()),
            Err(Error::DegenerateData(_))
        ));
        let d = dataset(&[(1.0, 2.0), (2.0, 3.0)]);
        assert!(macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()).is_err());
        let d = dataset(&[(-1.0, -2.0), (2.0, 3.0), (4.0, 4.5)]);
        assert!(matches!(
            macl_fit(&d, VarianceForm::Power, &MaclOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn solution_satisfies_estimating_equations() {
        let d = simulate([5.0, -1.0], 2000, 3);
        let fit = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_norm <= DEFAULT_TOL);
        let (e1, e2) = exp_linear_equations(&d, [fit.theta_hat[0], fit.theta_hat[1]]);
        assert!(e1.abs() <= 1e-9 && e2.abs() <= 1e-9, "{e1} {e2}");
    }

    #[test]
    fn deterministic() {
        let d = simulate([5.0, -1.0], 500, 9);
        let a = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()).unwrap();
        let b = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.theta_hat[0].to_bits(), b.theta_hat[0].to_bits());
    }

    #[test]
    fn shift_equivariance() {
        let d = simulate([5.0, -1.0], 1000, 21);
        let c = 0.7;
        let shifted = dataset(
            &d.pairs()
                .iter()
                .map(|p| (p.y1 + c, p.y2 + c))
                .collect::<Vec<_>>(),
        );
        let f0 = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default())
            .unwrap()
            .model();
        let f1 = macl_fit(&shifted, VarianceForm::ExpLinear, &MaclOptions::default())
            .unwrap()
            .model();
        for k in 0..=20 {
            let mu = 7.3 + 6.6 * k as f64 / 20.0;
            let (a, b) = (f0.h(mu), f1.h(mu + c));
            assert!((a - b).abs() <= 1e-7 * a, "mu {mu}: {a} vs {b}");
        }
    }

    #[test]
    fn other_forms_converge() {
        let d = simulate([5.0, -1.0], 1500, 5);
        for form in [VarianceForm::Power, VarianceForm::ExpLinearPlusConst] {
            let fit = macl_fit(&d, form, &MaclOptions::default()).unwrap();
            assert!(fit.converged, "{form}");
            assert!(fit.residual_norm <= DEFAULT_TOL);
        }
    }

    #[test]
    fn slope_recovered_on_synthetic_data() {
        let mut hits = 0;
        for seed in 0..20 {
            let d = simulate([5.0, -1.0], 2000, 100 + seed);
            let fit = macl_fit(&d, VarianceForm::ExpLinear, &MaclOptions::default()).unwrap();
            if (fit.theta_hat[1] + 1.0).abs() <= 0.08 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}/20 seeds within 0.08");
    }

    #[test]
    fn neyman_scott_halves_variance() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        let nd = Normal::new(0.0, 2.0).unwrap();
        let u = Uniform::new(0.0, 50.0).unwrap();
        let pairs: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let mu = u.sample(&mut rng);
                (mu + nd.sample(&mut rng), mu + nd.sample(&mut rng))
            })
            .collect();
        let est = mle_homoscedastic(&dataset(&pairs)).unwrap();
        assert!((est - 2.0).abs() < 0.03, "{est}");
    }
}
