//! Joint maximum likelihood of the variance function and a discrete mixing
//! distribution for the latent means, fitted by EM.
//!
//! The support grid is built from a pilot variance estimate so that adjacent
//! points are at most `d` standard deviations apart, and it stays fixed for
//! the whole EM run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macl::{self, MaclOptions};
use crate::model::{PairStats, PairedDataset, VarianceForm, VarianceModel};
use crate::solver::{self, SolveOptions, VarianceTerm};

pub const DEFAULT_D: f64 = 0.25;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_INNER_TOL: f64 = 1e-9;
pub const MAX_GRID_POINTS: usize = 1_000_000;
const ASCENT_SLACK: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Components this far below the row maximum (in log units) are dropped.
const LOG_CUTOFF: f64 = -60.0;
const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGrid {
    points: Vec<f64>,
    spacing_d: f64,
}

impl SupportGrid {
    /// A grid from explicit points, which must be strictly increasing.
    pub fn from_points(points: Vec<f64>, spacing_d: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("support grid is empty".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "support points must be finite and strictly increasing".into(),
            ));
        }
        Ok(SupportGrid { points, spacing_d })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing_d(&self) -> f64 {
        self.spacing_d
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds the variance-adaptive grid: `mu_J = b`,
/// `mu_{j-1} = mu_j - d * sqrt(h(theta_tilde, mu_j))`, with the last point
/// clamped to `a`.
pub fn build_support(theta_tilde: &VarianceModel, a: f64, b: f64, d: f64) -> Result<SupportGrid> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::InvalidArgument(format!(
            "support needs a <= b, got ({a}, {b})"
        )));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidArgument(format!("d must be positive, got {d}")));
    }
    let mut rev = vec![b];
    let mut cur = b;
    while cur > a {
        let step = d * theta_tilde.variance_at(cur)?.sqrt();
        let next = cur - step;
        if next <= a || next >= cur {
            if next >= cur {
                return Err(Error::GridExplosion {
                    limit: MAX_GRID_POINTS,
                });
            }
            rev.push(a);
            break;
        }
        rev.push(next);
        cur = next;
        if rev.len() > MAX_GRID_POINTS {
            return Err(Error::GridExplosion {
                limit: MAX_GRID_POINTS,
            });
        }
    }
    rev.reverse();
    Ok(SupportGrid {
        points: rev,
        spacing_d: d,
    })
}

/// Posterior membership probabilities, row-major `N x J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    w: Vec<f64>,
    n: usize,
    j: usize,
}

impl ResponsibilityMatrix {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.j
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.j..(i + 1) * self.j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.j + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEstimate {
    pub form: VarianceForm,
    pub theta_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub log_lik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every E-step, starting from the initial values.
    pub log_lik_trace: Vec<f64>,
}

impl MixtureEstimate {
    pub fn model(&self) -> VarianceModel {
        VarianceModel::new(self.form, self.theta_hat.clone()).expect("finite coefficients")
    }
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            inner_tol: DEFAULT_INNER_TOL,
            inner_max_iter: macl::DEFAULT_MAX_ITER,
        }
    }
}

/// Per-grid-point constants of the component densities.
struct ComponentTerms {
    mu: Vec<f64>,
    log_h: Vec<f64>,
    half_inv_h: Vec<f64>,
    log_pi: Vec<f64>,
    /// `max_{k <= j} h_k` and `max_{k >= j} h_k`, used to bound the tails.
    prefix_max_h: Vec<f64>,
    suffix_max_h: Vec<f64>,
    prefix_max_log_h: Vec<f64>,
    suffix_max_log_h: Vec<f64>,
}

impl ComponentTerms {
    fn new(model: &VarianceModel, grid: &SupportGrid, pi: &[f64]) -> Result<Self> {
        let mut log_h = Vec::with_capacity(grid.len());
        let mut half_inv_h = Vec::with_capacity(grid.len());
        for &mu in grid.points() {
            let h = model.variance_at(mu)?;
            log_h.push(h.ln());
            half_inv_h.push(0.5 / h);
        }
        let h: Vec<f64> = half_inv_h.iter().map(|v| 0.5 / v).collect();
        let mut prefix_max_h = h.clone();
        for j in 1..h.len() {
            prefix_max_h[j] = prefix_max_h[j].max(prefix_max_h[j - 1]);
        }
        let mut suffix_max_h = h;
        for j in (0..suffix_max_h.len().saturating_sub(1)).rev() {
            suffix_max_h[j] = suffix_max_h[j].max(suffix_max_h[j + 1]);
        }
        Ok(ComponentTerms {
            mu: grid.points().to_vec(),
            log_h,
            half_inv_h,
            prefix_max_log_h: prefix_max_h.iter().map(|h| h.ln()).collect(),
            suffix_max_log_h: suffix_max_h.iter().map(|h| h.ln()).collect(),
            prefix_max_h,
            suffix_max_h,
            log_pi: pi
                .iter()
                .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                .collect(),
        })
    }

    /// Fills `buf` with `ln pi_j + ln f(y | mu_j) + ln 2pi` and returns the max.
    #[inline]
    fn row_logs(&self, s: &PairStats, buf: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for j in 0..self.mu.len() {
            let dev = s.ybar - self.mu[j];
            let q = s.s2 + 2.0 * dev * dev;
            let v = self.log_pi[j] - self.log_h[j] - q * self.half_inv_h[j];
            buf[j] = v;
            if v > max {
                max = v;
            }
        }
        max
    }

    #[inline]
    fn log_term(&self, s: &PairStats, j: usize) -> f64 {
        let dev = s.ybar - self.mu[j];
        self.log_pi[j] - self.log_h[j] - (s.s2 + 2.0 * dev * dev) * self.half_inv_h[j]
    }

    /// True when every component on the far side of `j` (inclusive) has a log
    /// term at least `-LOG_CUTOFF` below `max`. Uses `log_pi <= 0`, `s2 >= 0`
    /// and that `ln h + D^2 / h` decreases in `h` for `h <= D^2`.
    #[inline]
    fn tail_negligible(&self, dev: f64, h_cap: f64, log_h_cap: f64, max: f64) -> bool {
        let d2 = dev * dev;
        d2 >= h_cap && d2 / h_cap + log_h_cap >= -max - LOG_CUTOFF
    }

    /// Like `row_logs`, but only over the index window `[lo, hi)` outside of
    /// which every term falls below the cutoff. Entries outside the window
    /// are left untouched.
    fn row_logs_window(&self, s: &PairStats, buf: &mut [f64]) -> (usize, usize, f64) {
        let jn = self.mu.len();
        let start = self.mu.partition_point(|&m| m < s.ybar).min(jn - 1);
        let mut max = f64::NEG_INFINITY;
        buf[start] = self.log_term(s, start);
        max = max.max(buf[start]);
        let mut hi = start + 1;
        while hi < jn {
            let v = self.log_term(s, hi);
            buf[hi] = v;
            if v > max {
                max = v;
            }
            hi += 1;
            if self.tail_negligible(
                self.mu[hi - 1] - s.ybar,
                self.suffix_max_h[hi - 1],
                self.suffix_max_log_h[hi - 1],
                max,
            ) {
                break;
            }
        }
        let mut lo = start;
        while lo > 0 {
            let v = self.log_term(s, lo - 1);
            buf[lo - 1] = v;
            if v > max {
                max = v;
            }
            lo -= 1;
            if self.tail_negligible(
                s.ybar - self.mu[lo],
                self.prefix_max_h[lo],
                self.prefix_max_log_h[lo],
                max,
            ) {
                break;
            }
        }
        (lo, hi, max)
    }
}

fn validate_pi(pi: &[f64], j: usize) -> Result<()> {
    if pi.len() != j {
        return Err(Error::InvalidArgument(format!(
            "mixing weights have length {}, grid has {j} points",
            pi.len()
        )));
    }
    if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("mixing weights must be non-negative".into()));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "mixing weights sum to {s}, expected 1"
        )));
    }
    Ok(())
}

fn check_power_domain(model: &VarianceModel, grid: &SupportGrid) -> Result<()> {
    if model.form() == VarianceForm::Power && grid.points()[0] <= 0.0 {
        return Err(Error::Domain("power form needs positive support points".into()));
    }
    Ok(())
}

pub fn responsibilities(
    data: &PairedDataset,
    theta: &VarianceModel,
    grid: &SupportGrid,
    pi: &[f64],
) -> Result<ResponsibilityMatrix> {
    validate_pi(pi, grid.len())?;
    check_power_domain(theta, grid)?;
    let comp = ComponentTerms::new(theta, grid, pi)?;
    let j = grid.len();
    let mut w = vec![0.0; data.len() * j];
    for (i, (pair, row)) in data.pairs().iter().zip(w.chunks_mut(j)).enumerate() {
        let s = pair.stats();
        let max = comp.row_logs(&s, row);
        if !max.is_finite() {
            return Err(Error::Underflow {
                id: data.pairs()[i].id.clone(),
            });
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ResponsibilityMatrix { w, n: data.len(), j })
}

pub fn mixture_log_lik(
    data: &PairedDataset,
    theta: &VarianceModel,
    grid: &SupportGrid,
    pi: &[f64],
) -> Result<f64> {
    validate_pi(pi, grid.len())?;
    check_power_domain(theta, grid)?;
    let comp = ComponentTerms::new(theta, grid, pi)?;
    let mut buf = vec![0.0; grid.len()];
    let mut total = 0.0;
    for pair in data.pairs() {
        let max = comp.row_logs(&pair.stats(), &mut buf);
        if !max.is_finite() {
            return Err(Error::Underflow {
                id: pair.id.clone(),
            });
        }
        let sum: f64 = buf.iter().map(|v| (v - max).exp()).sum();
        total += max + sum.ln() - LN_2PI;
    }
    Ok(total)
}

/// Sufficient statistics from one E-step.
struct EStep {
    log_lik: f64,
    /// `sum_i w_ij`
    weight: Vec<f64>,
    /// `sum_i w_ij (S_i^2 + 2 (Ybar_i - mu_j)^2)`
    spread: Vec<f64>,
}

fn e_step(stats: &[PairStats], ids: &[String], comp: &ComponentTerms) -> Result<EStep> {
    let j = comp.mu.len();
    // Fixed row chunks combined in order, so the sums do not depend on the
    // number of worker threads.
    let partials: Vec<Result<EStep>> = stats
        .par_chunks(ROW_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut buf = vec![0.0; j];
            let mut part = EStep {
                log_lik: 0.0,
                weight: vec![0.0; j],
                spread: vec![0.0; j],
            };
            for (k, s) in chunk.iter().enumerate() {
                let (lo, hi, max) = comp.row_logs_window(s, &mut buf);
                if !max.is_finite() {
                    return Err(Error::Underflow {
                        id: ids[c * ROW_CHUNK + k].clone(),
                    });
                }
                let window = &mut buf[lo..hi];
                let mut sum = 0.0;
                for v in window.iter_mut() {
                    let z = *v - max;
                    *v = if z > LOG_CUTOFF { z.exp() } else { 0.0 };
                    sum += *v;
                }
                part.log_lik += max + sum.ln() - LN_2PI;
                let inv = 1.0 / sum;
                let mu = &comp.mu[lo..hi];
                let weight = &mut part.weight[lo..hi];
                let spread = &mut part.spread[lo..hi];
                for (((&e, &m), w_acc), v_acc) in window.iter().zip(mu).zip(weight).zip(spread) {
                    if e != 0.0 {
                        let w = e * inv;
                        let dev = s.ybar - m;
                        *w_acc += w;
                        *v_acc += w * (s.s2 + 2.0 * dev * dev);
                    }
                }
            }
            Ok(part)
        })
        .collect();
    let mut total = EStep {
        log_lik: 0.0,
        weight: vec![0.0; j],
        spread: vec![0.0; j],
    };
    for p in partials {
        let p = p?;
        total.log_lik += p.log_lik;
        for jj in 0..j {
            total.weight[jj] += p.weight[jj];
            total.spread[jj] += p.spread[jj];
        }
    }
    Ok(total)
}

/// Expected complete-data objective in `theta` (up to constants and the
/// `pi` part): `-sum_j [W_j ln h_j + V_j / (2 h_j)]`.
fn q_theta(model: &VarianceModel, grid: &SupportGrid, e: &EStep) -> f64 {
    grid.points()
        .iter()
        .enumerate()
        .filter(|(j, _)| e.weight[*j] > 0.0)
        .map(|(j, &mu)| {
            let h = model.h(mu);
            -(e.weight[j] * h.ln() + 0.5 * e.spread[j] / h)
        })
        .sum()
}

/// Runs EM from uniform mixing weights and the given coefficients.
pub fn em_fit(
    data: &PairedDataset,
    grid: &SupportGrid,
    init_theta: &VarianceModel,
    opts: &EmOptions,
) -> Result<MixtureEstimate> {
    if data.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "EM needs at least 3 pairs, got {}",
            data.len()
        )));
    }
    check_power_domain(init_theta, grid)?;
    let form = init_theta.form();
    let stats = data.stats();
    let ids: Vec<String> = data.pairs().iter().map(|p| p.id.clone()).collect();
    let n = data.len() as f64;
    let jn = grid.len();
    let mut pi = vec![1.0 / jn as f64; jn];
    let mut model = init_theta.clone();
    let inner = SolveOptions {
        tol: opts.inner_tol,
        max_iter: opts.inner_max_iter,
        pinned: vec![None; form.n_params()],
    };

    let mut current = e_step(&stats, &ids, &ComponentTerms::new(&model, grid, &pi)?)?;
    let mut trace = vec![current.log_lik];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // M-step for pi.
        let mut new_pi: Vec<f64> = current.weight.iter().map(|w| w / n).collect();
        let total: f64 = new_pi.iter().sum();
        new_pi.iter_mut().for_each(|p| *p /= total);

        // M-step for theta: weighted variance regression with per-component
        // target variance V_j / (2 W_j).
        let terms: Vec<VarianceTerm> = grid
            .points()
            .iter()
            .enumerate()
            .filter(|(j, _)| current.weight[*j] > 0.0)
            .map(|(j, &mu)| VarianceTerm {
                weight: current.weight[j],
                mu,
                target: 0.5 * current.spread[j] / current.weight[j],
            })
            .collect();
        let candidate = match solver::solve(form, model.theta(), &terms, &inner) {
            Ok(sol) => Some(sol.theta),
            Err(Error::NonConvergence { best, .. }) => Some(best),
            Err(e) => return Err(e),
        };
        if let Some(theta) = candidate {
            if let Ok(m) = VarianceModel::new(form, theta) {
                let ok = grid.points().iter().all(|&mu| m.variance_at(mu).is_ok());
                // Generalised EM: only move when Q does not decrease.
                if ok && q_theta(&m, grid, &current) >= q_theta(&model, grid, &current) {
                    model = m;
                }
            }
        }
        pi = new_pi;

        let next = e_step(&stats, &ids, &ComponentTerms::new(&model, grid, &pi)?)?;
        if next.log_lik < current.log_lik - ASCENT_SLACK {
            return Err(Error::LikelihoodDecrease {
                iteration: iterations,
                previous: current.log_lik,
                current: next.log_lik,
            });
        }
        trace.push(next.log_lik);
        let rel = (next.log_lik - current.log_lik).abs() / current.log_lik.abs().max(f64::MIN_POSITIVE);
        current = next;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM stopped after {iterations} iterations without meeting tol {}", opts.tol);
    }
    Ok(MixtureEstimate {
        form,
        theta_hat: model.theta().to_vec(),
        pi_hat: pi,
        log_lik: current.log_lik,
        iterations,
        converged,
        log_lik_trace: trace,
    })
}

#[derive(Debug, Clone)]
pub struct MixtureFitOptions {
    pub d: f64,
    pub em: EmOptions,
    pub macl: MaclOptions,
}

impl Default for MixtureFitOptions {
    fn default() -> Self {
        MixtureFitOptions {
            d: DEFAULT_D,
            em: EmOptions::default(),
            macl: MaclOptions::default(),
        }
    }
}

/// MACL start, variance-adaptive grid on the dataset bounds, then EM.
pub fn fit_mixture(
    data: &PairedDataset,
    form: VarianceForm,
    opts: &MixtureFitOptions,
) -> Result<(MixtureEstimate, SupportGrid)> {
    let pilot = macl::macl_fit(data, form, &opts.macl)?.model();
    let b = data.bounds();
    let grid = build_support(&pilot, b.lo, b.hi, opts.d)?;
    let est = em_fit(data, &grid, &pilot, &opts.em)?;
    Ok((est, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, PairedObservation};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn ds(pairs: &[(f64, f64)]) -> PairedDataset {
        PairedDataset::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| PairedObservation::new(format!("p{i}"), a, b).unwrap())
                .collect(),
            Bounds::new(-50.0, 50.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn support_examples() {
        let unit = VarianceModel::exp_linear(0.0, 0.0);
        assert_eq!(build_support(&unit, 5.0, 5.0, 0.25).unwrap().points(), &[5.0]);
        assert_eq!(
            build_support(&unit, 0.0, 3.0, 1.0).unwrap().points(),
            &[0.0, 1.0, 2.0, 3.0]
        );
        let fitted = VarianceModel::exp_linear(4.84, -0.927);
        let g = build_support(&fitted, 7.3, 13.9, 0.25).unwrap();
        let p = g.points();
        assert_eq!(p[p.len() - 1], 13.9);
        // 40-digit reference 13.895523636858971...
        assert_abs_diff_eq!(p[p.len() - 2], 13.895_523_636_858_97, epsilon = 1e-12);
        assert_eq!(p[0], 7.3);
        for w in p.windows(2) {
            assert!(w[0] < w[1]);
            assert!(w[1] - w[0] <= 0.25 * fitted.h(w[1]).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn support_errors() {
        let tiny = VarianceModel::exp_linear(-40.0, 0.0);
        assert!(matches!(
            build_support(&tiny, 0.0, 1.0, 0.25),
            Err(Error::GridExplosion { .. })
        ));
        let unit = VarianceModel::exp_linear(0.0, 0.0);
        assert!(build_support(&unit, 1.0, 0.0, 0.25).is_err());
        assert!(build_support(&unit, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn responsibility_examples() {
        let d = ds(&[(10.0, 10.0), (3.0, 4.0)]);
        let unit = VarianceModel::exp_linear(0.0, 0.0);
        let one = SupportGrid::from_points(vec![2.0], 0.25).unwrap();
        let r = responsibilities(&d, &unit, &one, &[1.0]).unwrap();
        assert!(r.row(0)[0] == 1.0 && r.row(1)[0] == 1.0);
        let two = SupportGrid::from_points(vec![9.0, 11.0], 0.25).unwrap();
        let r = responsibilities(&d, &unit, &two, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(r.get(0, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.get(0, 1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn log_lik_examples() {
        let d = ds(&[(0.0, 0.0)]);
        let unit = VarianceModel::exp_linear(0.0, 0.0);
        let g = SupportGrid::from_points(vec![0.0], 0.25).unwrap();
        let ll = mixture_log_lik(&d, &unit, &g, &[1.0]).unwrap();
        assert_abs_diff_eq!(ll, -(2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
        let g2 = SupportGrid::from_points(vec![0.0, 4.0], 0.25).unwrap();
        let ll2 = mixture_log_lik(&d, &unit, &g2, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(ll, ll2, epsilon = 1e-15);
    }

    #[test]
    fn log_lik_matches_direct_summation() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..20);
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(5.0..10.0), rng.random_range(5.0..10.0)))
                .collect();
            let d = ds(&pairs);
            let model = VarianceModel::exp_linear(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.0));
            let j = rng.random_range(1..8);
            let mut pts: Vec<f64> = (0..j).map(|k| 5.0 + k as f64 * 0.7).collect();
            pts.dedup();
            let g = SupportGrid::from_points(pts, 0.25).unwrap();
            let mut pi: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= s);
            let fast = mixture_log_lik(&d, &model, &g, &pi).unwrap();
            // Oracle: plain densities, no log-sum-exp.
            let direct: f64 = pairs
                .iter()
                .map(|&(y1, y2)| {
                    g.points()
                        .iter()
                        .zip(&pi)
                        .map(|(&mu, &p)| {
                            let h = model.h(mu);
                            p / (2.0 * std::f64::consts::PI * h)
                                * (-((y1 - mu).powi(2) + (y2 - mu).powi(2)) / (2.0 * h)).exp()
                        })
                        .sum::<f64>()
                        .ln()
                })
                .sum();
            assert!((fast - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{fast} vs {direct}");
        }
    }

    /// Reference E-step over every grid point, in the same order.
    fn full_e_step(stats: &[PairStats], comp: &ComponentTerms) -> EStep {
        let j = comp.mu.len();
        let mut buf = vec![0.0; j];
        let mut out = EStep {
            log_lik: 0.0,
            weight: vec![0.0; j],
            spread: vec![0.0; j],
        };
        for chunk in stats.chunks(ROW_CHUNK) {
            let mut part = EStep {
                log_lik: 0.0,
                weight: vec![0.0; j],
                spread: vec![0.0; j],
            };
            for s in chunk {
                let max = comp.row_logs(s, &mut buf);
                let mut sum = 0.0;
                for v in buf.iter_mut() {
                    let z = *v - max;
                    *v = if z > LOG_CUTOFF { z.exp() } else { 0.0 };
                    sum += *v;
                }
                part.log_lik += max + sum.ln() - LN_2PI;
                for (jj, &e) in buf.iter().enumerate() {
                    if e != 0.0 {
                        let w = e * (1.0 / sum);
                        let dev = s.ybar - comp.mu[jj];
                        part.weight[jj] += w;
                        part.spread[jj] += w * (s.s2 + 2.0 * dev * dev);
                    }
                }
            }
            out.log_lik += part.log_lik;
            for jj in 0..j {
                out.weight[jj] += part.weight[jj];
                out.spread[jj] += part.spread[jj];
            }
        }
        out
    }

    #[test]
    fn windowed_e_step_is_bit_identical() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        for case in 0..30 {
            let (t1, t2) = (rng.random_range(2.0..6.0), rng.random_range(-1.2..0.2));
            let model = VarianceModel::exp_linear(t1, t2);
            let n = rng.random_range(3..300);
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let mu: f64 = rng.random_range(7.0..14.5);
                    let sd = model.h(mu).sqrt();
                    let mut draw = || mu + sd * rng.random_range(-3.0..3.0);
                    (draw(), draw())
                })
                .collect();
            let d = ds(&pairs);
            let g = build_support(&model, 7.3, 13.9, 0.25).unwrap();
            let mut pi: Vec<f64> = (0..g.len())
                .map(|k| if case % 3 == 0 && k % 4 == 0 { 0.0 } else { rng.random_range(0.001..1.0) })
                .collect();
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= s);
            let comp = ComponentTerms::new(&model, &g, &pi).unwrap();
            let stats = d.stats();
            let ids: Vec<String> = d.pairs().iter().map(|p| p.id.clone()).collect();
            let fast = e_step(&stats, &ids, &comp).unwrap();
            let full = full_e_step(&stats, &comp);
            assert_eq!(fast.log_lik.to_bits(), full.log_lik.to_bits(), "case {case} {} {} {t1} {t2}", fast.log_lik, full.log_lik);
            assert_eq!(fast.weight, full.weight, "case {case}");
            assert_eq!(fast.spread, full.spread, "case {case}");
        }
    }

    #[test]
    fn single_point_grid_fit() {
        let d = ds(&[(1.0, 2.0), (0.5, 3.0), (2.0, 2.5), (1.2, 0.4)]);
        let g = SupportGrid::from_points(vec![1.5], 0.25).unwrap();
        let est = em_fit(&d, &g, &VarianceModel::exp_linear(0.0, 0.0), &EmOptions::default()).unwrap();
        assert_eq!(est.pi_hat, vec![1.0]);
        // With all mass at 1.5 the likelihood is maximised by the mean squared
        // deviation about 1.5, over both replicates.
        let target: f64 = d
            .pairs()
            .iter()
            .map(|p| (p.y1 - 1.5).powi(2) + (p.y2 - 1.5).powi(2))
            .sum::<f64>()
            / (2.0 * d.len() as f64);
        let h = est.model().h(1.5);
        assert!((h - target).abs() < 1e-8 * target, "{h} vs {target}");
    }

    #[test]
    fn rejects_bad_pi() {
        let d = ds(&[(1.0, 2.0)]);
        let g = SupportGrid::from_points(vec![1.0, 2.0], 0.25).unwrap();
        let m = VarianceModel::exp_linear(0.0, 0.0);
        assert!(responsibilities(&d, &m, &g, &[0.5]).is_err());
        assert!(responsibilities(&d, &m, &g, &[0.7, 0.7]).is_err());
        assert!(responsibilities(&d, &m, &g, &[-0.5, 1.5]).is_err());
        assert!(SupportGrid::from_points(vec![2.0, 1.0], 0.25).is_err());
    }
}
