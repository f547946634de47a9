//! Confidence sets for a single log-abundance and for the difference of two.
//!
//! The single-mean set inverts the exact pivot `(Y - mu)^2 / h(theta, mu)`
//! against the chi-squared(1) quantile. For the difference `nu1 = mu1 - mu2`
//! the bivariate pivot over `(nu1, nu2 = mu1 + mu2)` is projected onto `nu1`
//! over the bounded parameter space.

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::model::{Bounds, VarianceModel};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_GRID_RES: f64 = 0.005;
const MAX_BISECT: usize = 200;
const INVERSION_GRID: usize = 4001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Endpoints mapped from the log scale to the ratio scale.
    pub fn to_ratio(&self) -> Interval {
        Interval {
            lo: self.lo.exp(),
            hi: self.hi.exp(),
        }
    }

    fn intersect(&self, b: Bounds) -> Option<Interval> {
        let lo = self.lo.max(b.lo);
        let hi = self.hi.min(b.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

/// A union of disjoint, sorted intervals with its hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub components: Vec<Interval>,
    pub hull: Interval,
    pub disconnected: bool,
    pub level: f64,
    /// True when the set came from grid inversion rather than the closed-form
    /// structure of the exp-linear pivot.
    pub approximate: bool,
}

impl ConfidenceSet {
    fn from_components(components: Vec<Interval>, level: f64, approximate: bool) -> Result<Self> {
        let (Some(first), Some(last)) = (components.first(), components.last()) else {
            return Err(Error::EmptySet("no parameter value is accepted".into()));
        };
        let hull = Interval::new(first.lo, last.hi);
        Ok(ConfidenceSet {
            disconnected: components.len() > 1,
            hull,
            components,
            level,
            approximate,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.components.iter().any(|c| c.contains(x))
    }

    /// Restricts every component to `bounds`, dropping empty ones.
    pub fn bounded(&self, bounds: Bounds) -> Result<Self> {
        let comps: Vec<_> = self
            .components
            .iter()
            .filter_map(|c| c.intersect(bounds))
            .collect();
        ConfidenceSet::from_components(comps, self.level, self.approximate)
    }

    fn negated(&self) -> Self {
        let comps = self
            .components
            .iter()
            .rev()
            .map(|c| Interval::new(-c.hi, -c.lo))
            .collect();
        ConfidenceSet::from_components(comps, self.level, self.approximate).expect("non-empty")
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`; runs to full floating
/// point resolution (at most 200 halvings).
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    let lo_neg = flo <= 0.0;
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        if (f(mid) <= 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Pivot `(y - mu)^2 / h(mu)`.
pub fn single_pivot(y: f64, model: &VarianceModel, mu: f64) -> f64 {
    let d = y - mu;
    d * d / model.h(mu)
}

/// Closed-form structure for `h = exp(t1 + t2 mu)` with `t2 < 0`:
/// the pivot has a local minimum 0 at `y` and a local maximum at `y + 2/t2`.
fn exact_exp_linear_negative(y: f64, t1: f64, t2: f64, q: f64) -> Vec<Interval> {
    let g = |mu: f64| {
        let d = y - mu;
        d * d * (-t1 - t2 * mu).exp()
    };
    let excess = |mu: f64| g(mu) - q;

    let mut step = (q * (t1 + t2 * y).exp()).sqrt().max(1e-8);
    let mut hi = y + step;
    while g(hi) <= q {
        step *= 2.0;
        hi = y + step;
    }
    let upper = bisect(excess, y, hi);

    let mu_star = y + 2.0 / t2;
    let g_star = 4.0 / (t2 * t2) * (-(2.0 + t1 + t2 * y)).exp();
    if g_star <= q {
        return vec![Interval::new(f64::NEG_INFINITY, upper)];
    }
    let inner_lo = bisect(excess, mu_star, y);
    let mut step = (y - mu_star).max(1e-8);
    let mut lo = mu_star - step;
    while g(lo) >= q {
        step *= 2.0;
        lo = mu_star - step;
    }
    let outer_hi = bisect(excess, lo, mu_star);
    vec![
        Interval::new(f64::NEG_INFINITY, outer_hi),
        Interval::new(inner_lo, upper),
    ]
}

/// Sets `{mu in bounds : pivot(mu) <= q}` by grid scan with bisection at every
/// accept/reject transition. `anchors` are extra points always evaluated.
pub(crate) fn invert_on_grid<F: Fn(f64) -> f64>(
    pivot: F,
    q: f64,
    bounds: Bounds,
    anchors: &[f64],
) -> Vec<Interval> {
    let mut pts: Vec<f64> = if bounds.lo == bounds.hi {
        vec![bounds.lo]
    } else {
        (0..INVERSION_GRID)
            .map(|k| bounds.lo + bounds.width() * k as f64 / (INVERSION_GRID - 1) as f64)
            .collect()
    };
    pts.extend(anchors.iter().copied().filter(|a| bounds.contains(*a)));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let ok: Vec<bool> = pts.iter().map(|&p| pivot(p) <= q).collect();
    let excess = |mu: f64| pivot(mu) - q;
    let mut out = Vec::new();
    let mut k = 0;
    while k < pts.len() {
        if !ok[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < pts.len() && ok[k + 1] {
            k += 1;
        }
        let lo = if start == 0 {
            pts[0]
        } else {
            bisect(excess, pts[start - 1], pts[start])
        };
        let hi = if k + 1 == pts.len() {
            pts[k]
        } else {
            bisect(excess, pts[k], pts[k + 1])
        };
        out.push(Interval::new(lo, hi));
        k += 1;
    }
    out
}

/// Exact `1 - alpha` confidence set for `mu` from one observation
/// `y ~ N(mu, h(theta, mu))`, optionally intersected with `bounds`.
///
/// Exp-linear models use the closed-form pivot structure; other forms fall
/// back to grid inversion over `bounds` (required) and are flagged
/// `approximate`.
pub fn ci_mu_exact(
    y: f64,
    model: &VarianceModel,
    alpha: f64,
    bounds: Option<Bounds>,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    if !y.is_finite() {
        return Err(Error::InvalidArgument(format!("observation must be finite, got {y}")));
    }
    let q = dist::chi2_1_quantile(alpha)?;
    let level = 1.0 - alpha;
    let unbounded = match model.exp_linear_slope() {
        Some(t2) if t2 < 0.0 => ConfidenceSet::from_components(
            exact_exp_linear_negative(y, model.theta()[0], t2, q),
            level,
            false,
        )?,
        Some(t2) if t2 > 0.0 => {
            // Reflect mu -> -mu, which flips the sign of the slope.
            let comps = exact_exp_linear_negative(-y, model.theta()[0], -t2, q);
            ConfidenceSet::from_components(comps, level, false)?.negated()
        }
        Some(_) => {
            let half = (q * model.theta()[0].exp()).sqrt();
            ConfidenceSet::from_components(vec![Interval::new(y - half, y + half)], level, false)?
        }
        None => {
            let Some(b) = bounds else {
                return Err(Error::UnsupportedForm(format!(
                    "{} needs finite bounds for grid inversion",
                    model.form()
                )));
            };
            model.check_on(b)?;
            let comps = invert_on_grid(|mu| single_pivot(y, model, mu), q, b, &[y]);
            return ConfidenceSet::from_components(comps, level, true);
        }
    };
    match bounds {
        Some(b) => unbounded.bounded(b),
        None => Ok(unbounded),
    }
}

/// Plug-in interval `y +- z_{1-alpha/2} sqrt(h(theta, y))`.
pub fn ci_mu_naive(y: f64, model: &VarianceModel, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    let half = dist::normal_two_sided(alpha)? * model.variance_at(y)?.sqrt();
    Ok(Interval::new(y - half, y + half))
}

/// Standardised residuals of `Y1 - Y2` and `Y1 + Y2` at `(nu1, nu2)`, their
/// correlation and the chi-squared(2) quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferencePivot {
    pub g_diff: f64,
    pub g_sum: f64,
    pub rho: f64,
    pub g_quad: f64,
}

impl DifferencePivot {
    pub fn evaluate(y1: f64, y2: f64, model: &VarianceModel, nu1: f64, nu2: f64) -> Self {
        let h1 = model.h(0.5 * (nu2 + nu1));
        let h2 = model.h(0.5 * (nu2 - nu1));
        let s = h1 + h2;
        let root = s.sqrt();
        let g_diff = (y1 - y2 - nu1) / root;
        let g_sum = (y1 + y2 - nu2) / root;
        let rho = (h1 - h2) / s;
        let g_quad = (g_diff * g_diff - 2.0 * rho * g_diff * g_sum + g_sum * g_sum) / (1.0 - rho * rho);
        DifferencePivot {
            g_diff,
            g_sum,
            rho,
            g_quad,
        }
    }
}

/// Profile of the bivariate pivot: for each `nu1`, the smallest quadratic form
/// over the admissible `nu2`. Uses `g_quad = (y1-mu1)^2/h(mu1) + (y2-mu2)^2/h(mu2)`.
pub struct RegionProfile<'a> {
    y1: f64,
    y2: f64,
    model: &'a VarianceModel,
    bounds: Bounds,
    step: f64,
}

impl<'a> RegionProfile<'a> {
    pub fn new(y1: f64, y2: f64, model: &'a VarianceModel, bounds: Bounds, grid_res: f64) -> Self {
        RegionProfile {
            y1,
            y2,
            model,
            bounds,
            step: 0.5 * grid_res,
        }
    }

    fn pivot(&self, nu1: f64, mu2: f64) -> f64 {
        single_pivot(self.y1, self.model, mu2 + nu1) + single_pivot(self.y2, self.model, mu2)
    }

    /// Admissible range of `mu2` for a given `nu1`.
    fn mu2_range(&self, nu1: f64) -> Option<(f64, f64)> {
        let lo = self.bounds.lo.max(self.bounds.lo - nu1);
        let hi = self.bounds.hi.min(self.bounds.hi - nu1);
        (lo <= hi).then_some((lo, hi))
    }

    /// Minimum of the pivot over `nu2` at fixed `nu1` (infinite outside the
    /// parameter space).
    pub fn value(&self, nu1: f64) -> f64 {
        let Some((lo, hi)) = self.mu2_range(nu1) else {
            return f64::INFINITY;
        };
        if hi - lo <= self.step {
            return self.pivot(nu1, lo).min(self.pivot(nu1, hi)).min(self.pivot(nu1, 0.5 * (lo + hi)));
        }
        let n = ((hi - lo) / self.step).ceil() as usize;
        let dx = (hi - lo) / n as f64;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=n {
            let m = lo + dx * k as f64;
            let v = self.pivot(nu1, m);
            if v < best.0 {
                best = (v, m);
            }
        }
        let (a, b) = ((best.1 - dx).max(lo), (best.1 + dx).min(hi));
        let (_, v) = golden_min(|m| self.pivot(nu1, m), a, b, 60);
        best.0.min(v)
    }
}

/// Golden-section minimisation on `[a, b]`; returns `(argmin, min)`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Whether `nu1` belongs to the projected bivariate confidence set.
pub fn region_contains(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    alpha: f64,
    bounds: Bounds,
    nu1: f64,
) -> Result<bool> {
    check_alpha(alpha)?;
    let q = dist::chi2_2_quantile(alpha)?;
    Ok(RegionProfile::new(y1, y2, model, bounds, DEFAULT_GRID_RES).value(nu1) <= q)
}

/// Conservative `1 - alpha` confidence set for `nu1 = mu1 - mu2`: the
/// projection of the exact bivariate region onto `nu1`, restricted to
/// `mu1, mu2 in bounds`.
pub fn ci_diff_region(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    alpha: f64,
    bounds: Bounds,
    grid_res: f64,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    if !(grid_res > 0.0 && grid_res.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be positive, got {grid_res}"
        )));
    }
    if !(y1.is_finite() && y2.is_finite()) {
        return Err(Error::InvalidArgument("observations must be finite".into()));
    }
    model.check_on(bounds)?;
    let q = dist::chi2_2_quantile(alpha)?;
    let level = 1.0 - alpha;
    let profile = RegionProfile::new(y1, y2, model, bounds, grid_res);

    if bounds.lo == bounds.hi {
        return if profile.value(0.0) <= q {
            ConfidenceSet::from_components(vec![Interval::new(0.0, 0.0)], level, false)
        } else {
            Err(Error::EmptySet("the single admissible point is rejected".into()))
        };
    }

    // Both means on a common grid with spacing grid_res / 2, so nu1 moves in
    // steps of grid_res / 2 and nu2 in steps of grid_res.
    let m = ((bounds.width() / profile.step).ceil() as usize).max(1) + 1;
    let dx = bounds.width() / (m - 1) as f64;
    let mus: Vec<f64> = (0..m).map(|k| bounds.lo + dx * k as f64).collect();
    let a: Vec<f64> = mus.iter().map(|&mu| single_pivot(y1, model, mu)).collect();
    let b: Vec<f64> = mus.iter().map(|&mu| single_pivot(y2, model, mu)).collect();

    let offsets = 2 * m - 1;
    let nu_of = |idx: usize| (idx as f64 - (m - 1) as f64) * dx;
    let mut accepted = vec![false; offsets];
    for (idx, slot) in accepted.iter_mut().enumerate() {
        let k = idx as isize - (m as isize - 1);
        // mu1 index = mu2 index + k
        let (start, end) = if k >= 0 {
            (0usize, m - k as usize)
        } else {
            ((-k) as usize, m)
        };
        let mut best = f64::INFINITY;
        for j in start..end {
            let v = a[(j as isize + k) as usize] + b[j];
            if v < best {
                best = v;
            }
        }
        *slot = best <= q || (best <= 4.0 * q + 10.0 && profile.value(nu_of(idx)) <= q);
    }

    let excess = |nu: f64| profile.value(nu) - q;
    let mut comps = Vec::new();
    let mut idx = 0;
    while idx < offsets {
        if !accepted[idx] {
            idx += 1;
            continue;
        }
        let start = idx;
        while idx + 1 < offsets && accepted[idx + 1] {
            idx += 1;
        }
        let lo = if start == 0 {
            nu_of(0)
        } else {
            bisect(excess, nu_of(start - 1), nu_of(start))
        };
        let hi = if idx + 1 == offsets {
            nu_of(idx)
        } else {
            bisect(excess, nu_of(idx), nu_of(idx + 1))
        };
        comps.push(Interval::new(lo, hi));
        idx += 1;
    }
    if comps.is_empty() {
        return Err(Error::EmptySet(format!(
            "no difference in [{}, {}] is accepted for ({y1}, {y2})",
            -bounds.width(),
            bounds.width()
        )));
    }
    ConfidenceSet::from_components(comps, level, false)
}

/// Bonferroni interval: exact `1 - alpha/2` sets for each mean (bounded), then
/// the extreme differences of their hulls.
pub fn ci_diff_bonferroni(
    y1: f64,
    y2: f64,
    model: &VarianceModel,
    alpha: f64,
    bounds: Bounds,
) -> Result<Interval> {
    check_alpha(alpha)?;
    if bounds.lo == bounds.hi {
        // Both means are pinned to the same value.
        return Ok(Interval::new(0.0, 0.0));
    }
    let s1 = ci_mu_exact(y1, model, 0.5 * alpha, Some(bounds))?;
    let s2 = ci_mu_exact(y2, model, 0.5 * alpha, Some(bounds))?;
    Ok(Interval::new(s1.hull.lo - s2.hull.hi, s1.hull.hi - s2.hull.lo))
}

/// Plug-in interval `y1 - y2 +- z sqrt(h(y1) + h(y2))`.
pub fn ci_diff_naive(y1: f64, y2: f64, model: &VarianceModel, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    let half = dist::normal_two_sided(alpha)? * (model.variance_at(y1)? + model.variance_at(y2)?).sqrt();
    let d = y1 - y2;
    Ok(Interval::new(d - half, d + half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VarianceForm;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fitted() -> VarianceModel {
        VarianceModel::exp_linear(4.84, -0.927)
    }

    #[test]
    fn exact_set_structure_at_y8() {
        let m = fitted();
        let t2 = -0.927f64;
        let mu_star = 8.0 + 2.0 / t2;
        assert_abs_diff_eq!(mu_star, 5.842_502_696_871_629, epsilon = 1e-12);
        assert_abs_diff_eq!(single_pivot(8.0, &m, mu_star), 8.280_453_918_359_456, epsilon = 1e-9);
        let s = ci_mu_exact(8.0, &m, 0.05, None).unwrap();
        assert!(s.disconnected);
        assert_eq!(s.components.len(), 2);
        let (c0, c1) = (s.components[0], s.components[1]);
        assert_eq!(c0.lo, f64::NEG_INFINITY);
        assert!(c0.hi < mu_star && mu_star < c1.lo && c1.lo < 8.0 && 8.0 < c1.hi);
        let b = s.bounded(Bounds::default()).unwrap();
        assert_eq!(b.components.len(), 1);
        assert!(!b.disconnected);
    }

    #[test]
    fn endpoints_hit_quantile() {
        let m = fitted();
        let q = dist::chi2_1_quantile(0.05).unwrap();
        for &y in &[7.3, 8.0, 10.0, 12.5, 13.9] {
            let s = ci_mu_exact(y, &m, 0.05, None).unwrap();
            for c in &s.components {
                for e in [c.lo, c.hi] {
                    if e.is_finite() {
                        let r = (single_pivot(y, &m, e) - q).abs();
                        assert!(r <= 1e-8, "y {y} endpoint {e} residual {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn positive_and_zero_slopes() {
        let up = VarianceModel::exp_linear(-4.0, 0.5);
        let s = ci_mu_exact(3.0, &up, 0.05, None).unwrap();
        assert!(s.contains(3.0));
        assert_eq!(s.hull.hi, f64::INFINITY);
        let flat = VarianceModel::exp_linear(0.0, 0.0);
        let s = ci_mu_exact(1.0, &flat, 0.05, None).unwrap();
        assert_abs_diff_eq!(s.hull.hi - 1.0, 1.959_963_984_540_054, epsilon = 1e-10);
    }

    #[test]
    fn other_forms_use_grid_inversion() {
        let p = VarianceModel::new(VarianceForm::Power, vec![0.0, -2.0]).unwrap();
        assert!(matches!(
            ci_mu_exact(9.0, &p, 0.05, None),
            Err(Error::UnsupportedForm(_))
        ));
        let s = ci_mu_exact(9.0, &p, 0.05, Some(Bounds::default())).unwrap();
        assert!(s.approximate && s.contains(9.0));
        let q = dist::chi2_1_quantile(0.05).unwrap();
        for c in &s.components {
            for e in [c.lo, c.hi] {
                if e > 7.3 && e < 13.9 {
                    assert!((single_pivot(9.0, &p, e) - q).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn alpha_validation() {
        let m = fitted();
        assert!(ci_mu_exact(9.0, &m, 0.0, None).is_err());
        assert!(ci_mu_exact(9.0, &m, 1.0, None).is_err());
        assert!(ci_mu_naive(9.0, &m, 1.5).is_err());
        assert!(ci_diff_region(9.0, 9.0, &m, 0.05, Bounds::default(), 0.0).is_err());
    }

    #[test]
    fn naive_examples() {
        let unit = VarianceModel::exp_linear(0.0, 0.0);
        let i = ci_mu_naive(4.0, &unit, 0.05).unwrap();
        assert_abs_diff_eq!(i.hi - 4.0, 1.959_964, epsilon = 1e-6);
        assert_abs_diff_eq!(4.0 - i.lo, 1.959_964, epsilon = 1e-6);
        assert!(ci_mu_naive(4.0, &unit, 1.0 - 1e-12).unwrap().width() < 1e-10);
        let i = ci_mu_naive(10.21, &fitted(), 0.05).unwrap();
        assert_abs_diff_eq!(i.hi - 10.21, 0.194_094_737_369_353_2, epsilon = 1e-12);
    }

    #[test]
    fn naive_difference_examples() {
        let m = fitted();
        let r = ci_diff_naive(10.21, 10.78, &m, 0.05).unwrap().to_ratio();
        assert_abs_diff_eq!(r.lo, 0.442_767_810_534_751_4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.hi, 0.722_317_689_332_572_6, epsilon = 1e-12);
        let r = ci_diff_naive(11.45, 13.36, &m, 0.05).unwrap().to_ratio();
        assert_abs_diff_eq!(r.lo, 0.131_574_766_671_074_8, epsilon = 1e-12);
        assert_abs_diff_eq!(r.hi, 0.166_656_582_025_937_9, epsilon = 1e-12);
        let i = ci_diff_naive(9.5, 9.5, &m, 0.05).unwrap();
        assert!(i.to_ratio().contains(1.0));
        assert_abs_diff_eq!(i.lo, -i.hi, epsilon = 1e-15);
    }

    #[test]
    fn rho_vanishes_at_zero_difference() {
        let p = DifferencePivot::evaluate(10.0, 11.0, &fitted(), 0.0, 20.0);
        assert_eq!(p.rho, 0.0);
    }

    #[test]
    fn region_swap_symmetry() {
        let m = fitted();
        let b = Bounds::default();
        let s = ci_diff_region(10.21, 10.78, &m, 0.05, b, 0.005).unwrap();
        let t = ci_diff_region(10.78, 10.21, &m, 0.05, b, 0.005).unwrap();
        assert_abs_diff_eq!(s.hull.lo, -t.hull.hi, epsilon = 1e-6);
        assert_abs_diff_eq!(s.hull.hi, -t.hull.lo, epsilon = 1e-6);
    }

    #[test]
    fn region_refinement_is_stable() {
        let m = fitted();
        let b = Bounds::default();
        for &(y1, y2) in &[(10.21, 10.78), (11.19, 9.92), (8.0, 9.0)] {
            let coarse = ci_diff_region(y1, y2, &m, 0.05, b, 0.01).unwrap();
            let fine = ci_diff_region(y1, y2, &m, 0.05, b, 0.005).unwrap();
            assert!((coarse.hull.lo - fine.hull.lo).abs() < 0.02);
            assert!((coarse.hull.hi - fine.hull.hi).abs() < 0.02);
        }
    }

    #[test]
    fn bonferroni_examples() {
        let m = fitted();
        let b = Bounds::default();
        let i = ci_diff_bonferroni(10.0, 10.0, &m, 0.05, b).unwrap();
        assert_abs_diff_eq!(i.lo, -i.hi, epsilon = 1e-9);
        let pinned = Bounds::new(9.0, 9.0).unwrap();
        let i = ci_diff_bonferroni(10.0, 8.0, &m, 0.05, pinned).unwrap();
        assert_eq!((i.lo, i.hi), (0.0, 0.0));
        let bon = ci_diff_bonferroni(10.21, 10.78, &m, 0.05, b).unwrap();
        let region = ci_diff_region(10.21, 10.78, &m, 0.05, b, 0.005).unwrap();
        assert!(bon.lo <= region.hull.lo && bon.hi >= region.hull.hi);
        assert!(bon.lo <= 0.41f64.ln() && bon.hi >= 0.76f64.ln());
    }

    proptest! {
        #[test]
        fn observation_is_inside_its_set(
            y in 5.0..16.0f64, t1 in -2.0..6.0f64, t2 in -1.5..1.5f64, alpha in 0.001..0.5f64
        ) {
            let m = VarianceModel::exp_linear(t1, t2);
            let s = ci_mu_exact(y, &m, alpha, None).unwrap();
            prop_assert!(s.contains(y));
            for w in s.components.windows(2) {
                prop_assert!(w[0].hi < w[1].lo);
            }
        }

        #[test]
        fn quadratic_form_routes_agree(
            y1 in 7.0..14.0f64, y2 in 7.0..14.0f64, mu1 in 7.3..13.9f64, mu2 in 7.3..13.9f64
        ) {
            let m = fitted();
            let p = DifferencePivot::evaluate(y1, y2, &m, mu1 - mu2, mu1 + mu2);
            let direct = single_pivot(y1, &m, mu1) + single_pivot(y2, &m, mu2);
            prop_assert!(p.g_quad >= 0.0);
            prop_assert!((p.g_quad - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }
}
