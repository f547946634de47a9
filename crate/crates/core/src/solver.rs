//! Weighted variance regression shared by the MACL fit and the EM M-step.
//!
//! Maximises `F(theta) = sum_r w_r [ -ln h(theta, m_r) - v_r / h(theta, m_r) ] / sum_r w_r`
//! where `v_r` is an observed (or expected) variance at location `m_r`. The
//! stationarity conditions are the estimating equations
//! `sum_r w_r dh/dtheta_j / h^2 (v_r - h) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{VarianceForm, VarianceModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct VarianceTerm {
    pub weight: f64,
    pub mu: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients held fixed at the given value.
    pub pinned: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

struct Problem<'a> {
    form: VarianceForm,
    terms: &'a [VarianceTerm],
    total_weight: f64,
    free: Vec<usize>,
    template: Vec<f64>,
}

struct Eval {
    objective: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    fisher: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn full_theta(&self, free_vals: &DVector<f64>) -> Vec<f64> {
        let mut t = self.template.clone();
        for (k, &j) in self.free.iter().enumerate() {
            t[j] = free_vals[k];
        }
        t
    }

    fn model(&self, theta: Vec<f64>) -> Option<VarianceModel> {
        VarianceModel::new(self.form, theta).ok()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Option<Eval> {
        let model = self.model(self.full_theta(x))?;
        let k = self.free.len();
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        let mut fisher = DMatrix::<f64>::zeros(k, k);
        let mut objective = 0.0;
        for t in self.terms {
            if t.weight == 0.0 {
                continue;
            }
            let d = model.derivs(t.mu);
            let h = d.h;
            let inv = 1.0 / h;
            let resid = t.target - h;
            objective -= t.weight * (h.ln() + t.target * inv);
            let s1 = t.weight * resid * inv * inv;
            let s2 = t.weight * (2.0 * t.target - h) * inv * inv * inv;
            let s3 = t.weight * inv * inv;
            for (a, &ja) in self.free.iter().enumerate() {
                grad[a] += s1 * d.grad[ja];
                for (b, &jb) in self.free.iter().enumerate() {
                    let gg = d.grad[ja] * d.grad[jb];
                    hess[(a, b)] += s1 * d.hess[ja][jb] - s2 * gg;
                    fisher[(a, b)] -= s3 * gg;
                }
            }
        }
        let w = self.total_weight;
        let objective = objective / w;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(Eval {
            objective,
            grad: grad / w,
            hess: hess / w,
            fisher: fisher / w,
        })
    }

    fn residual(&self, x: &DVector<f64>) -> f64 {
        match self.evaluate(x) {
            Some(e) => e.grad.amax(),
            None => f64::INFINITY,
        }
    }
}

/// Ascent direction from a negative (semi)definite curvature matrix.
fn ascent_direction(curv: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -curv;
    let step = neg.lu().solve(grad)?;
    if step.iter().all(|s| s.is_finite()) && step.dot(grad) > 0.0 {
        Some(step)
    } else {
        None
    }
}

pub(crate) fn solve(
    form: VarianceForm,
    init: &[f64],
    terms: &[VarianceTerm],
    opts: &SolveOptions,
) -> Result<Solution> {
    let n = form.n_params();
    if init.len() != n || opts.pinned.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{form} needs {n} initial coefficients"
        )));
    }
    let total_weight: f64 = terms.iter().map(|t| t.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::DegenerateData("no positive weights".into()));
    }
    let mut template = init.to_vec();
    let mut free = Vec::new();
    for j in 0..n {
        match opts.pinned[j] {
            Some(v) => template[j] = v,
            None => free.push(j),
        }
    }
    let problem = Problem {
        form,
        terms,
        total_weight,
        free,
        template,
    };
    let mut x = DVector::from_iterator(
        problem.free.len(),
        problem.free.iter().map(|&j| problem.template[j]),
    );

    if problem.free.is_empty() {
        return Ok(Solution {
            theta: problem.full_theta(&x),
            converged: true,
            iterations: 0,
            residual: 0.0,
        });
    }

    let Some(mut eval) = problem.evaluate(&x) else {
        return Err(Error::InvalidArgument(format!(
            "initial coefficients {init:?} give a non-finite objective"
        )));
    };
    let mut iterations = 0;
    let mut stalled = false;
    while iterations < opts.max_iter {
        let residual = eval.grad.amax();
        if residual <= opts.tol {
            return Ok(Solution {
                theta: problem.full_theta(&x),
                converged: true,
                iterations,
                residual,
            });
        }
        iterations += 1;
        let Some(dir) = ascent_direction(&eval.hess, &eval.grad)
            .or_else(|| ascent_direction(&eval.fisher, &eval.grad))
        else {
            stalled = true;
            break;
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            if let Some(e) = problem.evaluate(&cand) {
                let slack = 1e-13 * (1.0 + eval.objective.abs());
                if e.objective > eval.objective
                    || (e.objective >= eval.objective - slack && e.grad.amax() < residual)
                {
                    accepted = Some((cand, e));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, e)) => {
                x = cand;
                eval = e;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    let residual = eval.grad.amax();
    if residual <= opts.tol {
        return Ok(Solution {
            theta: problem.full_theta(&x),
            converged: true,
            iterations,
            residual,
        });
    }
    if stalled {
        // Singular or indefinite curvature: fall back to a simplex search on
        // the squared estimating-equation residual.
        let (xs, rs, evals) = nelder_mead(|p| problem.residual(p).powi(2), &x, 20_000);
        let r = rs.sqrt();
        iterations += evals;
        if r <= opts.tol {
            return Ok(Solution {
                theta: problem.full_theta(&xs),
                converged: true,
                iterations,
                residual: r,
            });
        }
        if r < residual {
            x = xs;
        }
    }
    Err(Error::NonConvergence {
        best: problem.full_theta(&x),
        residual: problem.residual(&x),
        iterations,
    })
}

/// Nelder-Mead minimisation. Returns the best point, its value and the
/// number of function evaluations.
pub(crate) fn nelder_mead<F>(f: F, start: &DVector<f64>, max_evals: usize) -> (DVector<f64>, f64, usize)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = start.len();
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.clone(), f(start)));
    for i in 0..n {
        let mut p = start.clone();
        p[i] += if p[i].abs() > 1e-3 { 0.05 * p[i].abs() } else { 0.05 };
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut evals = n + 1;
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    while evals < max_evals {
        simplex.sort_by(|a, b| key(a.1).total_cmp(&key(b.1)));
        let best = key(simplex[0].1);
        let worst = key(simplex[n].1);
        if (worst - best).abs() <= 1e-30 + 1e-15 * best.abs() {
            break;
        }
        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, (p, _)| acc + p)
            / n as f64;
        let reflect = &centroid + (&centroid - &simplex[n].0);
        let fr = f(&reflect);
        evals += 1;
        if key(fr) < best {
            let expand = &centroid + (&reflect - &centroid) * 2.0;
            let fe = f(&expand);
            evals += 1;
            simplex[n] = if key(fe) < key(fr) { (expand, fe) } else { (reflect, fr) };
        } else if key(fr) < key(simplex[n - 1].1) {
            simplex[n] = (reflect, fr);
        } else {
            let contract = &centroid + (&simplex[n].0 - &centroid) * 0.5;
            let fc = f(&contract);
            evals += 1;
            if key(fc) < worst {
                simplex[n] = (contract, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let p = &anchor + (&item.0 - &anchor) * 0.5;
                    let v = f(&p);
                    *item = (p, v);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| key(a.1).total_cmp(&key(b.1)));
    let (p, v) = simplex.swap_remove(0);
    (p, v, evals)
}
