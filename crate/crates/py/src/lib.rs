//! Python bindings for `hetvar`: the variance model, both estimators,
//! confidence sets and p-values.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hetvar::model::DEFAULT_BOUNDS;
use hetvar::{
    Bounds, CBetaPivot, ConfidenceSet, Interval, MaclOptions, MixtureFitOptions, PairedDataset,
    PairedObservation, TestMethod, VarianceForm,
};

fn to_py(e: hetvar::Error) -> PyErr {
    if e.is_data_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn bounds(a: f64, b: f64) -> PyResult<Bounds> {
    Bounds::new(a, b).map_err(to_py)
}

fn dataset(y1: Vec<f64>, y2: Vec<f64>, b: Bounds) -> PyResult<PairedDataset> {
    if y1.len() != y2.len() {
        return Err(PyValueError::new_err(format!(
            "y1 and y2 differ in length ({} vs {})",
            y1.len(),
            y2.len()
        )));
    }
    let pairs = y1
        .into_iter()
        .zip(y2)
        .enumerate()
        .map(|(i, (a, b))| PairedObservation::new(format!("p{i}"), a, b))
        .collect::<hetvar::Result<Vec<_>>>()
        .map_err(to_py)?;
    Ok(PairedDataset::ingest(pairs, b).map_err(to_py)?.0)
}

/// Variance function `h(theta, mu)`.
#[pyclass(name = "VarianceModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVarianceModel {
    inner: hetvar::VarianceModel,
}

#[pymethods]
impl PyVarianceModel {
    #[new]
    #[pyo3(signature = (theta, form = "exp-linear"))]
    fn new(theta: Vec<f64>, form: &str) -> PyResult<Self> {
        let form: VarianceForm = form.parse().map_err(to_py)?;
        Ok(PyVarianceModel {
            inner: hetvar::VarianceModel::new(form, theta).map_err(to_py)?,
        })
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[getter]
    fn form(&self) -> &'static str {
        self.inner.form().as_str()
    }

    fn variance_at(&self, mu: f64) -> PyResult<f64> {
        self.inner.variance_at(mu).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("VarianceModel({:?}, form='{}')", self.inner.theta(), self.form())
    }
}

#[pyclass(frozen, get_all)]
struct MaclFit {
    theta_hat: Vec<f64>,
    converged: bool,
    iterations: usize,
    residual_norm: f64,
    n_pairs: usize,
}

#[pyclass(frozen, get_all)]
struct MixtureFit {
    form: &'static str,
    theta_hat: Vec<f64>,
    grid: Vec<f64>,
    pi_hat: Vec<f64>,
    log_lik: f64,
    iterations: usize,
    converged: bool,
    n_pairs: usize,
}

#[pymethods]
impl MixtureFit {
    fn model(&self) -> PyResult<PyVarianceModel> {
        PyVarianceModel::new(self.theta_hat.clone(), self.form)
    }
}

/// A confidence set on the log scale: its disjoint pieces and their hull.
#[pyclass(name = "ConfidenceSet", frozen, get_all)]
struct PyConfidenceSet {
    components: Vec<(f64, f64)>,
    hull: (f64, f64),
    disconnected: bool,
    level: f64,
    approximate: bool,
}

#[pymethods]
impl PyConfidenceSet {
    fn contains(&self, x: f64) -> bool {
        self.components.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// Hull endpoints mapped to the ratio scale.
    fn ratio(&self) -> (f64, f64) {
        (self.hull.0.exp(), self.hull.1.exp())
    }

    fn __repr__(&self) -> String {
        format!("ConfidenceSet({:?}, level={})", self.components, self.level)
    }
}

impl From<ConfidenceSet> for PyConfidenceSet {
    fn from(s: ConfidenceSet) -> Self {
        PyConfidenceSet {
            components: s.components.iter().map(|c| (c.lo, c.hi)).collect(),
            hull: (s.hull.lo, s.hull.hi),
            disconnected: s.disconnected,
            level: s.level,
            approximate: s.approximate,
        }
    }
}

fn single(i: Interval, alpha: f64) -> PyConfidenceSet {
    PyConfidenceSet {
        components: vec![(i.lo, i.hi)],
        hull: (i.lo, i.hi),
        disconnected: false,
        level: 1.0 - alpha,
        approximate: false,
    }
}

#[pyclass(name = "TestResult", frozen, get_all)]
struct PyTestResult {
    method: &'static str,
    statistic: Option<f64>,
    p_value: f64,
    mu_sup: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (y1, y2, form = "exp-linear", init = None, tol = hetvar::macl::DEFAULT_TOL))]
fn macl_fit(y1: Vec<f64>, y2: Vec<f64>, form: &str, init: Option<Vec<f64>>, tol: f64) -> PyResult<MaclFit> {
    let data = dataset(y1, y2, DEFAULT_BOUNDS)?;
    let opts = MaclOptions {
        init,
        tol,
        ..Default::default()
    };
    let fit = hetvar::macl_fit(&data, form.parse().map_err(to_py)?, &opts).map_err(to_py)?;
    Ok(MaclFit {
        theta_hat: fit.theta_hat,
        converged: fit.converged,
        iterations: fit.iterations,
        residual_norm: fit.residual_norm,
        n_pairs: data.len(),
    })
}

#[pyfunction]
#[pyo3(signature = (y1, y2, form = "exp-linear", d = hetvar::mixture_em::DEFAULT_D, a = 7.3, b = 13.9, max_iter = hetvar::mixture_em::DEFAULT_MAX_ITER))]
#[allow(clippy::too_many_arguments)]
fn fit_mixture(
    py: Python<'_>,
    y1: Vec<f64>,
    y2: Vec<f64>,
    form: &str,
    d: f64,
    a: f64,
    b: f64,
    max_iter: usize,
) -> PyResult<MixtureFit> {
    let data = dataset(y1, y2, bounds(a, b)?)?;
    let form: VarianceForm = form.parse().map_err(to_py)?;
    let mut opts = MixtureFitOptions {
        d,
        ..Default::default()
    };
    opts.em.max_iter = max_iter;
    let (est, grid) = py
        .detach(|| hetvar::fit_mixture(&data, form, &opts))
        .map_err(to_py)?;
    Ok(MixtureFit {
        form: form.as_str(),
        theta_hat: est.theta_hat,
        grid: grid.points().to_vec(),
        pi_hat: est.pi_hat,
        log_lik: est.log_lik,
        iterations: est.iterations,
        converged: est.converged,
        n_pairs: data.len(),
    })
}

/// Confidence set for one mean. `method` is `exact` or `naive`; the exact set
/// is intersected with `[a, b]` when both are given.
#[pyfunction]
#[pyo3(signature = (y, model, alpha = 0.05, method = "exact", a = None, b = None))]
fn ci_mu(
    y: f64,
    model: &PyVarianceModel,
    alpha: f64,
    method: &str,
    a: Option<f64>,
    b: Option<f64>,
) -> PyResult<PyConfidenceSet> {
    let bounded = match (a, b) {
        (Some(a), Some(b)) => Some(bounds(a, b)?),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("give both a and b or neither")),
    };
    match method {
        "exact" => Ok(hetvar::ci_mu_exact(y, &model.inner, alpha, bounded).map_err(to_py)?.into()),
        "naive" => Ok(single(hetvar::ci_mu_naive(y, &model.inner, alpha).map_err(to_py)?, alpha)),
        other => Err(PyValueError::new_err(format!("unknown method '{other}' (exact, naive)"))),
    }
}

/// Confidence set for `mu1 - mu2`. `method` is `region`, `bonferroni` or `naive`.
#[pyfunction]
#[pyo3(signature = (y1, y2, model, alpha = 0.05, method = "region", a = 7.3, b = 13.9, grid_res = hetvar::intervals::DEFAULT_GRID_RES))]
#[allow(clippy::too_many_arguments)]
fn ci_diff(
    py: Python<'_>,
    y1: f64,
    y2: f64,
    model: &PyVarianceModel,
    alpha: f64,
    method: &str,
    a: f64,
    b: f64,
    grid_res: f64,
) -> PyResult<PyConfidenceSet> {
    let bd = bounds(a, b)?;
    let m = &model.inner;
    match method {
        "region" => Ok(py
            .detach(|| hetvar::ci_diff_region(y1, y2, m, alpha, bd, grid_res))
            .map_err(to_py)?
            .into()),
        "bonferroni" => Ok(single(hetvar::ci_diff_bonferroni(y1, y2, m, alpha, bd).map_err(to_py)?, alpha)),
        "naive" => Ok(single(hetvar::ci_diff_naive(y1, y2, m, alpha).map_err(to_py)?, alpha)),
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (region, bonferroni, naive)"
        ))),
    }
}

/// p-value for `mu1 = mu2`. `method` is `naive`, `conservative` or `berger-boos`.
#[pyfunction]
#[pyo3(signature = (y1, y2, model, method = "berger-boos", a = 7.3, b = 13.9, beta = hetvar::hypothesis::DEFAULT_BETA, cbeta_pivot = "pair-mean"))]
#[allow(clippy::too_many_arguments)]
fn pvalue(
    y1: f64,
    y2: f64,
    model: &PyVarianceModel,
    method: &str,
    a: f64,
    b: f64,
    beta: f64,
    cbeta_pivot: &str,
) -> PyResult<PyTestResult> {
    let method: TestMethod = method.parse().map_err(to_py)?;
    let pivot: CBetaPivot = cbeta_pivot.parse().map_err(to_py)?;
    let r = hetvar::hypothesis::pvalue(method, y1, y2, &model.inner, bounds(a, b)?, beta, pivot)
        .map_err(to_py)?;
    Ok(PyTestResult {
        method: method.as_str(),
        statistic: r.statistic,
        p_value: r.p_value,
        mu_sup: r.mu_sup,
    })
}

/// Exact expectations of the two exp-linear MACL estimating equations.
#[pyfunction]
fn estimating_equation_bias(theta: (f64, f64), mus: Vec<f64>) -> PyResult<(f64, f64)> {
    hetvar::estimating_equation_bias([theta.0, theta.1], &mus).map_err(to_py)
}

#[pymodule]
pub fn pyhetvar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyVarianceModel>()?;
    m.add_class::<MaclFit>()?;
    m.add_class::<MixtureFit>()?;
    m.add_class::<PyConfidenceSet>()?;
    m.add_class::<PyTestResult>()?;
    m.add_function(wrap_pyfunction!(macl_fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(ci_mu, m)?)?;
    m.add_function(wrap_pyfunction!(ci_diff, m)?)?;
    m.add_function(wrap_pyfunction!(pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(estimating_equation_bias, m)?)?;
    Ok(())
}
