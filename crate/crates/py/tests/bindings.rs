use pyo3::prelude::*;
use pyo3::wrap_pymodule;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let module = wrap_pymodule!(pyhetvar::pyhetvar)(py);
        py.import("sys")
            .unwrap()
            .getattr("modules")
            .unwrap()
            .set_item("pyhetvar", module)
            .unwrap();
        if let Err(e) = py.run(code, None, None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn confidence_sets_and_p_values() {
    run(c"
import math, pyhetvar
m = pyhetvar.VarianceModel([4.84, -0.927])
lo, hi = pyhetvar.ci_diff(10.21, 10.78, m, method='naive').ratio()
assert abs(lo - 0.4428) < 1e-3 and abs(hi - 0.7223) < 1e-3, (lo, hi)
r = pyhetvar.ci_diff(10.21, 10.78, m)
assert r.contains(10.21 - 10.78) and not r.disconnected
assert pyhetvar.ci_mu(10.0, m, method='naive').level == 0.95
assert pyhetvar.pvalue(9.0, 9.0, m, method='naive').p_value == 1.0
bb = pyhetvar.pvalue(9.0, 10.0, m)
assert bb.method == 'berger-boos' and 0.0 <= bb.p_value <= 1.0
");
}

#[test]
fn errors_map_to_python_exceptions() {
    run(c"
import pyhetvar
for bad, exc in [
    (lambda: pyhetvar.VarianceModel([1.0]), ValueError),
    (lambda: pyhetvar.VarianceModel([1.0, 2.0], form='cubic'), ValueError),
    (lambda: pyhetvar.macl_fit([1.0, 2.0, 3.0], [1.5]), ValueError),
    (lambda: pyhetvar.ci_mu(1.0, pyhetvar.VarianceModel([0.0, 0.0]), a=1.0), ValueError),
]:
    try:
        bad()
    except exc:
        pass
    else:
        raise AssertionError('no exception')
");
}

#[test]
fn estimators_recover_the_slope() {
    run(c"
import math, random, pyhetvar
rng = random.Random(1)
y1, y2 = [], []
for _ in range(500):
    mu = rng.uniform(8.0, 12.0)
    sd = math.exp(0.5 * (5.0 - mu))
    y1.append(rng.gauss(mu, sd)); y2.append(rng.gauss(mu, sd))
fit = pyhetvar.macl_fit(y1, y2)
assert abs(fit.theta_hat[1] + 1.0) < 0.25, fit.theta_hat
mix = pyhetvar.fit_mixture(y1, y2, max_iter=100)
assert abs(sum(mix.pi_hat) - 1.0) < 1e-9
assert mix.model().theta == mix.theta_hat
");
}
