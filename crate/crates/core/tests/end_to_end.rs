use hetvar::hypothesis::DEFAULT_BETA;
use hetvar::io::read_pairs;
use hetvar::mixture_em::{mixture_log_lik, EmOptions};
use hetvar::model::DEFAULT_BOUNDS;
use hetvar::simulate::{generate_replicate, Scenario, ScenarioKind};
use hetvar::{
    ci_diff_naive, ci_diff_region, ci_mu_exact, fit_mixture, macl_fit, CBetaPivot, MaclOptions,
    MixtureFitOptions, PairedDataset, TestMethod, VarianceForm, VarianceModel,
};
use proptest::prelude::*;

fn simulated(theta: (f64, f64), n: usize, seed: u64) -> PairedDataset {
    let scenario = Scenario {
        kind: ScenarioKind::UniformContinuous { lo: 8.0, hi: 12.0 },
        n,
        seed,
        bounds: DEFAULT_BOUNDS,
    };
    generate_replicate(&scenario, &VarianceModel::exp_linear(theta.0, theta.1), 0).unwrap()
}

#[test]
fn fit_then_infer_on_simulated_data() {
    let data = simulated((5.0, -1.0), 1000, 42);
    let macl = macl_fit(&data, VarianceForm::ExpLinear, &MaclOptions::default()).unwrap();
    assert!(macl.converged);
    assert!((macl.theta_hat[1] + 1.0).abs() < 0.15, "{:?}", macl.theta_hat);

    let opts = MixtureFitOptions {
        em: EmOptions {
            max_iter: 300,
            ..Default::default()
        },
        ..Default::default()
    };
    let (est, grid) = fit_mixture(&data, VarianceForm::ExpLinear, &opts).unwrap();
    assert!((est.theta_hat[1] + 1.0).abs() < 0.15, "{:?}", est.theta_hat);
    let uniform = vec![1.0 / grid.len() as f64; grid.len()];
    let start = mixture_log_lik(&data, &macl.model(), &grid, &uniform).unwrap();
    assert!(est.log_lik >= start);
    assert!((est.log_lik - mixture_log_lik(&data, &est.model(), &grid, &est.pi_hat).unwrap()).abs() < 1e-6);

    // Intervals and tests from the fitted model on the first few pairs.
    let model = est.model();
    for p in &data.pairs()[..10] {
        let exact = ci_mu_exact(p.y1, &model, 0.05, None).unwrap();
        assert!(exact.contains(p.y1));
        let naive = ci_diff_naive(p.y1, p.y2, &model, 0.05).unwrap();
        assert!(naive.contains(p.y1 - p.y2));
        for method in [TestMethod::Naive, TestMethod::Conservative, TestMethod::BergerBoos] {
            let r = hetvar::hypothesis::pvalue(
                method,
                p.y1,
                p.y2,
                &model,
                DEFAULT_BOUNDS,
                DEFAULT_BETA,
                CBetaPivot::PairMean,
            )
            .unwrap();
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}

#[test]
fn csv_ingest_matches_written_pairs() {
    let data = simulated((5.0, -1.0), 50, 9);
    let mut text = String::from("id,y1,y2\n");
    for p in data.pairs() {
        text.push_str(&format!("{},{},{}\n", p.id, p.y1, p.y2));
    }
    let back = read_pairs(text.as_bytes(), false).unwrap();
    assert_eq!(back, data.pairs());

    let raw: String = data
        .pairs()
        .iter()
        .map(|p| format!("{},{},{}\n", p.id, p.y1.exp(), p.y2.exp()))
        .collect();
    let logged = read_pairs(format!("id,y1,y2\n{raw}").as_bytes(), true).unwrap();
    for (a, b) in logged.iter().zip(data.pairs()) {
        assert!((a.y1 - b.y1).abs() < 1e-12 && (a.y2 - b.y2).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// With both observations inside the bounds, the point (y1, y2) itself
    /// has pivot value zero, so its difference always belongs to the set.
    #[test]
    fn region_contains_observed_difference(
        y1 in 7.4f64..13.8, y2 in 7.4f64..13.8,
        t1 in 3.0f64..6.0, t2 in -1.2f64..-0.3,
    ) {
        let model = VarianceModel::exp_linear(t1, t2);
        let set = ci_diff_region(y1, y2, &model, 0.05, DEFAULT_BOUNDS, 0.01).unwrap();
        prop_assert!(set.contains(y1 - y2));
        prop_assert!(set.hull.lo <= set.hull.hi);
        prop_assert!(set.hull.lo >= DEFAULT_BOUNDS.lo - DEFAULT_BOUNDS.hi - 1e-9);
        prop_assert!(set.hull.hi <= DEFAULT_BOUNDS.hi - DEFAULT_BOUNDS.lo + 1e-9);
    }

    #[test]
    fn p_values_are_probabilities(
        y1 in 7.0f64..14.0, d in -2.0f64..2.0, t1 in 3.0f64..6.0, t2 in -1.2f64..-0.3,
    ) {
        let model = VarianceModel::exp_linear(t1, t2);
        for method in [TestMethod::Naive, TestMethod::Conservative, TestMethod::BergerBoos] {
            let r = hetvar::hypothesis::pvalue(
                method, y1, y1 + d, &model, DEFAULT_BOUNDS, DEFAULT_BETA, CBetaPivot::PairMean,
            ).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value), "{:?} {}", method, r.p_value);
        }
    }
}
