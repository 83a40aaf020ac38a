use std::sync::OnceLock;

use proptest::prelude::*;

use unfoldcov::cli::{prepare_scenario, Prepared, RunConfig};
use unfoldcov::fit::{initial_point, maximize_phi, FitConfig};
use unfoldcov::objective::{phi, poisson_loglik};

fn exponential() -> &'static Prepared {
    static PREPARED: OnceLock<Prepared> = OnceLock::new();
    PREPARED.get_or_init(|| prepare_scenario(&RunConfig::builtin("exponential").unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn response_columns_stay_probabilities(z in prop::collection::vec(-3.0f64..3.0, 3)) {
        let prepared = exponential();
        let problem = prepared.problem(0.0).unwrap();
        let c = problem.constraints();
        let theta: Vec<f64> = (0..c.len()).map(|k| c.aux()[k] + z[k] * c.widths()[k]).collect();
        prop_assume!(prepared.model.admissible(&theta));
        let (response, background) = prepared.model.evaluate(&theta).unwrap();
        for s in response.column_sums() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s), "column sum {s}");
        }
        prop_assert!(background.iter().all(|b| *b >= 0.0));
    }

    #[test]
    fn fit_never_loses_to_its_start(
        scale in 0.8f64..1.2,
        tau_index in 0usize..3,
    ) {
        let prepared = exponential();
        let tau = [0.0, 1e-6, 5e-5][tau_index];
        let counts: Vec<f64> = prepared
            .observed
            .contents()
            .iter()
            .enumerate()
            .map(|(i, n)| (n * if i % 2 == 0 { scale } else { 1.0 }).round())
            .collect();
        let problem = prepared.problem(tau).unwrap().with_data(counts).unwrap();
        let start = phi(&problem, &initial_point(&problem).unwrap()).unwrap();
        let fit = maximize_phi(&problem, &FitConfig::default()).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.phi_value >= start - 1e-9 * start.abs().max(1.0));
        prop_assert!(fit.mu_hat.iter().all(|m| *m >= 1e-3));
        let reported = phi(&problem, &fit.params()).unwrap();
        prop_assert!((reported - fit.phi_value).abs() <= 1e-9 * reported.abs().max(1.0));
    }

    #[test]
    fn poisson_likelihood_peaks_at_the_data(
        n in prop::collection::vec(0u32..500, 1..8),
        f in 0.5f64..2.0,
    ) {
        let n: Vec<f64> = n.into_iter().map(f64::from).collect();
        let at_data: Vec<f64> = n.iter().map(|x| x.max(1e-300)).collect();
        let shifted: Vec<f64> = at_data.iter().map(|x| x * f).collect();
        prop_assert!(poisson_loglik(&n, &at_data) >= poisson_loglik(&n, &shifted) - 1e-9);
    }
}

#[test]
fn scenario_preparation_is_deterministic() {
    let config = RunConfig::builtin("double_gaussian").unwrap();
    let a = prepare_scenario(&config).unwrap();
    let b = prepare_scenario(&config).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.expected, b.expected);
    assert_eq!(a.observed, b.observed);
}
