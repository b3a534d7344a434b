//! Analytic gradients against central finite differences.

use queuectl_core::nn::{
    logprob_grad, policy_forward, value_forward, value_grad, GradBuffer, MlpParams,
};
use queuectl_core::rng::RngStream;

const H: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;

fn numeric_grad(params: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    let dims = params.layer_dims();
    let base = params.flat();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += H;
            minus[i] -= H;
            let fp = f(&MlpParams::from_flat(&dims, &plus).unwrap());
            let fm = f(&MlpParams::from_flat(&dims, &minus).unwrap());
            (fp - fm) / (2.0 * H)
        })
        .collect()
}

fn rel_err(analytic: &GradBuffer, numeric: &[f64]) -> f64 {
    let a = analytic.flat();
    assert_eq!(a.len(), numeric.len());
    let diff: f64 = a.iter().zip(numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

struct Case {
    params: MlpParams,
    obs: Vec<f64>,
}

fn random_case(rng: &mut RngStream, outputs: usize) -> Case {
    let inputs = 1 + rng.below(2);
    let hidden = 2 + rng.below(7);
    let mut params = MlpParams::two_hidden(inputs, hidden, outputs, rng);
    // spread weights beyond the init range so tanh is exercised off its linear part
    let dims = params.layer_dims();
    let widened: Vec<f64> = params.flat().iter().map(|w| w * rng.uniform_range(0.5, 3.0)).collect();
    params = MlpParams::from_flat(&dims, &widened).unwrap();
    let obs = (0..inputs).map(|_| rng.uniform_range(0.0, 5.0)).collect();
    Case { params, obs }
}

#[test]
fn policy_logprob_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(2024, 7);
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let outputs = 2 + rng.below(4);
        let case = random_case(&mut rng, outputs);
        let action = rng.below(outputs);
        let analytic = logprob_grad(&case.params, &case.obs, action).unwrap();
        let numeric = numeric_grad(&case.params, |p| {
            policy_forward(p, &case.obs).unwrap()[action].ln()
        });
        let e = rel_err(&analytic, &numeric);
        worst = worst.max(e);
        assert!(e < MAX_REL_ERR, "relative error {e:e}");
    }
    eprintln!("policy gradient: worst relative error {worst:e} over 120 cases");
}

#[test]
fn critic_value_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(2025, 7);
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let case = random_case(&mut rng, 1);
        let analytic = value_grad(&case.params, &case.obs).unwrap();
        let numeric = numeric_grad(&case.params, |p| value_forward(p, &case.obs).unwrap());
        let e = rel_err(&analytic, &numeric);
        worst = worst.max(e);
        assert!(e < MAX_REL_ERR, "relative error {e:e}");
    }
    eprintln!("critic gradient: worst relative error {worst:e} over 120 cases");
}
