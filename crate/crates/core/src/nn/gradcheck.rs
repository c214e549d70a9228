//! Central finite-difference gradient verification.
//!
//! This is an independent oracle for the analytic backward passes: the
//! scalar probe loss sum(c * output) is differentiated numerically by
//! perturbing each parameter (and each input entry) by +/- epsilon and
//! re-running the evaluation-mode forward pass. It never touches the
//! backward code it checks. Models under test must not contain active
//! dropout, since the probe relies on forward/infer parity.

use crate::nn::tensor::Tensor;
use crate::nn::{Model, NnError};
use crate::rng::SeedRng;

const EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn probe_loss(model: &Model, input: &Tensor, coefs: &[f64]) -> Result<f64, NnError> {
    let out = model.infer(input)?;
    Ok(out.data().iter().zip(coefs).map(|(o, c)| o * c).sum())
}

/// Verifies every parameter gradient and the input gradient of `model` on
/// a random input of `input_shape`, returning the worst relative error.
pub fn check_model(
    model: &mut Model,
    input_shape: &[usize],
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut rng = SeedRng::new(seed);
    let input = Tensor::from_vec(
        input_shape,
        (0..input_shape.iter().product::<usize>()).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
    );

    let out = model.forward_train(&input, &mut rng)?;
    let coefs: Vec<f64> = (0..out.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    model.zero_grads();
    let grad_in = model.backward(&Tensor::from_vec(out.shape(), coefs.clone()))?;
    let analytic_params: Vec<Vec<f64>> =
        model.grads().iter().map(|g| g.data().to_vec()).collect();

    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;

    let n_params = model.params().len();
    for t in 0..n_params {
        let len = model.params()[t].len();
        for i in 0..len {
            let original = model.params()[t].data()[i];
            model.params_mut()[t].data_mut()[i] = original + EPSILON;
            let plus = probe_loss(model, &input, &coefs)?;
            model.params_mut()[t].data_mut()[i] = original - EPSILON;
            let minus = probe_loss(model, &input, &coefs)?;
            model.params_mut()[t].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * EPSILON);
            max_rel = max_rel.max(rel_err(analytic_params[t][i], numeric));
            checked += 1;
        }
    }

    // Input gradient through the same probe.
    let mut x = input.clone();
    for i in 0..x.len() {
        let original = x.data()[i];
        x.data_mut()[i] = original + EPSILON;
        let plus = probe_loss(model, &x, &coefs)?;
        x.data_mut()[i] = original - EPSILON;
        let minus = probe_loss(model, &x, &coefs)?;
        x.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * EPSILON);
        max_rel = max_rel.max(rel_err(grad_in.data()[i], numeric));
        checked += 1;
    }

    Ok(GradCheckReport { max_rel_err: max_rel, checked })
}
