//! Central finite-difference verification of tape gradients.
//!
//! The checker never touches the backward pass it verifies: it re-runs the
//! caller's forward construction on perturbed inputs and differences the
//! scalar outputs.

use crate::error::Result;
use crate::tape::{Tape, TensorId};

/// Forward builder: recreate the computation on a fresh tape from raw input
/// values, returning the leaf ids (marked `requires_grad` by the builder)
/// and the scalar output id. Must be a pure function of `inputs`.
pub type ForwardFn<'a> = dyn FnMut(&mut Tape, &[Vec<f64>]) -> Result<(Vec<TensorId>, TensorId)> + 'a;

fn eval_scalar(f: &mut ForwardFn, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let (_, out) = f(&mut tape, inputs)?;
    Ok(tape.scalar_value(out))
}

/// Central-difference gradients of the builder's scalar output w.r.t. every
/// input coordinate.
pub fn finite_difference_grads(
    f: &mut ForwardFn,
    inputs: &[Vec<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let mut plus: Vec<Vec<f64>> = inputs.to_vec();
            plus[i][j] += step;
            let mut minus: Vec<Vec<f64>> = inputs.to_vec();
            minus[i][j] -= step;
            gi[j] = (eval_scalar(f, &plus)? - eval_scalar(f, &minus)?) / (2.0 * step);
        }
        grads.push(gi);
    }
    Ok(grads)
}

/// Relative error with a unit floor: `|a − n| / max(|a|, |n|, 1)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Run backward once and compare every input gradient against central finite
/// differences; returns the worst relative error.
pub fn max_relative_error(f: &mut ForwardFn, inputs: &[Vec<f64>], step: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (ids, out) = f(&mut tape, inputs)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.tensor(id).numel()]))
        .collect();
    let numeric = finite_difference_grads(f, inputs, step)?;

    let mut worst = 0.0f64;
    for (ga, gn) in analytic.iter().zip(&numeric) {
        for (&a, &n) in ga.iter().zip(gn) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}

/// Panics when the analytic/numeric mismatch exceeds `tol`.
pub fn assert_gradients_close(f: &mut ForwardFn, inputs: &[Vec<f64>], step: f64, tol: f64) {
    let err = max_relative_error(f, inputs, step).expect("gradient check forward failed");
    assert!(
        err < tol,
        "gradient mismatch: max relative error {err:.3e} exceeds {tol:.1e}"
    );
}
