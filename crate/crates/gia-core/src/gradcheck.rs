//! Central-difference gradient verification.
//!
//! The checker re-evaluates a scalar function at perturbed inputs and never
//! touches the backward pass, so it stays an independent oracle for the
//! reverse-mode gradients produced by [`crate::tape`].

use crate::tensor::Tensor;

/// Central-difference estimate of d(f)/d(inputs[which][coord]).
pub fn central_difference(
    inputs: &[Tensor],
    which: usize,
    coord: usize,
    step: f32,
    f: &dyn Fn(&[Tensor]) -> f32,
) -> f32 {
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[coord] += step;
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[coord] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Mixed absolute/relative agreement test:
/// `|a - n| <= abs_tol + rel_tol * max(|a|, |n|)`.
pub fn agrees(analytic: f32, numeric: f32, rel_tol: f32, abs_tol: f32) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_tol + rel_tol * analytic.abs().max(numeric.abs())
}

/// Checks every coordinate of every input against central differences.
///
/// `f` evaluates the scalar function from plain input tensors (building a
/// fresh tape internally); `analytic` holds the gradients claimed by the
/// backward pass, in input order. Returns the first failing coordinate.
pub fn check_all(
    inputs: &[Tensor],
    analytic: &[Tensor],
    step: f32,
    rel_tol: f32,
    abs_tol: f32,
    f: &dyn Fn(&[Tensor]) -> f32,
) -> Result<(), String> {
    assert_eq!(inputs.len(), analytic.len());
    for (which, grad) in analytic.iter().enumerate() {
        for coord in 0..grad.numel() {
            let numeric = central_difference(inputs, which, coord, step, f);
            let a = grad.data()[coord];
            if !agrees(a, numeric, rel_tol, abs_tol) {
                return Err(format!(
                    "input {which} coord {coord}: analytic {a} vs central-difference {numeric} \
                     (rel_tol {rel_tol}, abs_tol {abs_tol})"
                ));
            }
        }
    }
    Ok(())
}

/// Checks a random subset of coordinates of one input; used where a full
/// sweep is too expensive (e.g. losses over whole images).
#[allow(clippy::too_many_arguments)]
pub fn check_sampled(
    inputs: &[Tensor],
    which: usize,
    coords: &[usize],
    analytic: &Tensor,
    step: f32,
    rel_tol: f32,
    abs_tol: f32,
    f: &dyn Fn(&[Tensor]) -> f32,
) -> Result<(), String> {
    for &coord in coords {
        let numeric = central_difference(inputs, which, coord, step, f);
        let a = analytic.data()[coord];
        if !agrees(a, numeric, rel_tol, abs_tol) {
            return Err(format!(
                "input {which} coord {coord}: analytic {a} vs central-difference {numeric}"
            ));
        }
    }
    Ok(())
}
