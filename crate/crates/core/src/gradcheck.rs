//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::FeedForwardNet;

/// Relative errors below this magnitude are measured against the floor
/// instead of the gradient itself.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Index (into the flattened parameter vector) of the worst entry.
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let mut point = x.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + step;
        let up = f(&point);
        point[i] = orig - step;
        let down = f(&point);
        point[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: x.len(),
        tolerance,
        passed: worst.0 < tolerance,
    }
}

/// Checks backpropagation through `net` for a loss on its output.
///
/// `loss_fn` returns the loss value and its gradient with respect to the
/// network output. Evaluation uses inference mode (no dropout).
pub fn grad_check(
    net: &FeedForwardNet,
    loss_fn: impl Fn(&Matrix) -> (f64, Matrix),
    batch: &Matrix,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let out = work.forward(batch, None)?;
    let (_, upstream) = loss_fn(&out);
    let (grads, _) = work.backward(&upstream)?;
    let analytic = grads.flatten();
    let x = net.flat_parameters();
    let mut probe = net.clone();
    Ok(check_gradient(
        |p| {
            probe.set_flat_parameters(p).expect("same parameter count");
            let out = probe.predict(batch).expect("shape checked above");
            loss_fn(&out).0
        },
        &x,
        &analytic,
        step,
        tolerance,
    ))
}
