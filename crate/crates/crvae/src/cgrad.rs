//! Wirtinger cogradient views and the finite-difference verification harness.
//!
//! Every backward pass in this crate produces "packed" gradients of a real
//! loss: for a complex parameter `z = x + iy` the packed gradient is
//! `∂L/∂x + i·∂L/∂y`, which equals `2·∂L/∂z*`. The steepest-descent update
//! used throughout is `z ← z − lr·(∂L/∂x + i·∂L/∂y)`; the constant factor
//! relative to the `∂L/∂z*` convention is absorbed by the learning rate.
//! The harness below validates `∂L/∂x` and `∂L/∂y` directly against central
//! differences, so it is independent of that convention.

use crate::{Error, Result};
use num_complex::Complex64;

/// The pair (∂f/∂z, ∂f/∂z*) for an elementwise collection of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CogradientPair {
    pub d_dz: Vec<Complex64>,
    pub d_dzbar: Vec<Complex64>,
}

/// Builds the Wirtinger pair from the real-axis gradients:
/// `∂f/∂z = ½(∂f/∂x − i·∂f/∂y)`, `∂f/∂z* = ½(∂f/∂x + i·∂f/∂y)`.
pub fn wirtinger_from_real_grads(df_dx: &[f64], df_dy: &[f64]) -> Result<CogradientPair> {
    if df_dx.len() != df_dy.len() {
        return Err(Error::Shape(format!(
            "wirtinger_from_real_grads: {} vs {}",
            df_dx.len(),
            df_dy.len()
        )));
    }
    let d_dz = df_dx.iter().zip(df_dy).map(|(x, y)| 0.5 * Complex64::new(*x, -y)).collect();
    let d_dzbar = df_dx.iter().zip(df_dy).map(|(x, y)| 0.5 * Complex64::new(*x, *y)).collect();
    Ok(CogradientPair { d_dz, d_dzbar })
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub param_count: usize,
    pub passed: bool,
    pub tolerance: f64,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\t{}\tparams={}\tmax_rel_err={:.3e}\ttol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op_name,
            self.param_count,
            self.max_rel_err,
            self.tolerance
        )
    }
}

/// Compares an analytic gradient with central differences over a flat real
/// parameter view. Complex tensors enter this view as their real plane
/// followed by their imaginary plane, so both Wirtinger axes are checked.
///
/// The loss closure must be deterministic (stochastic nodes frozen by seed).
pub fn finite_diff_check(
    op_name: &str,
    loss_fn: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic_grad: &[f64],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if params.len() != analytic_grad.len() {
        return Err(Error::Shape(format!(
            "finite_diff_check: {} params vs {} gradient entries",
            params.len(),
            analytic_grad.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain("finite_diff_check: eps must be positive".into()));
    }
    let mut work = params.to_vec();
    let mut max_rel_err: f64 = 0.0;
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = loss_fn(&work);
        work[i] = orig - eps;
        let lo = loss_fn(&work);
        work[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Numerical(format!("finite_diff_check({op_name}): non-finite loss")));
        }
        let numeric = (hi - lo) / (2.0 * eps);
        let analytic = analytic_grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err,
        param_count: params.len(),
        passed: max_rel_err <= tol,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wirtinger_real_axis_only() {
        let p = wirtinger_from_real_grads(&[2.0], &[0.0]).unwrap();
        assert_eq!(p.d_dz[0], Complex64::new(1.0, 0.0));
        assert_eq!(p.d_dzbar[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn wirtinger_imag_axis_only() {
        let p = wirtinger_from_real_grads(&[0.0], &[2.0]).unwrap();
        assert_eq!(p.d_dz[0], Complex64::new(0.0, -1.0));
        assert_eq!(p.d_dzbar[0], Complex64::new(0.0, 1.0));
    }

    #[test]
    fn wirtinger_abs_square_identity() {
        // f(z) = |z|² at z = 1+i: df/dx = 2, df/dy = 2, so ∂f/∂z* = z.
        let p = wirtinger_from_real_grads(&[2.0], &[2.0]).unwrap();
        assert_eq!(p.d_dzbar[0], Complex64::new(1.0, 1.0));
        // conjugate symmetry for real-valued f
        assert_eq!(p.d_dz[0], p.d_dzbar[0].conj());
    }

    #[test]
    fn wirtinger_shape_error() {
        assert!(wirtinger_from_real_grads(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn check_quadratic_norm() {
        // loss = ‖z‖², flat view (x0, x1, y0, y1), gradient 2p.
        let params = [0.3, -0.7, 1.1, 0.2];
        let grad: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let rep = finite_diff_check(
            "norm_sq",
            |p| p.iter().map(|v| v * v).sum(),
            &params,
            &grad,
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn check_unused_parameter() {
        let params = [0.5, 2.0];
        let rep = finite_diff_check("partial", |p| p[0] * p[0], &params, &[1.0, 0.0], 1e-6, 1e-4).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn check_detects_corrupted_gradient() {
        let params = [0.3, -0.7, 1.1, 0.2];
        let grad: Vec<f64> = params.iter().map(|p| 2.0 * p * 1.01).collect();
        let rep = finite_diff_check(
            "corrupted",
            |p| p.iter().map(|v| v * v).sum(),
            &params,
            &grad,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn check_rejects_non_finite_loss() {
        let rep = finite_diff_check("nan", |_| f64::NAN, &[1.0], &[0.0], 1e-6, 1e-4);
        assert!(matches!(rep, Err(Error::Numerical(_))));
    }
}
