//! Finite-difference helpers for checking analytic gradients.

mod audit;

pub use audit::{audit_operations, OpCheck, STEP};
#[cfg(test)]
pub(crate) use audit::{bundle, flatten, probe, real_grid, unflatten};

/// Central differences `(f(x + εe_i) - f(x - εe_i)) / 2ε` for every
/// coordinate.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest component-wise relative error.
///
/// Each difference is divided by `max(|a_i|, |n_i|, floor)`, where `floor`
/// is `1e-3` times the largest numeric component, so entries that are zero
/// up to round-off do not dominate.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[0] * x[1];
        let x = [1.3, -0.7];
        let num = central_difference(f, &x, 1e-5);
        let ana = [3.0 * 1.3f64.powi(2) + 2.0 * -0.7, 2.0 * 1.3];
        assert!(relative_error(&ana, &num) < 1e-9);
    }

    #[test]
    fn every_operation_passes() {
        let checks = audit_operations(0).unwrap();
        assert!(checks.len() > 40);
        for c in &checks {
            assert!(c.error < 1e-5, "{}: {:e}", c.op, c.error);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        assert!(relative_error(&[1.0, 2.0], &[1.0, 2.1]) > 1e-2);
    }
}
