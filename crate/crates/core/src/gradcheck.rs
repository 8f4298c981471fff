//! Finite-difference verification oracle for reverse-mode gradients.
//!
//! For a scalar-valued function f and a tensor x, compares the analytic
//! gradient from one backward sweep against central differences
//! (f(x+h) - f(x-h)) / 2h evaluated coordinate by coordinate. The
//! per-coordinate relative error uses an absolute floor of 1:
//! |ad - fd| / max(1, |ad|, |fd|), so tiny gradients are judged on
//! absolute error and large ones relatively.

use crate::tensor::{NoGradGuard, Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Checks d f / d x for every coordinate of `x`. The function is evaluated
/// with gradients disabled for the perturbed passes; `x` must be a leaf
/// with `requires_grad` so the analytic sweep reaches it.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    assert!(h > 0.0, "step size must be positive");
    x.clear_grad();
    let out = f(x)?;
    out.backward()?;
    let analytic = x
        .grad()
        .expect("finite_diff_check requires x.requires_grad() so the graph reaches it");

    let base = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: base.len(),
    };
    let _guard = NoGradGuard::new();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        x.set_data(&plus);
        let f_plus = f(x)?.item();
        let mut minus = base.clone();
        minus[i] -= h;
        x.set_data(&minus);
        let f_minus = f(x)?.item();
        x.set_data(&base);
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let err = rel_err(analytic[i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_coord = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_2x() {
        let x = Tensor::param(&[4], vec![0.5, -1.25, 2.0, 0.1]).unwrap();
        let report = finite_diff_check(|x| x.mul(x)?.sum_all(), &x, 1e-3).unwrap();
        assert!(report.passed(1e-6), "max rel err {}", report.max_rel_err);
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.to_vec()) {
            assert!((gi - 2.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = finite_diff_check(|x| x.scale(3.5)?.sum_all(), &x, 1e-3).unwrap();
        assert!(report.max_rel_err < 1e-9, "err {}", report.max_rel_err);
    }

    #[test]
    fn report_carries_worst_coordinate() {
        let x = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let report = finite_diff_check(|x| x.mul(x)?.mul(x)?.sum_all(), &x, 1e-3).unwrap();
        assert!(report.worst_coord < 2);
        assert!(report.checked == 2);
        assert!(report.analytic_at_worst.is_finite());
        assert!(report.numeric_at_worst.is_finite());
    }
}
