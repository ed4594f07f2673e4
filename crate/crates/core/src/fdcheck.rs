//! Central finite-difference machinery for gradient and Jacobian checks.
//!
//! Everything here differentiates by evaluation only, so it stays independent
//! of the analytic formulas it is used to verify.

use nalgebra::{DMatrix, DVector};

use crate::geometry::rotation_exp;

/// Central-difference gradient of a scalar function of a flat vector.
pub fn gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}

/// Central-difference derivative of a scalar function of a scalar.
pub fn derivative<F>(f: F, x: f64, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Body-frame directional derivatives of `f` on SO(d): entry `l` is the
/// central difference of `eps -> f(R exp(S(eps e_l)))`. For a gradient
/// written as `R S(m)` this recovers `m` directly.
pub fn so_body_gradient<F>(f: F, r: &DMatrix<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    let dp = if r.nrows() == 2 { 1 } else { 3 };
    let mut g = DVector::zeros(dp);
    for l in 0..dp {
        let mut step = DVector::zeros(dp);
        step[l] = h;
        let plus = f(&(r * rotation_exp(&step).unwrap()));
        step[l] = -h;
        let minus = f(&(r * rotation_exp(&step).unwrap()));
        g[l] = (plus - minus) / (2.0 * h);
    }
    g
}

/// Jacobian of a vector function of stacked positions, one central difference
/// per coordinate. Positions are perturbed in place, so `f` sees full states.
pub fn jacobian_positions<F>(f: F, positions: &[DVector<f64>], h: f64) -> DMatrix<f64>
where
    F: Fn(&[DVector<f64>]) -> DVector<f64>,
{
    let d = positions[0].len();
    let n = positions.len();
    let rows = f(positions).len();
    let mut jac = DMatrix::zeros(rows, d * n);
    let mut probe: Vec<DVector<f64>> = positions.to_vec();
    for v in 0..n {
        for c in 0..d {
            let orig = probe[v][c];
            probe[v][c] = orig + h;
            let plus = f(&probe);
            probe[v][c] = orig - h;
            let minus = f(&probe);
            probe[v][c] = orig;
            let col = (plus - minus) / (2.0 * h);
            jac.set_column(v * d + c, &col);
        }
    }
    jac
}

/// Relative error between two vectors with an absolute floor guarding the
/// near-zero case.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    let scale = a.norm().max(b.norm()).max(floor);
    (a - b).norm() / scale
}

/// Relative error between two matrices in Frobenius norm.
pub fn relative_error_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    let scale = a.norm().max(b.norm()).max(floor);
    (a - b).norm() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_quadratic() {
        let f = |x: &DVector<f64>| x[0] * x[0] + 2.0 * x[0] * x[1];
        let g = gradient(f, &DVector::from_vec(vec![1.0, 2.0]), 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn so_body_gradient_of_trace() {
        // f(R) = e1^T R e1 has body gradient S^{-1}(R^T e1 e1^T - e1 e1^T R).
        let r = rotation_exp(&DVector::from_vec(vec![0.2, -0.4, 0.1])).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let f = |rot: &DMatrix<f64>| (e1.transpose() * rot * &e1)[0];
        let fd = so_body_gradient(f, &r, 1e-6);
        let analytic = crate::geometry::so_gradient_quadratic(&r, &e1, &e1).unwrap();
        assert!(relative_error(&fd, &analytic, 1e-9) < 1e-7);
    }
}
