//! Projected Levenberg-Marquardt for small dense least-squares problems.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iter: usize,
    pub damping_init: f64,
    /// Convergence threshold on the step, in disparity pixels.
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 30, damping_init: 1e-3, step_tol: 1e-4 }
    }
}

/// Cost and Gauss-Newton normal equations at one parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct NormalEquations<const N: usize> {
    pub cost: f64,
    pub jtj: SMatrix<f64, N, N>,
    pub jtr: SVector<f64, N>,
}

pub trait ProjectedProblem<const N: usize> {
    /// Maps parameters onto the feasible set.
    fn project(&self, p: SVector<f64, N>) -> SVector<f64, N>;
    /// `None` when the residuals cannot be evaluated (e.g. too little overlap).
    fn evaluate(&self, p: &SVector<f64, N>) -> Option<NormalEquations<N>>;
    /// Size of the move from `from` to `to`, in disparity pixels.
    fn step_size(&self, from: &SVector<f64, N>, to: &SVector<f64, N>) -> f64;
}

#[derive(Clone, Debug)]
pub struct LmOutcome<const N: usize> {
    pub params: SVector<f64, N>,
    pub normal: Option<NormalEquations<N>>,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after the initial projection and after every accepted step.
    pub accepted_costs: Vec<f64>,
}

pub fn minimize<const N: usize, P: ProjectedProblem<N>>(
    problem: &P,
    init: SVector<f64, N>,
    cfg: &LmConfig,
) -> LmOutcome<N> {
    let mut p = problem.project(init);
    let Some(mut current) = problem.evaluate(&p) else {
        return LmOutcome { params: p, normal: None, iterations: 0, converged: false, accepted_costs: vec![] };
    };
    let mut accepted_costs = vec![current.cost];
    let mut lambda = cfg.damping_init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let diag = SVector::<f64, N>::from_fn(|i, _| current.jtj[(i, i)]);
        let floor = 1e-12 * diag.max().max(1e-300);
        let mut a = current.jtj;
        for i in 0..N {
            a[(i, i)] += lambda * diag[i].max(floor);
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let delta = chol.solve(&(-current.jtr));
        let candidate = problem.project(p + delta);
        let step = problem.step_size(&p, &candidate);
        if !(step >= cfg.step_tol) {
            converged = step.is_finite();
            break;
        }
        match problem.evaluate(&candidate) {
            Some(next) if next.cost < current.cost => {
                p = candidate;
                current = next;
                accepted_costs.push(current.cost);
                lambda = (lambda / 10.0).max(1e-12);
            }
            _ => lambda *= 10.0,
        }
    }
    LmOutcome { params: p, normal: Some(current), iterations, converged, accepted_costs }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    if N == 2 {
        let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        return mean - rad;
    }
    nalgebra::DMatrix::from_column_slice(N, N, m.as_slice()).symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    /// Exponential fit y = p0 * exp(p1 * t), with p1 constrained to <= 0.
    struct ExpFit {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl ProjectedProblem<2> for ExpFit {
        fn project(&self, p: Vector2<f64>) -> Vector2<f64> {
            Vector2::new(p[0], p[1].min(0.0))
        }
        fn evaluate(&self, p: &Vector2<f64>) -> Option<NormalEquations<2>> {
            let mut n = NormalEquations { cost: 0.0, jtj: Matrix2::zeros(), jtr: Vector2::zeros() };
            for (&t, &y) in self.t.iter().zip(&self.y) {
                let e = (p[1] * t).exp();
                let r = p[0] * e - y;
                let j = Vector2::new(e, p[0] * t * e);
                n.cost += r * r;
                n.jtj += j * j.transpose();
                n.jtr += j * r;
            }
            Some(n)
        }
        fn step_size(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
            (a - b).norm()
        }
    }

    #[test]
    fn converges_and_costs_never_increase() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let prob = ExpFit { t, y };
        let out = minimize(&prob, Vector2::new(1.0, 0.5), &LmConfig::default());
        assert!(out.converged);
        assert!((out.params[0] - 3.0).abs() < 1e-6 && (out.params[1] + 0.7).abs() < 1e-6);
        assert!(out.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn active_constraint_respected() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().map(|t| 2.0 * (0.4 * t).exp()).collect();
        let out = minimize(&ExpFit { t, y }, Vector2::new(1.0, -0.2), &LmConfig::default());
        assert!(out.params[1] <= 0.0);
        assert!(out.params[1].abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_closed_form() {
        let m = Matrix2::new(4.0, 1.0, 1.0, 2.0);
        let expected = 3.0 - 2f64.sqrt();
        assert!((min_eigenvalue(&m) - expected).abs() < 1e-12);
        let m3 = nalgebra::Matrix3::new(2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0);
        assert!((min_eigenvalue(&m3) - 1.0).abs() < 1e-12);
    }
}
