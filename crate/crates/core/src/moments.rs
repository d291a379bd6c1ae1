//! Closed-loop mean and covariance of the controlled linear SDE, and the
//! noise-free cost and volatility integrals they determine.
//!
//! Each step uses the exact propagator of the step-averaged closed-loop
//! matrix and the trapezoid rule for the forcing and noise integrals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, QuadraticCost};
use crate::riccati::RiccatiSolution;

/// Closed-loop matrix `A - B r⁻¹ Bᵀ K` averaged over step `k → k+1`, and its exponential.
pub(crate) fn step_propagators(sys: &LinearSystem, sol: &RiccatiSolution) -> Vec<DMatrix<f64>> {
    let w = &sys.b * sys.b.transpose() / sol.r;
    let dt = sol.grid.dt();
    (0..sol.grid.n_steps())
        .map(|k| {
            let kmid = (&sol.k[k] + &sol.k[k + 1]) * 0.5;
            ((&sys.a - &w * kmid) * dt).exp()
        })
        .collect()
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    /// `∫ E[xᵀQx + 2xᵀD] dt`.
    pub state_penalizing: f64,
    /// `∫ E|u|² dt`.
    pub volatility: f64,
}

impl Moments {
    pub fn total(&self, r: f64) -> f64 {
        self.state_penalizing + r * self.volatility
    }
}

/// Propagates mean and covariance from a deterministic `x0` under the
/// optimal feedback of `sol` and integrates the expected costs.
pub fn closed_loop_moments(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
) -> Result<Moments> {
    let n = sys.n();
    if cost.n() != n || sol.n() != n || x0.len() != n {
        return Err(Error::Dimension("system, cost, solution and x0 disagree on dimension".into()));
    }
    let grid = sol.grid;
    let dt = grid.dt();
    let w = &sys.b * sys.b.transpose() / sol.r;
    let ggt = &sys.g * sys.g.transpose();
    let forcing: Vec<DVector<f64>> =
        (0..grid.len()).map(|k| &sol.forcing.h[k] - &w * &sol.s[k]).collect();
    let props = step_propagators(sys, sol);

    let mut mean = Vec::with_capacity(grid.len());
    let mut cov = Vec::with_capacity(grid.len());
    mean.push(x0.clone());
    cov.push(DMatrix::zeros(n, n));
    for k in 0..grid.n_steps() {
        let e = &props[k];
        let m = e * (&mean[k] + &forcing[k] * (0.5 * dt)) + &forcing[k + 1] * (0.5 * dt);
        let p = e * (&cov[k] + &ggt * (0.5 * dt)) * e.transpose() + &ggt * (0.5 * dt);
        mean.push(m);
        cov.push((&p + p.transpose()) * 0.5);
    }

    let mut sp = Vec::with_capacity(grid.len());
    let mut vol = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (m, p) = (&mean[k], &cov[k]);
        sp.push((&cost.q * p).trace() + m.dot(&(&cost.q * m)) + 2.0 * m.dot(&sol.forcing.d[k]));
        let (l, off) = sol.feedback(&sys.b, k);
        let um = &l * m + off;
        vol.push((&l * p * l.transpose()).trace() + um.norm_squared());
    }
    Ok(Moments { mean, cov, state_penalizing: trapezoid(&sp, dt), volatility: trapezoid(&vol, dt) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarketParams, TimeGrid};
    use crate::riccati::{closed_form_cost, solve_riccati};

    #[test]
    fn total_matches_closed_form() {
        let sys = MarketParams::default().system();
        let q = DMatrix::from_row_slice(3, 3, &[0.2, -0.1, 0.0, -0.1, 0.2, 0.0, 0.0, 0.0, 0.01]);
        let cost = QuadraticCost::new(q, DVector::from_column_slice(&[-3.0, 1.0, -0.5]), 0.5).unwrap();
        let grid = TimeGrid::new(20.0, 0.01).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let x0 = DVector::from_column_slice(&[25.0, 25.0, 50.0]);
        let mom = closed_loop_moments(&sys, &cost, &sol, &x0).unwrap();
        let exact = closed_form_cost(&sol, &x0).unwrap();
        assert!(((mom.total(cost.r) - exact) / exact).abs() < 1e-4, "{} vs {exact}", mom.total(cost.r));
    }

    #[test]
    fn stationary_scalar_variance() {
        // dx = -x dt + dW with no control cost weight: variance tends to 1/2.
        let sys = LinearSystem::new(
            -DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::zeros(1, 1), DVector::zeros(1), 1.0).unwrap();
        let sol = solve_riccati(&sys, &cost, &TimeGrid::new(20.0, 0.05).unwrap()).unwrap();
        let mom = closed_loop_moments(&sys, &cost, &sol, &DVector::zeros(1)).unwrap();
        assert!((mom.cov.last().unwrap()[(0, 0)] - 0.5).abs() < 1e-3);
        assert_eq!(mom.volatility, 0.0);
    }

    #[test]
    fn trapezoid_rule() {
        assert_eq!(trapezoid(&[1.0], 0.1), 0.0);
        assert!((trapezoid(&[0.0, 1.0, 2.0], 0.5) - 1.0).abs() < 1e-15);
    }
}
