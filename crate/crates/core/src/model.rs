//! Domain types shared by every solver: time grid, market state, linear
//! dynamics, quadratic cost and the nonlinear loss it approximates.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid shared by the ODE and SDE integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Builds a grid with `n_steps = round(t_final / dt)`. The step is
    /// recomputed as `t_final / n_steps` so the grid ends exactly at the horizon.
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final.is_finite() && dt.is_finite() && t_final > 0.0 && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs t_final > 0 and dt > 0, got t_final={t_final}, dt={dt}"
            )));
        }
        let n = (t_final / dt).round();
        if n < 1.0 || ((n * dt - t_final).abs() > 1e-9 * t_final) {
            return Err(Error::InvalidParameter(format!(
                "dt={dt} does not divide t_final={t_final}"
            )));
        }
        Ok(Self::with_steps(t_final, n as usize))
    }

    pub fn with_steps(t_final: f64, n_steps: usize) -> Self {
        assert!(n_steps > 0 && t_final > 0.0);
        Self { t_final, dt: t_final / n_steps as f64, n_steps }
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    /// Index of the nearest grid node not later than `t`.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.t_final * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { t, t_final: self.t_final });
        }
        let k = (t / self.dt + 1e-9).floor() as usize;
        Ok(k.min(self.n_steps))
    }

    /// Same horizon with the step halved.
    pub fn refined(&self) -> Self {
        Self::with_steps(self.t_final, 2 * self.n_steps)
    }
}

/// Centralized market state: demand (MW), supply (MW), price ($/MWh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub d: f64,
    pub s: f64,
    pub p: f64,
}

impl MarketState {
    pub fn new(d: f64, s: f64, p: f64) -> Result<Self> {
        if !(d.is_finite() && s.is_finite() && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite state ({d}, {s}, {p})")));
        }
        Ok(Self { d, s, p })
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.d, self.s, self.p])
    }

    pub fn as_vector3(self) -> Vector3<f64> {
        Vector3::new(self.d, self.s, self.p)
    }

    pub fn reserve(self) -> f64 {
        self.s - self.d
    }
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Linear dynamics `dx = (A x + B u + h) dt + G dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || b.ncols() == 0 || g.shape() != (n, n) || h.len() != n {
            return Err(Error::Dimension(format!(
                "A {:?}, B {:?}, G {:?}, h {}",
                a.shape(),
                b.shape(),
                g.shape(),
                h.len()
            )));
        }
        if !(all_finite(&a) && all_finite(&b) && all_finite(&g) && h.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParameter("system matrices must be finite".into()));
        }
        Ok(Self { a, b, g, h })
    }

    pub fn centralized(params: &MarketParams) -> Self {
        let r = params.rho;
        let a = DMatrix::from_row_slice(3, 3, &[-r, 0.0, -r, 0.0, -r, r, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(&[params.sigma, params.sigma, 0.0]));
        let h = DVector::from_column_slice(&[r * params.beta, -r * params.offset_gamma, 0.0]);
        Self { a, b, g, h }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Checks the centralized structure: zeros of the (d, s, p) coupling,
    /// control entering through price only, no noise on price, demand
    /// decreasing and supply increasing in price.
    pub fn check_centralized(&self) -> Result<()> {
        if self.n() != 3 || self.m() != 1 {
            return Err(Error::Dimension(format!("centralized model is 3x1, got {}x{}", self.n(), self.m())));
        }
        let a = &self.a;
        let zeros = [(0, 1), (1, 0), (2, 0), (2, 1), (2, 2)];
        if zeros.iter().any(|&(i, j)| a[(i, j)] != 0.0) {
            return Err(Error::InvalidParameter("A has a nonzero entry in a structural zero".into()));
        }
        if self.b.column(0).as_slice() != [0.0, 0.0, 1.0] {
            return Err(Error::InvalidParameter("B must be (0, 0, 1)".into()));
        }
        let g = &self.g;
        if (0..3).any(|i| (0..3).any(|j| i != j && g[(i, j)] != 0.0)) || g[(2, 2)] != 0.0 {
            return Err(Error::InvalidParameter("G must be diagonal with no price noise".into()));
        }
        if !(a[(0, 2)] < 0.0 && a[(1, 2)] > 0.0) {
            return Err(Error::InvalidParameter(
                "demand must decrease and supply increase with price".into(),
            ));
        }
        Ok(())
    }
}

/// Running cost `xᵀQx + 2xᵀD + r|u|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub d: DVector<f64>,
    pub r: f64,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, d: DVector<f64>, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidParameter(format!("volatility coefficient r must be > 0, got {r}")));
        }
        let n = q.nrows();
        if q.ncols() != n || d.len() != n {
            return Err(Error::Dimension(format!("Q {:?}, D {}", q.shape(), d.len())));
        }
        if !all_finite(&q) || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cost weights must be finite".into()));
        }
        if (&q - q.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        let min_eig = q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::InvalidParameter(format!("Q must be PSD (min eigenvalue {min_eig:e})")));
        }
        Ok(Self { q, d, r })
    }

    pub fn with_r(&self, r: f64) -> Result<Self> {
        Self::new(self.q.clone(), self.d.clone(), r)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// State part of the running cost, `xᵀQx + 2xᵀD`.
    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + 2.0 * x.dot(&self.d)
    }
}

/// Nonlinear loss `g(d, s, p) = -v min(d, s) + c(s) + c_bo(s - d)` with
/// `c(s) = a s² + b s` and `c_bo(y) = k max(0, -y)³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearLoss {
    pub v: f64,
    pub c_quad: f64,
    pub c_lin: f64,
    pub c_bo_coeff: f64,
}

impl Default for NonlinearLoss {
    fn default() -> Self {
        Self { v: 60.0, c_quad: 0.02, c_lin: 20.0, c_bo_coeff: 5.0 }
    }
}

impl NonlinearLoss {
    pub fn new(v: f64, c_quad: f64, c_lin: f64, c_bo_coeff: f64) -> Result<Self> {
        let loss = Self { v, c_quad, c_lin, c_bo_coeff };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::InvalidParameter(format!("consumer value v must be > 0, got {}", self.v)));
        }
        // Strict convexity and monotonicity of c on s >= 0, decreasing blackout cost.
        if !(self.c_quad > 0.0 && self.c_lin >= 0.0 && self.c_bo_coeff > 0.0)
            || !(self.c_quad.is_finite() && self.c_lin.is_finite() && self.c_bo_coeff.is_finite())
        {
            return Err(Error::InvalidParameter(
                "need c_quad > 0, c_lin >= 0 and c_bo_coeff > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn production_cost(&self, s: f64) -> f64 {
        self.c_quad * s * s + self.c_lin * s
    }

    pub fn blackout_cost(&self, reserve: f64) -> f64 {
        let short = (-reserve).max(0.0);
        self.c_bo_coeff * short * short * short
    }

    pub fn eval(&self, d: f64, s: f64, _p: f64) -> f64 {
        -self.v * d.min(s) + self.production_cost(s) + self.blackout_cost(s - d)
    }
}

/// Parameters of the centralized market simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub rho: f64,
    pub beta: f64,
    /// Supply offset in the supply mean `p - offset_gamma`.
    pub offset_gamma: f64,
    pub sigma: f64,
    pub t_final: f64,
    pub dt: f64,
    pub x0: MarketState,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            rho: 0.05,
            beta: 75.0,
            offset_gamma: 25.0,
            sigma: 2.0,
            t_final: 100.0,
            dt: 0.05,
            x0: MarketState { d: 25.0, s: 25.0, p: 50.0 },
        }
    }
}

impl MarketParams {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.dt)
    }

    pub fn system(&self) -> LinearSystem {
        LinearSystem::centralized(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ends_on_horizon() {
        let g = TimeGrid::new(100.0, 0.05).unwrap();
        assert_eq!(g.n_steps(), 2000);
        assert_eq!(g.time(g.n_steps()), 100.0);
        assert!((g.n_steps() as f64 * g.dt() - 100.0).abs() <= f64::EPSILON * 100.0);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
    }

    #[test]
    fn index_is_nearest_not_later() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        assert_eq!(g.index_at(0.0).unwrap(), 0);
        assert_eq!(g.index_at(0.19).unwrap(), 1);
        assert_eq!(g.index_at(0.2).unwrap(), 2);
        assert_eq!(g.index_at(1.0).unwrap(), 10);
        assert!(g.index_at(1.5).is_err());
        assert!(g.index_at(-0.1).is_err());
    }

    #[test]
    fn centralized_structure() {
        let sys = MarketParams::default().system();
        sys.check_centralized().unwrap();
        assert_eq!(sys.h.as_slice(), &[3.75, -1.25, 0.0]);
        let mut bad = sys.clone();
        bad.a[(0, 2)] = 0.1;
        assert!(bad.check_centralized().is_err());
    }

    #[test]
    fn loss_hand_values() {
        let loss = NonlinearLoss::default();
        assert_eq!(loss.eval(0.0, 0.0, 50.0), 0.0);
        assert!((loss.eval(10.0, 20.0, 50.0) - (-192.0)).abs() < 1e-12);
        assert!((loss.eval(20.0, 10.0, 50.0) - (-600.0 + 202.0 + 5000.0)).abs() < 1e-12);
    }

    #[test]
    fn cost_validation() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticCost::new(q, DVector::zeros(2), 1.0).is_err());
        assert!(QuadraticCost::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).is_err());
        assert!(QuadraticCost::new(DMatrix::identity(2, 2), DVector::zeros(3), 1.0).is_err());
    }
}
