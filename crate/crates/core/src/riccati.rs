//! Backward integration of the finite-horizon Riccati system
//!
//! ```text
//! K' = -(KA + AᵀK - K W K + Q)
//! S' = -((A - W K)ᵀ S + K h + D)
//! q' = -(2 Sᵀh - Sᵀ W S + tr(K G Gᵀ))          W = B r⁻¹ Bᵀ
//! ```
//!
//! with zero terminal data, by classical RK4 in reversed time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, QuadraticCost, TimeGrid};

/// Affine forcing `h(t)` and linear cost weight `D(t)` sampled on the grid
/// nodes. Values between nodes are linear interpolants.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub h: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
}

impl Forcing {
    pub fn constant(h: &DVector<f64>, d: &DVector<f64>, grid: &TimeGrid) -> Self {
        Self { h: vec![h.clone(); grid.len()], d: vec![d.clone(); grid.len()] }
    }

    fn check(&self, n: usize, grid: &TimeGrid) -> Result<()> {
        if self.h.len() != grid.len() || self.d.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "forcing has {}/{} nodes, grid has {}",
                self.h.len(),
                self.d.len(),
                grid.len()
            )));
        }
        if self.h.iter().chain(self.d.iter()).any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("forcing vectors must have length {n}")));
        }
        Ok(())
    }
}

/// Grid solution of the Riccati system together with the data it was solved for.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub k: Vec<DMatrix<f64>>,
    pub s: Vec<DVector<f64>>,
    pub q: Vec<f64>,
    pub grid: TimeGrid,
    pub r: f64,
    pub forcing: Forcing,
}

/// Right-hand sides in reversed time `τ = T - t`.
pub(crate) struct Rhs<'a> {
    pub a: &'a DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub q: &'a DMatrix<f64>,
    pub ggt: DMatrix<f64>,
}

impl<'a> Rhs<'a> {
    pub fn new(sys: &'a LinearSystem, cost: &'a QuadraticCost) -> Self {
        let w = &sys.b * sys.b.transpose() / cost.r;
        Self { a: &sys.a, w, q: &cost.q, ggt: &sys.g * sys.g.transpose() }
    }

    pub fn k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let ka = k * self.a;
        &ka + ka.transpose() - k * &self.w * k + self.q
    }

    pub fn s(&self, k: &DMatrix<f64>, s: &DVector<f64>, h: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let acl = self.a - &self.w * k;
        acl.tr_mul(s) + k * h + d
    }

    pub fn q(&self, k: &DMatrix<f64>, s: &DVector<f64>, h: &DVector<f64>) -> f64 {
        2.0 * s.dot(h) - s.dot(&(&self.w * s)) + (k * &self.ggt).trace()
    }
}

pub fn solve_riccati(sys: &LinearSystem, cost: &QuadraticCost, grid: &TimeGrid) -> Result<RiccatiSolution> {
    let forcing = Forcing::constant(&sys.h, &cost.d, grid);
    solve_riccati_forced(sys, cost, grid, forcing)
}

/// Same as [`solve_riccati`] with time-varying `h(t)` and `D(t)`; the `h`
/// of `sys` and `D` of `cost` are ignored.
pub fn solve_riccati_forced(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    grid: &TimeGrid,
    forcing: Forcing,
) -> Result<RiccatiSolution> {
    let n = sys.n();
    if cost.n() != n {
        return Err(Error::Dimension(format!("system has n={n}, cost has n={}", cost.n())));
    }
    if !(cost.r > 0.0) {
        return Err(Error::InvalidParameter(format!("r must be > 0, got {}", cost.r)));
    }
    forcing.check(n, grid)?;
    let rhs = Rhs::new(sys, cost);
    let len = grid.len();
    let dt = grid.dt();
    let mut ks = vec![DMatrix::zeros(n, n); len];
    let mut ss = vec![DVector::zeros(n); len];
    let mut qs = vec![0.0; len];

    for i in (0..grid.n_steps()).rev() {
        let (h1, d1) = (&forcing.h[i + 1], &forcing.d[i + 1]);
        let (h0, d0) = (&forcing.h[i], &forcing.d[i]);
        let hm = (h0 + h1) * 0.5;
        let dm = (d0 + d1) * 0.5;
        let (k, s, q) = (&ks[i + 1], &ss[i + 1], qs[i + 1]);

        let k1 = rhs.k(k);
        let s1 = rhs.s(k, s, h1, d1);
        let q1 = rhs.q(k, s, h1);
        let (kb, sb) = (k + &k1 * (0.5 * dt), s + &s1 * (0.5 * dt));
        let k2 = rhs.k(&kb);
        let s2 = rhs.s(&kb, &sb, &hm, &dm);
        let q2 = rhs.q(&kb, &sb, &hm);
        let (kc, sc) = (k + &k2 * (0.5 * dt), s + &s2 * (0.5 * dt));
        let k3 = rhs.k(&kc);
        let s3 = rhs.s(&kc, &sc, &hm, &dm);
        let q3 = rhs.q(&kc, &sc, &hm);
        let (kd, sd) = (k + &k3 * dt, s + &s3 * dt);
        let k4 = rhs.k(&kd);
        let s4 = rhs.s(&kd, &sd, h0, d0);
        let q4 = rhs.q(&kd, &sd, h0);

        let mut k_new = k + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        k_new = (&k_new + k_new.transpose()) * 0.5;
        let s_new = s + (s1 + (s2 + s3) * 2.0 + s4) * (dt / 6.0);
        let q_new = q + (q1 + 2.0 * (q2 + q3) + q4) * (dt / 6.0);

        if k_new.iter().chain(s_new.iter()).any(|v| !v.is_finite()) || !q_new.is_finite() {
            return Err(Error::NonFinite { t: grid.time(i), what: "Riccati solution blew up".into() });
        }
        ks[i] = k_new;
        ss[i] = s_new;
        qs[i] = q_new;
    }
    Ok(RiccatiSolution { k: ks, s: ss, q: qs, grid: *grid, r: cost.r, forcing })
}

/// Maximum central-difference residual of the three equations over interior
/// nodes, and the constant `C = residual / dt²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub constant: f64,
}

impl RiccatiSolution {
    pub fn n(&self) -> usize {
        self.k[0].nrows()
    }

    pub fn residuals(&self, sys: &LinearSystem, cost: &QuadraticCost) -> ResidualReport {
        let rhs = Rhs::new(sys, cost);
        let dt = self.grid.dt();
        let mut worst: f64 = 0.0;
        for i in 1..self.grid.n_steps() {
            let (h, d) = (&self.forcing.h[i], &self.forcing.d[i]);
            // dK/dt = -(reversed-time rhs), so dK/dt + rhs must vanish.
            let dk = (&self.k[i + 1] - &self.k[i - 1]) / (2.0 * dt);
            let ds = (&self.s[i + 1] - &self.s[i - 1]) / (2.0 * dt);
            let dq = (self.q[i + 1] - self.q[i - 1]) / (2.0 * dt);
            let rk = (dk + rhs.k(&self.k[i])).norm();
            let rs = (ds + rhs.s(&self.k[i], &self.s[i], h, d)).norm();
            let rq = (dq + rhs.q(&self.k[i], &self.s[i], h)).abs();
            worst = worst.max(rk).max(rs).max(rq);
        }
        ResidualReport { max_residual: worst, constant: worst / (dt * dt) }
    }

    /// Feedback gain and offset at node `k`: `u = L x + l`.
    pub fn feedback(&self, b: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let gain = -(b.transpose() * &self.k[k]) / self.r;
        let offset = -(b.tr_mul(&self.s[k])) / self.r;
        (gain, offset)
    }
}

/// `u = -r⁻¹ Bᵀ (K(t) x + S(t))` with `K`, `S` at the nearest node not later than `t`.
pub fn optimal_control(
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &QuadraticCost,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != sol.n() || sys.n() != sol.n() {
        return Err(Error::Dimension(format!("state has length {}, solution n={}", x.len(), sol.n())));
    }
    let k = sol.grid.index_at(t)?;
    Ok(-(sys.b.tr_mul(&(&sol.k[k] * x + &sol.s[k]))) / cost.r)
}

/// `x₀ᵀK(0)x₀ + 2x₀ᵀS(0) + q(0)`.
pub fn closed_form_cost(sol: &RiccatiSolution, x0: &DVector<f64>) -> Result<f64> {
    if x0.len() != sol.n() {
        return Err(Error::Dimension(format!("x0 has length {}, solution n={}", x0.len(), sol.n())));
    }
    Ok(x0.dot(&(&sol.k[0] * x0)) + 2.0 * x0.dot(&sol.s[0]) + sol.q[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(h: f64, g: f64) -> (LinearSystem, QuadraticCost) {
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, g),
            DVector::from_element(1, h),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 1.0).unwrap();
        (sys, cost)
    }

    #[test]
    fn scalar_matches_tanh() {
        let (sys, cost) = scalar(0.0, 0.0);
        let grid = TimeGrid::new(1.0, 1e-3).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let err = grid
            .times()
            .zip(&sol.k)
            .map(|(t, k)| (k[(0, 0)] - (1.0 - t).tanh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "max error {err:e}");
        assert_eq!(sol.k[grid.n_steps()][(0, 0)], 0.0);
        let x0 = DVector::from_element(1, 1.0);
        assert!((closed_form_cost(&sol, &x0).unwrap() - 1f64.tanh()).abs() < 1e-12);
        let u = optimal_control(&sol, &sys, &cost, 0.0, &x0).unwrap();
        assert!((u[0] + 1f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let sys = LinearSystem::new(
            -DMatrix::identity(2, 2),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::zeros(2, 2), DVector::zeros(2), 0.5).unwrap();
        let sol = solve_riccati(&sys, &cost, &TimeGrid::new(5.0, 0.1).unwrap()).unwrap();
        assert!(sol.k.iter().all(|k| k.amax() == 0.0));
        assert!(sol.s.iter().all(|s| s.amax() == 0.0));
        assert!(sol.q.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn residual_is_second_order() {
        let (sys, cost) = scalar(1.0, 0.5);
        let coarse = solve_riccati(&sys, &cost, &TimeGrid::new(1.0, 0.02).unwrap()).unwrap();
        let fine = solve_riccati(&sys, &cost, &TimeGrid::new(1.0, 0.01).unwrap()).unwrap();
        let (rc, rf) = (coarse.residuals(&sys, &cost), fine.residuals(&sys, &cost));
        assert!(rc.max_residual / rf.max_residual > 3.5);
        assert!(rf.constant <= rc.constant * 1.1);
    }

    #[test]
    fn rejects_mismatch_and_out_of_range() {
        let (sys, _) = scalar(0.0, 0.0);
        let cost2 = QuadraticCost::new(DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        assert!(matches!(solve_riccati(&sys, &cost2, &grid), Err(Error::Dimension(_))));
        let (sys, cost) = scalar(0.0, 0.0);
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        assert!(optimal_control(&sol, &sys, &cost, 2.0, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn blow_up_reports_time() {
        // Negative-definite Q drives K to -infinity in finite time.
        let sys = LinearSystem::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
        )
        .unwrap();
        let cost = QuadraticCost { q: DMatrix::from_element(1, 1, -1e3), d: DVector::zeros(1), r: 1e-3 };
        let err = solve_riccati(&sys, &cost, &TimeGrid::new(50.0, 0.1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
