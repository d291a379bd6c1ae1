//! Euler-Maruyama simulation of the controlled market and Monte Carlo
//! estimates of its costs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, QuadraticCost, TimeGrid};
use crate::riccati::RiccatiSolution;
use crate::rng::{hash_words, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    /// When set, noise depends only on `(seed, path, step, component)`; when
    /// unset the stream is also keyed by the system and cost being simulated.
    pub common_random_numbers: bool,
}

impl SimConfig {
    pub fn new(grid: TimeGrid, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
        }
        Ok(Self { grid, n_paths, seed, common_random_numbers: true })
    }

    pub fn independent(mut self) -> Self {
        self.common_random_numbers = false;
        self
    }

    /// Generator used for a given model.
    pub fn rng_for(&self, sys: &LinearSystem, cost: &QuadraticCost) -> CounterRng {
        if self.common_random_numbers {
            return CounterRng::new(self.seed);
        }
        let words = std::iter::once(self.seed)
            .chain(sys.a.iter().chain(sys.b.iter()).chain(sys.g.iter()).chain(sys.h.iter()).map(|v| v.to_bits()))
            .chain(cost.q.iter().chain(cost.d.iter()).map(|v| v.to_bits()))
            .chain(std::iter::once(cost.r.to_bits()));
        CounterRng::new(hash_words(words))
    }
}

/// One simulated path. States and controls are stored row-major per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub n: usize,
    pub m: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, n: usize, m: usize, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        if states.len() != grid.len() * n || controls.len() != grid.len() * m {
            return Err(Error::Dimension(format!(
                "trajectory arrays {}/{} do not match {} nodes",
                states.len(),
                controls.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, n, m, states, controls })
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.m..(k + 1) * self.m]
    }

    pub fn component(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().skip(i).step_by(self.n).copied()
    }

    /// CSV with columns `t, x0.., u0..`; names are supplied by the caller.
    pub fn write_csv<W: Write>(&self, mut w: W, state_names: &[&str], control_names: &[&str]) -> Result<()> {
        let header: Vec<&str> = std::iter::once("t").chain(state_names.iter().copied()).chain(control_names.iter().copied()).collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.grid.len() {
            let mut row = vec![self.grid.time(k).to_string()];
            row.extend(self.state(k).iter().chain(self.control(k)).map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// A control law evaluated at node `k` and state `x`, writing into `u`.
pub trait Policy: Sync {
    fn control(&self, k: usize, x: &[f64], u: &mut [f64]);
}

/// Affine feedback `u = L_k x + l_k` taken from a Riccati solution.
pub struct LinearFeedback {
    n: usize,
    m: usize,
    gains: Vec<f64>,
    offsets: Vec<f64>,
}

impl LinearFeedback {
    pub fn new(sol: &RiccatiSolution, b: &DMatrix<f64>) -> Self {
        let (n, m) = (b.nrows(), b.ncols());
        let mut gains = Vec::with_capacity(sol.grid.len() * n * m);
        let mut offsets = Vec::with_capacity(sol.grid.len() * m);
        for k in 0..sol.grid.len() {
            let (l, o) = sol.feedback(b, k);
            for i in 0..m {
                gains.extend((0..n).map(|j| l[(i, j)]));
            }
            offsets.extend(o.iter());
        }
        Self { n, m, gains, offsets }
    }
}

impl Policy for LinearFeedback {
    #[inline]
    fn control(&self, k: usize, x: &[f64], u: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..m {
            let row = &self.gains[(k * m + i) * n..(k * m + i + 1) * n];
            u[i] = self.offsets[k * m + i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Open-loop control schedule, one vector per node.
pub struct OpenLoop(pub Vec<DVector<f64>>);

impl Policy for OpenLoop {
    fn control(&self, k: usize, _x: &[f64], u: &mut [f64]) {
        u.copy_from_slice(self.0[k].as_slice());
    }
}

/// Euler-Maruyama engine for `dx = (A x + B u + h_k) dt + G dW`.
pub struct Simulator<'a, P: Policy> {
    grid: TimeGrid,
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    policy: &'a P,
    rng: CounterRng,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

impl<'a, P: Policy> Simulator<'a, P> {
    /// `h` holds the affine forcing at every grid node.
    pub fn new(sys: &LinearSystem, h: &[DVector<f64>], policy: &'a P, grid: TimeGrid, rng: CounterRng) -> Result<Self> {
        let n = sys.n();
        if h.len() != grid.len() || h.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension("forcing does not match grid and state size".into()));
        }
        Ok(Self {
            grid,
            n,
            m: sys.m(),
            a: row_major(&sys.a),
            b: row_major(&sys.b),
            g: row_major(&sys.g),
            h: h.iter().flat_map(|v| v.iter().copied()).collect(),
            policy,
            rng,
        })
    }

    pub fn simulate_path(&self, path: usize, x0: &[f64]) -> Result<Trajectory> {
        let (n, m, len) = (self.n, self.m, self.grid.len());
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
        }
        let dt = self.grid.dt();
        let sq = dt.sqrt();
        let mut states = vec![0.0; len * n];
        let mut controls = vec![0.0; len * m];
        states[..n].copy_from_slice(x0);
        let mut xi = vec![0.0; n];
        for k in 0..len {
            let (done, rest) = states.split_at_mut((k + 1) * n);
            let x = &done[k * n..];
            let u = &mut controls[k * m..(k + 1) * m];
            self.policy.control(k, x, u);
            if k + 1 == len {
                break;
            }
            for (j, z) in xi.iter_mut().enumerate() {
                *z = self.rng.normal(path as u64, k as u64, j as u64);
            }
            let next = &mut rest[..n];
            for i in 0..n {
                let ax: f64 = (0..n).map(|j| self.a[i * n + j] * x[j]).sum();
                let bu: f64 = (0..m).map(|l| self.b[i * m + l] * u[l]).sum();
                let gw: f64 = (0..n).map(|j| self.g[i * n + j] * xi[j]).sum();
                next[i] = x[i] + (ax + bu + self.h[k * n + i]) * dt + gw * sq;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { path, step: k + 1 });
            }
        }
        Trajectory::new(self.grid, n, m, states, controls)
    }

    /// Simulates every path in parallel and maps it through `f`; results are
    /// returned in path order regardless of scheduling.
    pub fn map_paths<T, F>(&self, n_paths: usize, x0: &[f64], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Trajectory) -> T + Sync,
        P: Sync,
    {
        (0..n_paths)
            .into_par_iter()
            .map(|path| self.simulate_path(path, x0).map(|t| f(&t)))
            .collect()
    }
}

fn check_inputs(sys: &LinearSystem, cost: &QuadraticCost, sol: &RiccatiSolution, x0: &DVector<f64>, cfg: &SimConfig) -> Result<()> {
    if sol.grid != cfg.grid {
        return Err(Error::InvalidParameter("solution and simulation use different time grids".into()));
    }
    if sys.n() != sol.n() || cost.n() != sol.n() || x0.len() != sol.n() {
        return Err(Error::Dimension("system, cost, solution and x0 disagree on dimension".into()));
    }
    Ok(())
}

/// Closed-loop paths under the optimal feedback of `sol`.
pub fn simulate_closed_loop(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>> {
    map_closed_loop(sys, cost, sol, x0, cfg, |t| t.clone())
}

/// Streams closed-loop paths through `f` without keeping them.
pub fn map_closed_loop<T: Send, F: Fn(&Trajectory) -> T + Sync>(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    cfg: &SimConfig,
    f: F,
) -> Result<Vec<T>> {
    check_inputs(sys, cost, sol, x0, cfg)?;
    let policy = LinearFeedback::new(sol, &sys.b);
    let sim = Simulator::new(sys, &sol.forcing.h, &policy, cfg.grid, cfg.rng_for(sys, cost))?;
    sim.map_paths(cfg.n_paths, x0.as_slice(), f)
}

/// Monte Carlo means of the running cost and its parts, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub total: f64,
    pub state_penalizing: f64,
    pub volatility: f64,
    pub std_error: CostErrors,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostErrors {
    pub total: f64,
    pub state_penalizing: f64,
    pub volatility: f64,
}

/// Per-path left-endpoint sums `(∫ xᵀQx + 2xᵀD dt, ∫ |u|² dt)`.
pub fn path_costs(traj: &Trajectory, q: &DMatrix<f64>, d: &[DVector<f64>]) -> (f64, f64) {
    let dt = traj.grid.dt();
    let n = traj.n;
    let (mut sp, mut vol) = (0.0, 0.0);
    for k in 0..traj.grid.n_steps() {
        let x = traj.state(k);
        let mut quad = 0.0;
        for i in 0..n {
            let qx: f64 = (0..n).map(|j| q[(i, j)] * x[j]).sum();
            quad += x[i] * (qx + 2.0 * d[k][i]);
        }
        sp += quad * dt;
        vol += traj.control(k).iter().map(|u| u * u).sum::<f64>() * dt;
    }
    (sp, vol)
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates per-path `(state_penalizing, volatility)` pairs.
pub fn summarize_costs(per_path: &[(f64, f64)], r: f64) -> Result<CostEstimate> {
    if per_path.is_empty() {
        return Err(Error::InvalidParameter("no paths to summarize".into()));
    }
    let (sp, sp_se) = mean_and_se(per_path.iter().map(|p| p.0));
    let (vol, vol_se) = mean_and_se(per_path.iter().map(|p| p.1));
    let (_, tot_se) = mean_and_se(per_path.iter().map(|p| p.0 + r * p.1));
    Ok(CostEstimate {
        total: sp + r * vol,
        state_penalizing: sp,
        volatility: vol,
        std_error: CostErrors { total: tot_se, state_penalizing: sp_se, volatility: vol_se },
        n_paths: per_path.len(),
    })
}

pub fn estimate_costs(trajs: &[Trajectory], cost: &QuadraticCost) -> Result<CostEstimate> {
    let first = trajs.first().ok_or_else(|| Error::InvalidParameter("no trajectories".into()))?;
    let d = vec![cost.d.clone(); first.grid.len()];
    estimate_costs_forced(trajs, cost, &d)
}

/// Cost estimate with a time-varying linear weight `D_k`.
pub fn estimate_costs_forced(trajs: &[Trajectory], cost: &QuadraticCost, d: &[DVector<f64>]) -> Result<CostEstimate> {
    if trajs.is_empty() {
        return Err(Error::InvalidParameter("no trajectories".into()));
    }
    if trajs.iter().any(|t| t.n != cost.n() || d.len() < t.grid.n_steps()) {
        return Err(Error::Dimension("trajectory and cost dimensions disagree".into()));
    }
    let per: Vec<(f64, f64)> = trajs.iter().map(|t| path_costs(t, &cost.q, d)).collect();
    summarize_costs(&per, cost.r)
}

/// Monte Carlo cost of the optimal feedback without storing paths.
pub fn monte_carlo_costs(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    let d = sol.forcing.d.clone();
    let per = map_closed_loop(sys, cost, sol, x0, cfg, |t| path_costs(t, &cost.q, &d))?;
    summarize_costs(&per, cost.r)
}

/// Time average of `|d - s|` along one path (nodes `0..n_steps`).
pub fn path_abs_gap(traj: &Trajectory) -> f64 {
    let n = traj.grid.n_steps();
    (0..n).map(|k| (traj.state(k)[0] - traj.state(k)[1]).abs()).sum::<f64>() / n as f64
}

/// Time- and path-average of `|d - s|`.
pub fn mean_abs_gap(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidParameter("no trajectories".into()));
    }
    if trajs.iter().any(|t| t.n < 2) {
        return Err(Error::Dimension("states need demand and supply components".into()));
    }
    Ok(trajs.iter().map(path_abs_gap).sum::<f64>() / trajs.len() as f64)
}

/// Sum and sum of squares of the increments of component `i` along a path.
pub fn increment_moments(traj: &Trajectory, i: usize) -> (f64, f64, usize) {
    let xs: Vec<f64> = traj.component(i).collect();
    xs.windows(2).fold((0.0, 0.0, 0), |(s, s2, c), w| {
        let dx = w[1] - w[0];
        (s + dx, s2 + dx * dx, c + 1)
    })
}

/// Pooled sample variance of price increments over all paths and steps.
pub fn price_increment_variance(moments: &[(f64, f64, usize)]) -> f64 {
    let (s, s2, c) = moments.iter().fold((0.0, 0.0, 0), |a, m| (a.0 + m.0, a.1 + m.1, a.2 + m.2));
    let c = c as f64;
    (s2 - s * s / c) / (c - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_riccati;

    fn scalar_model(g: f64, h: f64) -> (LinearSystem, QuadraticCost) {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, g),
            DVector::from_element(1, h),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 1.0).unwrap();
        (sys, cost)
    }

    #[test]
    fn deterministic_equilibrium_is_constant() {
        // With Q = 0, D = 0 the control vanishes; x* = -h/a is then a fixed point.
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::zeros(1, 1), DVector::zeros(1), 1.0).unwrap();
        let grid = TimeGrid::new(5.0, 0.05).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let cfg = SimConfig::new(grid, 3, 1).unwrap();
        let trajs = simulate_closed_loop(&sys, &cost, &sol, &DVector::from_element(1, 2.0), &cfg).unwrap();
        assert!(trajs.iter().all(|t| t.states.iter().all(|&x| x == 2.0)));
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let (sys, cost) = scalar_model(1.0, 0.3);
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        let sol = solve_riccati(&sys, &cost, &grid).unwrap();
        let cfg = SimConfig::new(grid, 16, 99).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let a = simulate_closed_loop(&sys, &cost, &sol, &x0, &cfg).unwrap();
        let b = simulate_closed_loop(&sys, &cost, &sol, &x0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn independent_streams_depend_on_model() {
        let (sys, cost) = scalar_model(1.0, 0.0);
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let cfg = SimConfig::new(grid, 1, 5).unwrap();
        let c2 = cost.with_r(2.0).unwrap();
        assert_eq!(cfg.rng_for(&sys, &cost), cfg.rng_for(&sys, &c2));
        let ind = cfg.independent();
        assert_ne!(ind.rng_for(&sys, &cost), ind.rng_for(&sys, &c2));
    }

    #[test]
    fn zero_trajectory_costs_nothing() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let t = Trajectory::new(grid, 3, 1, vec![0.0; 33], vec![0.0; 11]).unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(3, 3), DVector::zeros(3), 2.0).unwrap();
        let est = estimate_costs(&[t], &cost).unwrap();
        assert_eq!((est.total, est.state_penalizing, est.volatility), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_control_volatility() {
        let grid = TimeGrid::new(3.0, 0.01).unwrap();
        let c = 1.7;
        let t = Trajectory::new(grid, 1, 1, vec![0.0; grid.len()], vec![c; grid.len()]).unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.5).unwrap();
        let est = estimate_costs(&[t], &cost).unwrap();
        assert!((est.volatility - c * c * 3.0).abs() < 1e-12);
        assert_eq!(est.total, est.state_penalizing + cost.r * est.volatility);
    }

    #[test]
    fn gap_metric() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let equal: Vec<f64> = (0..11).flat_map(|k| [k as f64, k as f64, 50.0]).collect();
        let shifted: Vec<f64> = (0..11).flat_map(|k| [k as f64 + 2.0, k as f64, 50.0]).collect();
        let t0 = Trajectory::new(grid, 3, 1, equal, vec![0.0; 11]).unwrap();
        let t2 = Trajectory::new(grid, 3, 1, shifted, vec![0.0; 11]).unwrap();
        assert_eq!(mean_abs_gap(&[t0]).unwrap(), 0.0);
        assert!((mean_abs_gap(&[t2]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let grid = TimeGrid::new(1.0, 0.5).unwrap();
        let t = Trajectory::new(grid, 1, 1, vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["x"], &["u"]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x,u\n0,1,0\n0.5,2,0\n1,3,0\n");
    }
}
