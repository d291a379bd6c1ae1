//! Explicit finite-difference solver for the perturbed HJB equation of the
//! bounded-control market problem
//!
//! ```text
//! -V_t = min_{|u| <= u_max} (f·∇V + u V_p) + ½σ_d² V_dd + ½σ_s² V_ss + ½ε² V_pp + g,   V(T) = 0
//! ```
//!
//! with upwinded first differences, central second differences and
//! zero-curvature ghost nodes outside the padded box. The minimizing control
//! is bang-bang, `u = -sgn(V_p) u_max`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, NonlinearLoss, TimeGrid};
use crate::rng::CounterRng;

/// `V_p` magnitudes below this are treated as the switching set.
pub const FLAT_TOL: f64 = 1e-12;

/// Tensor grid over (d, s, p). `bounds` and `nodes` describe the interior
/// box; `padding` extra nodes per face extend it with the same spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub bounds: [(f64, f64); 3],
    pub nodes: [usize; 3],
    pub padding: usize,
}

impl Grid3D {
    pub fn new(bounds: [(f64, f64); 3], nodes: [usize; 3], padding: usize) -> Result<Self> {
        for (axis, (&(lo, hi), &n)) in bounds.iter().zip(&nodes).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidParameter(format!("axis {axis}: empty bounds [{lo}, {hi}]")));
            }
            if n < 8 {
                return Err(Error::InvalidParameter(format!("axis {axis}: need >= 8 interior nodes, got {n}")));
            }
        }
        Ok(Self { bounds, nodes, padding })
    }

    /// 16 nodes per axis over d, s in [0, 50] and p in [25, 75], one padding node per face.
    pub fn operating(nodes: usize) -> Result<Self> {
        Self::new([(0.0, 50.0), (0.0, 50.0), (25.0, 75.0)], [nodes; 3], 1)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.nodes[axis] - 1) as f64
    }

    /// Node count per axis including padding.
    pub fn dims(&self) -> [usize; 3] {
        self.nodes.map(|n| n + 2 * self.padding)
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.bounds[axis].0 + (i as f64 - self.padding as f64) * self.spacing(axis)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, ny, nz] = self.dims();
        (i * ny + j) * nz + k
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let [_, ny, nz] = self.dims();
        [idx / (ny * nz), (idx / nz) % ny, idx % nz]
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unindex(idx);
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        let ijk = self.unindex(idx);
        (0..3).all(|a| ijk[a] >= self.padding && ijk[a] < self.padding + self.nodes[a])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbParams {
    pub sigma_d: f64,
    pub sigma_s: f64,
    pub epsilon: f64,
    pub u_max: f64,
}

impl Default for HjbParams {
    fn default() -> Self {
        Self { sigma_d: 2.0, sigma_s: 2.0, epsilon: 0.5, u_max: 5.0 }
    }
}

/// Solved value function on every time slice.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub grid: Grid3D,
    pub tgrid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub u_max: f64,
    /// `dt` times the largest total coefficient rate; the scheme is monotone when ≤ 1.
    pub cfl_number: f64,
}

impl ValueField {
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// Multilinear interpolation of slice `k`, clamped to the padded box.
    pub fn interpolate(&self, k: usize, x: [f64; 3]) -> f64 {
        interpolate(&self.grid, &self.values[k], x)
    }

    /// CSV of node coordinates, value and bang-bang control at slice `k`.
    pub fn write_csv<W: Write>(&self, mut w: W, k: usize) -> Result<()> {
        let policy = policy_at(self, k);
        writeln!(w, "d,s,p,value,control")?;
        for idx in 0..self.grid.len() {
            let [d, s, p] = self.grid.point(idx);
            writeln!(w, "{d},{s},{p},{},{}", self.values[k][idx], policy[idx])?;
        }
        Ok(())
    }
}

fn interpolate(grid: &Grid3D, v: &[f64], x: [f64; 3]) -> f64 {
    let dims = grid.dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let pos = ((x[a] - grid.coord(a, 0)) / grid.spacing(a)).clamp(0.0, (dims[a] - 1) as f64);
        let i = (pos.floor() as usize).min(dims[a] - 2);
        base[a] = i;
        frac[a] = pos - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let w: f64 = (0..3).map(|a| if off[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
        if w != 0.0 {
            acc += w * v[grid.index(base[0] + off[0], base[1] + off[1], base[2] + off[2])];
        }
    }
    acc
}

/// Uncontrolled drift `(A x + h)` restricted to the demand and supply rows.
fn drift(sys: &LinearSystem, x: [f64; 3]) -> [f64; 3] {
    let mut f = [0.0; 3];
    for (i, fi) in f.iter_mut().enumerate() {
        *fi = (0..3).map(|j| sys.a[(i, j)] * x[j]).sum::<f64>() + sys.h[i];
    }
    f
}

/// Neighbour values along `axis`, with zero-curvature ghosts past the edge.
#[inline]
fn neighbours(grid: &Grid3D, v: &[f64], ijk: [usize; 3], axis: usize) -> (f64, f64, f64) {
    let n = grid.dims()[axis];
    let at = |i: usize| {
        let mut c = ijk;
        c[axis] = i;
        v[grid.index(c[0], c[1], c[2])]
    };
    let i = ijk[axis];
    let mid = v[grid.index(ijk[0], ijk[1], ijk[2])];
    let lo = if i > 0 { at(i - 1) } else { 2.0 * mid - at(i + 1) };
    let hi = if i + 1 < n { at(i + 1) } else { 2.0 * mid - at(i - 1) };
    (lo, mid, hi)
}

/// Backward explicit solve. `loss` is the running cost; the drift of demand
/// and supply comes from rows 0 and 1 of `sys` (`A x + h`), price moves by
/// the control only.
pub fn solve_hjb<G>(grid: &Grid3D, sys: &LinearSystem, loss: G, params: &HjbParams, tgrid: &TimeGrid) -> Result<ValueField>
where
    G: Fn([f64; 3]) -> f64 + Sync,
{
    if sys.n() != 3 {
        return Err(Error::Dimension(format!("HJB solver needs a 3-state system, got {}", sys.n())));
    }
    let HjbParams { sigma_d, sigma_s, epsilon, u_max } = *params;
    if !(epsilon >= 0.0 && u_max >= 0.0 && sigma_d >= 0.0 && sigma_s >= 0.0) {
        return Err(Error::InvalidParameter("noise levels and u_max must be non-negative".into()));
    }
    let h = [grid.spacing(0), grid.spacing(1), grid.spacing(2)];
    let diff = [0.5 * sigma_d * sigma_d, 0.5 * sigma_s * sigma_s, 0.5 * epsilon * epsilon];
    let points: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let drifts: Vec<[f64; 3]> = points.iter().map(|&x| drift(sys, x)).collect();
    let running: Vec<f64> = points.iter().map(|&x| loss(x)).collect();
    if let Some(i) = running.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter(format!("loss is not finite at {:?}", points[i])));
    }

    let rate = drifts
        .iter()
        .map(|f| {
            (0..2).map(|a| f[a].abs() / h[a]).sum::<f64>()
                + (0..3).map(|a| 2.0 * diff[a] / (h[a] * h[a])).sum::<f64>()
                + u_max / h[2]
        })
        .fold(0.0, f64::max);
    let dt = tgrid.dt();
    let cfl_number = dt * rate;
    if cfl_number > 1.0 {
        return Err(Error::Cfl { number: cfl_number, dt_max: 1.0 / rate });
    }

    let mut values = vec![Vec::new(); tgrid.len()];
    values[tgrid.n_steps()] = vec![0.0; grid.len()];
    for step in (0..tgrid.n_steps()).rev() {
        let v = &values[step + 1];
        let next: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let ijk = grid.unindex(idx);
                let f = drifts[idx];
                let mut acc = running[idx];
                for a in 0..3 {
                    let (lo, mid, hi) = neighbours(grid, v, ijk, a);
                    let fwd = (hi - mid) / h[a];
                    let bwd = (mid - lo) / h[a];
                    if a < 2 {
                        acc += if f[a] > 0.0 { f[a] * fwd } else { f[a] * bwd };
                    } else {
                        acc += (u_max * fwd).min(-u_max * bwd).min(0.0);
                    }
                    acc += diff[a] * (hi - 2.0 * mid + lo) / (h[a] * h[a]);
                }
                v[idx] + dt * acc
            })
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: tgrid.time(step), what: "HJB value".into() });
        }
        values[step] = next;
    }
    Ok(ValueField { grid: *grid, tgrid: *tgrid, values, epsilon, u_max, cfl_number })
}

/// Solve with the market loss `g(d, s, p)`.
pub fn solve_hjb_loss(grid: &Grid3D, sys: &LinearSystem, loss: &NonlinearLoss, params: &HjbParams, tgrid: &TimeGrid) -> Result<ValueField> {
    loss.validate()?;
    solve_hjb(grid, sys, |x| loss.eval(x[0], x[1], x[2]), params, tgrid)
}

pub fn loss_g(x: [f64; 3], loss: &NonlinearLoss) -> f64 {
    loss.eval(x[0], x[1], x[2])
}

/// Central-difference `V_p` on slice `k` (one-sided on the outer faces).
pub fn price_gradient(field: &ValueField, k: usize) -> Vec<f64> {
    let grid = &field.grid;
    let v = &field.values[k];
    let nz = grid.dims()[2];
    let hp = grid.spacing(2);
    (0..grid.len())
        .map(|idx| {
            let [i, j, kk] = grid.unindex(idx);
            let (lo, hi, span) = match kk {
                0 => (idx, grid.index(i, j, 1), hp),
                _ if kk + 1 == nz => (grid.index(i, j, kk - 1), idx, hp),
                _ => (grid.index(i, j, kk - 1), grid.index(i, j, kk + 1), 2.0 * hp),
            };
            (v[hi] - v[lo]) / span
        })
        .collect()
}

fn bang_bang(vp: f64, u_max: f64) -> f64 {
    if vp.abs() < FLAT_TOL {
        0.0
    } else {
        -vp.signum() * u_max
    }
}

/// Bang-bang control at every node of slice `k`.
pub fn policy_at(field: &ValueField, k: usize) -> Vec<f64> {
    price_gradient(field, k).into_iter().map(|vp| bang_bang(vp, field.u_max)).collect()
}

/// Bang-bang control at every node at t = 0.
pub fn extract_policy(field: &ValueField) -> Vec<f64> {
    policy_at(field, 0)
}

/// Share of interior nodes whose control is `±u_max`.
pub fn bang_bang_fraction(field: &ValueField, policy: &[f64]) -> f64 {
    let grid = &field.grid;
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| grid.is_interior(i)).collect();
    let hits = interior.iter().filter(|&&i| policy[i].abs() == field.u_max && field.u_max > 0.0).count();
    hits as f64 / interior.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo cost of the extracted policy from `x0`, simulated with
/// Euler-Maruyama on the field's time grid. The control at each step is
/// `-sgn(V_p) u_max` with `V_p` interpolated from the nearest slice not later
/// than the current time.
pub fn rollout<G>(
    field: &ValueField,
    sys: &LinearSystem,
    loss: G,
    params: &HjbParams,
    x0: [f64; 3],
    n_paths: usize,
    seed: u64,
) -> Result<RolloutEstimate>
where
    G: Fn([f64; 3]) -> f64 + Sync,
{
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
    }
    let grads: Vec<Vec<f64>> = (0..field.tgrid.len()).map(|k| price_gradient(field, k)).collect();
    let tg = field.tgrid;
    let dt = tg.dt();
    let sq = dt.sqrt();
    let rng = CounterRng::new(seed);
    let noise = [params.sigma_d, params.sigma_s, params.epsilon];
    let costs: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut x = x0;
            let mut total = 0.0;
            for k in 0..tg.n_steps() {
                total += loss(x) * dt;
                let u = bang_bang(interpolate(&field.grid, &grads[k], x), field.u_max);
                let f = drift(sys, x);
                let mut next = x;
                for a in 0..3 {
                    let push = if a == 2 { f[a] + u } else { f[a] };
                    next[a] = x[a] + push * dt + noise[a] * sq * rng.normal(path as u64, k as u64, a as u64);
                }
                x = next;
            }
            total
        })
        .collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = if costs.len() > 1 { costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(RolloutEstimate { mean, std_error: (var / n).sqrt() })
}
