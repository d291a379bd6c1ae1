//! Sensitivity of the Riccati solution and of the state-penalizing cost to
//! `γ = 1/r`.
//!
//! `dK/dγ` and `dS/dγ` are integrated with the same RK4 stages as `K` and
//! `S`, so they are the exact derivatives of the discrete solution. The
//! noise-driven part of `dJ_sp/dγ` is `2 ∫ tr(R₂ Q) dt` with
//!
//! ```text
//! R₁(t) = ∫₀ᵗ Φ(t,τ) G Gᵀ Φ(t,τ)ᵀ dτ
//! R₂(t) = ∫₀ᵗ Φ(t,τ) M(τ) R₁(τ) Φ(t,τ)ᵀ dτ,   M = -BBᵀK - γ BBᵀ dK/dγ
//! ```
//!
//! where `Φ` is the closed-loop transition matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LinearSystem, QuadraticCost, TimeGrid};
use crate::moments::{closed_loop_moments, step_propagators, trapezoid};
use crate::riccati::{solve_riccati, RiccatiSolution};

#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    pub dk: Vec<DMatrix<f64>>,
    pub ds: Vec<DVector<f64>>,
    pub djsp_dgamma: f64,
    pub djsp_dr: f64,
    pub gamma: f64,
}

struct Tangent<'a> {
    a: &'a DMatrix<f64>,
    bbt: DMatrix<f64>,
    q: &'a DMatrix<f64>,
    gamma: f64,
}

impl Tangent<'_> {
    fn k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let ka = k * self.a;
        &ka + ka.transpose() - k * &self.bbt * k * self.gamma + self.q
    }

    fn dk(&self, k: &DMatrix<f64>, dk: &DMatrix<f64>) -> DMatrix<f64> {
        let da = dk * self.a;
        let cross = dk * &self.bbt * k;
        &da + da.transpose() - (&cross + cross.transpose()) * self.gamma - k * &self.bbt * k
    }

    fn s(&self, k: &DMatrix<f64>, s: &DVector<f64>, h: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        (self.a - &self.bbt * k * self.gamma).tr_mul(s) + k * h + d
    }

    fn ds(&self, k: &DMatrix<f64>, dk: &DMatrix<f64>, s: &DVector<f64>, ds: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
        let acl = self.a - &self.bbt * k * self.gamma;
        let m = -(&self.bbt * k) - &self.bbt * dk * self.gamma;
        acl.tr_mul(ds) + m.tr_mul(s) + dk * h
    }
}

fn check_gamma(sol: &RiccatiSolution, sys: &LinearSystem, cost: &QuadraticCost, gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
    }
    if (gamma * sol.r - 1.0).abs() > 1e-12 || (cost.r - sol.r).abs() > 1e-15 * sol.r {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} does not match the solution's r = {}",
            sol.r
        )));
    }
    if sys.n() != sol.n() || cost.n() != sol.n() {
        return Err(Error::Dimension("system, cost and solution disagree on dimension".into()));
    }
    Ok(())
}

fn nonfinite(grid: &TimeGrid, i: usize, what: &str) -> Error {
    Error::NonFinite { t: grid.time(i), what: what.into() }
}

/// RK4 stage values `(K_a, K_b, K_c, K_d)` of step `i+1 → i`.
fn k_stages(tg: &Tangent, k: &DMatrix<f64>, dt: f64) -> [(DMatrix<f64>, DMatrix<f64>); 4] {
    let k1 = tg.k(k);
    let kb = k + &k1 * (0.5 * dt);
    let k2 = tg.k(&kb);
    let kc = k + &k2 * (0.5 * dt);
    let k3 = tg.k(&kc);
    let kd = k + &k3 * dt;
    let k4 = tg.k(&kd);
    [(k.clone(), k1), (kb, k2), (kc, k3), (kd, k4)]
}

fn dk_stages(tg: &Tangent, ks: &[(DMatrix<f64>, DMatrix<f64>); 4], dk: &DMatrix<f64>, dt: f64) -> [(DMatrix<f64>, DMatrix<f64>); 4] {
    let d1 = tg.dk(&ks[0].0, dk);
    let db = dk + &d1 * (0.5 * dt);
    let d2 = tg.dk(&ks[1].0, &db);
    let dc = dk + &d2 * (0.5 * dt);
    let d3 = tg.dk(&ks[2].0, &dc);
    let dd = dk + &d3 * dt;
    let d4 = tg.dk(&ks[3].0, &dd);
    [(dk.clone(), d1), (db, d2), (dc, d3), (dd, d4)]
}

/// Backward integration of `dK/dγ` with zero terminal value.
pub fn solve_dk_dgamma(sol: &RiccatiSolution, sys: &LinearSystem, cost: &QuadraticCost, gamma: f64) -> Result<Vec<DMatrix<f64>>> {
    check_gamma(sol, sys, cost, gamma)?;
    let tg = Tangent { a: &sys.a, bbt: &sys.b * sys.b.transpose(), q: &cost.q, gamma };
    let grid = sol.grid;
    let dt = grid.dt();
    let n = sol.n();
    let mut out = vec![DMatrix::zeros(n, n); grid.len()];
    for i in (0..grid.n_steps()).rev() {
        let ks = k_stages(&tg, &sol.k[i + 1], dt);
        let ds = dk_stages(&tg, &ks, &out[i + 1], dt);
        let next = &out[i + 1] + (&ds[0].1 + (&ds[1].1 + &ds[2].1) * 2.0 + &ds[3].1) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite(&grid, i, "dK/dgamma blew up"));
        }
        out[i] = (&next + next.transpose()) * 0.5;
    }
    Ok(out)
}

/// Backward integration of `dS/dγ`, consuming `dK/dγ`.
pub fn solve_ds_dgamma(
    sol: &RiccatiSolution,
    dk: &[DMatrix<f64>],
    sys: &LinearSystem,
    cost: &QuadraticCost,
    gamma: f64,
) -> Result<Vec<DVector<f64>>> {
    check_gamma(sol, sys, cost, gamma)?;
    let grid = sol.grid;
    if dk.len() != grid.len() {
        return Err(Error::Dimension(format!("dK/dgamma has {} nodes, grid has {}", dk.len(), grid.len())));
    }
    let tg = Tangent { a: &sys.a, bbt: &sys.b * sys.b.transpose(), q: &cost.q, gamma };
    let dt = grid.dt();
    let n = sol.n();
    let f = &sol.forcing;
    let mut out = vec![DVector::zeros(n); grid.len()];
    for i in (0..grid.n_steps()).rev() {
        let ks = k_stages(&tg, &sol.k[i + 1], dt);
        let dks = dk_stages(&tg, &ks, &dk[i + 1], dt);
        let hm = (&f.h[i] + &f.h[i + 1]) * 0.5;
        let dm = (&f.d[i] + &f.d[i + 1]) * 0.5;
        let hs = [&f.h[i + 1], &hm, &hm, &f.h[i]];
        let dvs = [&f.d[i + 1], &dm, &dm, &f.d[i]];
        let weights = [0.0, 0.5, 0.5, 1.0];

        let (s0, g0) = (&sol.s[i + 1], &out[i + 1]);
        let mut s_incr: Vec<DVector<f64>> = Vec::with_capacity(4);
        let mut g_incr: Vec<DVector<f64>> = Vec::with_capacity(4);
        for st in 0..4 {
            let (sv, gv) = if st == 0 {
                (s0.clone(), g0.clone())
            } else {
                let w = weights[st] * dt;
                (s0 + &s_incr[st - 1] * w, g0 + &g_incr[st - 1] * w)
            };
            s_incr.push(tg.s(&ks[st].0, &sv, hs[st], dvs[st]));
            g_incr.push(tg.ds(&ks[st].0, &dks[st].0, &sv, &gv, hs[st]));
        }
        let next = g0 + (&g_incr[0] + (&g_incr[1] + &g_incr[2]) * 2.0 + &g_incr[3]) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite(&grid, i, "dS/dgamma blew up"));
        }
        out[i] = next;
    }
    Ok(out)
}

/// Largest real part of the eigenvalues of a square matrix.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Noise-driven `dJ_sp/dγ = 2 ∫₀ᵀ tr(R₂(t) Q) dt`.
pub fn djsp_dgamma_steady(
    sol: &RiccatiSolution,
    dk: &[DMatrix<f64>],
    sys: &LinearSystem,
    cost: &QuadraticCost,
    gamma: f64,
) -> Result<f64> {
    check_gamma(sol, sys, cost, gamma)?;
    let grid = sol.grid;
    if dk.len() != grid.len() {
        return Err(Error::Dimension(format!("dK/dgamma has {} nodes, grid has {}", dk.len(), grid.len())));
    }
    let bbt = &sys.b * sys.b.transpose();
    let a_star = &sys.a - &bbt * &sol.k[0] * gamma;
    let max_re = max_real_eigenvalue(&a_star);
    if max_re > -1e-8 {
        return Err(Error::NotHurwitz { max_re });
    }

    let dt = grid.dt();
    let n = sol.n();
    let ggt = &sys.g * sys.g.transpose();
    let props = step_propagators(sys, sol);
    let m_at = |k: usize| -(&bbt * &sol.k[k]) - &bbt * &dk[k] * gamma;

    let mut r1 = DMatrix::<f64>::zeros(n, n);
    let mut r2 = DMatrix::<f64>::zeros(n, n);
    let mut trace = Vec::with_capacity(grid.len());
    trace.push(0.0);
    for k in 0..grid.n_steps() {
        let e = &props[k];
        let src2 = m_at(k) * &r1;
        let r1_next = e * (&r1 + &ggt * (0.5 * dt)) * e.transpose() + &ggt * (0.5 * dt);
        let r2_next = e * (&r2 + src2 * (0.5 * dt)) * e.transpose() + m_at(k + 1) * &r1_next * (0.5 * dt);
        r1 = (&r1_next + r1_next.transpose()) * 0.5;
        r2 = r2_next;
        let tr = (&r2 * &cost.q).trace();
        if !tr.is_finite() {
            return Err(nonfinite(&grid, k + 1, "R2 integral blew up"));
        }
        trace.push(tr);
    }
    Ok(2.0 * trapezoid(&trace, dt))
}

/// Chain rule `dJ/dr = -r⁻² dJ/dγ`.
pub fn djsp_dr(djsp_dgamma: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("r must be > 0, got {r}")));
    }
    Ok(-djsp_dgamma / (r * r))
}

/// Solves the Riccati system at `cost.r` and every sensitivity built on it.
pub fn sensitivity_bundle(sys: &LinearSystem, cost: &QuadraticCost, grid: &TimeGrid) -> Result<SensitivityBundle> {
    let sol = solve_riccati(sys, cost, grid)?;
    let gamma = 1.0 / cost.r;
    let dk = solve_dk_dgamma(&sol, sys, cost, gamma)?;
    let ds = solve_ds_dgamma(&sol, &dk, sys, cost, gamma)?;
    let djsp_dgamma = djsp_dgamma_steady(&sol, &dk, sys, cost, gamma)?;
    Ok(SensitivityBundle { djsp_dr: djsp_dr(djsp_dgamma, cost.r)?, dk, ds, djsp_dgamma, gamma })
}

fn check_sweep(r_values: &[f64]) -> Result<()> {
    if r_values.is_empty() {
        return Err(Error::InvalidParameter("empty r sweep".into()));
    }
    if r_values.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidParameter("r values must be positive".into()));
    }
    if r_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("r values must be sorted".into()));
    }
    Ok(())
}

/// `(r, dJ_sp/dr)` over a sweep; points are computed in parallel and
/// returned in input order.
pub fn djsp_dr_curve(sys: &LinearSystem, cost: &QuadraticCost, r_values: &[f64], grid: &TimeGrid) -> Result<Vec<(f64, f64)>> {
    check_sweep(r_values)?;
    r_values
        .par_iter()
        .map(|&r| Ok((r, sensitivity_bundle(sys, &cost.with_r(r)?, grid)?.djsp_dr)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub r: f64,
    pub state_penalizing: f64,
    pub volatility: f64,
    pub efficiency_norm: f64,
    pub volatility_norm: f64,
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values.iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect()
}

/// Efficiency (`-J_sp`) against volatility (`∫E|u|²`) over an r sweep, from
/// the closed-loop moments; both axes normalized to [0, 1] over the sweep.
pub fn tradeoff_curve(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    r_values: &[f64],
    x0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Vec<TradeoffPoint>> {
    check_sweep(r_values)?;
    let raw: Vec<(f64, f64)> = r_values
        .par_iter()
        .map(|&r| {
            let c = cost.with_r(r)?;
            let sol = solve_riccati(sys, &c, grid)?;
            let m = closed_loop_moments(sys, &c, &sol, x0)?;
            Ok((m.state_penalizing, m.volatility))
        })
        .collect::<Result<_>>()?;
    let eff: Vec<f64> = raw.iter().map(|p| -p.0).collect();
    let vol: Vec<f64> = raw.iter().map(|p| p.1).collect();
    let (eff_n, vol_n) = (normalize(&eff), normalize(&vol));
    Ok(r_values
        .iter()
        .enumerate()
        .map(|(i, &r)| TradeoffPoint {
            r,
            state_penalizing: raw[i].0,
            volatility: raw[i].1,
            efficiency_norm: eff_n[i],
            volatility_norm: vol_n[i],
        })
        .collect())
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| {
                    if i + 1 == n {
                        hi
                    } else {
                        10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
                    }
                })
                .collect()
        }
    }
}
