//! Python bindings. Results come back as plain lists and dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use powermarket::game::{contraction_bound, solve_equilibrium, PriceTrajectory, StandardGame};
use powermarket::hjb::{bang_bang_fraction, extract_policy, loss_g, rollout, solve_hjb_loss, Grid3D, HjbParams, ValueField};
use powermarket::market::{Blackout, MarketModel};
use powermarket::sensitivity::{djsp_dr_curve, tradeoff_curve};
use powermarket::sim::{monte_carlo_costs, simulate_closed_loop, SimConfig};
use powermarket::{closed_form_cost, solve_riccati, LinearSystem, MarketParams, MarketState, NonlinearLoss, TimeGrid};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Centralized market with the quadratic cost fitted to the nonlinear loss.
#[pyclass(name = "Market", module = "powermarket", frozen)]
struct PyMarket {
    inner: MarketModel,
}

#[pymethods]
impl PyMarket {
    #[new]
    #[pyo3(signature = (rho=0.05, beta=75.0, offset_gamma=25.0, sigma=2.0, t_final=100.0, dt=0.05, x0=(25.0, 25.0, 50.0), v=60.0, c_quad=0.02, c_lin=20.0, fit_samples=powermarket::market::DEFAULT_FIT_SAMPLES))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        rho: f64,
        beta: f64,
        offset_gamma: f64,
        sigma: f64,
        t_final: f64,
        dt: f64,
        x0: (f64, f64, f64),
        v: f64,
        c_quad: f64,
        c_lin: f64,
        fit_samples: usize,
    ) -> PyResult<Self> {
        let x0 = MarketState::new(x0.0, x0.1, x0.2).map_err(py_err)?;
        let params = MarketParams { rho, beta, offset_gamma, sigma, t_final, dt, x0 };
        let loss = NonlinearLoss::new(v, c_quad, c_lin, 1.0).map_err(py_err)?;
        let inner = MarketModel::new(params, loss, Blackout::ZeroReserve, fit_samples).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.fit.q)
    }

    #[getter]
    fn d(&self) -> Vec<f64> {
        self.inner.fit.d.iter().copied().collect()
    }

    /// Calibrated cubic blackout coefficient.
    #[getter]
    fn blackout_coeff(&self) -> f64 {
        self.inner.loss.c_bo_coeff
    }

    /// Riccati gain `K(t)` at every time node.
    fn riccati_gain(&self, r: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let m = &self.inner;
        let sol = solve_riccati(&m.sys, &m.cost(r).map_err(py_err)?, &m.grid().map_err(py_err)?).map_err(py_err)?;
        Ok(sol.k.iter().map(rows).collect())
    }

    fn closed_form_cost(&self, r: f64) -> PyResult<f64> {
        let m = &self.inner;
        let sol = solve_riccati(&m.sys, &m.cost(r).map_err(py_err)?, &m.grid().map_err(py_err)?).map_err(py_err)?;
        closed_form_cost(&sol, &m.x0()).map_err(py_err)
    }

    /// Monte Carlo cost estimate as a dict of means and standard errors.
    #[pyo3(signature = (r, n_paths=1000, seed=42))]
    fn monte_carlo_cost(&self, r: f64, n_paths: usize, seed: u64) -> PyResult<BTreeMap<&'static str, f64>> {
        let m = &self.inner;
        let grid = m.grid().map_err(py_err)?;
        let cost = m.cost(r).map_err(py_err)?;
        let sol = solve_riccati(&m.sys, &cost, &grid).map_err(py_err)?;
        let cfg = SimConfig::new(grid, n_paths, seed).map_err(py_err)?;
        let est = monte_carlo_costs(&m.sys, &cost, &sol, &m.x0(), &cfg).map_err(py_err)?;
        Ok(BTreeMap::from([
            ("total", est.total),
            ("total_std_error", est.std_error.total),
            ("state_penalizing", est.state_penalizing),
            ("volatility", est.volatility),
        ]))
    }

    /// `(r, dJ_sp/dr)` pairs.
    fn sensitivity(&self, r_values: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
        let m = &self.inner;
        djsp_dr_curve(&m.sys, &m.cost(1.0).map_err(py_err)?, &r_values, &m.grid().map_err(py_err)?).map_err(py_err)
    }

    /// `(r, state_penalizing, volatility)` triples.
    fn tradeoff(&self, r_values: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let m = &self.inner;
        let pts = tradeoff_curve(&m.sys, &m.cost(1.0).map_err(py_err)?, &r_values, &m.x0(), &m.grid().map_err(py_err)?).map_err(py_err)?;
        Ok(pts.iter().map(|p| (p.r, p.state_penalizing, p.volatility)).collect())
    }

    /// Closed-loop sample paths, each a dict of `t`, `d`, `s`, `p`, `u` lists.
    #[pyo3(signature = (r, n_paths=1, seed=42))]
    fn simulate(&self, r: f64, n_paths: usize, seed: u64) -> PyResult<Vec<BTreeMap<&'static str, Vec<f64>>>> {
        let m = &self.inner;
        let grid = m.grid().map_err(py_err)?;
        let cost = m.cost(r).map_err(py_err)?;
        let sol = solve_riccati(&m.sys, &cost, &grid).map_err(py_err)?;
        let cfg = SimConfig::new(grid, n_paths, seed).map_err(py_err)?;
        let paths = simulate_closed_loop(&m.sys, &cost, &sol, &m.x0(), &cfg).map_err(py_err)?;
        Ok(paths
            .iter()
            .map(|t| {
                BTreeMap::from([
                    ("t", grid.times().collect()),
                    ("d", t.component(0).collect()),
                    ("s", t.component(1).collect()),
                    ("p", t.component(2).collect()),
                    ("u", t.controls.clone()),
                ])
            })
            .collect())
    }
}

/// Equilibrium of the two-consumer, two-supplier game at volatility weight `r`.
#[pyfunction]
#[pyo3(signature = (r, t_final=50.0, tol=1e-8, max_iters=200))]
fn game_equilibrium(py: Python<'_>, r: f64, t_final: f64, tol: f64, max_iters: usize) -> PyResult<Py<PyAny>> {
    let pop = StandardGame { r, t_final, ..StandardGame::default() }.build().map_err(py_err)?;
    let start = PriceTrajectory::constant(50.0, &pop.grid);
    let eq = solve_equilibrium(&pop, &start, tol, max_iters).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("t", pop.grid.times().collect::<Vec<_>>())?;
    out.set_item("price", eq.price.p.clone())?;
    out.set_item("iterations", eq.iterations())?;
    out.set_item("residuals", eq.residuals.clone())?;
    out.set_item("convergence_ratio", eq.convergence_ratio())?;
    out.set_item("contraction_bound", contraction_bound(&pop).bound)?;
    Ok(out.into_any().unbind())
}

/// Solved value function on the operating grid.
#[pyclass(name = "ValueField", module = "powermarket", frozen)]
struct PyValueField {
    field: ValueField,
    sys: LinearSystem,
    loss: NonlinearLoss,
    params: HjbParams,
}

#[pymethods]
impl PyValueField {
    /// Value at time zero, interpolated at `(d, s, p)`.
    fn value(&self, d: f64, s: f64, p: f64) -> f64 {
        self.field.interpolate(0, [d, s, p])
    }

    #[getter]
    fn bang_bang_fraction(&self) -> f64 {
        bang_bang_fraction(&self.field, &extract_policy(&self.field))
    }

    #[getter]
    fn cfl_number(&self) -> f64 {
        self.field.cfl_number
    }

    /// Monte Carlo cost of the extracted policy from `(d, s, p)`: `(mean, std_error)`.
    #[pyo3(signature = (d, s, p, n_paths=1000, seed=42))]
    fn rollout(&self, d: f64, s: f64, p: f64, n_paths: usize, seed: u64) -> PyResult<(f64, f64)> {
        let est = rollout(&self.field, &self.sys, |x| loss_g(x, &self.loss), &self.params, [d, s, p], n_paths, seed).map_err(py_err)?;
        Ok((est.mean, est.std_error))
    }
}

#[pyfunction]
#[pyo3(signature = (nodes=16, t_final=10.0, dt=0.05, epsilon=0.5, u_max=5.0, blackout_coeff=5.0))]
fn solve_hjb(nodes: usize, t_final: f64, dt: f64, epsilon: f64, u_max: f64, blackout_coeff: f64) -> PyResult<PyValueField> {
    let grid = Grid3D::operating(nodes).map_err(py_err)?;
    let tgrid = TimeGrid::new(t_final, dt).map_err(py_err)?;
    let sys = MarketParams::default().system();
    let loss = NonlinearLoss { c_bo_coeff: blackout_coeff, ..NonlinearLoss::default() };
    loss.validate().map_err(py_err)?;
    let params = HjbParams { epsilon, u_max, ..HjbParams::default() };
    let field = solve_hjb_loss(&grid, &sys, &loss, &params, &tgrid).map_err(py_err)?;
    Ok(PyValueField { field, sys, loss, params })
}

/// Runs a scenario (file path or built-in name) and returns `{file name: contents}`.
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, config_dir="scenarios"))]
fn run_scenario(scenario: &str, seed: Option<u64>, config_dir: &str) -> PyResult<BTreeMap<String, String>> {
    let mut sc = powermarket_cli::resolve_scenario(scenario, &PathBuf::from(config_dir)).map_err(py_err)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let art = powermarket_cli::run_scenario(&sc).map_err(py_err)?;
    Ok(art.files.into_iter().collect())
}

#[pyfunction]
fn list_scenarios() -> PyResult<Vec<String>> {
    Ok(powermarket_cli::builtins::BUILTINS.iter().map(|(n, _)| n.to_string()).collect())
}

#[pymodule]
#[pyo3(name = "powermarket")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PyValueField>()?;
    m.add_function(wrap_pyfunction!(game_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(solve_hjb, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    Ok(())
}
