//! Scenario execution. A run produces named CSV artifacts in memory; writing
//! them is a separate step so results can be compared byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use powermarket::game::{contraction_bound, social_costs, solve_equilibrium, GamePopulation, PopulationConfig, PriceTrajectory};
use powermarket::hjb::{bang_bang_fraction, extract_policy, loss_g, rollout, solve_hjb_loss, Grid3D};
use powermarket::market::MarketModel;
use powermarket::sensitivity::{djsp_dr_curve, tradeoff_curve};
use powermarket::sim::{increment_moments, map_closed_loop, path_abs_gap, path_costs, price_increment_variance, simulate_closed_loop, summarize_costs, SimConfig};
use powermarket::{solve_riccati, LinearSystem, TimeGrid};
use serde::Serialize;

use crate::error::{io_err, CliError, Result};
use crate::scenario::{Analysis, ModelKind, Scenario};

/// Named file contents produced by a run, in write order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    fn push(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str())
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io_err(format!("writing {}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Values computed during the run that are inputs to later stages.
#[derive(Debug, Clone, Default, Serialize)]
struct Derived {
    r_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_c_bo_coeff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_d: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_residual_rms: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a Scenario,
    derived: &'a Derived,
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn run_scenario(sc: &Scenario) -> Result<Artifacts> {
    sc.validate()?;
    let mut art = Artifacts::default();
    let mut derived = Derived { r_values: sc.r_values()?, ..Derived::default() };
    match sc.model {
        ModelKind::Centralized => run_centralized(sc, &mut art, &mut derived)?,
        ModelKind::Game => run_game(sc, &mut art, &derived.r_values)?,
        ModelKind::Hjb => run_hjb(sc, &mut art)?,
    }
    let manifest = toml::to_string(&Manifest { scenario: sc, derived: &derived })
        .map_err(|e| CliError::Invalid(format!("cannot serialize manifest: {e}")))?;
    art.push("manifest.toml", manifest);
    Ok(art)
}

fn run_centralized(sc: &Scenario, art: &mut Artifacts, derived: &mut Derived) -> Result<()> {
    let model = MarketModel::new(sc.market.params(), sc.loss.loss(), sc.loss.blackout, sc.loss.fit_samples)?;
    derived.fit_c_bo_coeff = Some(model.loss.c_bo_coeff);
    derived.fit_q = Some((0..3).map(|i| (0..3).map(|j| model.fit.q[(i, j)]).collect()).collect());
    derived.fit_d = Some(model.fit.d.iter().copied().collect());
    derived.fit_residual_rms = Some(model.fit.residual_rms);
    let grid = model.grid()?;
    let x0 = model.x0();
    let rs = &derived.r_values;
    let template = model.cost(1.0)?;
    match sc.centralized.analysis {
        Analysis::Sensitivity => {
            let curve = djsp_dr_curve(&model.sys, &template, rs, &grid)?;
            let rows = curve.iter().map(|&(r, d)| vec![num(r), num(d), num(-d * r * r)]);
            art.push("sensitivity.csv", csv("r,djsp_dr,djsp_dgamma", rows));
        }
        Analysis::Tradeoff => {
            let pts = tradeoff_curve(&model.sys, &template, rs, &x0, &grid)?;
            let rows = pts.iter().map(|p| {
                vec![num(p.r), num(p.state_penalizing), num(p.volatility), num(p.efficiency_norm), num(p.volatility_norm)]
            });
            art.push("tradeoff.csv", csv("r,state_penalizing,volatility,efficiency_norm,volatility_norm", rows));
        }
        Analysis::Trajectory => {
            let r = rs[0];
            let cost = model.cost(r)?;
            let sol = solve_riccati(&model.sys, &cost, &grid)?;
            let cfg = sim_config(sc, grid)?;
            let paths = simulate_closed_loop(&model.sys, &cost, &sol, &x0, &cfg)?;
            for (i, t) in paths.iter().take(sc.sim.export_paths).enumerate() {
                let mut buf = Vec::new();
                t.write_csv(&mut buf, &["d", "s", "p"], &["u"])?;
                let name = if sc.sim.export_paths == 1 { "trajectory.csv".to_string() } else { format!("trajectory_{i}.csv") };
                art.push(name, String::from_utf8(buf).expect("csv is utf-8"));
            }
            let per: Vec<(f64, f64)> = paths.iter().map(|t| path_costs(t, &cost.q, &sol.forcing.d)).collect();
            let est = summarize_costs(&per, r)?;
            let inc: Vec<_> = paths.iter().map(|t| increment_moments(t, 2)).collect();
            let gap = paths.iter().map(path_abs_gap).sum::<f64>() / paths.len() as f64;
            let row = vec![
                num(r),
                paths.len().to_string(),
                num(price_increment_variance(&inc)),
                num(gap),
                num(est.state_penalizing),
                num(est.volatility),
            ];
            art.push("summary.csv", csv("r,n_paths,price_increment_variance,mean_abs_gap,state_penalizing,volatility", [row]));
        }
        Analysis::Gap => {
            let mut rows = Vec::new();
            for &r in rs {
                let cost = model.cost(r)?;
                let sol = solve_riccati(&model.sys, &cost, &grid)?;
                let cfg = sim_config(sc, grid)?;
                let per = map_closed_loop(&model.sys, &cost, &sol, &x0, &cfg, |t| (path_abs_gap(t), increment_moments(t, 2)))?;
                let n = per.len() as f64;
                let mean = per.iter().map(|p| p.0).sum::<f64>() / n;
                let var = per.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let inc: Vec<_> = per.iter().map(|p| p.1).collect();
                rows.push(vec![num(r), num(mean), num((var / n).sqrt()), num(price_increment_variance(&inc))]);
            }
            art.push("gap.csv", csv("r,mean_abs_gap,std_error,price_increment_variance", rows));
        }
    }
    Ok(())
}

fn sim_config(sc: &Scenario, grid: TimeGrid) -> Result<SimConfig> {
    let cfg = SimConfig::new(grid, sc.sim.n_paths, sc.seed)?;
    Ok(if sc.sim.common_random_numbers { cfg } else { cfg.independent() })
}

fn population(sc: &Scenario, r: f64) -> Result<GamePopulation> {
    match &sc.game.population {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
            Ok(PopulationConfig::from_toml_str(&text)?.build()?.with_r(r)?)
        }
        None => Ok(sc.game.standard(r).build()?),
    }
}

fn run_game(sc: &Scenario, art: &mut Artifacts, rs: &[f64]) -> Result<()> {
    let mut rows = Vec::new();
    let suffix = |i: usize| if rs.len() == 1 { String::new() } else { format!("_{i}") };
    for (i, &r) in rs.iter().enumerate() {
        let pop = population(sc, r)?;
        let bound = contraction_bound(&pop);
        let p0 = PriceTrajectory::constant(sc.game.initial_price, &pop.grid);
        let eq = solve_equilibrium(&pop, &p0, sc.game.tol, sc.game.max_iters)?;
        let costs = social_costs(&pop, &eq, &sim_config(sc, pop.grid)?)?;
        let mut buf = Vec::new();
        eq.write_csv(&mut buf, &pop)?;
        art.push(format!("equilibrium{}.csv", suffix(i)), String::from_utf8(buf).expect("csv is utf-8"));
        let res_rows = eq.residuals.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), num(*v)]);
        art.push(format!("residuals{}.csv", suffix(i)), csv("application,sup_change", res_rows));
        rows.push(vec![
            num(r),
            eq.iterations().to_string(),
            eq.convergence_ratio().map(num).unwrap_or_default(),
            num(bound.bound),
            num(costs.j_social),
            num(costs.j_sp_social),
            num(costs.volatility_social),
        ]);
        if i == 0 {
            let cfg = PopulationConfig::from_population(&pop);
            art.push("population.toml", cfg.to_toml_string()?);
        }
    }
    art.push("social.csv", csv("r,iterations,convergence_ratio,contraction_bound,j_social,j_sp_social,volatility_social", rows));
    Ok(())
}

fn run_hjb(sc: &Scenario, art: &mut Artifacts) -> Result<()> {
    let h = &sc.hjb;
    let grid = Grid3D::operating(h.nodes)?;
    let tgrid = TimeGrid::new(h.t_final, h.dt)?;
    let sys = LinearSystem::centralized(&sc.market.params());
    let loss = sc.loss.loss();
    let params = h.params();
    let field = solve_hjb_loss(&grid, &sys, &loss, &params, &tgrid)?;
    let policy = extract_policy(&field);
    let fraction = bang_bang_fraction(&field, &policy);
    let mut buf = Vec::new();
    field.write_csv(&mut buf, 0)?;
    art.push("value_t0.csv", String::from_utf8(buf).expect("csv is utf-8"));
    let mut rows = Vec::new();
    for (i, &x) in h.probes.iter().enumerate() {
        let v = field.interpolate(0, x);
        let est = rollout(&field, &sys, |y| loss_g(y, &loss), &params, x, h.rollout_paths, sc.seed.wrapping_add(i as u64))?;
        let rel = (est.mean - v).abs() / v.abs().max(f64::MIN_POSITIVE);
        rows.push(vec![num(x[0]), num(x[1]), num(x[2]), num(v), num(est.mean), num(est.std_error), num(rel)]);
    }
    art.push("probes.csv", csv("d,s,p,value,rollout,std_error,rel_gap", rows));
    let mut summary = String::from("nodes,cfl_number,bang_bang_fraction\n");
    let _ = writeln!(summary, "{},{},{}", h.nodes, num(field.cfl_number), num(fraction));
    art.push("summary.csv", summary);
    Ok(())
}
