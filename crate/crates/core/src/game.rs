//! Consumer/supplier dynamic game coupled through the market price.
//!
//! Every agent is a price taker with linear dynamics and quadratic cost whose
//! forcing and linear weight depend affinely on the price,
//! `h_t = h₀ + h_p p_t`, `D_t = D₀ + D_p p_t`. Given a price trajectory each
//! agent's best response is an LQ feedback; the agents' expected price
//! parameters, aggregated by the clearing functional
//! `p = γ/N (Σ f_i(p_i) + η)`, give the next price (the map T₅). The
//! equilibrium price is the fixed point of T₅.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{calibrate_blackout_coeff, fit_quadratic, SampleBox};
use crate::model::{LinearSystem, NonlinearLoss, QuadraticCost, TimeGrid};
use crate::riccati::{solve_riccati, solve_riccati_forced, Forcing, RiccatiSolution};
use crate::rng::hash_words;
use crate::sensitivity::max_real_eigenvalue;
use crate::sim::{path_costs, summarize_costs, CostEstimate, LinearFeedback, SimConfig, Simulator};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Consumer,
    Supplier,
}

/// Affine map `f(p_i) = slope · p_i + offset` from an agent's price
/// parameter to its contribution to the clearing price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqGraph {
    pub slope: f64,
    pub offset: f64,
}

impl Default for PqGraph {
    fn default() -> Self {
        Self { slope: 1.0, offset: 0.0 }
    }
}

impl PqGraph {
    pub fn eval(&self, p_i: f64) -> f64 {
        self.slope * p_i + self.offset
    }

    pub fn lipschitz(&self) -> f64 {
        self.slope.abs()
    }
}

/// Admissible dynamics parameters: every entry of `A`, `B`, `G`, `h₀`, `h_p`
/// bounded in magnitude.
pub const PARAMETER_BOUND: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    /// Dynamics; `sys.h` is the price-independent forcing `h₀`.
    pub sys: LinearSystem,
    pub h_price: DVector<f64>,
    /// Cost; `cost.d` is the price-independent weight `D₀`.
    pub cost: QuadraticCost,
    pub d_price: DVector<f64>,
    pub x0: DVector<f64>,
    /// State component holding the agent's own price parameter.
    pub price_index: usize,
    pub pq: PqGraph,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.sys.n();
        if self.cost.n() != n || self.h_price.len() != n || self.d_price.len() != n || self.x0.len() != n {
            return Err(Error::Dimension(format!("agent vectors must all have length {n}")));
        }
        let expected = match self.kind {
            AgentKind::Consumer => 3,
            AgentKind::Supplier => 2,
        };
        if n != expected {
            return Err(Error::Dimension(format!("{:?} state must have {expected} components, got {n}", self.kind)));
        }
        if self.price_index >= n {
            return Err(Error::Dimension(format!("price index {} out of range", self.price_index)));
        }
        let entries = self.sys.a.iter().chain(self.sys.b.iter()).chain(self.sys.g.iter()).chain(self.sys.h.iter()).chain(self.h_price.iter());
        if entries.clone().any(|v| !v.is_finite() || v.abs() > PARAMETER_BOUND) {
            return Err(Error::InvalidParameter(format!("agent dynamics leave the parameter box |θ| <= {PARAMETER_BOUND}")));
        }
        if !(self.pq.slope.is_finite() && self.pq.offset.is_finite()) {
            return Err(Error::InvalidParameter("price-quantity graph must be finite".into()));
        }
        Ok(())
    }

    /// Forcing `(h₀ + h_p p_k, D₀ + D_p p_k)` at every node.
    pub fn forcing(&self, price: &[f64]) -> Forcing {
        Forcing {
            h: price.iter().map(|&p| &self.sys.h + &self.h_price * p).collect(),
            d: price.iter().map(|&p| &self.cost.d + &self.d_price * p).collect(),
        }
    }
}

/// Closed-loop facts about one agent used by the contraction estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentStability {
    /// `max_t ‖K(t)‖`.
    pub k_norm_max: f64,
    /// `-max Re λ(A*)` with `A* = A - B r⁻¹ Bᵀ K(0)`.
    pub decay: f64,
    /// `max_t ‖e^{A* t}‖ e^{decay · t}` over the grid horizon.
    pub kappa: f64,
}

fn agent_stability(agent: &AgentSpec, grid: &TimeGrid) -> Result<AgentStability> {
    let sol = solve_riccati(&agent.sys, &agent.cost, grid)?;
    let k_norm_max = sol.k.iter().map(|k| k.clone().svd(false, false).singular_values.max()).fold(0.0, f64::max);
    let w = &agent.sys.b * agent.sys.b.transpose() / agent.cost.r;
    let a_star = &agent.sys.a - &w * &sol.k[0];
    let max_re = max_real_eigenvalue(&a_star);
    if max_re > -1e-8 {
        return Err(Error::NotHurwitz { max_re });
    }
    let decay = -max_re;
    // e^{A* t} on a 200-point sample of the horizon, by repeated multiplication.
    let samples = 200;
    let step = grid.t_final() / samples as f64;
    let e_step = (&a_star * step).exp();
    let mut e = DMatrix::identity(a_star.nrows(), a_star.nrows());
    let mut kappa: f64 = 1.0;
    for i in 1..=samples {
        e = &e_step * e;
        let t = i as f64 * step;
        kappa = kappa.max(e.clone().svd(false, false).singular_values.max() * (decay * t).exp());
    }
    Ok(AgentStability { k_norm_max, decay, kappa })
}

#[derive(Debug, Clone)]
pub struct GamePopulation {
    pub consumers: Vec<AgentSpec>,
    pub suppliers: Vec<AgentSpec>,
    pub clearing_gamma: f64,
    pub eta: f64,
    pub grid: TimeGrid,
    stability: Vec<AgentStability>,
}

impl GamePopulation {
    /// Validates every agent and checks that each closed loop is Hurwitz.
    pub fn new(consumers: Vec<AgentSpec>, suppliers: Vec<AgentSpec>, clearing_gamma: f64, eta: f64, grid: TimeGrid) -> Result<Self> {
        if consumers.is_empty() || suppliers.is_empty() {
            return Err(Error::InvalidParameter("need at least one consumer and one supplier".into()));
        }
        if consumers.iter().any(|a| a.kind != AgentKind::Consumer) || suppliers.iter().any(|a| a.kind != AgentKind::Supplier) {
            return Err(Error::InvalidParameter("agent kind does not match its list".into()));
        }
        if !(clearing_gamma > 0.0 && clearing_gamma.is_finite()) || !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter("need clearing_gamma > 0 and eta >= 0".into()));
        }
        let all: Vec<&AgentSpec> = consumers.iter().chain(&suppliers).collect();
        for a in &all {
            a.validate()?;
        }
        let stability = all.par_iter().map(|a| agent_stability(a, &grid)).collect::<Result<Vec<_>>>()?;
        Ok(Self { consumers, suppliers, clearing_gamma, eta, grid, stability })
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.consumers.iter().chain(&self.suppliers)
    }

    pub fn len(&self) -> usize {
        self.consumers.len() + self.suppliers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stability(&self) -> &[AgentStability] {
        &self.stability
    }

    /// Same population with every agent's volatility coefficient set to `r`.
    pub fn with_r(&self, r: f64) -> Result<Self> {
        let set = |v: &[AgentSpec]| -> Result<Vec<AgentSpec>> {
            v.iter().map(|a| Ok(AgentSpec { cost: a.cost.with_r(r)?, ..a.clone() })).collect()
        };
        Self::new(set(&self.consumers)?, set(&self.suppliers)?, self.clearing_gamma, self.eta, self.grid)
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Result<Self> {
        Self::new(self.consumers.clone(), self.suppliers.clone(), self.clearing_gamma, self.eta, grid)
    }
}

/// Price trajectory on the population's time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTrajectory {
    pub p: Vec<f64>,
}

impl PriceTrajectory {
    pub fn constant(value: f64, grid: &TimeGrid) -> Self {
        Self { p: vec![value; grid.len()] }
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        if self.p.len() != grid.len() {
            return Err(Error::Dimension(format!("price has {} nodes, grid has {}", self.p.len(), grid.len())));
        }
        if self.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("price trajectory must be finite".into()));
        }
        Ok(())
    }
}

/// `γ/N (Σ f_i(p_i) + η)` over consumers then suppliers, in list order.
pub fn clearing_price(pop: &GamePopulation, params: &[f64]) -> Result<f64> {
    if params.len() != pop.len() {
        return Err(Error::Dimension(format!("{} price parameters for {} agents", params.len(), pop.len())));
    }
    let sum: f64 = pop.agents().zip(params).map(|(a, &p)| a.pq.eval(p)).sum();
    Ok(pop.clearing_gamma / pop.len() as f64 * (sum + pop.eta))
}

/// An agent's LQ best response to a given price trajectory.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub sol: RiccatiSolution,
}

impl BestResponse {
    /// `u = -r⁻¹ Bᵀ (K_k x + S_k)`.
    pub fn control(&self, agent: &AgentSpec, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let (l, o) = self.sol.feedback(&agent.sys.b, k);
        l * x + o
    }
}

pub fn best_response(agent: &AgentSpec, price: &PriceTrajectory, grid: &TimeGrid) -> Result<BestResponse> {
    price.check(grid)?;
    let sol = solve_riccati_forced(&agent.sys, &agent.cost, grid, agent.forcing(&price.p))?;
    Ok(BestResponse { sol })
}

/// Mean of the agent's Euler-Maruyama closed loop from its declared `x0`:
/// `m_{k+1} = m_k + (A m_k + B u_k(m_k) + h_k) dt`.
pub fn expected_state(agent: &AgentSpec, response: &BestResponse, price: &PriceTrajectory, grid: &TimeGrid) -> Result<Vec<DVector<f64>>> {
    price.check(grid)?;
    if response.sol.grid != *grid {
        return Err(Error::InvalidParameter("best response was solved on a different grid".into()));
    }
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    let mut m = agent.x0.clone();
    for k in 0..grid.n_steps() {
        let u = response.control(agent, k, &m);
        let h = &agent.sys.h + &agent.h_price * price.p[k];
        let next = &m + (&agent.sys.a * &m + &agent.sys.b * u + h) * dt;
        out.push(std::mem::replace(&mut m, next));
    }
    out.push(m);
    Ok(out)
}

struct Round {
    price: PriceTrajectory,
    responses: Vec<BestResponse>,
    states: Vec<Vec<DVector<f64>>>,
}

fn t5_round(pop: &GamePopulation, price: &PriceTrajectory) -> Result<Round> {
    price.check(&pop.grid)?;
    let agents: Vec<&AgentSpec> = pop.agents().collect();
    let per: Vec<(BestResponse, Vec<DVector<f64>>)> = agents
        .par_iter()
        .map(|a| {
            let br = best_response(a, price, &pop.grid)?;
            let xs = expected_state(a, &br, price, &pop.grid)?;
            Ok((br, xs))
        })
        .collect::<Result<_>>()?;
    let mut params = vec![0.0; agents.len()];
    let mut next = Vec::with_capacity(pop.grid.len());
    for k in 0..pop.grid.len() {
        for (i, (a, (_, xs))) in agents.iter().zip(&per).enumerate() {
            params[i] = xs[k][a.price_index];
        }
        next.push(clearing_price(pop, &params)?);
    }
    let (responses, states) = per.into_iter().unzip();
    Ok(Round { price: PriceTrajectory { p: next }, responses, states })
}

/// One application of the fixed-point map.
pub fn apply_t5(pop: &GamePopulation, price: &PriceTrajectory) -> Result<PriceTrajectory> {
    Ok(t5_round(pop, price)?.price)
}

/// Left-hand side of the contraction condition on the T₅ map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub bound: f64,
    pub kappa: f64,
    pub decay: f64,
}

pub fn contraction_bound(pop: &GamePopulation) -> ContractionReport {
    let kappa = pop.stability.iter().map(|s| s.kappa).fold(0.0, f64::max);
    let decay = pop.stability.iter().map(|s| s.decay).fold(f64::INFINITY, f64::min);
    let n_c = pop.consumers.len();
    let class_term = |agents: &[AgentSpec], stab: &[AgentStability]| -> f64 {
        let norm2 = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values.max();
        let m_k = stab.iter().map(|s| s.k_norm_max).fold(0.0, f64::max);
        let m_h = agents.iter().map(|a| a.h_price.norm()).fold(0.0, f64::max);
        let m_d = agents.iter().map(|a| a.d_price.norm()).fold(0.0, f64::max);
        let lip = agents.iter().map(|a| a.pq.lipschitz()).fold(0.0, f64::max);
        let b2_over_r = agents.iter().map(|a| norm2(&a.sys.b).powi(2) / a.cost.r).fold(0.0, f64::max);
        agents.len() as f64 * lip * (b2_over_r * (m_k * m_h + m_d) / (decay * decay) + m_h / decay)
    };
    let sum = class_term(&pop.consumers, &pop.stability[..n_c]) + class_term(&pop.suppliers, &pop.stability[n_c..]);
    let bound = pop.clearing_gamma * (kappa * kappa / pop.len() as f64 * sum);
    ContractionReport { bound, kappa, decay }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub price: PriceTrajectory,
    pub responses: Vec<BestResponse>,
    /// Expected state of every agent (consumers then suppliers).
    pub states: Vec<Vec<DVector<f64>>>,
    /// Sup-norm change of each T₅ application.
    pub residuals: Vec<f64>,
}

impl Equilibrium {
    /// T₅ applications that changed the price by at least the tolerance;
    /// the final confirming application is not counted.
    pub fn iterations(&self) -> usize {
        self.residuals.len() - 1
    }

    /// Geometric mean of successive residual ratios, skipping the first
    /// step and residuals at round-off level.
    pub fn convergence_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self.residuals.iter().copied().skip(1).take_while(|&v| v > 1e-13).collect();
        if r.len() < 2 {
            return None;
        }
        Some((r[r.len() - 1] / r[0]).powf(1.0 / (r.len() - 1) as f64))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, pop: &GamePopulation) -> Result<()> {
        let mut header = vec!["t".to_string(), "p".to_string()];
        for (i, a) in pop.agents().enumerate() {
            let names: &[&str] = match a.kind {
                AgentKind::Consumer => &["d", "s", "p"],
                AgentKind::Supplier => &["s", "p"],
            };
            header.extend(names.iter().map(|n| format!("{}{}_{n}", if a.kind == AgentKind::Consumer { "c" } else { "s" }, i)));
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..pop.grid.len() {
            let mut row = vec![pop.grid.time(k).to_string(), self.price.p[k].to_string()];
            for xs in &self.states {
                row.extend(xs[k].iter().map(|v| v.to_string()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Iterates T₅ from `p_init` until the sup-norm change drops below `tol`.
pub fn solve_equilibrium(pop: &GamePopulation, p_init: &PriceTrajectory, tol: f64, max_iters: usize) -> Result<Equilibrium> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    let mut price = p_init.clone();
    let mut residuals = Vec::new();
    for _ in 0..=max_iters {
        let round = t5_round(pop, &price)?;
        let res = round.price.sup_distance(&price);
        residuals.push(res);
        if !res.is_finite() {
            break;
        }
        if res < tol {
            return Ok(Equilibrium { price: round.price, responses: round.responses, states: round.states, residuals });
        }
        price = round.price;
    }
    Err(Error::NoConvergence { iters: max_iters, residual: residuals.last().copied().unwrap_or(f64::NAN) })
}

/// Social cost estimates summed over agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocialCosts {
    pub j_social: f64,
    pub j_sp_social: f64,
    pub volatility_social: f64,
    pub per_agent: Vec<CostEstimate>,
}

/// Monte Carlo social costs under the equilibrium policies and price. Agent
/// `i` draws its noise from a stream keyed by `(seed, i)`, so with common
/// random numbers the draws do not depend on `r`.
pub fn social_costs(pop: &GamePopulation, eq: &Equilibrium, cfg: &SimConfig) -> Result<SocialCosts> {
    if cfg.grid != pop.grid {
        return Err(Error::InvalidParameter("simulation grid differs from the population grid".into()));
    }
    let mut per_agent = Vec::with_capacity(pop.len());
    for (i, (a, br)) in pop.agents().zip(&eq.responses).enumerate() {
        let base = cfg.rng_for(&a.sys, &a.cost).seed();
        let rng = CounterRng::new(hash_words([base, i as u64]));
        let policy = LinearFeedback::new(&br.sol, &a.sys.b);
        let sim = Simulator::new(&a.sys, &br.sol.forcing.h, &policy, pop.grid, rng)?;
        let d = &br.sol.forcing.d;
        let per = sim.map_paths(cfg.n_paths, a.x0.as_slice(), |t| path_costs(t, &a.cost.q, d))?;
        per_agent.push(summarize_costs(&per, a.cost.r)?);
    }
    Ok(SocialCosts {
        j_social: per_agent.iter().map(|c| c.total).sum(),
        j_sp_social: per_agent.iter().map(|c| c.state_penalizing).sum(),
        volatility_social: per_agent.iter().map(|c| c.volatility).sum(),
        per_agent,
    })
}

/// Parameters of the standard two-consumer, two-supplier market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardGame {
    pub rho: f64,
    pub beta: f64,
    pub sigma: f64,
    pub r: f64,
    pub n_consumers: usize,
    pub n_suppliers: usize,
    pub consumer_value: f64,
    /// Supplier production cost `a s² + b s`.
    pub supplier_c_quad: f64,
    pub supplier_c_lin: f64,
    /// Contract price at which both sides settle energy payments.
    pub reference_price: f64,
    pub clearing_gamma: f64,
    pub eta: f64,
    pub t_final: f64,
    pub dt: f64,
}

impl Default for StandardGame {
    fn default() -> Self {
        Self {
            rho: 0.05,
            beta: 75.0,
            sigma: 2.0,
            r: 1.0,
            n_consumers: 2,
            n_suppliers: 2,
            consumer_value: 60.0,
            supplier_c_quad: 0.5,
            supplier_c_lin: 25.0,
            reference_price: 50.0,
            clearing_gamma: 1.0,
            eta: 0.0,
            t_final: 50.0,
            dt: 0.05,
        }
    }
}

impl StandardGame {
    /// Consumer state `(d, s, p_d)`: demand reverting to `β - p`, delivered
    /// supply reverting to `p_d - p`, own price parameter driven by the
    /// control. Cost: quadratic fit of `-v min(d, s) + c_bo(s - d)` plus the
    /// payment `p̄ s` at the reference price. Supplier state `(s, p_s)`:
    /// supply reverting to `p - p_s`, cost `c(s) - p̄ s`.
    ///
    /// Settling at `p̄` rather than the spot price keeps the cost weights
    /// price-free. With spot settlement each agent's target moves with `p`
    /// and cheap control chases `dp/dt`, which makes T₅ expansive.
    pub fn build(&self) -> Result<GamePopulation> {
        let grid = TimeGrid::new(self.t_final, self.dt)?;
        let rho = self.rho;
        let base = NonlinearLoss { v: self.consumer_value, ..NonlinearLoss::default() };
        let sample_box = SampleBox::operating();
        let k = calibrate_blackout_coeff(&base, &sample_box, crate::market::DEFAULT_FIT_SAMPLES, 50.0, 50.0)?;
        let v = self.consumer_value;
        let consumer_loss = |x: &[f64]| -v * x[0].min(x[1]) + k * (x[0] - x[1]).max(0.0).powi(3);
        let fit = fit_quadratic(consumer_loss, &sample_box, crate::market::DEFAULT_FIT_SAMPLES)?;
        let mut consumer_d = fit.d.clone();
        consumer_d[1] += 0.5 * self.reference_price;

        let consumer = AgentSpec {
            kind: AgentKind::Consumer,
            sys: LinearSystem::new(
                DMatrix::from_row_slice(3, 3, &[-rho, 0.0, 0.0, 0.0, -rho, rho, 0.0, 0.0, 0.0]),
                DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
                DMatrix::from_diagonal(&DVector::from_column_slice(&[self.sigma, self.sigma, 0.0])),
                DVector::from_column_slice(&[rho * self.beta, 0.0, 0.0]),
            )?,
            h_price: DVector::from_column_slice(&[-rho, -rho, 0.0]),
            cost: QuadraticCost::new(fit.q, consumer_d, self.r)?,
            d_price: DVector::zeros(3),
            x0: DVector::from_column_slice(&[25.0, 25.0, 50.0]),
            price_index: 2,
            pq: PqGraph::default(),
        };
        let supplier = AgentSpec {
            kind: AgentKind::Supplier,
            sys: LinearSystem::new(
                DMatrix::from_row_slice(2, 2, &[-rho, -rho, 0.0, 0.0]),
                DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
                DMatrix::from_diagonal(&DVector::from_column_slice(&[self.sigma, 0.0])),
                DVector::zeros(2),
            )?,
            h_price: DVector::from_column_slice(&[rho, 0.0]),
            cost: QuadraticCost::new(
                DMatrix::from_row_slice(2, 2, &[self.supplier_c_quad, 0.0, 0.0, 0.0]),
                DVector::from_column_slice(&[0.5 * (self.supplier_c_lin - self.reference_price), 0.0]),
                self.r,
            )?,
            d_price: DVector::zeros(2),
            x0: DVector::from_column_slice(&[25.0, 50.0]),
            price_index: 1,
            pq: PqGraph::default(),
        };
        GamePopulation::new(
            vec![consumer; self.n_consumers],
            vec![supplier; self.n_suppliers],
            self.clearing_gamma,
            self.eta,
            grid,
        )
    }
}

/// One agent block of a population file. Matrices are row-major lists of
/// rows; the control is scalar so `b` is a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h0: Vec<f64>,
    pub h_price: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub d0: Vec<f64>,
    pub d_price: Vec<f64>,
    pub r: f64,
    pub x0: Vec<f64>,
    pub price_index: usize,
    #[serde(default)]
    pub pq: PqGraph,
}

/// Population file: clearing parameters, horizon and agent blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub clearing_gamma: f64,
    pub eta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub agents: Vec<AgentConfig>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a square list of rows")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl AgentConfig {
    pub fn to_spec(&self) -> Result<AgentSpec> {
        let sys = LinearSystem::new(
            matrix(&self.a, "a")?,
            DMatrix::from_column_slice(self.b.len(), 1, &self.b),
            matrix(&self.g, "g")?,
            DVector::from_column_slice(&self.h0),
        )?;
        let cost = QuadraticCost::new(matrix(&self.q, "q")?, DVector::from_column_slice(&self.d0), self.r)?;
        let spec = AgentSpec {
            kind: self.kind,
            sys,
            h_price: DVector::from_column_slice(&self.h_price),
            cost,
            d_price: DVector::from_column_slice(&self.d_price),
            x0: DVector::from_column_slice(&self.x0),
            price_index: self.price_index,
            pq: self.pq,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &AgentSpec) -> Self {
        Self {
            kind: spec.kind,
            a: rows(&spec.sys.a),
            b: spec.sys.b.column(0).iter().copied().collect(),
            g: rows(&spec.sys.g),
            h0: spec.sys.h.iter().copied().collect(),
            h_price: spec.h_price.iter().copied().collect(),
            q: rows(&spec.cost.q),
            d0: spec.cost.d.iter().copied().collect(),
            d_price: spec.d_price.iter().copied().collect(),
            r: spec.cost.r,
            x0: spec.x0.iter().copied().collect(),
            price_index: spec.price_index,
            pq: spec.pq,
        }
    }
}

impl PopulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_population(pop: &GamePopulation) -> Self {
        Self {
            clearing_gamma: pop.clearing_gamma,
            eta: pop.eta,
            t_final: pop.grid.t_final(),
            dt: pop.grid.dt(),
            agents: pop.agents().map(AgentConfig::from_spec).collect(),
        }
    }

    pub fn build(&self) -> Result<GamePopulation> {
        let grid = TimeGrid::new(self.t_final, self.dt)?;
        let mut consumers = Vec::new();
        let mut suppliers = Vec::new();
        for a in &self.agents {
            let spec = a.to_spec()?;
            match spec.kind {
                AgentKind::Consumer => consumers.push(spec),
                AgentKind::Supplier => suppliers.push(spec),
            }
        }
        GamePopulation::new(consumers, suppliers, self.clearing_gamma, self.eta, grid)
    }
}
