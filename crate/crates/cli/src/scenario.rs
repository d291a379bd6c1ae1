//! Scenario files: one TOML document with a section per model.

use std::path::{Path, PathBuf};

use powermarket::game::StandardGame;
use powermarket::hjb::HjbParams;
use powermarket::market::{Blackout, DEFAULT_FIT_SAMPLES};
use powermarket::sensitivity::logspace;
use powermarket::{MarketParams, MarketState, NonlinearLoss};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Centralized,
    Game,
    Hjb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// `dJ_sp/dr` over the sweep.
    Sensitivity,
    /// Normalized efficiency against volatility over the sweep.
    Tradeoff,
    /// Sample paths at a single `r`.
    Trajectory,
    /// Mean `|d - s|` over the sweep.
    Gap,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; the run writes into `<output>/<name>`. Not echoed
    /// in the manifest because it does not affect any result.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub centralized: CentralizedSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub game: GameSection,
    #[serde(default)]
    pub hjb: HjbSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    pub rho: f64,
    pub beta: f64,
    pub offset_gamma: f64,
    pub sigma: f64,
    pub t_final: f64,
    pub dt: f64,
    pub x0: [f64; 3],
}

impl Default for MarketSection {
    fn default() -> Self {
        let p = MarketParams::default();
        Self { rho: p.rho, beta: p.beta, offset_gamma: p.offset_gamma, sigma: p.sigma, t_final: p.t_final, dt: p.dt, x0: [p.x0.d, p.x0.s, p.x0.p] }
    }
}

impl MarketSection {
    pub fn params(&self) -> MarketParams {
        MarketParams {
            rho: self.rho,
            beta: self.beta,
            offset_gamma: self.offset_gamma,
            sigma: self.sigma,
            t_final: self.t_final,
            dt: self.dt,
            x0: MarketState { d: self.x0[0], s: self.x0[1], p: self.x0[2] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub v: f64,
    pub c_quad: f64,
    pub c_lin: f64,
    pub c_bo_coeff: f64,
    /// `zero_reserve` recalibrates `c_bo_coeff` for the quadratic fit.
    pub blackout: Blackout,
    pub fit_samples: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = NonlinearLoss::default();
        Self { v: l.v, c_quad: l.c_quad, c_lin: l.c_lin, c_bo_coeff: l.c_bo_coeff, blackout: Blackout::ZeroReserve, fit_samples: DEFAULT_FIT_SAMPLES }
    }
}

impl LossSection {
    pub fn loss(&self) -> NonlinearLoss {
        NonlinearLoss { v: self.v, c_quad: self.c_quad, c_lin: self.c_lin, c_bo_coeff: self.c_bo_coeff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CentralizedSection {
    pub analysis: Analysis,
    /// Volatility coefficient for `trajectory`.
    pub r: f64,
}

impl Default for CentralizedSection {
    fn default() -> Self {
        Self { analysis: Analysis::Sensitivity, r: 1.0 }
    }
}

/// Values of `r` to sweep: an explicit list or a log-spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl Sweep {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        if self.variable != "r" {
            return Err(CliError::Invalid(format!("sweep variable `{}` is not supported (only `r`)", self.variable)));
        }
        let values = match (&self.values, self.log_from, self.log_to, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(n)) => {
                if !(lo > 0.0 && hi >= lo) {
                    return Err(CliError::Invalid(format!("log range needs 0 < log_from <= log_to, got {lo}..{hi}")));
                }
                logspace(lo, hi, n)
            }
            _ => return Err(CliError::Invalid("sweep needs either `values` or all of `log_from`, `log_to`, `points`".into())),
        };
        if values.is_empty() {
            return Err(CliError::Invalid("sweep has no values".into()));
        }
        if values.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(CliError::Invalid("sweep values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::Invalid("sweep values must be sorted ascending".into()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_paths: usize,
    pub common_random_numbers: bool,
    /// Sample paths written out by `trajectory`.
    pub export_paths: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { n_paths: 1000, common_random_numbers: true, export_paths: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameSection {
    pub r: f64,
    pub rho: f64,
    pub beta: f64,
    pub sigma: f64,
    pub n_consumers: usize,
    pub n_suppliers: usize,
    pub consumer_value: f64,
    pub supplier_c_quad: f64,
    pub supplier_c_lin: f64,
    pub reference_price: f64,
    pub clearing_gamma: f64,
    pub eta: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Population file replacing the standard agents (relative to the scenario file).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    pub initial_price: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for GameSection {
    fn default() -> Self {
        let g = StandardGame::default();
        Self {
            r: g.r,
            rho: g.rho,
            beta: g.beta,
            sigma: g.sigma,
            n_consumers: g.n_consumers,
            n_suppliers: g.n_suppliers,
            consumer_value: g.consumer_value,
            supplier_c_quad: g.supplier_c_quad,
            supplier_c_lin: g.supplier_c_lin,
            reference_price: g.reference_price,
            clearing_gamma: g.clearing_gamma,
            eta: g.eta,
            t_final: g.t_final,
            dt: g.dt,
            population: None,
            initial_price: 50.0,
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl GameSection {
    pub fn standard(&self, r: f64) -> StandardGame {
        StandardGame {
            rho: self.rho,
            beta: self.beta,
            sigma: self.sigma,
            r,
            n_consumers: self.n_consumers,
            n_suppliers: self.n_suppliers,
            consumer_value: self.consumer_value,
            supplier_c_quad: self.supplier_c_quad,
            supplier_c_lin: self.supplier_c_lin,
            reference_price: self.reference_price,
            clearing_gamma: self.clearing_gamma,
            eta: self.eta,
            t_final: self.t_final,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbSection {
    pub nodes: usize,
    pub t_final: f64,
    pub dt: f64,
    pub sigma_d: f64,
    pub sigma_s: f64,
    pub epsilon: f64,
    pub u_max: f64,
    pub rollout_paths: usize,
    pub probes: Vec<[f64; 3]>,
}

impl Default for HjbSection {
    fn default() -> Self {
        let p = HjbParams::default();
        Self {
            nodes: 16,
            t_final: 10.0,
            dt: 0.05,
            sigma_d: p.sigma_d,
            sigma_s: p.sigma_s,
            epsilon: p.epsilon,
            u_max: p.u_max,
            rollout_paths: 1000,
            probes: vec![[25.0, 25.0, 50.0], [30.0, 20.0, 50.0], [20.0, 30.0, 50.0], [25.0, 25.0, 40.0], [25.0, 25.0, 60.0]],
        }
    }
}

impl HjbSection {
    pub fn params(&self) -> HjbParams {
        HjbParams { sigma_d: self.sigma_d, sigma_s: self.sigma_s, epsilon: self.epsilon, u_max: self.u_max }
    }
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut sc: Self = toml::from_str(text).map_err(|e| CliError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        // Population files are resolved relative to the scenario file.
        if let (Some(pop), Some(dir)) = (&sc.game.population, origin.parent()) {
            if pop.is_relative() && !dir.as_os_str().is_empty() {
                sc.game.population = Some(dir.join(pop));
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_toml(&text, path)
    }

    /// Sweep values, or the single `r` of the model section when no sweep is given.
    pub fn r_values(&self) -> Result<Vec<f64>> {
        match &self.sweep {
            Some(s) => s.resolve(),
            None => Ok(vec![match self.model {
                ModelKind::Game => self.game.r,
                _ => self.centralized.r,
            }]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(CliError::Invalid(format!("name `{}` must be non-empty [A-Za-z0-9_-]", self.name)));
        }
        self.r_values()?;
        let needs_sweep = self.model == ModelKind::Centralized && self.centralized.analysis != Analysis::Trajectory;
        if needs_sweep && self.sweep.is_none() {
            return Err(CliError::Invalid(format!("{:?} analysis needs a [sweep] section", self.centralized.analysis).to_lowercase()));
        }
        if self.model == ModelKind::Centralized && self.centralized.analysis == Analysis::Trajectory && self.sweep.is_some() {
            return Err(CliError::Invalid("trajectory runs at the single centralized.r; remove [sweep]".into()));
        }
        if self.model == ModelKind::Hjb && self.sweep.is_some() {
            return Err(CliError::Invalid("hjb scenarios take no sweep".into()));
        }
        if self.sim.n_paths == 0 {
            return Err(CliError::Invalid("sim.n_paths must be >= 1".into()));
        }
        if self.sim.export_paths > self.sim.n_paths {
            return Err(CliError::Invalid("sim.export_paths exceeds sim.n_paths".into()));
        }
        if self.model == ModelKind::Hjb && (self.hjb.rollout_paths == 0 || self.hjb.probes.is_empty()) {
            return Err(CliError::Invalid("hjb needs rollout_paths >= 1 and at least one probe".into()));
        }
        Ok(())
    }
}
