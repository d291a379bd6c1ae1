//! Assembly of the centralized market model: dynamics from the market
//! parameters, quadratic cost from a least-squares fit of the loss.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fit::{calibrate_blackout_coeff, fit_quadratic_cost, QuadraticFit, SampleBox};
use crate::model::{LinearSystem, MarketParams, NonlinearLoss, QuadraticCost, TimeGrid};

/// Samples used for the quadratic fit: a 22-point lattice per axis.
pub const DEFAULT_FIT_SAMPLES: usize = 22 * 22 * 22;

/// How the blackout coefficient of the fitted loss is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blackout {
    /// Use `NonlinearLoss::c_bo_coeff` as given.
    Fixed,
    /// Pick the coefficient for which the fitted cost prefers zero reserve at
    /// the operating point `d = s = 25`, `p = 50`.
    ZeroReserve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub params: MarketParams,
    pub loss: NonlinearLoss,
    pub fit: QuadraticFit,
    pub sys: LinearSystem,
}

impl MarketModel {
    pub fn new(params: MarketParams, loss: NonlinearLoss, blackout: Blackout, fit_samples: usize) -> Result<Self> {
        let sample_box = SampleBox::operating();
        let loss = match blackout {
            Blackout::Fixed => loss,
            Blackout::ZeroReserve => NonlinearLoss {
                c_bo_coeff: calibrate_blackout_coeff(&loss, &sample_box, fit_samples, 50.0, 50.0)?,
                ..loss
            },
        };
        let fit = fit_quadratic_cost(&loss, &sample_box, fit_samples)?;
        let sys = LinearSystem::centralized(&params);
        sys.check_centralized()?;
        Ok(Self { params, loss, fit, sys })
    }

    /// Default parameters with the zero-reserve blackout calibration.
    pub fn standard() -> Result<Self> {
        Self::new(MarketParams::default(), NonlinearLoss::default(), Blackout::ZeroReserve, DEFAULT_FIT_SAMPLES)
    }

    pub fn cost(&self, r: f64) -> Result<QuadraticCost> {
        QuadraticCost::new(self.fit.q.clone(), self.fit.d.clone(), r)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.params.grid()
    }

    pub fn x0(&self) -> DVector<f64> {
        self.params.x0.to_vector()
    }
}
