//! Stochastic optimal control of power markets with friction.
//!
//! Riccati-based LQ control of the (demand, supply, price) model, Monte
//! Carlo simulation, the efficiency-volatility sensitivity system, a
//! bang-bang HJB solver and the price fixed point of the consumer/supplier
//! dynamic game.

pub mod error;
pub mod fit;
pub mod game;
pub mod hjb;
pub mod market;
pub mod model;
pub mod moments;
pub mod riccati;
pub mod rng;
pub mod sensitivity;
pub mod sim;

pub use error::{Error, Result};
pub use fit::{fit_quadratic, fit_quadratic_cost, QuadraticFit, SampleBox};
pub use model::{LinearSystem, MarketParams, MarketState, NonlinearLoss, QuadraticCost, TimeGrid};
pub use riccati::{closed_form_cost, optimal_control, solve_riccati, solve_riccati_forced, Forcing, RiccatiSolution};
