//! Monte Carlo against the closed-form and moment computations.

use nalgebra::{DMatrix, DVector};
use powermarket::game::{best_response, expected_state, PriceTrajectory, StandardGame};
use powermarket::market::MarketModel;
use powermarket::moments::closed_loop_moments;
use powermarket::rng::CounterRng;
use powermarket::sim::{monte_carlo_costs, simulate_closed_loop, LinearFeedback, SimConfig, Simulator};
use powermarket::{closed_form_cost, solve_riccati, LinearSystem, QuadraticCost, TimeGrid};

fn scalar() -> (LinearSystem, QuadraticCost, DVector<f64>) {
    let sys = LinearSystem::new(
        DMatrix::from_element(1, 1, -0.3),
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, 0.8),
        DVector::from_element(1, 0.5),
    )
    .unwrap();
    let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::from_element(1, 0.2), 1.0).unwrap();
    (sys, cost, DVector::from_element(1, 1.0))
}

fn z_score(sys: &LinearSystem, cost: &QuadraticCost, x0: &DVector<f64>, grid: TimeGrid, seed: u64) -> f64 {
    let sol = solve_riccati(sys, cost, &grid).unwrap();
    let exact = closed_form_cost(&sol, x0).unwrap();
    let cfg = SimConfig::new(grid, 10_000, seed).unwrap();
    let est = monte_carlo_costs(sys, cost, &sol, x0, &cfg).unwrap();
    (est.total - exact) / est.std_error.total
}

#[test]
fn scalar_cost_matches_closed_form() {
    let (sys, cost, x0) = scalar();
    let z = z_score(&sys, &cost, &x0, TimeGrid::new(2.0, 0.05).unwrap(), 11);
    assert!(z.abs() < 3.0, "z = {z}");
}

#[test]
fn market_cost_matches_closed_form() {
    let m = MarketModel::standard().unwrap();
    let z = z_score(&m.sys, &m.cost(1.0).unwrap(), &m.x0(), m.grid().unwrap(), 5);
    assert!(z.abs() < 3.0, "z = {z}");
}

#[test]
fn moment_mean_matches_sample_mean() {
    let (sys, cost, x0) = scalar();
    let grid = TimeGrid::new(2.0, 0.01).unwrap();
    let sol = solve_riccati(&sys, &cost, &grid).unwrap();
    let mom = closed_loop_moments(&sys, &cost, &sol, &x0).unwrap();
    let paths = simulate_closed_loop(&sys, &cost, &sol, &x0, &SimConfig::new(grid, 4000, 3).unwrap()).unwrap();
    let last = grid.n_steps();
    let xs: Vec<f64> = paths.iter().map(|t| t.state(last)[0]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - mom.mean[last][0]).abs() < 4.0 * se);
    assert!((var / mom.cov[last][(0, 0)] - 1.0).abs() < 0.1);
}

#[test]
fn game_expected_state_matches_simulation() {
    let pop = StandardGame { r: 1.0, ..StandardGame::default() }.build().unwrap();
    let price = PriceTrajectory { p: (0..pop.grid.len()).map(|k| 50.0 + 5.0 * (0.01 * k as f64).sin()).collect() };
    for agent in pop.agents() {
        let br = best_response(agent, &price, &pop.grid).unwrap();
        let mean = expected_state(agent, &br, &price, &pop.grid).unwrap();
        let policy = LinearFeedback::new(&br.sol, &agent.sys.b);
        let sim = Simulator::new(&agent.sys, &br.sol.forcing.h, &policy, pop.grid, CounterRng::new(9)).unwrap();
        let n_paths = 2000;
        let finals = sim.map_paths(n_paths, agent.x0.as_slice(), |t| t.state(pop.grid.n_steps()).to_vec()).unwrap();
        for i in 0..agent.x0.len() {
            let xs: Vec<f64> = finals.iter().map(|x| x[i]).collect();
            let m = xs.iter().sum::<f64>() / n_paths as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_paths - 1) as f64).sqrt();
            let target = mean.last().unwrap()[i];
            assert!((m - target).abs() <= 4.0 * sd / (n_paths as f64).sqrt() + 1e-9 * target.abs().max(1.0), "component {i}: {m} vs {target}");
        }
    }
}
