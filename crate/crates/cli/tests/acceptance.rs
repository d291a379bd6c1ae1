//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use powermarket::market::MarketModel;
use powermarket::sensitivity::{solve_dk_dgamma, solve_ds_dgamma};
use powermarket::sim::{monte_carlo_costs, SimConfig};
use powermarket::{closed_form_cost, solve_riccati, LinearSystem, QuadraticCost, TimeGrid};
use powermarket_cli::builtins::BUILTINS;

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-3;
const TANH_TOL: f64 = 1e-8;
const MC_PATHS: usize = 10_000;
const MC_SIGMAS: f64 = 3.0;
const VOL_RATIO: f64 = 10.0;
const BANG_FRACTION: f64 = 0.98;
const ROLLOUT_TOL: f64 = 0.10;
const GAME_TOL: f64 = 1e-8;
const GAME_MAX_ITERS: usize = 200;
const RATIO_SLACK: f64 = 0.05;
const FIG1_BUDGET: Duration = Duration::from_secs(60);
const HJB_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Self {
        let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
        let rows = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
            .collect();
        Self { header, rows }
    }

    fn col(&self, name: &str) -> Vec<f64> {
        let i = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[i]).collect()
    }
}

struct Run {
    dir: PathBuf,
    elapsed: Duration,
}

fn market_sim(scenario: &str, out: &Path, threads: usize) -> Run {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_market-sim"))
        .args(["run", scenario, "--threads", &threads.to_string(), "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("spawn market-sim");
    assert!(status.success(), "market-sim run {scenario} failed");
    let name = Path::new(scenario).file_stem().unwrap().to_string_lossy().into_owned();
    Run { dir: out.join(name), elapsed: start.elapsed() }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn fd_errors(sys: &LinearSystem, cost: &QuadraticCost, grid: &TimeGrid) -> (f64, f64) {
    let gamma = 1.0 / cost.r;
    let sol = solve_riccati(sys, cost, grid).unwrap();
    let dk = solve_dk_dgamma(&sol, sys, cost, gamma).unwrap();
    let ds = solve_ds_dgamma(&sol, &dk, sys, cost, gamma).unwrap();
    let plus = solve_riccati(sys, &cost.with_r(1.0 / (gamma + FD_STEP)).unwrap(), grid).unwrap();
    let minus = solve_riccati(sys, &cost.with_r(1.0 / (gamma - FD_STEP)).unwrap(), grid).unwrap();
    let k_scale = plus.k.iter().zip(&minus.k).map(|(p, m)| ((p - m) / (2.0 * FD_STEP)).norm()).fold(0.0, f64::max);
    let s_scale = plus.s.iter().zip(&minus.s).map(|(p, m)| ((p - m) / (2.0 * FD_STEP)).norm()).fold(0.0, f64::max);
    let ek = dk
        .iter()
        .zip(plus.k.iter().zip(&minus.k))
        .map(|(a, (p, m))| (a - (p - m) / (2.0 * FD_STEP)).norm())
        .fold(0.0, f64::max);
    let es = ds
        .iter()
        .zip(plus.s.iter().zip(&minus.s))
        .map(|(a, (p, m))| (a - (p - m) / (2.0 * FD_STEP)).norm())
        .fold(0.0, f64::max);
    (ek / k_scale, es / s_scale)
}

fn scalar_system(a: f64, g: f64, h: f64) -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, g),
        DVector::from_element(1, h),
    )
    .unwrap()
}

fn scalar_cost(d: f64) -> QuadraticCost {
    QuadraticCost::new(DMatrix::identity(1, 1), DVector::from_element(1, d), 1.0).unwrap()
}

fn criterion_1(run: &Run) -> Outcome {
    let t = Table::read(&run.dir.join("sensitivity.csv"));
    let d = t.col("djsp_dr");
    let detail = format!("{} points, min {:.4e}, single-thread {:.2?}", d.len(), d.iter().cloned().fold(f64::INFINITY, f64::min), run.elapsed);
    if d.len() != 20 {
        return Err(format!("expected 20 points, got {}", d.len()));
    }
    if !d.iter().all(|&x| x > 0.0) {
        return Err(format!("non-positive derivative; {detail}"));
    }
    if !strictly_decreasing(&d) {
        return Err(format!("not strictly decreasing; {detail}"));
    }
    if run.elapsed >= FIG1_BUDGET {
        return Err(format!("over time budget; {detail}"));
    }
    Ok(detail)
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let scalar = scalar_system(0.0, 1.0, 1.0);
    let (ek, es) = fd_errors(&scalar, &scalar_cost(0.5), &TimeGrid::new(1.0, 1e-3).unwrap());
    worst = worst.max(ek).max(es);
    let model = MarketModel::standard().unwrap();
    let grid = model.grid().unwrap();
    for r in [0.1, 1.0, 10.0] {
        let (ek, es) = fd_errors(&model.sys, &model.cost(r).unwrap(), &grid);
        worst = worst.max(ek).max(es);
    }
    let detail = format!("worst relative error {worst:.3e}");
    if worst <= FD_TOL { Ok(detail) } else { Err(detail) }
}

fn criterion_3() -> Outcome {
    let sys = scalar_system(0.0, 0.0, 0.0);
    let cost = scalar_cost(0.0);
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let sol = solve_riccati(&sys, &cost, &grid).unwrap();
    let err = grid.times().zip(&sol.k).map(|(t, k)| (k[(0, 0)] - (1.0 - t).tanh()).abs()).fold(0.0, f64::max);
    let detail = format!("max |K - tanh| = {err:.3e}");
    if err <= TANH_TOL { Ok(detail) } else { Err(detail) }
}

fn criterion_4() -> Outcome {
    let z = |sys: &LinearSystem, cost: &QuadraticCost, x0: &DVector<f64>, grid: TimeGrid| {
        let sol = solve_riccati(sys, cost, &grid).unwrap();
        let exact = closed_form_cost(&sol, x0).unwrap();
        let est = monte_carlo_costs(sys, cost, &sol, x0, &SimConfig::new(grid, MC_PATHS, 42).unwrap()).unwrap();
        (est.total - exact) / est.std_error.total
    };
    let zs = z(&scalar_system(-0.3, 0.8, 0.5), &scalar_cost(0.2), &DVector::from_element(1, 1.0), TimeGrid::new(2.0, 0.05).unwrap());
    let model = MarketModel::standard().unwrap();
    let zm = z(&model.sys, &model.cost(1.0).unwrap(), &model.x0(), model.grid().unwrap());
    let detail = format!("z scalar {zs:.2}, z market {zm:.2}");
    if zs.abs() <= MC_SIGMAS && zm.abs() <= MC_SIGMAS { Ok(detail) } else { Err(detail) }
}

fn criterion_5(run: &Run) -> Outcome {
    let t = Table::read(&run.dir.join("tradeoff.csv"));
    let vol = t.col("volatility_norm");
    let eff = t.col("efficiency_norm");
    let mut pts: Vec<(f64, f64)> = vol.into_iter().zip(eff).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ok = pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
    let detail = format!("{} points", pts.len());
    if ok && pts.len() == 20 { Ok(detail) } else { Err(format!("efficiency not strictly increasing in volatility; {detail}")) }
}

fn criterion_6(run: &Run) -> Outcome {
    let t = Table::read(&run.dir.join("gap.csv"));
    let r = t.col("r");
    let gap = t.col("mean_abs_gap");
    let detail = format!("gaps {:?}", gap.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>());
    if r == [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] && non_decreasing(&gap) { Ok(detail) } else { Err(detail) }
}

fn criterion_7(low: &Run, high: &Run) -> Outcome {
    let a = Table::read(&low.dir.join("summary.csv")).col("price_increment_variance")[0];
    let b = Table::read(&high.dir.join("summary.csv")).col("price_increment_variance")[0];
    let detail = format!("variance ratio {:.3e}", a / b);
    if a >= VOL_RATIO * b { Ok(detail) } else { Err(detail) }
}

fn criterion_8(run: &Run) -> Outcome {
    let summary = Table::read(&run.dir.join("summary.csv"));
    let fraction = summary.col("bang_bang_fraction")[0];
    let gaps = Table::read(&run.dir.join("probes.csv")).col("rel_gap");
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let within = gaps.iter().filter(|&&g| g <= ROLLOUT_TOL).count();
    let detail = format!(
        "bang-bang fraction {fraction:.4}, {within}/{} probes within {:.0}% (worst {:.1}%), {:.2?}",
        gaps.len(),
        ROLLOUT_TOL * 100.0,
        worst * 100.0,
        run.elapsed
    );
    if fraction >= BANG_FRACTION && gaps.len() == 5 && within == gaps.len() && run.elapsed < HJB_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9(run: &Run) -> Outcome {
    let social = Table::read(&run.dir.join("social.csv"));
    let mut notes = Vec::new();
    let mut ok = true;
    for (i, row) in social.rows.iter().enumerate() {
        let (r, iters, ratio, bound) = (row[0], row[1] as usize, row[2], row[3]);
        let residuals = Table::read(&run.dir.join(format!("residuals_{i}.csv"))).col("sup_change");
        let last = residuals.last().copied().unwrap_or(f64::NAN);
        let ratio_ok = bound >= 1.0 || ratio <= bound + RATIO_SLACK;
        ok &= last < GAME_TOL && iters <= GAME_MAX_ITERS && ratio_ok;
        notes.push(format!("r={r}: {iters} it, residual {last:.1e}, ratio {ratio:.3}, bound {bound:.3e}"));
    }
    let detail = notes.join("; ");
    if ok && social.rows.len() == 3 { Ok(detail) } else { Err(detail) }
}

fn criterion_10(run: &Run) -> Outcome {
    let social = Table::read(&run.dir.join("social.csv"));
    let jsp = social.col("j_sp_social");
    let detail = format!("J_sp_social {:?}", jsp.iter().map(|j| format!("{j:.1}")).collect::<Vec<_>>());
    if social.col("r") == [0.005, 1.0, 100.0] && non_decreasing(&jsp) { Ok(detail) } else { Err(detail) }
}

fn criterion_11(first: &BTreeMap<String, Run>, second: &BTreeMap<String, Run>, single: &BTreeMap<String, Run>) -> Outcome {
    let mut bad = Vec::new();
    for (name, run) in first {
        let a = dir_bytes(&run.dir);
        if a.is_empty() || a != dir_bytes(&second[name].dir) {
            bad.push(format!("{name} (repeat)"));
        }
        if let Some(s) = single.get(name) {
            if a != dir_bytes(&s.dir) {
                bad.push(format!("{name} (thread count)"));
            }
        }
    }
    let detail = format!("{} scenarios twice on 4 threads, {} also on 1 thread", first.len(), single.len());
    if bad.is_empty() { Ok(detail) } else { Err(format!("differs: {}", bad.join(", "))) }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    let mut single = BTreeMap::new();
    for (name, _) in BUILTINS {
        first.insert(name.to_string(), market_sim(name, &tmp.path().join("a"), 4));
        second.insert(name.to_string(), market_sim(name, &tmp.path().join("b"), 4));
    }
    for name in ["fig1", "fig7", "game_r100", "hjb_demo"] {
        single.insert(name.to_string(), market_sim(name, &tmp.path().join("c"), 1));
    }

    let game_file = tmp.path().join("game_sweep.toml");
    std::fs::write(
        &game_file,
        "name = \"game_sweep\"\nmodel = \"game\"\n\n[sweep]\nvariable = \"r\"\nvalues = [0.005, 1.0, 100.0]\n\n[sim]\ncommon_random_numbers = true\n",
    )
    .unwrap();
    let game = market_sim(game_file.to_str().unwrap(), &tmp.path().join("g"), 4);

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "state-penalizing sensitivity positive and decreasing in r", criterion_1(&single["fig1"])),
        (2, "gamma tangents match central differences", criterion_2()),
        (3, "scalar Riccati matches tanh", criterion_3()),
        (4, "closed-form cost matches Monte Carlo", criterion_4()),
        (5, "efficiency-volatility trade-off monotone", criterion_5(&first["fig2"])),
        (6, "mean demand-supply gap non-decreasing in r", criterion_6(&first["fig7"])),
        (7, "price increment variance drops with r", criterion_7(&first["fig3_r001"], &first["fig4_r1000"])),
        (8, "HJB bang-bang policy and rollout agreement", criterion_8(&first["hjb_demo"])),
        (9, "game price iteration converges", criterion_9(&game)),
        (10, "equilibrium social state-penalizing cost non-decreasing in r", criterion_10(&game)),
        (11, "CLI output byte-identical across runs", criterion_11(&first, &second, &single)),
    ];

    let mut failed = 0;
    for (n, title, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n:>2}: PASS  {title}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {title}: {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
