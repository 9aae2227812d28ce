//! The subcommands. Each one loads its inputs, delegates to `gnep-core` and
//! writes its documents through a [`Sink`].

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gnep_core::kkt::KktResidual;
use gnep_core::oracles::{self, HarkerBranch};
use gnep_core::racing::{draw_initial_conditions, run_pair, McDraw, McRun, RaceError};
use gnep_core::selector::{grid_points, select_from_grid, Phase, SelectionResult};
use gnep_core::{
    assemble_scaled, simulate_closed_loop, solve, sweep, FactorAssignment, FactorFamily, GameSpec, GneSolution, Mcp,
    McConfig, McSummary, Objective, SelectionProblem, SolverOptions, SweepOptions,
};
use serde_json::{json, Value};

use crate::manifest::{fmt_f64, CsvTable, RunManifest, Sink};
use crate::scenario::{grid_values, ObjectiveChoice, RuleChoice, Scenario};
use crate::CliError;

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<Vec<f64>>,
    pub rule: Option<RuleChoice>,
    pub grid: Option<(f64, f64, f64)>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub tol: Option<f64>,
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError::Input(e.to_string()))
}

fn solver_options(scenario: &Scenario, ov: &Overrides) -> Result<SolverOptions, CliError> {
    let mut s = scenario.solver.clone();
    if let Some(t) = ov.tol {
        s.tol = t;
    }
    s.validate().map_err(|_| CliError::Input("--tol must be positive".into()))?;
    Ok(s)
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn residual_json(r: &KktResidual) -> Value {
    json!({
        "stationarity": r.stationarity,
        "primal": r.primal,
        "dual": r.dual,
        "complementarity": r.complementarity,
        "overall": r.overall,
    })
}

fn solution_json(s: &GneSolution) -> Value {
    json!({
        "x": s.x,
        "mu": s.mu,
        "lambda": s.lambda,
        "sigma": s.sigma,
        "effective_sigma": s.effective_sigma,
        "costs": s.costs,
        "residual": residual_json(&s.residual),
        "unscaled_residual": residual_json(&s.unscaled_residual),
    })
}

/// Factor assignment from a rule and its free parameters. A single value is
/// repeated when the rule needs several.
fn factors_for(game: &GameSpec, rule: RuleChoice, alpha: Option<&[f64]>) -> Result<FactorAssignment, CliError> {
    let (m, m0) = (game.num_players(), game.num_shared());
    let Some(r) = rule.factor_rule() else {
        return Ok(FactorAssignment::identity(m, m0));
    };
    let need = r.free_param_count(m, m0);
    let given = alpha.ok_or_else(|| CliError::Input(format!("rule {} needs --alpha with {need} value(s)", rule.name())))?;
    let params: Vec<f64> = match given.len() {
        n if n == need => given.to_vec(),
        1 => vec![given[0]; need],
        n => return Err(CliError::Input(format!("rule {} needs {need} alpha value(s), got {n}", rule.name()))),
    };
    gnep_core::make_factors(m, m0, r, &params).map_err(|e| CliError::Input(e.to_string()))
}

fn effective_rule(scenario: &Scenario, ov: &Overrides) -> RuleChoice {
    ov.rule.or(scenario.rule).unwrap_or(if ov.alpha.is_some() || scenario.alpha.is_some() {
        RuleChoice::FirstIdentity
    } else {
        RuleChoice::Normalized
    })
}

/// Full MCP starting points: the default one, then every scenario start with
/// the default multipliers.
fn starts(mcp: &dyn Mcp, scenario: &Scenario) -> Vec<Vec<f64>> {
    let base = mcp.default_start();
    let mut out = vec![base.clone()];
    for x in &scenario.starts {
        let mut z = base.clone();
        z[..x.len()].copy_from_slice(x);
        out.push(z);
    }
    out
}

pub fn cmd_solve(path: &Path, ov: &Overrides) -> Result<(), CliError> {
    let scenario = load(path)?;
    let game = scenario.require_game().map_err(|e| CliError::Input(e.to_string()))?;
    let solver = solver_options(&scenario, ov)?;
    let rule = effective_rule(&scenario, ov);
    let alpha = ov.alpha.clone().or_else(|| scenario.alpha.clone());
    let factors = factors_for(game, rule, alpha.as_deref())?;

    let mut manifest = RunManifest::new("solve", 0).with_scenario(path, &scenario.source);
    manifest.option("rule", rule.name());
    manifest.option("alpha", alpha.as_deref().map_or(String::new(), list));
    manifest.option("tol", solver.tol);
    let sink = Sink::new(ov.out.clone(), manifest)?;

    let mcp = assemble_scaled(game, &factors).map_err(|e| CliError::Input(e.to_string()))?;
    let mut found: Vec<(usize, usize, GneSolution)> = Vec::new();
    let mut statuses = Vec::new();
    for (k, z0) in starts(&mcp, &scenario).iter().enumerate() {
        let report = solve(&mcp, &solver, Some(z0)).map_err(|e| CliError::Numerical(e.to_string()))?;
        log::debug!("start {k}: {} after {} iterations", report.status.name(), report.iterations);
        statuses.push(report.status.name());
        if !report.converged() {
            continue;
        }
        let sol = GneSolution::from_scaled(game, &factors, &report.z).map_err(|e| CliError::Numerical(e.to_string()))?;
        if found.iter().all(|(_, _, s)| gnep_core::mcp::distinct_points(&s.z, &sol.z)) {
            found.push((k, report.iterations, sol));
        }
    }
    let candidates: Vec<Value> = found
        .iter()
        .map(|(k, it, s)| {
            let mut v = solution_json(s);
            v["start"] = json!(k);
            v["iterations"] = json!(it);
            v
        })
        .collect();
    let factor_rows: Vec<Vec<f64>> = (0..factors.num_players()).map(|i| factors.diagonal(i).to_vec()).collect();
    sink.json(
        "solution.json",
        json!({
            "scenario": scenario.name,
            "rule": rule.name(),
            "alpha": alpha,
            "factors": factor_rows,
            "converged": !found.is_empty(),
            "start_status": statuses,
            "candidates": candidates,
        }),
    )?;
    sink.finish()?;
    if found.is_empty() {
        return Err(CliError::Numerical("no start converged".into()));
    }
    Ok(())
}

/// One-parameter family of a sweep or selection. Sum-to-one moves the pair
/// named by `split`, first-identity the factor of `player`.
fn sweep_family(game: &GameSpec, rule: RuleChoice, scenario: &Scenario) -> Result<FactorFamily, CliError> {
    let (player, (first, second)) = (scenario.sweep_player, scenario.sweep_split);
    if player >= game.num_players() || first.max(second) >= game.num_players() {
        return Err(CliError::Input("sweep players are out of range for this game".into()));
    }
    match rule {
        RuleChoice::SumToOne => Ok(FactorFamily::Split { first, second }),
        RuleChoice::FirstIdentity if player == 0 => {
            Err(CliError::Input("the first player's factor is fixed under first-identity".into()))
        }
        RuleChoice::FirstIdentity => Ok(FactorFamily::Scale { player }),
        RuleChoice::Normalized => Err(CliError::Input("sweeps need --rule first-identity or sum-to-one".into())),
    }
}

pub fn cmd_sweep(path: &Path, ov: &Overrides) -> Result<(), CliError> {
    let scenario = load(path)?;
    let game = scenario.require_game().map_err(|e| CliError::Input(e.to_string()))?;
    let solver = solver_options(&scenario, ov)?;
    let rule = ov.rule.or(scenario.rule).unwrap_or(RuleChoice::FirstIdentity);
    let family = sweep_family(game, rule, &scenario)?;
    let grid_spec = ov.grid.or(scenario.grid).ok_or_else(|| CliError::Input("sweep needs --grid lo:hi:step".into()))?;
    let grid = grid_values(grid_spec);

    let mut manifest = RunManifest::new("sweep", 0).with_scenario(path, &scenario.source);
    manifest.option("rule", rule.name());
    manifest.option("grid", format!("{}:{}:{}", grid_spec.0, grid_spec.1, grid_spec.2));
    manifest.option("player", scenario.sweep_player + 1);
    manifest.option("split", format!("{}:{}", scenario.sweep_split.0 + 1, scenario.sweep_split.1 + 1));
    manifest.option("tol", solver.tol);
    let sink = Sink::new(ov.out.clone(), manifest)?;

    let mut options = SweepOptions { solver, ..SweepOptions::default() };
    if let Some(j) = scenario.jump_factor {
        options.jump_factor = j;
    }
    let result = sweep(game, family, &grid, &options).map_err(|e| CliError::Input(e.to_string()))?;

    let (n, m0, m) = (game.dim(), game.num_shared(), game.num_players());
    let mut header = vec!["alpha".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    header.extend((1..=m0).map(|k| format!("sigma{k}")));
    header.extend((1..=m).map(|k| format!("J{k}")));
    header.extend(["status", "iterations", "jump", "alternate"].map(String::from));
    let mut table = CsvTable::new(header);
    for p in &result.points {
        let mut row = vec![fmt_f64(p.alpha)];
        match &p.solution {
            Some(s) => {
                row.extend(s.x.iter().chain(&s.sigma).chain(&s.costs).map(|&v| fmt_f64(v)));
            }
            None => row.extend(std::iter::repeat_n(fmt_f64(f64::NAN), n + m0 + m)),
        }
        row.push(p.status.name().to_string());
        row.push(p.iterations.to_string());
        row.push(u8::from(p.jump).to_string());
        row.push(u8::from(p.alternate.is_some()).to_string());
        table.push(row);
    }
    sink.csv("sweep.csv", &table)?;
    sink.finish()?;
    if result.points.iter().all(|p| !p.converged()) {
        return Err(CliError::Numerical("no grid point converged".into()));
    }
    Ok(())
}

pub fn cmd_select(path: &Path, ov: &Overrides) -> Result<(), CliError> {
    let scenario = load(path)?;
    let game = scenario.require_game().map_err(|e| CliError::Input(e.to_string()))?;
    let solver = solver_options(&scenario, ov)?;
    let rule = ov.rule.or(scenario.rule).unwrap_or(RuleChoice::FirstIdentity);
    let family = sweep_family(game, rule, &scenario)?;
    let objective = match scenario.select.objective {
        ObjectiveChoice::Sum => Objective::SumOfCosts,
        ObjectiveChoice::Player(i) => Objective::Player(i),
    };
    let mut problem = SelectionProblem::new(game, family, objective);
    if let Some(l) = scenario.select.lower {
        problem.lower = vec![l];
    }
    if let Some(u) = scenario.select.upper {
        problem.upper = vec![u];
    }
    if let Some(g) = scenario.select.grid_points {
        problem.grid_points = g;
    }
    if let Some(r) = scenario.select.refine_iters {
        problem.refine_iters = r;
    }
    problem.solver = solver.clone();
    let mcp = assemble_scaled(game, &FactorAssignment::identity(game.num_players(), game.num_shared()))
        .map_err(|e| CliError::Input(e.to_string()))?;
    if !scenario.starts.is_empty() {
        problem.starts = starts(&mcp, &scenario);
    }

    let mut manifest = RunManifest::new("select", 0).with_scenario(path, &scenario.source);
    manifest.option("rule", rule.name());
    manifest.option("objective", format!("{:?}", scenario.select.objective));
    manifest.option("box", format!("{}:{}", problem.lower[0], problem.upper[0]));
    manifest.option("grid_points", problem.grid_points);
    manifest.option("refine_iters", problem.refine_iters);
    manifest.option("tol", solver.tol);
    let sink = Sink::new(ov.out.clone(), manifest)?;

    let result = run_selection(&problem, ov.parallel.unwrap_or(1))?;
    let m = game.num_players();
    let mut header = vec!["phase".to_string(), "alpha".to_string(), "J0".to_string()];
    header.extend((1..=m).map(|k| format!("J{k}")));
    header.extend(["basins", "note"].map(String::from));
    let mut table = CsvTable::new(header);
    for e in &result.trace {
        let mut row = vec![e.phase.name().to_string(), fmt_f64(e.params[0]), fmt_f64(e.j0.unwrap_or(f64::NAN))];
        if e.costs.len() == m {
            row.extend(e.costs.iter().map(|&v| fmt_f64(v)));
        } else {
            row.extend(std::iter::repeat_n(fmt_f64(f64::NAN), m));
        }
        row.push(e.basins.to_string());
        row.push(e.note.replace(',', ";"));
        table.push(row);
    }
    sink.csv("select_trace.csv", &table)?;
    let limit = result.limit.as_ref().map(|l| json!({ "alpha": l.params, "x": l.x, "J0": l.j0 }));
    sink.json(
        "selection.json",
        json!({
            "scenario": scenario.name,
            "rule": rule.name(),
            "alpha": result.params,
            "J0": result.j0,
            "boundary": result.boundary,
            "boundary_limit": limit,
            "solution": solution_json(&result.solution),
            "evaluations": result.trace.len(),
        }),
    )?;
    sink.finish()
}

/// Selection with the grid phase spread over `threads` workers.
fn run_selection(problem: &SelectionProblem<'_>, threads: usize) -> Result<SelectionResult, CliError> {
    let numerical = |e: gnep_core::selector::SelectError| match e {
        gnep_core::selector::SelectError::AllInnerFailed { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Input(e.to_string()),
    };
    if threads <= 1 {
        return gnep_core::select(problem).map_err(numerical);
    }
    let points = grid_points(problem);
    let mut trace = parallel_map(&points, threads, |p| problem.evaluate(p, Phase::Grid));
    select_from_grid(problem, &mut trace).map_err(numerical)?;
    gnep_core::selector::finish(problem, trace).map_err(numerical)
}

/// Applies `f` to every item on `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], threads: usize, f: F) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, R)>> = Mutex::new(Vec::with_capacity(items.len()));
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().expect("worker panicked").push((i, r));
            });
        }
    });
    let mut done = done.into_inner().expect("worker panicked");
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, r)| r).collect()
}

fn race_error(e: RaceError) -> CliError {
    match e {
        RaceError::SolveFailed(_) | RaceError::Solver(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Input(e.to_string()),
    }
}

pub fn cmd_race(path: &Path, ov: &Overrides) -> Result<(), CliError> {
    let scenario = load(path)?;
    let solver = solver_options(&scenario, ov)?;
    let race = &scenario.race;
    let seed = ov.seed.unwrap_or(scenario.mc.seed);
    let alpha_ego = ov.alpha.as_ref().and_then(|a| a.first().copied()).unwrap_or(race.alpha_ego);
    let cars = if race.cars.is_empty() {
        let config = McConfig { solver: solver.clone(), ..scenario.mc.config.clone() };
        draw_initial_conditions(&config, 1, seed)[0].cars.to_vec()
    } else {
        race.cars.clone()
    };

    let mut manifest = RunManifest::new("race", seed).with_scenario(path, &scenario.source);
    manifest.option("alpha_ego", alpha_ego);
    manifest.option("alpha_opponent", race.alpha_opponent);
    manifest.option("duration", race.duration);
    manifest.option("tol", solver.tol);
    let sink = Sink::new(ov.out.clone(), manifest)?;

    let out = simulate_closed_loop(&race.track, &cars, &race.params, alpha_ego, race.alpha_opponent, race.duration, &solver)
        .map_err(race_error)?;
    let mut table = CsvTable::new([
        "t", "car", "v", "psi", "s", "e", "x", "y", "accel", "steer", "status", "iterations", "degraded",
    ]);
    for car in 0..cars.len() {
        for (k, st) in out.trajectories[car].iter().enumerate() {
            let (u, rec) = match out.inputs[car].get(k) {
                Some(u) => (Some(*u), out.steps.iter().find(|r| r.step == k && r.car == car)),
                None => (None, None),
            };
            let mut row = vec![fmt_f64(k as f64 * race.params.dt), car.to_string()];
            row.extend([st.v, st.psi, st.s, st.e, st.x, st.y].iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(u.map_or(f64::NAN, |u| u.accel)));
            row.push(fmt_f64(u.map_or(f64::NAN, |u| u.steer)));
            row.push(rec.map_or("", |r| r.status.name()).to_string());
            row.push(rec.map_or(String::new(), |r| r.iterations.to_string()));
            row.push(rec.map_or(String::new(), |r| u8::from(r.degraded).to_string()));
            table.push(row);
        }
    }
    sink.csv("trajectory.csv", &table)?;
    let initial: Vec<Value> = cars.iter().map(|c| json!({ "v": c.v, "psi": c.psi, "s": c.s, "e": c.e })).collect();
    sink.json(
        "race.json",
        json!({
            "scenario": scenario.name,
            "alpha_ego": alpha_ego,
            "alpha_opponent": race.alpha_opponent,
            "initial": initial,
            "final_s": out.final_s,
            "ego": out.ego,
            "ego_wins": out.ego_wins,
            "degraded": out.degraded,
            "degraded_steps": out.steps.iter().filter(|r| r.degraded).count(),
            "min_distance": out.min_distance,
        }),
    )?;
    sink.finish()
}

pub fn cmd_mc(path: &Path, ov: &Overrides) -> Result<(), CliError> {
    let scenario = load(path)?;
    let solver = solver_options(&scenario, ov)?;
    let mut config = McConfig { solver, ..scenario.mc.config.clone() };
    if let Some(a) = ov.alpha.as_ref().and_then(|a| a.first()) {
        config.ego_alpha = *a;
    }
    let runs = ov.runs.unwrap_or(scenario.mc.runs);
    let seed = ov.seed.unwrap_or(scenario.mc.seed);
    let threads = ov.parallel.unwrap_or(1).max(1);

    // the thread count does not change results, so it stays out of the hash
    let mut manifest = RunManifest::new("mc", seed).with_scenario(path, &scenario.source);
    manifest.option("runs", runs);
    manifest.option("baseline_alpha", config.baseline_alpha);
    manifest.option("ego_alpha", config.ego_alpha);
    manifest.option("opponent_model_alpha", config.opponent_model_alpha);
    manifest.option("tol", config.solver.tol);
    let sink = Sink::new(ov.out.clone(), manifest)?;

    let draws: Vec<McDraw> = draw_initial_conditions(&config, runs, seed);
    log::info!("running {runs} paired runs on {threads} thread(s)");
    let results: Vec<McRun> = parallel_map(&draws, threads, |d| {
        let r = run_pair(&config, d);
        log::debug!("run {}: baseline win {} / compared win {}", d.run, r.baseline.win, r.aggressive.win);
        r
    });
    let summary = McSummary::from_runs(&results);

    let mut table = CsvTable::new(["strategy", "ego_alpha", "runs", "wins", "failures", "win_rate"]);
    for (name, alpha, wins, failures, rate) in [
        ("baseline", config.baseline_alpha, summary.baseline_wins, summary.baseline_failures, summary.baseline_rate()),
        ("compared", config.ego_alpha, summary.aggressive_wins, summary.aggressive_failures, summary.aggressive_rate()),
    ] {
        table.push(vec![
            name.to_string(),
            fmt_f64(alpha),
            summary.runs.to_string(),
            wins.to_string(),
            failures.to_string(),
            fmt_f64(rate.unwrap_or(f64::NAN)),
        ]);
    }
    sink.csv("mc_summary.csv", &table)?;

    let mut map = CsvTable::new([
        "run", "opp_s", "opp_v", "opp_e", "ego_s", "ego_v", "ego_e", "baseline_win", "baseline_failed", "baseline_gap",
        "compared_win", "compared_failed", "compared_gap",
    ]);
    for r in &results {
        let [opp, ego] = r.draw.cars;
        let mut row = vec![r.draw.run.to_string()];
        row.extend([opp.s, opp.v, opp.e, ego.s, ego.v, ego.e].iter().map(|&v| fmt_f64(v)));
        for v in [&r.baseline, &r.aggressive] {
            row.push(u8::from(v.win).to_string());
            row.push(u8::from(v.failed).to_string());
            row.push(fmt_f64(v.final_gap));
        }
        map.push(row);
    }
    sink.csv("mc_runs.csv", &map)?;
    sink.finish()?;
    if runs > 0 && summary.baseline_failures == runs && summary.aggressive_failures == runs {
        return Err(CliError::Numerical("every run failed".into()));
    }
    Ok(())
}

pub fn cmd_oracle(name: &str, ov: &Overrides) -> Result<(), CliError> {
    let alpha = ov.alpha.as_ref().and_then(|a| a.first().copied());
    let input = |e: oracles::OracleError| CliError::Input(e.to_string());
    let doc = match name {
        "example1" => {
            let a = alpha.unwrap_or(0.5);
            let (x, y) = oracles::example1(a).map_err(input)?;
            let (j1, j2) = oracles::example1_costs(a).map_err(input)?;
            json!({ "game": name, "alpha": a, "x": [x, y], "costs": [j1, j2] })
        }
        "three_car" => {
            let a = alpha.unwrap_or(0.5);
            let s = oracles::three_car(a).map_err(input)?;
            json!({
                "game": name,
                "alpha": a,
                "positions": s.x,
                "velocities": s.v,
                "sigma": s.sigma,
                "total_cost": oracles::three_car_total_cost(a).map_err(input)?,
            })
        }
        "harker" => {
            let a = alpha.unwrap_or(3.0);
            let c: Vec<Value> = oracles::harker(a)
                .map_err(input)?
                .iter()
                .map(|c| {
                    let branch = match c.branch {
                        HarkerBranch::Interior => "interior",
                        HarkerBranch::SharedActive => "shared-active",
                    };
                    json!({ "branch": branch, "x": c.x, "sigma": c.sigma })
                })
                .collect();
            json!({ "game": name, "alpha": a, "candidates": c })
        }
        other => return Err(CliError::Input(format!("unknown oracle `{other}` (expected example1, three_car or harker)"))),
    };
    let mut manifest = RunManifest::new("oracle", 0);
    manifest.option("game", name);
    manifest.option("alpha", alpha.map_or(String::new(), |a| a.to_string()));
    let sink = Sink::new(ov.out.clone(), manifest)?;
    sink.json("oracle.json", doc)?;
    sink.finish()
}
