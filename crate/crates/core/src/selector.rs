//! Bi-level equilibrium selection: search the factor parameters of a family
//! for the equilibrium minimizing an upper-level objective.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::explorer::sensitivity;
use crate::game::{FactorError, FactorFamily, GameSpec};
use crate::kkt::{assemble_scaled, AssemblyError, GneSolution, Mcp};
use crate::math::abs;
use crate::mcp::{solve, SolverOptions};

/// Default distance kept from the edges of a family's open domain.
pub const BOX_MARGIN: f64 = 1e-3;

/// Upper-level objective evaluated at an equilibrium `x`.
#[derive(Clone)]
pub enum Objective {
    SumOfCosts,
    Player(usize),
    Custom(Arc<dyn Fn(&GameSpec, &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::SumOfCosts => f.write_str("SumOfCosts"),
            Objective::Player(i) => write!(f, "Player({i})"),
            Objective::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Objective {
    pub fn evaluate(&self, game: &GameSpec, x: &[f64]) -> f64 {
        match self {
            Objective::SumOfCosts => game.costs(x).iter().sum(),
            Objective::Player(i) => game.cost(*i, x),
            Objective::Custom(f) => f(game, x),
        }
    }
}

/// `J₀ = Σ J_i`.
pub fn objective_sum_of_costs(_game: &GameSpec) -> Objective {
    Objective::SumOfCosts
}

/// `J₀ = J_i`.
pub fn objective_single_player(game: &GameSpec, i: usize) -> Result<Objective, SelectError> {
    if i < game.num_players() {
        Ok(Objective::Player(i))
    } else {
        Err(SelectError::PlayerOutOfRange { player: i, players: game.num_players() })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectError {
    #[error("player {player} out of range for a {players}-player game")]
    PlayerOutOfRange { player: usize, players: usize },
    #[error("every inner solve failed ({evaluated} parameter points)")]
    AllInnerFailed { evaluated: usize },
    #[error("search box must have {expected} strictly ordered bounds inside the family domain")]
    BadBox { expected: usize },
    #[error("grid density must be at least 2 per parameter")]
    GridDensity,
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone)]
pub struct SelectionProblem<'g> {
    pub game: &'g GameSpec,
    pub family: FactorFamily,
    pub objective: Objective,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid points per parameter, edges included.
    pub grid_points: usize,
    /// Golden-section iterations, or Nelder–Mead evaluations for several
    /// parameters.
    pub refine_iters: usize,
    pub solver: SolverOptions,
    /// Inner-solve starts; the instance default when empty. Each distinct
    /// equilibrium found is scored and the best one kept.
    pub starts: Vec<Vec<f64>>,
}

impl<'g> SelectionProblem<'g> {
    /// Problem over the family domain shrunk by [`BOX_MARGIN`]. Unbounded
    /// domains are capped at `1 / BOX_MARGIN`.
    pub fn new(game: &'g GameSpec, family: FactorFamily, objective: Objective) -> Self {
        let count = family.param_count(game.num_players(), game.num_shared());
        let (lo, hi) = family.domain();
        let hi = if hi.is_finite() { hi - BOX_MARGIN } else { 1.0 / BOX_MARGIN };
        Self {
            game,
            family,
            objective,
            lower: vec![lo + BOX_MARGIN; count],
            upper: vec![hi; count],
            grid_points: 21,
            refine_iters: 60,
            solver: SolverOptions::default(),
            starts: Vec::new(),
        }
    }

    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn validate(&self) -> Result<(), SelectError> {
        let expected = self.family.param_count(self.game.num_players(), self.game.num_shared());
        let (lo, hi) = self.family.domain();
        let ok = self.lower.len() == expected
            && self.upper.len() == expected
            && self.lower.iter().zip(&self.upper).all(|(&l, &u)| l > lo && u < hi && l < u);
        if !ok {
            return Err(SelectError::BadBox { expected });
        }
        if self.grid_points < 2 {
            return Err(SelectError::GridDensity);
        }
        Ok(())
    }

    /// Solves the inner game at `params` from every start and scores each
    /// distinct equilibrium.
    pub fn evaluate(&self, params: &[f64], phase: Phase) -> TraceEntry {
        let mut entry = TraceEntry {
            params: params.to_vec(),
            phase,
            j0: None,
            costs: Vec::new(),
            basins: 0,
            note: String::new(),
            solution: None,
        };
        let (m, m0) = (self.game.num_players(), self.game.num_shared());
        let factors = match self.family.factors(m, m0, params) {
            Ok(f) => f,
            Err(e) => {
                entry.note = alloc::format!("{e}");
                return entry;
            }
        };
        let mcp = match assemble_scaled(self.game, &factors) {
            Ok(p) => p,
            Err(e) => {
                entry.note = alloc::format!("{e}");
                return entry;
            }
        };
        let starts = if self.starts.is_empty() { vec![mcp.default_start()] } else { self.starts.clone() };
        let mut found: Vec<GneSolution> = Vec::new();
        let mut failed = 0;
        for s in &starts {
            match solve(&mcp, &self.solver, Some(s)) {
                Ok(r) if r.converged() => {
                    if found.iter().all(|f| crate::mcp::distinct_points(&f.z, &r.z)) {
                        if let Ok(sol) = GneSolution::from_scaled(self.game, &factors, &r.z) {
                            found.push(sol);
                        }
                    }
                }
                Ok(r) => {
                    failed += 1;
                    entry.note = alloc::format!("{}", r.status.name());
                }
                Err(e) => {
                    failed += 1;
                    entry.note = alloc::format!("{e}");
                }
            }
        }
        entry.basins = found.len();
        if found.is_empty() {
            return entry;
        }
        if failed > 0 {
            entry.note = alloc::format!("{failed} of {} starts failed", starts.len());
        }
        let best = found
            .into_iter()
            .map(|s| (self.objective.evaluate(self.game, &s.x), s))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal))
            .expect("non-empty");
        entry.j0 = Some(best.0);
        entry.costs = best.1.costs.clone();
        entry.solution = Some(best.1);
        entry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Grid,
    Refine,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Grid => "grid",
            Phase::Refine => "refine",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub params: Vec<f64>,
    pub phase: Phase,
    /// Objective at the best equilibrium found, if any solve converged.
    pub j0: Option<f64>,
    pub costs: Vec<f64>,
    /// Number of distinct equilibria found at these parameters.
    pub basins: usize,
    /// Failure or multiplicity annotation.
    pub note: String,
    pub solution: Option<GneSolution>,
}

/// First-order estimate of the selected equilibrium at the domain edge the
/// optimum was pushed against.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLimit {
    pub params: Vec<f64>,
    pub x: Vec<f64>,
    pub j0: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub params: Vec<f64>,
    pub solution: GneSolution,
    pub j0: f64,
    pub trace: Vec<TraceEntry>,
    /// The optimum lies on the edge of the search box.
    pub boundary: bool,
    /// Extrapolation to the open-domain edge, set with `boundary` when the
    /// sensitivity system is solvable there.
    pub limit: Option<BoundaryLimit>,
}

fn better(a: &TraceEntry, b: &TraceEntry) -> bool {
    match (a.j0, b.j0) {
        (Some(x), Some(y)) => x < y || (x == y && lex_less(&a.params, &b.params)),
        (Some(_), None) => true,
        _ => false,
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn grid_params(lower: &[f64], upper: &[f64], points: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (&l, &u) in lower.iter().zip(upper) {
        let axis: Vec<f64> =
            (0..points).map(|k| if k + 1 == points { u } else { l + (u - l) * k as f64 / (points - 1) as f64 }).collect();
        out = out.into_iter().flat_map(|p| axis.iter().map(move |&a| {
            let mut q = p.clone();
            q.push(a);
            q
        })).collect();
    }
    out
}

/// Grid search followed by golden-section (one parameter) or Nelder–Mead
/// refinement around the best grid point. Ties go to the lexicographically
/// smallest parameters.
pub fn select(problem: &SelectionProblem<'_>) -> Result<SelectionResult, SelectError> {
    problem.validate()?;
    let mut trace: Vec<TraceEntry> =
        grid_params(&problem.lower, &problem.upper, problem.grid_points).iter().map(|p| problem.evaluate(p, Phase::Grid)).collect();
    select_from_grid(problem, &mut trace)?;
    finish(problem, trace)
}

/// Refinement and bookkeeping after the grid phase, for drivers that evaluate
/// the grid themselves (possibly concurrently). `trace` must hold the grid
/// entries in [`grid_points`] order.
pub fn select_from_grid(problem: &SelectionProblem<'_>, trace: &mut Vec<TraceEntry>) -> Result<(), SelectError> {
    let best = trace.iter().fold(None::<&TraceEntry>, |acc, e| match acc {
        Some(b) if !better(e, b) => Some(b),
        _ => Some(e),
    });
    let Some(best) = best.filter(|b| b.j0.is_some()) else {
        return Err(SelectError::AllInnerFailed { evaluated: trace.len() });
    };
    let center = best.params.clone();
    let steps: Vec<f64> =
        problem.lower.iter().zip(&problem.upper).map(|(l, u)| (u - l) / (problem.grid_points - 1) as f64).collect();
    if center.len() == 1 {
        golden_section(problem, center[0], steps[0], trace);
    } else {
        nelder_mead(problem, &center, &steps, trace);
    }
    Ok(())
}

/// The parameter points of the grid phase, in trace order.
pub fn grid_points(problem: &SelectionProblem<'_>) -> Vec<Vec<f64>> {
    grid_params(&problem.lower, &problem.upper, problem.grid_points)
}

fn score(e: &TraceEntry) -> f64 {
    e.j0.unwrap_or(f64::INFINITY)
}

fn golden_section(problem: &SelectionProblem<'_>, center: f64, step: f64, trace: &mut Vec<TraceEntry>) {
    let (lo, hi) = (problem.lower[0], problem.upper[0]);
    let mut a = (center - step).max(lo);
    let mut b = (center + step).min(hi);
    let ratio = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = {
        let e = problem.evaluate(&[c], Phase::Refine);
        let s = score(&e);
        trace.push(e);
        s
    };
    let mut fd = {
        let e = problem.evaluate(&[d], Phase::Refine);
        let s = score(&e);
        trace.push(e);
        s
    };
    for _ in 0..problem.refine_iters {
        if b - a <= 1e-12 * (1.0 + abs(a)) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            let e = problem.evaluate(&[c], Phase::Refine);
            fc = score(&e);
            trace.push(e);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            let e = problem.evaluate(&[d], Phase::Refine);
            fd = score(&e);
            trace.push(e);
        }
    }
}

fn nelder_mead(problem: &SelectionProblem<'_>, center: &[f64], steps: &[f64], trace: &mut Vec<TraceEntry>) {
    let k = center.len();
    let clamp = |p: &mut Vec<f64>| {
        for (j, v) in p.iter_mut().enumerate() {
            *v = v.max(problem.lower[j]).min(problem.upper[j]);
        }
    };
    let eval = |p: &[f64], trace: &mut Vec<TraceEntry>| {
        let e = problem.evaluate(p, Phase::Refine);
        let s = score(&e);
        trace.push(e);
        s
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((center.to_vec(), eval(center, trace)));
    for j in 0..k {
        let mut p = center.to_vec();
        p[j] += if p[j] + 0.5 * steps[j] <= problem.upper[j] { 0.5 * steps[j] } else { -0.5 * steps[j] };
        clamp(&mut p);
        let f = eval(&p, trace);
        simplex.push((p, f));
    }
    let mut budget = problem.refine_iters;
    while budget > 0 {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| {
            if lex_less(&a.0, &b.0) {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        }));
        let spread = simplex.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max) - simplex[0].1;
        if spread.is_finite() && spread <= 1e-12 * (1.0 + abs(simplex[0].1)) {
            break;
        }
        let centroid: Vec<f64> = (0..k).map(|j| simplex[..k].iter().map(|s| s.0[j]).sum::<f64>() / k as f64).collect();
        let worst = simplex[k].clone();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..k).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect();
            clamp(&mut p);
            p
        };
        let pr = along(-1.0);
        let fr = eval(&pr, trace);
        budget = budget.saturating_sub(1);
        if fr < simplex[0].1 {
            let pe = along(-2.0);
            let fe = eval(&pe, trace);
            budget = budget.saturating_sub(1);
            simplex[k] = if fe < fr { (pe, fe) } else { (pr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (pr, fr);
        } else {
            let pc = along(if fr < worst.1 { -0.5 } else { 0.5 });
            let fc = eval(&pc, trace);
            budget = budget.saturating_sub(1);
            if fc < worst.1.min(fr) {
                simplex[k] = (pc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = (0..k).map(|j| best[j] + 0.5 * (s.0[j] - best[j])).collect();
                    clamp(&mut p);
                    s.1 = eval(&p, trace);
                    s.0 = p;
                    budget = budget.saturating_sub(1);
                }
            }
        }
    }
}

/// Picks the best trace entry and fills in the boundary flag and limit.
pub fn finish(problem: &SelectionProblem<'_>, trace: Vec<TraceEntry>) -> Result<SelectionResult, SelectError> {
    let best = trace
        .iter()
        .fold(None::<&TraceEntry>, |acc, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .filter(|b| b.j0.is_some())
        .ok_or(SelectError::AllInnerFailed { evaluated: trace.len() })?;
    let params = best.params.clone();
    let solution = best.solution.clone().expect("scored entries carry a solution");
    let j0 = best.j0.expect("filtered");

    let edge_tol = |j: usize| 1e-9 * (problem.upper[j] - problem.lower[j]);
    let mut target = params.clone();
    let mut boundary = false;
    let (dlo, dhi) = problem.family.domain();
    for (j, p) in params.iter().enumerate() {
        if abs(p - problem.lower[j]) <= edge_tol(j) {
            boundary = true;
            target[j] = dlo;
        } else if abs(p - problem.upper[j]) <= edge_tol(j) {
            boundary = true;
            target[j] = if dhi.is_finite() { dhi } else { f64::NAN };
        }
    }
    let limit = if boundary && target.iter().all(|t| t.is_finite()) {
        sensitivity(problem.game, problem.family, &params, &solution.z).ok().map(|rep| {
            let mut x = solution.x.clone();
            for (k, dx) in rep.dx.iter().enumerate() {
                let delta = target[k] - params[k];
                x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += delta * d);
            }
            BoundaryLimit { j0: problem.objective.evaluate(problem.game, &x), params: target.clone(), x }
        })
    } else {
        None
    };
    Ok(SelectionResult { params, solution, j0, trace, boundary, limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    #[test]
    fn example1_sum_of_costs_picks_half() {
        let g = oracles::example1_game();
        let p = SelectionProblem::new(&g, FactorFamily::Split { first: 0, second: 1 }, objective_sum_of_costs(&g));
        let r = select(&p).unwrap();
        assert!(abs(r.params[0] - 0.5) < 1e-6, "{:?}", r.params);
        assert!(!r.boundary);
        assert!(r.trace.iter().all(|e| e.j0.unwrap() >= r.j0));
    }

    #[test]
    fn flat_objective_ties_to_smallest() {
        let g = oracles::example1_game();
        let obj = Objective::Custom(Arc::new(|_: &GameSpec, _: &[f64]| 1.0));
        let p = SelectionProblem::new(&g, FactorFamily::Split { first: 0, second: 1 }, obj);
        let r = select(&p).unwrap();
        assert_eq!(r.params, vec![BOX_MARGIN]);
    }

    #[test]
    fn single_player_objectives_hit_edges() {
        let g = oracles::example1_game();
        let fam = FactorFamily::Split { first: 0, second: 1 };
        let r = select(&SelectionProblem::new(&g, fam, objective_single_player(&g, 0).unwrap())).unwrap();
        assert!(r.boundary && r.params[0] == BOX_MARGIN);
        let lim = r.limit.unwrap();
        assert!(abs(lim.x[0] - 1.0) < 1e-9 && abs(lim.x[1]) < 1e-9 && abs(lim.j0) < 1e-9);
        let r = select(&SelectionProblem::new(&g, fam, objective_single_player(&g, 1).unwrap())).unwrap();
        assert!(r.boundary && r.params[0] == 1.0 - BOX_MARGIN);
        assert!(objective_single_player(&g, 2).is_err());
    }
}
