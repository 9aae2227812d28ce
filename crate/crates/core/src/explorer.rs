//! Tracing equilibria along a one-parameter factor family, and local
//! sensitivities of an equilibrium with respect to the factor parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::game::{FactorError, FactorFamily, GameSpec};
use crate::kkt::{assemble_scaled, is_active, AssemblyError, GneSolution, Mcp};
use crate::linalg::{DenseMatrix, Lu};
use crate::math::{abs, dot, norm_inf};
use crate::mcp::{distinct_points, solve, SolveError, SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplorerError {
    #[error("sweep grid must be non-empty and strictly increasing")]
    Grid,
    #[error("family needs {0} parameters; sweeps support exactly one")]
    NotScalar(usize),
    #[error("parameter {value} is outside the family domain ({lo}, {hi})")]
    Domain { value: f64, lo: f64, hi: f64 },
    #[error("sensitivity system is singular (pivot {pivot:e} in column {column})")]
    BorderedSingular { column: usize, pivot: f64 },
    #[error("player {0} has no factor of its own in this family")]
    NoOwnFactor(usize),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    /// Start each point from the previous converged one.
    pub warm_start: bool,
    /// Start for the first point and for cold re-solves; the instance default
    /// when absent.
    pub initial: Option<Vec<f64>>,
    /// A jump is flagged when `‖Δx‖∞ > jump_factor · max(1, ‖x‖∞)`.
    pub jump_factor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), warm_start: true, initial: None, jump_factor: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub alpha: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Present when the solve converged.
    pub solution: Option<GneSolution>,
    /// Set when `x` moved by more than the jump threshold since the previous
    /// (converged) point.
    pub jump: bool,
    /// After a jump, the cold-start solution when it differs from `solution`.
    pub alternate: Option<GneSolution>,
}

impl SweepPoint {
    pub fn converged(&self) -> bool {
        self.solution.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub family: FactorFamily,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Grid values at which a jump was flagged.
    pub fn jumps(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().filter(|p| p.jump).map(|p| p.alpha)
    }
}

fn check_domain(family: &FactorFamily, value: f64) -> Result<(), ExplorerError> {
    let (lo, hi) = family.domain();
    if value > lo && value < hi {
        Ok(())
    } else {
        Err(ExplorerError::Domain { value, lo, hi })
    }
}

/// Solves the scaled KKT system at every grid value of a one-parameter family.
///
/// Points whose solve fails are recorded with their status; the sweep goes on.
pub fn sweep(
    game: &GameSpec,
    family: FactorFamily,
    grid: &[f64],
    options: &SweepOptions,
) -> Result<SweepResult, ExplorerError> {
    let (m, m0) = (game.num_players(), game.num_shared());
    let count = family.param_count(m, m0);
    if count != 1 {
        return Err(ExplorerError::NotScalar(count));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ExplorerError::Grid);
    }
    for &a in grid {
        check_domain(&family, a)?;
    }
    options.solver.validate()?;

    let mut points: Vec<SweepPoint> = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &alpha in grid {
        let factors = family.factors(m, m0, &[alpha])?;
        let mcp = assemble_scaled(game, &factors)?;
        let cold = options.initial.clone().unwrap_or_else(|| mcp.default_start());
        let start = match (&warm, options.warm_start) {
            (Some(z), true) => z.clone(),
            _ => cold.clone(),
        };
        let mut report = solve(&mcp, &options.solver, Some(&start))?;
        if !report.converged() && warm.is_some() && options.warm_start {
            report = solve(&mcp, &options.solver, Some(&cold))?;
        }
        let mut point = SweepPoint {
            alpha,
            status: report.status,
            iterations: report.iterations,
            solution: None,
            jump: false,
            alternate: None,
        };
        if report.converged() {
            let sol = GneSolution::from_scaled(game, &factors, &report.z)?;
            if let Some(prev) = points.last().and_then(|p| p.solution.as_ref()) {
                let step = sol.x.iter().zip(&prev.x).map(|(a, b)| abs(a - b)).fold(0.0, f64::max);
                if step > options.jump_factor * norm_inf(&prev.x).max(1.0) {
                    point.jump = true;
                    let alt = solve(&mcp, &options.solver, Some(&cold))?;
                    if alt.converged() && distinct_points(&alt.z, &report.z) {
                        point.alternate = Some(GneSolution::from_scaled(game, &factors, &alt.z)?);
                    }
                }
            }
            warm = Some(report.z.clone());
            point.solution = Some(sol);
        }
        points.push(point);
    }
    Ok(SweepResult { family, points })
}

/// Local derivatives of an equilibrium with respect to the family parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Shared constraints treated as active.
    pub active_shared: Vec<usize>,
    /// `(player, constraint)` private inequalities treated as active.
    pub active_private: Vec<(usize, usize)>,
    /// `dx/dθ_k`, one vector per parameter.
    pub dx: Vec<Vec<f64>>,
    /// `dσ/dθ_k`, zero on inactive shared constraints.
    pub dsigma: Vec<Vec<f64>>,
    /// `dJ_i/dθ_k` as `cost_rates[k][i]`.
    pub cost_rates: Vec<Vec<f64>>,
    /// Rate of each player's cost with respect to its own factor, when the
    /// family moves that factor through a single parameter.
    pub own_rates: Vec<Option<f64>>,
    /// 1-norm condition estimate of the frozen-active-set KKT matrix.
    pub condition: f64,
    /// Separable costs and a block-diagonal quadratic shared constraint, under
    /// which own-factor rates are non-negative.
    pub hypotheses: bool,
}

/// Differentiates the scaled KKT system at `z` with the active set frozen.
///
/// Rows and columns of inactive inequality multipliers are dropped (those
/// multipliers stay at zero), and the remaining square system
/// `K dz = −∂F/∂θ` is solved for every parameter.
pub fn sensitivity(
    game: &GameSpec,
    family: FactorFamily,
    params: &[f64],
    z: &[f64],
) -> Result<SensitivityReport, ExplorerError> {
    let (m, m0) = (game.num_players(), game.num_shared());
    let factors = family.factors(m, m0, params)?;
    let mcp = assemble_scaled(game, &factors)?;
    let layout = mcp.layout().clone();
    let n = game.dim();
    let x = &z[..n];

    let mut keep: Vec<usize> = (0..n).collect();
    keep.extend(layout.mu.iter().flat_map(|r| r.clone()));
    let mut active_private = Vec::new();
    for (i, p) in game.players().iter().enumerate() {
        for (c, g) in p.ineq_constraints.iter().enumerate() {
            let col = layout.lambda[i].start + c;
            if is_active(g.value(x), z[col]) {
                active_private.push((i, c));
                keep.push(col);
            }
        }
    }
    let s = game.shared_values(x);
    let sigma_col = |j: usize| layout.sigma[0].start + j;
    let active_shared: Vec<usize> = (0..m0).filter(|&j| is_active(s[j], z[sigma_col(j)])).collect();
    keep.extend(active_shared.iter().map(|&j| sigma_col(j)));

    let d = layout.dim;
    let mut jac = DenseMatrix::zeros(d, d);
    mcp.jacobian(z, &mut jac);
    let r = keep.len();
    let mut k_mat = DenseMatrix::zeros(r, r);
    for (a, &ra) in keep.iter().enumerate() {
        for (b, &cb) in keep.iter().enumerate() {
            k_mat[(a, b)] = jac[(ra, cb)];
        }
    }
    let lu = Lu::factor(&k_mat, 1e-13).map_err(|e| match e {
        crate::linalg::LinalgError::Singular { column, pivot } => ExplorerError::BorderedSingular { column, pivot },
        crate::linalg::LinalgError::NotSquare { .. } => unreachable!("square by construction"),
    })?;
    let condition = lu.condition_estimate(&k_mat);

    // shared-constraint gradients, dense over x
    let shared_grads: Vec<Vec<f64>> = game.shared().iter().map(|sj| sj.gradient(x)).collect();
    let cost_grads: Vec<Vec<f64>> = game.players().iter().map(|p| p.cost.gradient(x)).collect();

    let nparams = params.len();
    let mut dx = Vec::with_capacity(nparams);
    let mut dsigma = Vec::with_capacity(nparams);
    let mut cost_rates = Vec::with_capacity(nparams);
    let mut derivs = Vec::with_capacity(nparams);
    for k in 0..nparams {
        let da = family.derivative(m, m0, k);
        let mut rhs = vec![0.0; r];
        // only stationarity rows depend on θ; they are the first n entries of `keep`
        for i in 0..m {
            for row in game.block(i) {
                let v: f64 = (0..m0).map(|j| da[i][j] * z[sigma_col(j)] * shared_grads[j][row]).sum();
                rhs[row] = -v;
            }
        }
        let sol = lu.solve_refined(&k_mat, &rhs, 1);
        let mut dz = vec![0.0; d];
        for (a, &col) in keep.iter().enumerate() {
            dz[col] = sol[a];
        }
        let dxk = dz[..n].to_vec();
        cost_rates.push(cost_grads.iter().map(|g| dot(g, &dxk)).collect::<Vec<f64>>());
        dsigma.push((0..m0).map(|j| dz[sigma_col(j)]).collect());
        dx.push(dxk);
        derivs.push(da);
    }

    let own_rates = (0..m)
        .map(|i| {
            let moving: Vec<usize> = (0..nparams).filter(|&k| derivs[k][i].iter().any(|&v| v != 0.0)).collect();
            let [k] = moving[..] else { return None };
            let c = derivs[k][i][0];
            derivs[k][i].iter().all(|&v| v == c).then(|| cost_rates[k][i] / c)
        })
        .collect();

    Ok(SensitivityReport {
        active_shared,
        active_private,
        dx,
        dsigma,
        cost_rates,
        own_rates,
        condition,
        hypotheses: game.costs_separable() && game.shared_block_diagonal_quadratic(),
    })
}

/// Closed-form own-factor cost rate
/// `α_i σ² (⟨r_i,r_i⟩⟨r,r⟩ − ⟨r_i,r⟩²) / ⟨r,g⟩` in the `H⁻¹` inner product,
/// where `r_k` is the block of `∇s` belonging to player `k`, `r = Σ r_k`,
/// `g = Σ α_k r_k` and `H` is the `x`-block of the KKT Jacobian.
///
/// Applies to games without private constraints and exactly one active shared
/// constraint; returns `None` otherwise. For two players whose factors sum to
/// one it equals `dJ_i/dα_i` from [`sensitivity`].
pub fn closed_form_own_rate(
    game: &GameSpec,
    factors: &crate::game::FactorAssignment,
    z: &[f64],
    player: usize,
) -> Option<f64> {
    if game.num_eq() + game.num_ineq() > 0 || player >= game.num_players() {
        return None;
    }
    let mcp = assemble_scaled(game, factors).ok()?;
    let n = game.dim();
    let x = &z[..n];
    let sigma_start = mcp.layout().sigma[0].start;
    let s = game.shared_values(x);
    let active: Vec<usize> = (0..game.num_shared()).filter(|&j| is_active(s[j], z[sigma_start + j])).collect();
    let [j] = active[..] else { return None };
    let sigma = z[sigma_start + j];

    let d = mcp.dim();
    let mut jac = DenseMatrix::zeros(d, d);
    mcp.jacobian(z, &mut jac);
    let h = DenseMatrix::from_row_major(n, n, (0..n).flat_map(|a| jac.row(a)[..n].to_vec()).collect());
    let lu = Lu::factor(&h, 1e-13).ok()?;
    let grad = game.shared()[j].gradient(x);
    let blocks: Vec<Vec<f64>> = (0..game.num_players())
        .map(|k| {
            let mut v = vec![0.0; n];
            for c in game.block(k) {
                v[c] = grad[c];
            }
            v
        })
        .collect();
    let r = grad;
    let g: Vec<f64> = (0..n).map(|c| factors.entry(game.owner(c), j) * r[c]).collect();
    let hinv_r = lu.solve(&r);
    let hinv_ri = lu.solve(&blocks[player]);
    let rr = dot(&r, &hinv_r);
    let riri = dot(&blocks[player], &hinv_ri);
    let rir = dot(&blocks[player], &hinv_r);
    let rg = dot(&g, &hinv_r);
    Some(factors.entry(player, j) * sigma * sigma * (riri * rr - rir * rir) / rg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub player: usize,
    /// `+1` when the player's own factor grows with the family parameter,
    /// `−1` when it shrinks.
    pub direction: f64,
    /// Consecutive grid pairs `(α_k, α_{k+1})` where the player's cost moved
    /// against its own factor by more than the slack.
    pub violations: Vec<(f64, f64)>,
    /// Grid values where the solve failed.
    pub failures: Vec<f64>,
    pub hypotheses: bool,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that a player's cost does not decrease as its own factor grows
/// along a sweep, with slack `1e-8`.
pub fn verify_monotonicity(
    game: &GameSpec,
    family: FactorFamily,
    grid: &[f64],
    player: usize,
    options: &SweepOptions,
) -> Result<MonotonicityReport, ExplorerError> {
    let (m, m0) = (game.num_players(), game.num_shared());
    let count = family.param_count(m, m0);
    if count != 1 {
        return Err(ExplorerError::NotScalar(count));
    }
    let da = family.derivative(m, m0, 0);
    let direction = match da.get(player).and_then(|d| d.first()) {
        Some(&c) if c > 0.0 => 1.0,
        Some(&c) if c < 0.0 => -1.0,
        _ => return Err(ExplorerError::NoOwnFactor(player)),
    };
    let result = sweep(game, family, grid, options)?;
    let failures = result.points.iter().filter(|p| !p.converged()).map(|p| p.alpha).collect();
    let solved: Vec<(f64, f64)> =
        result.points.iter().filter_map(|p| p.solution.as_ref().map(|s| (p.alpha, s.costs[player]))).collect();
    let violations = solved
        .windows(2)
        .filter(|w| direction * (w[1].1 - w[0].1) < -1e-8)
        .map(|w| (w[0].0, w[1].0))
        .collect();
    Ok(MonotonicityReport {
        player,
        direction,
        violations,
        failures,
        hypotheses: game.costs_separable() && game.shared_block_diagonal_quadratic(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    #[test]
    fn example1_sweep_matches_closed_form() {
        let g = oracles::example1_game();
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let res = sweep(&g, FactorFamily::Split { first: 0, second: 1 }, &grid, &SweepOptions::default()).unwrap();
        for p in &res.points {
            let (x, y) = oracles::example1(p.alpha).unwrap();
            let s = p.solution.as_ref().unwrap();
            assert!(abs(s.x[0] - x) < 1e-8 && abs(s.x[1] - y) < 1e-8);
            assert!(!p.jump);
        }
    }

    #[test]
    fn example1_sensitivity() {
        let g = oracles::example1_game();
        let fam = FactorFamily::Split { first: 0, second: 1 };
        let z = oracles::example1_point(0.5).unwrap();
        let rep = sensitivity(&g, fam, &[0.5], &z).unwrap();
        assert!(abs(rep.dx[0][0] + 0.5) < 1e-12 && abs(rep.dx[0][1] - 0.5) < 1e-12);
        // symmetric blocks: σ does not move
        assert!(abs(rep.dsigma[0][0]) < 1e-12);
        assert!(abs(rep.own_rates[0].unwrap() - 0.25) < 1e-12);
        let f = fam.factors(2, 1, &[0.3]).unwrap();
        let z = oracles::example1_point(0.3).unwrap();
        let rep = sensitivity(&g, fam, &[0.3], &z).unwrap();
        assert!(abs(closed_form_own_rate(&g, &f, &z, 0).unwrap() - rep.own_rates[0].unwrap()) < 1e-12);
        assert!(abs(closed_form_own_rate(&g, &f, &z, 1).unwrap() - rep.own_rates[1].unwrap()) < 1e-12);
        assert!(rep.hypotheses);
    }

    #[test]
    fn monotone_in_own_factor() {
        let g = oracles::example1_game();
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        let fam = FactorFamily::Split { first: 0, second: 1 };
        for player in 0..2 {
            let rep = verify_monotonicity(&g, fam, &grid, player, &SweepOptions::default()).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
        assert!(verify_monotonicity(&g, fam, &[0.5], 0, &SweepOptions::default()).unwrap().passed());
    }

    #[test]
    fn rejects_bad_grids() {
        let g = oracles::example1_game();
        let fam = FactorFamily::Split { first: 0, second: 1 };
        assert!(matches!(sweep(&g, fam, &[0.5, 0.4], &SweepOptions::default()), Err(ExplorerError::Grid)));
        assert!(matches!(sweep(&g, fam, &[0.5, 1.0], &SweepOptions::default()), Err(ExplorerError::Domain { .. })));
    }
}
