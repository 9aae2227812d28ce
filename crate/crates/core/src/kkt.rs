//! Assembly of the stacked KKT conditions of a game into a box-constrained
//! mixed complementarity problem.
//!
//! Variable order is `[x¹..x^M, μ_1..μ_M, λ_1..λ_M, σ]`, and row `j` of `F`
//! pairs with variable `j`: stationarity of player `i` with `x^i`, `h_i` with
//! the free `μ_i`, `-g_i` with `λ_i ≥ 0`, and `-s` with `σ ≥ 0`. The scaled
//! assembly carries a single shared `σ` that enters player `i`'s Lagrangian as
//! `(A_i σ)ᵀ s(x)`; the full assembly instead gives each player its own copy
//! `σ_i` and duplicates the `-s` rows.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::game::{effective_multipliers, FactorAssignment, GameSpec};
use crate::linalg::DenseMatrix;
use crate::math::{abs, norm_inf};

/// Box-constrained MCP: find `z ∈ [l, u]` with `F(z)` complementary to the
/// active bounds.
pub trait Mcp {
    fn dim(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn eval(&self, z: &[f64], f: &mut [f64]);
    /// Writes `∂F/∂z` into a `dim × dim` matrix (overwriting every entry).
    fn jacobian(&self, z: &[f64], jac: &mut DenseMatrix);

    /// Starting point used when the caller gives none.
    fn default_start(&self) -> Vec<f64> {
        self.lower()
            .iter()
            .zip(self.upper())
            .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 0.1,
                (false, true) => u - 0.1,
                (false, false) => 0.0,
            })
            .collect()
    }
}

/// Which multiplier structure the assembly uses for the shared constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum SharedMultipliers {
    /// One fictitious `σ` scaled by `A_i` for player `i`.
    Scaled(FactorAssignment),
    /// One independent `σ_i` per player.
    Full,
}

/// Index map of the MCP variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KktLayout {
    pub x: Vec<Range<usize>>,
    pub mu: Vec<Range<usize>>,
    pub lambda: Vec<Range<usize>>,
    pub sigma: Vec<Range<usize>>,
    pub dim: usize,
}

/// The `(x, μ, λ, σ)` pieces of an MCP vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KktParts {
    pub x: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl KktLayout {
    fn new(game: &GameSpec, sigma_blocks: usize) -> Self {
        let m = game.num_players();
        let x: Vec<_> = (0..m).map(|i| game.block(i)).collect();
        let mut at = game.dim();
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let mu = game.players().iter().map(|p| take(p.eq_constraints.len())).collect();
        let lambda = game.players().iter().map(|p| take(p.ineq_constraints.len())).collect();
        let sigma = (0..sigma_blocks).map(|_| take(game.num_shared())).collect();
        Self { x, mu, lambda, sigma, dim: at }
    }

    pub fn n(&self) -> usize {
        self.x.last().map_or(0, |r| r.end)
    }

    pub fn pack(&self, parts: &KktParts) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        z[..self.n()].copy_from_slice(&parts.x);
        for (ranges, blocks) in [(&self.mu, &parts.mu), (&self.lambda, &parts.lambda), (&self.sigma, &parts.sigma)] {
            for (r, b) in ranges.iter().zip(blocks) {
                z[r.clone()].copy_from_slice(b);
            }
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> KktParts {
        let take = |rs: &Vec<Range<usize>>| rs.iter().map(|r| z[r.clone()].to_vec()).collect();
        KktParts { x: z[..self.n()].to_vec(), mu: take(&self.mu), lambda: take(&self.lambda), sigma: take(&self.sigma) }
    }

    /// Label of variable `j`, e.g. `("lambda", player, local index)`.
    pub fn classify(&self, j: usize) -> (&'static str, usize, usize) {
        for (name, rs) in [("x", &self.x), ("mu", &self.mu), ("lambda", &self.lambda), ("sigma", &self.sigma)] {
            for (b, r) in rs.iter().enumerate() {
                if r.contains(&j) {
                    return (name, b, j - r.start);
                }
            }
        }
        ("?", 0, 0)
    }
}

/// KKT system of a game as an MCP.
#[derive(Debug, Clone)]
pub struct KktMcp<'g> {
    game: &'g GameSpec,
    shared: SharedMultipliers,
    layout: KktLayout,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("factor assignment is for {got:?} (players, shared) but the game has {expected:?}")]
    FactorShape { expected: (usize, usize), got: (usize, usize) },
}

/// Scaled assembly with one shared `σ` and player factors `A_i`.
pub fn assemble_scaled<'g>(game: &'g GameSpec, factors: &FactorAssignment) -> Result<KktMcp<'g>, AssemblyError> {
    let expected = (game.num_players(), game.num_shared());
    let got = (factors.num_players(), factors.num_shared());
    // with no shared constraints the factor matrices are empty and any player count is fine
    if got.0 != expected.0 || (got.1 != expected.1 && expected.1 > 0) {
        return Err(AssemblyError::FactorShape { expected, got });
    }
    let factors = if expected.1 == 0 { FactorAssignment::identity(expected.0, 0) } else { factors.clone() };
    Ok(KktMcp::new(game, SharedMultipliers::Scaled(factors)))
}

/// Normalized assembly: every `A_i = I`.
pub fn assemble_normalized(game: &GameSpec) -> KktMcp<'_> {
    KktMcp::new(game, SharedMultipliers::Scaled(FactorAssignment::identity(game.num_players(), game.num_shared())))
}

/// Full assembly with an independent `σ_i` per player.
pub fn assemble_full(game: &GameSpec) -> KktMcp<'_> {
    KktMcp::new(game, SharedMultipliers::Full)
}

impl<'g> KktMcp<'g> {
    fn new(game: &'g GameSpec, shared: SharedMultipliers) -> Self {
        let blocks = match shared {
            SharedMultipliers::Scaled(_) => 1,
            SharedMultipliers::Full => game.num_players(),
        };
        let layout = KktLayout::new(game, blocks);
        let mut lower = vec![f64::NEG_INFINITY; layout.dim];
        for r in layout.lambda.iter().chain(&layout.sigma) {
            lower[r.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
        let upper = vec![f64::INFINITY; layout.dim];
        Self { game, shared, layout, lower, upper }
    }

    pub fn game(&self) -> &'g GameSpec {
        self.game
    }

    pub fn layout(&self) -> &KktLayout {
        &self.layout
    }

    pub fn shared_multipliers(&self) -> &SharedMultipliers {
        &self.shared
    }

    /// Weight of shared multiplier `(block, j)` in player `i`'s Lagrangian and
    /// the MCP column it lives in.
    fn shared_weight(&self, i: usize, j: usize, z: &[f64]) -> (f64, f64, usize) {
        match &self.shared {
            SharedMultipliers::Scaled(a) => {
                let col = self.layout.sigma[0].start + j;
                (a.entry(i, j) * z[col], a.entry(i, j), col)
            }
            SharedMultipliers::Full => {
                let col = self.layout.sigma[i].start + j;
                (z[col], 1.0, col)
            }
        }
    }

    /// Unscaled per-player multipliers `σ_i` implied by `z`.
    pub fn player_sigmas(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let m0 = self.game.num_shared();
        (0..self.game.num_players()).map(|i| (0..m0).map(|j| self.shared_weight(i, j, z).0).collect()).collect()
    }

    /// Starting point: `x` at the center of any simple bounds found among the
    /// private inequalities (else 0), every multiplier 0.1.
    pub fn center_start(&self) -> Vec<f64> {
        let n = self.game.dim();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for p in self.game.players() {
            for g in &p.ineq_constraints {
                let (Some(q), [j]) = (g.as_quadratic(), g.support()) else { continue };
                if q.q_mat[0] != 0.0 || q.lin[0] == 0.0 {
                    continue;
                }
                let bound = -q.constant / q.lin[0];
                if q.lin[0] > 0.0 {
                    hi[*j] = hi[*j].min(bound);
                } else {
                    lo[*j] = lo[*j].max(bound);
                }
            }
        }
        let mut z = vec![0.1; self.layout.dim];
        for j in 0..n {
            z[j] = match (lo[j].is_finite(), hi[j].is_finite()) {
                (true, true) => 0.5 * (lo[j] + hi[j]),
                (true, false) => lo[j].max(0.0),
                (false, true) => hi[j].min(0.0),
                (false, false) => 0.0,
            };
        }
        z
    }

    /// KKT residual of a candidate in this assembly's layout.
    pub fn residual(&self, z: &[f64]) -> KktResidual {
        let mut f = vec![0.0; self.layout.dim];
        self.eval(z, &mut f);
        let parts = self.layout.unpack(z);
        let x = &parts.x;
        let stationarity = self.layout.x.iter().map(|r| norm_inf(&f[r.clone()])).collect();
        let mut primal = 0.0f64;
        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        for (i, p) in self.game.players().iter().enumerate() {
            for h in &p.eq_constraints {
                primal = primal.max(abs(h.value(x)));
            }
            for (g, &l) in p.ineq_constraints.iter().zip(&parts.lambda[i]) {
                let v = g.value(x);
                primal = primal.max(v);
                dual = dual.max(-l);
                comp += abs(l * v);
            }
        }
        let s = self.game.shared_values(x);
        primal = s.iter().fold(primal, |m, &v| m.max(v));
        for block in &parts.sigma {
            for (&sig, &sv) in block.iter().zip(&s) {
                dual = dual.max(-sig);
                comp += abs(sig * sv);
            }
        }
        KktResidual::new(stationarity, primal, dual, comp)
    }
}

impl Mcp for KktMcp<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn default_start(&self) -> Vec<f64> {
        self.center_start()
    }

    fn eval(&self, z: &[f64], f: &mut [f64]) {
        let game = self.game;
        let n = game.dim();
        let x = &z[..n];
        f.iter_mut().for_each(|v| *v = 0.0);
        let mut grad = Vec::new();
        let mut scatter = |func: &crate::function::SmoothFn, weight: f64, block: &Range<usize>, f: &mut [f64]| {
            let y = func.gather(x);
            grad.clear();
            grad.resize(y.len(), 0.0);
            func.gradient_local(&y, &mut grad);
            for (&j, &gj) in func.support().iter().zip(&grad) {
                if block.contains(&j) {
                    f[j] += weight * gj;
                }
            }
        };
        for (i, p) in game.players().iter().enumerate() {
            let block = self.layout.x[i].clone();
            scatter(&p.cost, 1.0, &block, f);
            for (k, h) in p.eq_constraints.iter().enumerate() {
                let row = self.layout.mu[i].start + k;
                scatter(h, z[row], &block, f);
                f[row] = h.value(x);
            }
            for (k, g) in p.ineq_constraints.iter().enumerate() {
                let row = self.layout.lambda[i].start + k;
                scatter(g, z[row], &block, f);
                f[row] = -g.value(x);
            }
            for (j, s) in game.shared().iter().enumerate() {
                let (w, _, _) = self.shared_weight(i, j, z);
                if w != 0.0 {
                    scatter(s, w, &block, f);
                }
            }
        }
        let sv = game.shared_values(x);
        for r in &self.layout.sigma {
            for (j, v) in sv.iter().enumerate() {
                f[r.start + j] = -v;
            }
        }
    }

    fn jacobian(&self, z: &[f64], jac: &mut DenseMatrix) {
        let game = self.game;
        let n = game.dim();
        let x = &z[..n];
        jac.fill(0.0);
        let mut grad = Vec::new();
        let mut hess = Vec::new();
        // adds weight·∇²func to the rows of `block`, and returns ∇func (local)
        let mut add = |func: &crate::function::SmoothFn,
                       weight: f64,
                       block: &Range<usize>,
                       jac: &mut DenseMatrix,
                       grad: &mut Vec<f64>| {
            let y = func.gather(x);
            let k = y.len();
            grad.clear();
            grad.resize(k, 0.0);
            func.gradient_local(&y, grad);
            if weight != 0.0 && func.support().iter().any(|j| block.contains(j)) {
                hess.clear();
                hess.resize(k * k, 0.0);
                func.hessian_local(&y, &mut hess);
                for (a, &ja) in func.support().iter().enumerate() {
                    if !block.contains(&ja) {
                        continue;
                    }
                    for (b, &jb) in func.support().iter().enumerate() {
                        jac[(ja, jb)] += weight * hess[a * k + b];
                    }
                }
            }
        };
        for (i, p) in game.players().iter().enumerate() {
            let block = self.layout.x[i].clone();
            add(&p.cost, 1.0, &block, jac, &mut grad);
            for (k, h) in p.eq_constraints.iter().enumerate() {
                let col = self.layout.mu[i].start + k;
                add(h, z[col], &block, jac, &mut grad);
                for (&j, &gj) in h.support().iter().zip(&grad) {
                    jac[(j, col)] += gj;
                    jac[(col, j)] += gj;
                }
            }
            for (k, g) in p.ineq_constraints.iter().enumerate() {
                let col = self.layout.lambda[i].start + k;
                add(g, z[col], &block, jac, &mut grad);
                for (&j, &gj) in g.support().iter().zip(&grad) {
                    jac[(j, col)] += gj;
                    jac[(col, j)] -= gj;
                }
            }
            for (j, s) in game.shared().iter().enumerate() {
                let (w, dw, col) = self.shared_weight(i, j, z);
                add(s, w, &block, jac, &mut grad);
                for (&v, &gv) in s.support().iter().zip(&grad) {
                    if block.contains(&v) {
                        jac[(v, col)] += dw * gv;
                    }
                }
            }
        }
        for (j, s) in game.shared().iter().enumerate() {
            let g = s.gradient(x);
            for r in &self.layout.sigma {
                let row = r.start + j;
                for (v, gv) in g.iter().enumerate() {
                    if *gv != 0.0 {
                        jac[(row, v)] -= gv;
                    }
                }
            }
        }
    }
}

/// Componentwise KKT diagnostics; `overall` is the largest component.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    /// `‖∇_{x^i} L_i‖∞` per player.
    pub stationarity: Vec<f64>,
    /// Largest violation of `h = 0`, `g ≤ 0` or `s ≤ 0`.
    pub primal: f64,
    /// Largest negative part of an inequality multiplier.
    pub dual: f64,
    /// `Σ |λ_j g_j| + Σ |σ_j s_j|`.
    pub complementarity: f64,
    pub overall: f64,
}

impl KktResidual {
    fn new(stationarity: Vec<f64>, primal: f64, dual: f64, complementarity: f64) -> Self {
        let primal = primal.max(0.0);
        let dual = dual.max(0.0);
        let overall = stationarity.iter().fold(primal.max(dual).max(complementarity), |m, &v| m.max(v));
        Self { stationarity, primal, dual, complementarity, overall }
    }
}

/// Residual of a candidate `z` (scaled layout) under `factors`.
pub fn kkt_residual(game: &GameSpec, factors: &FactorAssignment, z: &[f64]) -> Result<KktResidual, AssemblyError> {
    Ok(assemble_scaled(game, factors)?.residual(z))
}

/// Residual of the original per-player KKT system with explicit shared
/// multipliers `σ_i`, evaluated directly from the game's derivatives.
pub fn unscaled_kkt_residual(
    game: &GameSpec,
    x: &[f64],
    mu: &[Vec<f64>],
    lambda: &[Vec<f64>],
    sigma: &[Vec<f64>],
) -> KktResidual {
    let shared_grads: Vec<Vec<f64>> = game.shared().iter().map(|s| s.gradient(x)).collect();
    let sv = game.shared_values(x);
    let mut stationarity = Vec::with_capacity(game.num_players());
    let (mut primal, mut dual, mut comp) = (0.0f64, 0.0f64, 0.0f64);
    for (i, p) in game.players().iter().enumerate() {
        let block = game.block(i);
        let mut grad = p.cost.gradient(x);
        for (h, &m) in p.eq_constraints.iter().zip(&mu[i]) {
            for (a, b) in grad.iter_mut().zip(h.gradient(x)) {
                *a += m * b;
            }
            primal = primal.max(abs(h.value(x)));
        }
        for (g, &l) in p.ineq_constraints.iter().zip(&lambda[i]) {
            for (a, b) in grad.iter_mut().zip(g.gradient(x)) {
                *a += l * b;
            }
            let v = g.value(x);
            primal = primal.max(v);
            dual = dual.max(-l);
            comp += abs(l * v);
        }
        for ((sg, &s), &v) in shared_grads.iter().zip(&sigma[i]).zip(&sv) {
            for (a, b) in grad.iter_mut().zip(sg) {
                *a += s * b;
            }
            dual = dual.max(-s);
            comp += abs(s * v);
        }
        stationarity.push(norm_inf(&grad[block]));
    }
    primal = sv.iter().fold(primal, |m, &v| m.max(v));
    KktResidual::new(stationarity, primal, dual, comp)
}

/// A solved equilibrium with all multipliers and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GneSolution {
    pub x: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// Fictitious shared multiplier `σ`.
    pub sigma: Vec<f64>,
    /// `σ_i = A_i σ` per player.
    pub effective_sigma: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    /// Residual of the scaled system.
    pub residual: KktResidual,
    /// Residual of the original per-player system under `σ_i`.
    pub unscaled_residual: KktResidual,
    /// The raw MCP vector.
    pub z: Vec<f64>,
}

impl GneSolution {
    /// Unpacks a scaled-layout vector. Slightly negative multipliers from
    /// round-off are clipped to zero before forming `σ_i`.
    pub fn from_scaled(game: &GameSpec, factors: &FactorAssignment, z: &[f64]) -> Result<Self, AssemblyError> {
        let mcp = assemble_scaled(game, factors)?;
        let parts = mcp.layout().unpack(z);
        let sigma: Vec<f64> = parts.sigma[0].iter().map(|v| v.max(0.0)).collect();
        let factors = match mcp.shared_multipliers() {
            SharedMultipliers::Scaled(a) => a.clone(),
            SharedMultipliers::Full => unreachable!("scaled assembly"),
        };
        let effective_sigma =
            effective_multipliers(&factors, &sigma).expect("clipped multipliers are non-negative and sized to the game");
        let unscaled_residual = unscaled_kkt_residual(game, &parts.x, &parts.mu, &parts.lambda, &effective_sigma);
        Ok(Self {
            costs: game.costs(&parts.x),
            residual: mcp.residual(z),
            unscaled_residual,
            x: parts.x,
            mu: parts.mu,
            lambda: parts.lambda,
            sigma,
            effective_sigma,
            z: z.to_vec(),
        })
    }
}

/// Thresholds deciding whether an inequality is strongly active.
pub const ACTIVE_VALUE_TOL: f64 = 1e-7;
pub const ACTIVE_MULTIPLIER_TOL: f64 = 1e-7;

/// `|c| ≤ 1e-7` and multiplier `≥ 1e-7`.
pub fn is_active(constraint_value: f64, multiplier: f64) -> bool {
    abs(constraint_value) <= ACTIVE_VALUE_TOL && multiplier >= ACTIVE_MULTIPLIER_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_game, make_factors, FactorRule, PlayerSpec};
    use crate::function::SmoothFn;

    fn example1() -> GameSpec {
        let p1 = PlayerSpec::new(1, SmoothFn::quadratic(vec![0], vec![2.0], vec![-2.0], 1.0));
        let p2 = PlayerSpec::new(1, SmoothFn::quadratic(vec![1], vec![2.0], vec![-1.0], 0.25));
        build_game(vec![p1, p2], vec![SmoothFn::linear(vec![0, 1], vec![1.0, 1.0], -1.0)]).unwrap()
    }

    #[test]
    fn scaled_example1_rows() {
        let g = example1();
        let alpha = 0.7;
        let a = make_factors(2, 1, FactorRule::FirstPlayerIdentity, &[alpha]).unwrap();
        let mcp = assemble_scaled(&g, &a).unwrap();
        assert_eq!(mcp.dim(), 3);
        let z = [0.3, -0.4, 1.7];
        let mut f = [0.0; 3];
        mcp.eval(&z, &mut f);
        assert!(abs(f[0] - (2.0 * (0.3 - 1.0) + 1.7)) < 1e-14);
        assert!(abs(f[1] - (2.0 * (-0.4 - 0.5) + alpha * 1.7)) < 1e-14);
        assert!(abs(f[2] + (0.3 - 0.4 - 1.0)) < 1e-14);
        assert_eq!(mcp.lower(), &[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]);
    }

    #[test]
    fn full_and_normalized_dimensions() {
        let g = example1();
        assert_eq!(assemble_full(&g).dim(), 4);
        assert_eq!(assemble_normalized(&g).dim(), 3);
    }

    #[test]
    fn residual_at_normalized_solution_and_origin() {
        let g = example1();
        let a = FactorAssignment::identity(2, 1);
        let r = kkt_residual(&g, &a, &[0.75, 0.25, 0.5]).unwrap();
        assert!(r.overall <= 1e-12, "{r:?}");
        let r0 = kkt_residual(&g, &a, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r0.stationarity, vec![2.0, 1.0]);
        assert_eq!(r0.overall, 2.0);
    }

    #[test]
    fn unconstrained_optimum_has_zero_residual() {
        let p = PlayerSpec::new(1, SmoothFn::quadratic(vec![0], vec![2.0], vec![-4.0], 0.0))
            .with_ineq(SmoothFn::linear(vec![0], vec![1.0], -10.0));
        let g = build_game(vec![p], vec![]).unwrap();
        let r = kkt_residual(&g, &FactorAssignment::identity(1, 0), &[2.0, 0.0]).unwrap();
        assert_eq!(r.overall, 0.0);
    }

    #[test]
    fn layout_classifies_every_index() {
        let g = example1();
        let mcp = assemble_full(&g);
        let l = mcp.layout();
        assert_eq!(l.classify(0), ("x", 0, 0));
        assert_eq!(l.classify(3), ("sigma", 1, 0));
    }
}
