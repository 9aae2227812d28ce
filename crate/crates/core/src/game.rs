//! Declarative M-player games with private and shared constraints, and the
//! diagonal factor matrices that scale the shared multipliers per player.
//!
//! Sign conventions are global: equality constraints are `h(x) = 0`, private
//! inequalities `g(x) ≤ 0` and shared constraints `s(x) ≤ 0`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::function::SmoothFn;

/// One player's block: dimension, cost and private constraints.
///
/// The cost may read any variable of the stacked vector; private constraints
/// may only read the player's own block. All supports use global indices.
#[derive(Debug, Clone)]
pub struct PlayerSpec {
    pub dim: usize,
    pub cost: SmoothFn,
    pub eq_constraints: Vec<SmoothFn>,
    pub ineq_constraints: Vec<SmoothFn>,
}

impl PlayerSpec {
    pub fn new(dim: usize, cost: SmoothFn) -> Self {
        Self { dim, cost, eq_constraints: Vec::new(), ineq_constraints: Vec::new() }
    }

    pub fn with_eq(mut self, h: SmoothFn) -> Self {
        self.eq_constraints.push(h);
        self
    }

    pub fn with_ineq(mut self, g: SmoothFn) -> Self {
        self.ineq_constraints.push(g);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GameError {
    #[error("a game needs at least one player")]
    NoPlayers,
    #[error("player {player} has zero dimension")]
    EmptyPlayer { player: usize },
    #[error("{what} references variable {index} but the game has only {n} variables")]
    IndexOutOfRange { what: &'static str, index: usize, n: usize },
    #[error("private constraint {constraint} of player {player} references variable {index} outside the player's block")]
    ForeignBlock { player: usize, constraint: usize, index: usize },
}

/// Validated game. The stacked decision vector is the concatenation of the
/// player blocks in order.
#[derive(Debug, Clone)]
pub struct GameSpec {
    players: Vec<PlayerSpec>,
    shared: Vec<SmoothFn>,
    offsets: Vec<usize>,
    n: usize,
}

pub fn build_game(players: Vec<PlayerSpec>, shared: Vec<SmoothFn>) -> Result<GameSpec, GameError> {
    if players.is_empty() {
        return Err(GameError::NoPlayers);
    }
    let mut offsets = Vec::with_capacity(players.len() + 1);
    let mut n = 0;
    for (i, p) in players.iter().enumerate() {
        if p.dim == 0 {
            return Err(GameError::EmptyPlayer { player: i });
        }
        offsets.push(n);
        n += p.dim;
    }
    offsets.push(n);
    let in_range = |what: &'static str, f: &SmoothFn| {
        match f.support().iter().find(|&&j| j >= n) {
            Some(&index) => Err(GameError::IndexOutOfRange { what, index, n }),
            None => Ok(()),
        }
    };
    for (i, p) in players.iter().enumerate() {
        in_range("cost", &p.cost)?;
        let block = offsets[i]..offsets[i + 1];
        for (c, f) in p.eq_constraints.iter().chain(&p.ineq_constraints).enumerate() {
            in_range("private constraint", f)?;
            if let Some(&index) = f.support().iter().find(|j| !block.contains(j)) {
                return Err(GameError::ForeignBlock { player: i, constraint: c, index });
            }
        }
    }
    for s in &shared {
        in_range("shared constraint", s)?;
    }
    Ok(GameSpec { players, shared, offsets, n })
}

impl GameSpec {
    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    /// Total number of decision variables `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_shared(&self) -> usize {
        self.shared.len()
    }

    pub fn players(&self) -> &[PlayerSpec] {
        &self.players
    }

    pub fn player(&self, i: usize) -> &PlayerSpec {
        &self.players[i]
    }

    pub fn shared(&self) -> &[SmoothFn] {
        &self.shared
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Which player owns variable `j`.
    pub fn owner(&self, j: usize) -> usize {
        self.offsets.partition_point(|&o| o <= j) - 1
    }

    pub fn num_eq(&self) -> usize {
        self.players.iter().map(|p| p.eq_constraints.len()).sum()
    }

    pub fn num_ineq(&self) -> usize {
        self.players.iter().map(|p| p.ineq_constraints.len()).sum()
    }

    pub fn cost(&self, i: usize, x: &[f64]) -> f64 {
        self.players[i].cost.value(x)
    }

    pub fn costs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_players()).map(|i| self.cost(i, x)).collect()
    }

    pub fn shared_values(&self, x: &[f64]) -> Vec<f64> {
        self.shared.iter().map(|s| s.value(x)).collect()
    }

    /// True when every cost reads only its own player's block.
    pub fn costs_separable(&self) -> bool {
        (0..self.num_players()).all(|i| {
            let b = self.block(i);
            self.players[i].cost.support().iter().all(|j| b.contains(j))
        })
    }

    /// True when every shared constraint is quadratic with no curvature
    /// coupling variables of different players.
    pub fn shared_block_diagonal_quadratic(&self) -> bool {
        self.shared.iter().all(|s| {
            let Some(q) = s.as_quadratic() else { return false };
            let sup = s.support();
            let k = sup.len();
            (0..k).all(|a| {
                (0..k).all(|b| q.q_mat[a * k + b] == 0.0 || self.owner(sup[a]) == self.owner(sup[b]))
            })
        })
    }
}

/// How the free parameters of a factor assignment are completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorRule {
    /// `A_1 = I`; players 2..M are free.
    FirstPlayerIdentity,
    /// Every diagonal position sums to one across players; players 1..M-1 are
    /// free and the last player takes the remainder.
    SumToOne,
    /// Every entry is free.
    Unnormalized,
}

impl FactorRule {
    pub fn name(self) -> &'static str {
        match self {
            FactorRule::FirstPlayerIdentity => "first-identity",
            FactorRule::SumToOne => "sum-to-one",
            FactorRule::Unnormalized => "unnormalized",
        }
    }

    pub fn free_param_count(self, players: usize, m0: usize) -> usize {
        match self {
            FactorRule::FirstPlayerIdentity | FactorRule::SumToOne => players.saturating_sub(1) * m0,
            FactorRule::Unnormalized => players * m0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error("rule {rule:?} expects {expected} free parameters, got {got}")]
    ParamCount { rule: FactorRule, expected: usize, got: usize },
    #[error("factor entry ({player}, {constraint}) = {value} is not strictly positive")]
    NonPositive { player: usize, constraint: usize, value: f64 },
    #[error("factors of shared constraint {constraint} sum to {sum}, which leaves no positive remainder")]
    ColumnSum { constraint: usize, sum: f64 },
    #[error("factor assignment violates its {rule:?} rule")]
    RuleViolated { rule: FactorRule },
    #[error("factor assignment has shape {got:?}, expected {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("shared multiplier {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },
}

/// Diagonals of the per-player factor matrices `A_i` (M rows of length m0).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorAssignment {
    diagonals: Vec<Vec<f64>>,
    rule: FactorRule,
}

impl FactorAssignment {
    /// Validates the positivity and rule invariants.
    pub fn new(diagonals: Vec<Vec<f64>>, rule: FactorRule) -> Result<Self, FactorError> {
        let m0 = diagonals.first().map_or(0, Vec::len);
        for (i, d) in diagonals.iter().enumerate() {
            if d.len() != m0 {
                return Err(FactorError::Shape { expected: (diagonals.len(), m0), got: (i, d.len()) });
            }
            for (j, &v) in d.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(FactorError::NonPositive { player: i, constraint: j, value: v });
                }
            }
        }
        let ok = match rule {
            FactorRule::FirstPlayerIdentity => diagonals.first().is_none_or(|d| d.iter().all(|&v| v == 1.0)),
            FactorRule::SumToOne => (0..m0).all(|j| {
                let s: f64 = diagonals.iter().map(|d| d[j]).sum();
                crate::math::abs(s - 1.0) <= 1e-12
            }),
            FactorRule::Unnormalized => true,
        };
        if !ok {
            return Err(FactorError::RuleViolated { rule });
        }
        Ok(Self { diagonals, rule })
    }

    /// All `A_i = I`.
    pub fn identity(players: usize, m0: usize) -> Self {
        Self { diagonals: vec![vec![1.0; m0]; players], rule: FactorRule::Unnormalized }
    }

    pub fn rule(&self) -> FactorRule {
        self.rule
    }

    pub fn num_players(&self) -> usize {
        self.diagonals.len()
    }

    pub fn num_shared(&self) -> usize {
        self.diagonals.first().map_or(0, Vec::len)
    }

    /// Diagonal of `A_i`.
    pub fn diagonal(&self, i: usize) -> &[f64] {
        &self.diagonals[i]
    }

    pub fn entry(&self, player: usize, constraint: usize) -> f64 {
        self.diagonals[player][constraint]
    }

    /// Divides every `A_i` by `c > 0`. The result carries no normalization rule.
    pub fn rescaled(&self, c: f64) -> Result<Self, FactorError> {
        let d = self.diagonals.iter().map(|row| row.iter().map(|v| v / c).collect()).collect();
        Self::new(d, FactorRule::Unnormalized)
    }

    pub fn is_uniform(&self) -> bool {
        self.diagonals.windows(2).all(|w| w[0] == w[1])
    }
}

/// Completes `free_params` into a full assignment according to `rule`.
///
/// Parameters are player-major: for `FirstPlayerIdentity` they are the
/// diagonals of players 2..M, for `SumToOne` those of players 1..M-1, and for
/// `Unnormalized` those of every player.
pub fn make_factors(
    players: usize,
    m0: usize,
    rule: FactorRule,
    free_params: &[f64],
) -> Result<FactorAssignment, FactorError> {
    let expected = rule.free_param_count(players, m0);
    if free_params.len() != expected {
        return Err(FactorError::ParamCount { rule, expected, got: free_params.len() });
    }
    if let Some((k, &v)) = free_params.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        let first = if rule == FactorRule::FirstPlayerIdentity { 1 } else { 0 };
        return Err(FactorError::NonPositive { player: first + k / m0.max(1), constraint: k % m0.max(1), value: v });
    }
    let rows = |params: &[f64]| -> Vec<Vec<f64>> { params.chunks(m0.max(1)).map(<[f64]>::to_vec).collect() };
    let diagonals = match rule {
        FactorRule::FirstPlayerIdentity => {
            let mut d = vec![vec![1.0; m0]];
            if m0 > 0 {
                d.extend(rows(free_params));
            } else {
                d.extend((1..players).map(|_| Vec::new()));
            }
            d
        }
        FactorRule::SumToOne => {
            let mut d: Vec<Vec<f64>> = if m0 > 0 { rows(free_params) } else { vec![Vec::new(); players - 1] };
            let mut last = vec![0.0; m0];
            for (j, l) in last.iter_mut().enumerate() {
                let sum: f64 = d.iter().map(|r| r[j]).sum();
                if sum >= 1.0 {
                    return Err(FactorError::ColumnSum { constraint: j, sum });
                }
                *l = 1.0 - sum;
            }
            d.push(last);
            d
        }
        FactorRule::Unnormalized => {
            if m0 > 0 {
                rows(free_params)
            } else {
                vec![Vec::new(); players]
            }
        }
    };
    FactorAssignment::new(diagonals, rule)
}

/// Per-player multipliers `σ_i = A_i σ`.
pub fn effective_multipliers(assignment: &FactorAssignment, sigma: &[f64]) -> Result<Vec<Vec<f64>>, FactorError> {
    if sigma.len() != assignment.num_shared() {
        return Err(FactorError::Shape {
            expected: (assignment.num_players(), assignment.num_shared()),
            got: (assignment.num_players(), sigma.len()),
        });
    }
    if let Some((index, &value)) = sigma.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(FactorError::NegativeMultiplier { index, value });
    }
    Ok(assignment.diagonals.iter().map(|d| d.iter().zip(sigma).map(|(a, s)| a * s).collect()).collect())
}

/// A parameterized family of factor assignments, used by sweeps and selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorFamily {
    /// `A_player = θ I`, every other player `I`. With `player ≠ 0` this is the
    /// first-player-identity rule with a single scalar.
    Scale { player: usize },
    /// `A_first = θ I`, `A_second = (1-θ) I`, every other player `I`. For two
    /// players this is the sum-to-one rule.
    Split { first: usize, second: usize },
    /// The free parameters of [`make_factors`] under the given rule.
    Rule(FactorRule),
}

impl FactorFamily {
    pub fn param_count(&self, players: usize, m0: usize) -> usize {
        match self {
            FactorFamily::Scale { .. } | FactorFamily::Split { .. } => 1,
            FactorFamily::Rule(r) => r.free_param_count(players, m0),
        }
    }

    /// Open interval each parameter must lie in.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            FactorFamily::Split { .. } | FactorFamily::Rule(FactorRule::SumToOne) => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    /// Normalization rule the produced assignments satisfy.
    pub fn rule(&self, players: usize) -> FactorRule {
        match *self {
            FactorFamily::Scale { player } if player != 0 => FactorRule::FirstPlayerIdentity,
            FactorFamily::Split { first, second } if players == 2 && first != second => FactorRule::SumToOne,
            FactorFamily::Rule(r) => r,
            _ => FactorRule::Unnormalized,
        }
    }

    pub fn factors(&self, players: usize, m0: usize, params: &[f64]) -> Result<FactorAssignment, FactorError> {
        let expected = self.param_count(players, m0);
        if params.len() != expected {
            return Err(FactorError::ParamCount { rule: self.rule(players), expected, got: params.len() });
        }
        match *self {
            FactorFamily::Scale { player } => {
                let mut d = vec![vec![1.0; m0]; players];
                d[player] = vec![params[0]; m0];
                FactorAssignment::new(d, self.rule(players))
            }
            FactorFamily::Split { first, second } => {
                let mut d = vec![vec![1.0; m0]; players];
                d[first] = vec![params[0]; m0];
                d[second] = vec![1.0 - params[0]; m0];
                FactorAssignment::new(d, self.rule(players))
            }
            FactorFamily::Rule(rule) => make_factors(players, m0, rule, params),
        }
    }

    /// Diagonals of `∂A_i/∂θ_k` for every player.
    pub fn derivative(&self, players: usize, m0: usize, k: usize) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; m0]; players];
        match *self {
            FactorFamily::Scale { player } => d[player] = vec![1.0; m0],
            FactorFamily::Split { first, second } => {
                d[first] = vec![1.0; m0];
                d[second] = vec![-1.0; m0];
            }
            FactorFamily::Rule(rule) => {
                let j = k % m0.max(1);
                match rule {
                    FactorRule::FirstPlayerIdentity => d[1 + k / m0][j] = 1.0,
                    FactorRule::SumToOne => {
                        d[k / m0][j] = 1.0;
                        d[players - 1][j] = -1.0;
                    }
                    FactorRule::Unnormalized => d[k / m0][j] = 1.0,
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1() -> GameSpec {
        let p1 = PlayerSpec::new(1, SmoothFn::quadratic(vec![0], vec![2.0], vec![-2.0], 1.0));
        let p2 = PlayerSpec::new(1, SmoothFn::quadratic(vec![1], vec![2.0], vec![-1.0], 0.25));
        build_game(vec![p1, p2], vec![SmoothFn::linear(vec![0, 1], vec![1.0, 1.0], -1.0)]).unwrap()
    }

    #[test]
    fn example1_dimensions() {
        let g = example1();
        assert_eq!((g.dim(), g.num_shared(), g.num_players()), (2, 1, 2));
        assert_eq!(g.block(1), 1..2);
        assert_eq!(g.owner(1), 1);
        assert_eq!(g.costs(&[1.0, 0.5]), vec![0.0, 0.0]);
        assert!(g.costs_separable());
        assert!(g.shared_block_diagonal_quadratic());
    }

    #[test]
    fn single_unconstrained_player() {
        let p = PlayerSpec::new(2, SmoothFn::quadratic(vec![0, 1], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.0));
        let g = build_game(vec![p], vec![]).unwrap();
        assert_eq!((g.num_players(), g.num_shared(), g.num_eq(), g.num_ineq()), (1, 0, 0, 0));
    }

    #[test]
    fn rejects_bad_games() {
        assert_eq!(build_game(vec![], vec![]).unwrap_err(), GameError::NoPlayers);
        let foreign = PlayerSpec::new(1, SmoothFn::linear(vec![0], vec![1.0], 0.0))
            .with_ineq(SmoothFn::linear(vec![1], vec![1.0], 0.0));
        let other = PlayerSpec::new(1, SmoothFn::linear(vec![1], vec![1.0], 0.0));
        assert!(matches!(
            build_game(vec![foreign, other], vec![]),
            Err(GameError::ForeignBlock { player: 0, index: 1, .. })
        ));
        let oob = PlayerSpec::new(1, SmoothFn::linear(vec![3], vec![1.0], 0.0));
        assert!(matches!(build_game(vec![oob], vec![]), Err(GameError::IndexOutOfRange { index: 3, .. })));
    }

    #[test]
    fn make_factors_examples() {
        let a = make_factors(2, 1, FactorRule::SumToOne, &[0.5]).unwrap();
        assert_eq!((a.diagonal(0), a.diagonal(1)), (&[0.5][..], &[0.5][..]));
        let b = make_factors(2, 1, FactorRule::FirstPlayerIdentity, &[3.0]).unwrap();
        assert_eq!((b.diagonal(0), b.diagonal(1)), (&[1.0][..], &[3.0][..]));
        let c = make_factors(3, 2, FactorRule::Unnormalized, &[1.0; 6]).unwrap();
        assert!(c.is_uniform());
    }

    #[test]
    fn make_factors_errors() {
        assert!(matches!(
            make_factors(2, 1, FactorRule::FirstPlayerIdentity, &[0.0]),
            Err(FactorError::NonPositive { player: 1, .. })
        ));
        assert!(matches!(make_factors(3, 1, FactorRule::SumToOne, &[0.6, 0.5]), Err(FactorError::ColumnSum { .. })));
        assert!(matches!(make_factors(2, 2, FactorRule::SumToOne, &[0.5]), Err(FactorError::ParamCount { .. })));
        assert!(FactorAssignment::new(vec![vec![2.0], vec![1.0]], FactorRule::FirstPlayerIdentity).is_err());
    }

    #[test]
    fn effective_multiplier_examples() {
        let a = make_factors(2, 1, FactorRule::FirstPlayerIdentity, &[3.0]).unwrap();
        assert_eq!(effective_multipliers(&a, &[0.5]).unwrap(), vec![vec![0.5], vec![1.5]]);
        assert_eq!(effective_multipliers(&a, &[0.0]).unwrap(), vec![vec![0.0], vec![0.0]]);
        assert!(matches!(effective_multipliers(&a, &[-1.0]), Err(FactorError::NegativeMultiplier { .. })));
        // active branch of the bounded two-player game at α = 3: σ = 8/15
        let s = effective_multipliers(&a, &[8.0 / 15.0]).unwrap();
        assert!(crate::math::abs(s[1][0] - 8.0 / 5.0) < 1e-15);
    }

    #[test]
    fn family_derivatives() {
        let f = FactorFamily::Split { first: 0, second: 1 };
        assert_eq!(f.rule(2), FactorRule::SumToOne);
        let a = f.factors(2, 1, &[0.25]).unwrap();
        assert_eq!(a.diagonal(1), &[0.75]);
        assert_eq!(f.derivative(2, 1, 0), vec![vec![1.0], vec![-1.0]]);
        let r = FactorFamily::Rule(FactorRule::SumToOne);
        assert_eq!(r.derivative(3, 2, 3), vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
    }
}
