//! Generalized Nash equilibria of games with shared constraints.
//!
//! Each player's share of the shared-constraint multipliers is a strictly
//! positive diagonal factor matrix `A_i` applied to one common multiplier
//! vector `σ`. Identical factors give the normalized equilibrium; other
//! factors reach the non-normalized equilibria. The stacked KKT conditions are
//! solved as a mixed complementarity problem by a semismooth Newton method.
//!
//! Module map:
//!
//! * [`game`]: players, costs, constraints, factor matrices and rules.
//! * [`kkt`]: scaled, normalized and full KKT assemblies and residuals.
//! * [`mcp`]: Fischer–Burmeister semismooth Newton solver and multistart.
//! * [`explorer`]: factor sweeps and equilibrium sensitivities.
//! * [`selector`]: bi-level choice of factors for a top-level objective.
//! * [`oracles`]: closed-form equilibria of small reference games.
//! * [`racing`]: two-car racing game, closed-loop simulation, Monte Carlo.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod explorer;
pub mod function;
pub mod game;
pub mod kkt;
pub mod linalg;
pub mod math;
pub mod mcp;
pub mod oracles;
pub mod racing;
pub mod selector;

pub use function::{Polynomial, Monomial, SmoothFn, SmoothKernel};
pub use game::{
    build_game, effective_multipliers, make_factors, FactorAssignment, FactorError, FactorFamily, FactorRule,
    GameError, GameSpec, PlayerSpec,
};
pub use kkt::{
    assemble_full, assemble_normalized, assemble_scaled, kkt_residual, GneSolution, KktMcp, KktResidual, Mcp,
};
pub use mcp::{fb_compose, multistart_solve, solve, SolveReport, SolveStatus, SolverOptions};
pub use explorer::{sensitivity, sweep, verify_monotonicity, SensitivityReport, SweepOptions, SweepResult};
pub use oracles::{example1, harker, three_car};
pub use racing::{
    bicycle_step, build_race_game, monte_carlo, simulate_closed_loop, solve_step, CarInput, CarState, McConfig,
    McSummary, RaceGame, RaceParams, Track,
};
pub use selector::{select, Objective, SelectionProblem, SelectionResult};
