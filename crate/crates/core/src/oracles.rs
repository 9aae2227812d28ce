//! Closed-form equilibria of three small reference games, and builders for
//! those games.
//!
//! * `example1`: two scalar players, costs `(x−1)²` and `(y−½)²`, shared
//!   `x + y ≤ 1`.
//! * `three_car`: one-step race on a two-lane track, where car 3 shares a lane
//!   with car 2 and must stay ahead of it (`x₂ ≤ x₃`).
//! * `harker`: two players with box bounds `0 ≤ xᵢ ≤ 10` and shared
//!   `x₁ + x₂ ≤ 15`, which has an interior equilibrium and, for large enough
//!   factor ratio, a second equilibrium on the shared constraint.

use alloc::vec;
use alloc::vec::Vec;

use crate::function::SmoothFn;
use crate::game::{build_game, GameSpec, PlayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("parameter {value} is outside the open interval ({lo}, {hi})")]
    Domain { value: f64, lo: f64, hi: f64 },
}

fn check(value: f64, lo: f64, hi: f64) -> Result<(), OracleError> {
    if value > lo && value < hi {
        Ok(())
    } else {
        Err(OracleError::Domain { value, lo, hi })
    }
}

/// Two scalar players with costs `(x−1)²`, `(y−½)²` and shared `x + y − 1 ≤ 0`.
pub fn example1_game() -> GameSpec {
    let p1 = PlayerSpec::new(1, SmoothFn::quadratic(vec![0], vec![2.0], vec![-2.0], 1.0));
    let p2 = PlayerSpec::new(1, SmoothFn::quadratic(vec![1], vec![2.0], vec![-1.0], 0.25));
    build_game(vec![p1, p2], vec![SmoothFn::linear(vec![0, 1], vec![1.0, 1.0], -1.0)])
        .expect("reference game is well formed")
}

/// Equilibrium `(x, y) = (1 − α/2, α/2)` where `α = α₁/(α₁+α₂)`.
pub fn example1(alpha: f64) -> Result<(f64, f64), OracleError> {
    check(alpha, 0.0, 1.0)?;
    Ok((1.0 - 0.5 * alpha, 0.5 * alpha))
}

/// Scaled MCP point `[x, y, σ]` under factors `(α, 1−α)`; the shared
/// multiplier is 1 on the whole family.
pub fn example1_point(alpha: f64) -> Result<Vec<f64>, OracleError> {
    let (x, y) = example1(alpha)?;
    Ok(vec![x, y, 1.0])
}

/// Player costs `(α²/4, (1−α)²/4)` along the family.
pub fn example1_costs(alpha: f64) -> Result<(f64, f64), OracleError> {
    check(alpha, 0.0, 1.0)?;
    Ok((0.25 * alpha * alpha, 0.25 * (1.0 - alpha) * (1.0 - alpha)))
}

/// Initial positions of the three cars.
pub const THREE_CAR_START: [f64; 3] = [0.0, 0.5, 0.75];
/// Step length of the one-step race.
pub const THREE_CAR_DT: f64 = 1.0;

/// Variables `[x₁, v₁, x₂, v₂, x₃, v₃]`; each car has the dynamics equality
/// `xᵢ − xᵢ(0) − vᵢΔt = 0`; shared `x₂ − x₃ ≤ 0`. Costs:
/// `J₁ = −x₁ + x₂ + v₁²/2`, `J₂ = −x₂ + x₁ + v₂²/2`, `J₃ = −x₁ + x₂ + v₃²/2`.
pub fn three_car_game() -> GameSpec {
    // support order: [own x, own v, other x]
    let cost = |own: usize, other: usize, sign_own: f64| {
        SmoothFn::quadratic(
            vec![own, own + 1, other],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![sign_own, 0.0, -sign_own],
            0.0,
        )
    };
    let dynamics = |i: usize| SmoothFn::linear(vec![2 * i, 2 * i + 1], vec![1.0, -THREE_CAR_DT], -THREE_CAR_START[i]);
    let p1 = PlayerSpec::new(2, cost(0, 2, -1.0)).with_eq(dynamics(0));
    let p2 = PlayerSpec::new(2, cost(2, 0, -1.0)).with_eq(dynamics(1));
    // J₃ = −x₁ + x₂ + v₃²/2 does not read x₃
    let j3 = SmoothFn::quadratic(
        vec![5, 0, 2],
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, -1.0, 1.0],
        0.0,
    );
    let p3 = PlayerSpec::new(2, j3).with_eq(dynamics(2));
    build_game(vec![p1, p2, p3], vec![SmoothFn::linear(vec![2, 4], vec![1.0, -1.0], 0.0)])
        .expect("reference game is well formed")
}

/// Three-car equilibrium state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeCarState {
    pub x: [f64; 3],
    pub v: [f64; 3],
    /// Fictitious shared multiplier for the factors it was computed under.
    pub sigma: f64,
}

impl ThreeCarState {
    /// `[x₁, v₁, x₂, v₂, x₃, v₃]`
    pub fn stacked(&self) -> [f64; 6] {
        [self.x[0], self.v[0], self.x[1], self.v[1], self.x[2], self.v[2]]
    }
}

/// Reduction of the car-2/car-3 factors to `α = α₂/(α₂+α₃)`.
pub fn three_car_alpha(alpha2: f64, alpha3: f64) -> f64 {
    alpha2 / (alpha2 + alpha3)
}

/// Equilibrium for `α ∈ (0, 1)`: `x₁ = v₁ = 1`, `v₂ = 1 − ¾α`, `v₃ = ¾(1−α)`,
/// `x₂ = x₃ = 3/2 − ¾α`; `σ` is reported for factors `(·, α, 1−α)`.
pub fn three_car(alpha: f64) -> Result<ThreeCarState, OracleError> {
    check(alpha, 0.0, 1.0)?;
    let x23 = 1.5 - 0.75 * alpha;
    Ok(ThreeCarState { x: [1.0, x23, x23], v: [1.0, 1.0 - 0.75 * alpha, 0.75 * (1.0 - alpha)], sigma: 0.75 })
}

/// Equilibrium for raw factors `(α₁, α₂, α₃)`. Car 1's factor never matters.
pub fn three_car_from_factors(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<ThreeCarState, OracleError> {
    check(alpha1, 0.0, f64::INFINITY)?;
    check(alpha2, 0.0, f64::INFINITY)?;
    check(alpha3, 0.0, f64::INFINITY)?;
    let mut s = three_car(three_car_alpha(alpha2, alpha3))?;
    s.sigma = 0.75 / (alpha2 + alpha3);
    Ok(s)
}

/// Scaled MCP point `[x₁, v₁, x₂, v₂, x₃, v₃, μ₁, μ₂, μ₃, σ]` under factors
/// `(α₁, α₂, α₃)`.
pub fn three_car_point(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Vec<f64>, OracleError> {
    let s = three_car_from_factors(alpha1, alpha2, alpha3)?;
    let mut z = s.stacked().to_vec();
    // stationarity in the positions gives μ₁ = 1, μ₂ = 1 − α₂σ = v₂, μ₃ = α₃σ = v₃
    z.extend([1.0, s.v[1], s.v[2], s.sigma]);
    Ok(z)
}

/// `J₁ + J₂ + J₃ = −x₁ + x₂ + (v₁² + v₂² + v₃²)/2` along the family.
pub fn three_car_total_cost(alpha: f64) -> Result<f64, OracleError> {
    let s = three_car(alpha)?;
    Ok(-s.x[0] + s.x[1] + 0.5 * s.v.iter().map(|v| v * v).sum::<f64>())
}

/// Harker's two-player game with box bounds and shared `x₁ + x₂ ≤ 15`.
/// Each player has private constraints `[−xᵢ ≤ 0, xᵢ − 10 ≤ 0]`.
pub fn harker_game() -> GameSpec {
    let j1 = SmoothFn::quadratic(vec![0, 1], vec![2.0, 8.0 / 3.0, 8.0 / 3.0, 0.0], vec![-34.0, 0.0], 0.0);
    let j2 = SmoothFn::quadratic(vec![1, 0], vec![2.0, 1.25, 1.25, 0.0], vec![-24.25, 0.0], 0.0);
    let bounds = |i: usize, p: PlayerSpec| {
        p.with_ineq(SmoothFn::linear(vec![i], vec![-1.0], 0.0))
            .with_ineq(SmoothFn::linear(vec![i], vec![1.0], -10.0))
    };
    let p1 = bounds(0, PlayerSpec::new(1, j1));
    let p2 = bounds(1, PlayerSpec::new(1, j2));
    build_game(vec![p1, p2], vec![SmoothFn::linear(vec![0, 1], vec![1.0, 1.0], -15.0)])
        .expect("reference game is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarkerBranch {
    /// Every constraint inactive.
    Interior,
    /// Shared constraint active, bounds inactive.
    SharedActive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarkerCandidate {
    pub branch: HarkerBranch,
    pub x: [f64; 2],
    pub sigma: f64,
}

impl HarkerCandidate {
    /// Scaled MCP point `[x₁, x₂, λ₁¹, λ₁², λ₂¹, λ₂², σ]` (bound multipliers zero).
    pub fn point(&self) -> Vec<f64> {
        vec![self.x[0], self.x[1], 0.0, 0.0, 0.0, 0.0, self.sigma]
    }
}

/// Equilibrium candidates for `A₁ = 1`, `A₂ = α`, kept only when they satisfy
/// `0 ≤ x ≤ 10` and `x₁ + x₂ ≤ 15`.
///
/// The interior point `(5, 9)` always qualifies. On the shared constraint,
/// `σ = 8/(8α−9)`, `x₁ = (72α−69)/(8α−9)`, `x₂ = (48α−66)/(8α−9)`, which is
/// admissible for `α ≥ 21/8`.
pub fn harker(alpha: f64) -> Result<Vec<HarkerCandidate>, OracleError> {
    check(alpha, 0.0, f64::INFINITY)?;
    let feasible = |x: [f64; 2]| x.iter().all(|&v| (0.0..=10.0).contains(&v)) && x[0] + x[1] <= 15.0 + 1e-12;
    let mut out = Vec::new();
    let interior = [5.0, 9.0];
    if feasible(interior) {
        out.push(HarkerCandidate { branch: HarkerBranch::Interior, x: interior, sigma: 0.0 });
    }
    let den = 8.0 * alpha - 9.0;
    if den > 0.0 {
        let x = [(72.0 * alpha - 69.0) / den, (48.0 * alpha - 66.0) / den];
        if feasible(x) {
            out.push(HarkerCandidate { branch: HarkerBranch::SharedActive, x, sigma: 8.0 / den });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_factors, FactorRule};
    use crate::kkt::kkt_residual;
    use crate::math::abs;

    #[test]
    fn example1_values() {
        assert_eq!(example1(0.5).unwrap(), (0.75, 0.25));
        let (x, y) = example1(1e-12).unwrap();
        assert!(abs(x - 1.0) < 1e-11 && abs(y) < 1e-11);
        let (x, y) = example1(1.0 - 1e-12).unwrap();
        assert!(abs(x - 0.5) < 1e-11 && abs(y - 0.5) < 1e-11);
        assert!(example1(1.0).is_err() && example1(0.0).is_err());
    }

    #[test]
    fn three_car_values() {
        let s = three_car(0.5).unwrap();
        assert_eq!(s.x, [1.0, 1.125, 1.125]);
        let s = three_car(1.0 - 1e-12).unwrap();
        assert!(abs(s.x[1] - 0.75) < 1e-11);
        let a = three_car_from_factors(0.1, 2.0, 2.0).unwrap();
        let b = three_car_from_factors(10.0, 2.0, 2.0).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn harker_candidates() {
        let c = harker(3.0).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].x, [5.0, 9.0]);
        assert!(abs(c[1].x[0] - 9.8) < 1e-12 && abs(c[1].x[1] - 5.2) < 1e-12);
        assert!(abs(c[1].sigma - 8.0 / 15.0) < 1e-15);
        let c2 = harker(2.0).unwrap();
        assert_eq!(c2.len(), 1);
        assert!(harker(0.0).is_err());
    }

    #[test]
    fn oracle_points_satisfy_kkt() {
        let g = harker_game();
        for alpha in [2.7, 3.0, 5.0, 10.0] {
            let f = make_factors(2, 1, FactorRule::FirstPlayerIdentity, &[alpha]).unwrap();
            for c in harker(alpha).unwrap() {
                let r = kkt_residual(&g, &f, &c.point()).unwrap();
                assert!(r.overall <= 1e-10, "α={alpha} {c:?} {r:?}");
            }
        }
        let g = three_car_game();
        for (a1, a2, a3) in [(1.0, 0.5, 0.5), (0.1, 0.2, 0.8), (10.0, 3.0, 1.0)] {
            let f = make_factors(3, 1, FactorRule::Unnormalized, &[a1, a2, a3]).unwrap();
            let r = kkt_residual(&g, &f, &three_car_point(a1, a2, a3).unwrap()).unwrap();
            assert!(r.overall <= 1e-12, "{r:?}");
        }
        let g = example1_game();
        for alpha in [0.1, 0.5, 0.9] {
            let f = make_factors(2, 1, FactorRule::SumToOne, &[alpha]).unwrap();
            let r = kkt_residual(&g, &f, &example1_point(alpha).unwrap()).unwrap();
            assert!(r.overall <= 1e-12);
        }
    }
}
