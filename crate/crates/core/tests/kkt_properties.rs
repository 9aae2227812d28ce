mod common;

use gnep_core::kkt::{unscaled_kkt_residual, KktParts};
use gnep_core::linalg::DenseMatrix;
use gnep_core::{
    assemble_normalized, assemble_scaled, build_game, effective_multipliers, solve, FactorAssignment, FactorRule,
    GameSpec, GneSolution, Mcp, Monomial, PlayerSpec, Polynomial, SmoothFn, SolverOptions,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mono(coef: f64, powers: &[(usize, u32)]) -> Monomial {
    Monomial { coef, powers: powers.to_vec() }
}

/// Two players over `[x0, x1 | x2, x3]` with polynomial costs, one private
/// equality, one private inequality and a quadratic shared constraint.
fn nonlinear_game() -> GameSpec {
    let c1 = Polynomial::new(4, vec![mono(1.0, &[(0, 4)]), mono(0.5, &[(0, 3), (2, 1)]), mono(1.0, &[(1, 2), (3, 2)]), mono(-1.0, &[(1, 1)])]);
    let c2 = Polynomial::new(4, vec![mono(2.0, &[(2, 2)]), mono(1.0, &[(3, 4)]), mono(-0.7, &[(0, 1), (2, 1), (3, 1)])]);
    let h = Polynomial::new(2, vec![mono(1.0, &[(0, 2)]), mono(1.0, &[(1, 1)]), mono(-1.0, &[])]);
    let g = Polynomial::new(2, vec![mono(1.0, &[(0, 1), (1, 1)]), mono(-2.0, &[])]);
    let s = Polynomial::new(2, vec![mono(1.0, &[(0, 2)]), mono(1.0, &[(1, 2)]), mono(-4.0, &[])]);
    let p1 = PlayerSpec::new(2, SmoothFn::polynomial(vec![0, 1, 2, 3], c1)).with_eq(SmoothFn::polynomial(vec![0, 1], h));
    let p2 = PlayerSpec::new(2, SmoothFn::polynomial(vec![0, 1, 2, 3], c2)).with_ineq(SmoothFn::polynomial(vec![2, 3], g));
    build_game(vec![p1, p2], vec![SmoothFn::polynomial(vec![0, 2], s)]).unwrap()
}

fn fd_jacobian(mcp: &dyn Mcp, z: &[f64]) -> DenseMatrix {
    let d = mcp.dim();
    let mut jac = DenseMatrix::zeros(d, d);
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    for c in 0..d {
        let h = 1e-6 * (1.0 + z[c].abs());
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[c] += h;
        zm[c] -= h;
        mcp.eval(&zp, &mut fp);
        mcp.eval(&zm, &mut fm);
        for r in 0..d {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_matches_finite_differences(
        z in proptest::collection::vec(-1.5f64..1.5, 7),
        a in 0.1f64..5.0,
    ) {
        let game = nonlinear_game();
        let factors = FactorAssignment::new(vec![vec![1.0], vec![a]], FactorRule::FirstPlayerIdentity).unwrap();
        let mcp = assemble_scaled(&game, &factors).unwrap();
        prop_assert_eq!(mcp.dim(), 7);
        let mut jac = DenseMatrix::zeros(7, 7);
        mcp.jacobian(&z, &mut jac);
        let fd = fd_jacobian(&mcp, &z);
        for r in 0..7 {
            for c in 0..7 {
                let (x, y) = (jac[(r, c)], fd[(r, c)]);
                prop_assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "J[{},{}] = {} vs {}", r, c, x, y);
            }
        }
    }

    #[test]
    fn layout_round_trip(seed in any::<u64>(), players in 2usize..5, shared in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_quadratic_game(&mut rng, players, shared, false).game;
        let factors = FactorAssignment::identity(players, shared);
        let mcp = assemble_scaled(&g, &factors).unwrap();
        let layout = mcp.layout();
        let z: Vec<f64> = (0..layout.dim).map(|k| k as f64 * 0.37 - 1.0).collect();
        let parts: KktParts = layout.unpack(&z);
        prop_assert_eq!(layout.pack(&parts), z.clone());
        prop_assert_eq!(layout.unpack(&layout.pack(&parts)), parts);
    }

    #[test]
    fn effective_multipliers_keep_sign_pattern(
        sigma in proptest::collection::vec(prop_oneof![Just(0.0), 1e-6f64..10.0], 1..5),
        diag in proptest::collection::vec(1e-3f64..1e3, 3),
    ) {
        let m0 = sigma.len();
        let diagonals: Vec<Vec<f64>> = diag.iter().map(|&d| (0..m0).map(|j| d * (1.0 + j as f64)).collect()).collect();
        let a = FactorAssignment::new(diagonals, FactorRule::Unnormalized).unwrap();
        for row in effective_multipliers(&a, &sigma).unwrap() {
            for (s_i, s) in row.iter().zip(&sigma) {
                prop_assert_eq!(*s_i > 0.0, *s > 0.0);
                prop_assert_eq!(*s_i == 0.0, *s == 0.0);
            }
        }
    }

    #[test]
    fn common_rescaling_keeps_player_multipliers(
        sigma in proptest::collection::vec(0.0f64..10.0, 1..4),
        diag in proptest::collection::vec(1e-2f64..1e2, 2..4),
        c in 1e-3f64..1e3,
    ) {
        let m0 = sigma.len();
        let diagonals: Vec<Vec<f64>> = diag.iter().map(|&d| vec![d; m0]).collect();
        let a = FactorAssignment::new(diagonals, FactorRule::Unnormalized).unwrap();
        let scaled_sigma: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        let before = effective_multipliers(&a, &sigma).unwrap();
        let after = effective_multipliers(&a.rescaled(c).unwrap(), &scaled_sigma).unwrap();
        for (r1, r2) in before.iter().zip(&after) {
            for (x, y) in r1.iter().zip(r2) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn identical_factors_match_normalized_assembly(
        seed in any::<u64>(),
        players in 2usize..5,
        shared in 1usize..4,
        z_seed in proptest::collection::vec(-3.0f64..3.0, 64),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_quadratic_game(&mut rng, players, shared, false).game;
        let scaled = assemble_scaled(&g, &FactorAssignment::identity(players, shared)).unwrap();
        let normalized = assemble_normalized(&g);
        prop_assert_eq!(scaled.dim(), normalized.dim());
        prop_assert_eq!(scaled.lower(), normalized.lower());
        prop_assert_eq!(scaled.upper(), normalized.upper());
        let d = scaled.dim();
        let z: Vec<f64> = (0..d).map(|k| z_seed[k % z_seed.len()]).collect();
        let (mut f1, mut f2) = (vec![0.0; d], vec![0.0; d]);
        scaled.eval(&z, &mut f1);
        normalized.eval(&z, &mut f2);
        prop_assert_eq!(f1, f2);
    }

    #[test]
    fn scaled_solutions_solve_the_unscaled_system(seed in any::<u64>(), players in 2usize..5, shared in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_quadratic_game(&mut rng, players, shared, false).game;
        let diagonals = common::random_factors(&mut rng, players, shared, 0.1, 10.0);
        let factors = FactorAssignment::new(diagonals, FactorRule::Unnormalized).unwrap();
        let mcp = assemble_scaled(&g, &factors).unwrap();
        let report = solve(&mcp, &SolverOptions::default(), None).unwrap();
        if report.converged() {
            let sol = GneSolution::from_scaled(&g, &factors, &report.z).unwrap();
            prop_assert!(sol.unscaled_residual.overall <= 1e-7, "{:?}", sol.unscaled_residual);
            let direct = unscaled_kkt_residual(&g, &sol.x, &sol.mu, &sol.lambda, &sol.effective_sigma);
            prop_assert_eq!(direct, sol.unscaled_residual);
        }
    }
}
