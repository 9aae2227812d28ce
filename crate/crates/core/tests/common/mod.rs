#![allow(dead_code)]

use gnep_core::linalg::{DenseMatrix, Lu};
use gnep_core::mcp::AffineMcp;
use gnep_core::{build_game, GameSpec, Mcp, PlayerSpec, SmoothFn};
use rand::Rng;

/// Random quadratic game with linear shared constraints.
pub struct RandomGame {
    pub game: GameSpec,
    /// Equilibrium of the game without shared constraints.
    pub free_equilibrium: Vec<f64>,
}

/// Player `i` minimizes `½ xᵢᵀQᵢxᵢ + xᵢᵀCᵢx₋ᵢ + cᵢᵀxᵢ` with `Qᵢ ≻ I`. The coupling
/// `Cᵢ` is zero when `separable` and otherwise small enough to keep the
/// pseudo-gradient strongly monotone. The first shared constraint cuts off
/// the unconstrained equilibrium so that it binds.
pub fn random_quadratic_game<R: Rng>(rng: &mut R, players: usize, shared: usize, separable: bool) -> RandomGame {
    let dims: Vec<usize> = (0..players).map(|_| rng.random_range(1..=2)).collect();
    let n: usize = dims.iter().sum();
    let offsets: Vec<usize> = dims.iter().scan(0, |acc, &d| {
        let o = *acc;
        *acc += d;
        Some(o)
    }).collect();

    // pseudo-gradient is P x + p
    let mut p_mat = DenseMatrix::zeros(n, n);
    let mut p_vec = vec![0.0; n];
    let mut specs = Vec::new();
    for i in 0..players {
        let (o, d) = (offsets[i], dims[i]);
        let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut q = vec![vec![0.0; n]; n];
        for r in 0..d {
            for c in 0..d {
                let mut v: f64 = (0..d).map(|k| b[r * d + k] * b[c * d + k]).sum();
                if r == c {
                    v += 1.0 + d as f64;
                }
                q[o + r][o + c] = v;
            }
        }
        if !separable {
            let scale = 0.3 / players as f64;
            for r in 0..d {
                for c in 0..n {
                    if c < o || c >= o + d {
                        let v = rng.random_range(-scale..scale);
                        q[o + r][c] = v;
                        q[c][o + r] = v;
                    }
                }
            }
        }
        let lin: Vec<f64> = (0..n).map(|c| if c >= o && c < o + d { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
        for r in o..o + d {
            for c in 0..n {
                p_mat[(r, c)] = q[r][c];
            }
            p_vec[r] = lin[r];
        }
        let support: Vec<usize> = if separable { (o..o + d).collect() } else { (0..n).collect() };
        let flat: Vec<f64> = support.iter().flat_map(|&r| support.iter().map(move |&c| (r, c))).map(|(r, c)| q[r][c]).collect();
        let lin: Vec<f64> = support.iter().map(|&c| lin[c]).collect();
        specs.push(PlayerSpec::new(d, SmoothFn::quadratic(support, flat, lin, 0.0)));
    }
    let lu = Lu::factor(&p_mat, 1e-12).expect("strongly monotone pseudo-gradient");
    let free_equilibrium: Vec<f64> = lu.solve(&p_vec).into_iter().map(|v| -v).collect();

    let mut constraints = Vec::new();
    for j in 0..shared {
        let a: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.2..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let at: f64 = a.iter().zip(&free_equilibrium).map(|(x, y)| x * y).sum();
        let margin = if j == 0 { rng.random_range(0.2..1.0) } else { rng.random_range(-1.0..1.0) };
        constraints.push(SmoothFn::linear((0..n).collect(), a, -(at - margin)));
    }
    RandomGame { game: build_game(specs, constraints).expect("well formed"), free_equilibrium }
}

/// Positive factor diagonals in `[lo, hi)`.
pub fn random_factors<R: Rng>(rng: &mut R, players: usize, shared: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..players).map(|_| (0..shared).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

/// Dimension of the affine MCPs checked against branch enumeration.
pub const D: usize = 5;

/// `M = BBᵀ + I + S` with `S` skew: positive definite, hence a P-matrix and
/// the box MCP has exactly one solution.
pub fn p_matrix(b: &[f64], s: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(D, D);
    for r in 0..D {
        for c in 0..D {
            let bb: f64 = (0..D).map(|k| b[r * D + k] * b[c * D + k]).sum();
            let skew = if r < c { s[r * D + c] } else if r > c { -s[c * D + r] } else { 0.0 };
            m[(r, c)] = bb + skew + if r == c { 1.0 } else { 0.0 };
        }
    }
    m
}

/// Every solution found by trying all `3^D` assignments of each component to
/// its lower bound, its upper bound, or the interior with `F = 0`.
pub fn brute_force(mcp: &AffineMcp) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut branch = [0u8; D];
    'outer: for code in 0..3usize.pow(D as u32) {
        let mut c = code;
        for b in branch.iter_mut() {
            *b = (c % 3) as u8;
            c /= 3;
        }
        let mut z = vec![0.0; D];
        let mut interior = Vec::new();
        for j in 0..D {
            match branch[j] {
                0 if mcp.lower[j].is_finite() => z[j] = mcp.lower[j],
                1 if mcp.upper[j].is_finite() => z[j] = mcp.upper[j],
                2 => interior.push(j),
                _ => continue 'outer,
            }
        }
        if !interior.is_empty() {
            let k = interior.len();
            let mut sub = DenseMatrix::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (a, &r) in interior.iter().enumerate() {
                rhs[a] = -mcp.q[r];
                for j in 0..D {
                    if branch[j] != 2 {
                        rhs[a] -= mcp.m[(r, j)] * z[j];
                    }
                }
                for (b, &c) in interior.iter().enumerate() {
                    sub[(a, b)] = mcp.m[(r, c)];
                }
            }
            let Ok(lu) = Lu::factor(&sub, 1e-14) else { continue };
            for (a, v) in lu.solve(&rhs).into_iter().enumerate() {
                z[interior[a]] = v;
            }
        }
        let mut f = vec![0.0; D];
        mcp.eval(&z, &mut f);
        let tol = 1e-10;
        let ok = (0..D).all(|j| match branch[j] {
            0 => f[j] >= -tol,
            1 => f[j] <= tol,
            _ => z[j] >= mcp.lower[j] - tol && z[j] <= mcp.upper[j] + tol,
        });
        if ok {
            out.push(z);
        }
    }
    out
}
