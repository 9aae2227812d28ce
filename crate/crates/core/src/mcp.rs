//! Damped semismooth Newton method for box-constrained MCPs.
//!
//! The complementarity conditions are recast as the root of a Fischer–Burmeister
//! system `Φ(z) = 0`:
//!
//! * free variables use `F_j` directly,
//! * lower-bounded variables use `φ(z_j − l_j, F_j)`,
//! * upper-bounded variables use `−φ(u_j − z_j, −F_j)`,
//! * doubly bounded variables use `φ(z_j − l_j, −φ(u_j − z_j, −F_j))`,
//!
//! with `φ(a, b) = a + b − √(a² + b²)`. Steps come from an element of the
//! generalized Jacobian; the merit `½‖Φ‖²` is reduced by an Armijo backtracking
//! search, falling back to Levenberg–Marquardt and steepest-descent directions
//! when the Newton system is singular or the Newton step is not a descent
//! direction.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kkt::Mcp;
use crate::linalg::{permute_symmetric, reverse_cuthill_mckee, DenseMatrix, Lu};
use crate::math::{abs, dot, norm_inf, sqrt};

/// Fischer–Burmeister function `a + b − √(a² + b²)`.
#[inline]
pub fn fb_compose(a: f64, b: f64) -> f64 {
    // a + b - r suffers cancellation when both are positive; use the
    // rationalized form there.
    let r = crate::math::hypot(a, b);
    if a > 0.0 && b > 0.0 {
        2.0 * a * b / (a + b + r)
    } else {
        a + b - r
    }
}

/// Partial derivatives of `φ` at `(a, b)`; at the kink a fixed element of the
/// generalized gradient is returned.
#[inline]
fn fb_partials(a: f64, b: f64) -> (f64, f64) {
    let r = crate::math::hypot(a, b);
    if r < 1e-14 {
        let c = 1.0 - core::f64::consts::FRAC_1_SQRT_2;
        (c, c)
    } else {
        (1.0 - a / r, 1.0 - b / r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖Φ‖∞ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Relative pivot floor below which the Newton matrix counts as singular.
    pub reg_floor: f64,
    /// Number of perturbed restarts after a failed line search.
    pub restarts: usize,
    /// `‖Φ‖∞` above which the run is declared divergent.
    pub divergence: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
            backtrack: 0.5,
            armijo: 1e-4,
            reg_floor: 1e-10,
            restarts: 5,
            divergence: 1e8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let ok = self.tol > 0.0
            && self.max_iters >= 1
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.reg_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SolveError::BadOptions)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Singular,
    Diverged,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::Singular => "singular",
            SolveStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// `‖Φ(z)‖∞` at the returned point.
    pub fb_residual: f64,
    /// `‖z − mid(l, u, z − F(z))‖∞`, the natural MCP residual.
    pub natural_residual: f64,
    pub z: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("initial guess has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid solver options")]
    BadOptions,
    #[error("no start converged ({attempts} attempts)")]
    NoneConverged { attempts: usize, reports: Vec<SolveReport> },
    #[error("multistart needs at least one start")]
    NoStarts,
}

/// Evaluates `Φ(z)` given `F(z)`.
pub fn fb_residual_vector(lower: &[f64], upper: &[f64], z: &[f64], f: &[f64], phi: &mut [f64]) {
    for j in 0..z.len() {
        let (l, u) = (lower[j], upper[j]);
        phi[j] = match (l.is_finite(), u.is_finite()) {
            (false, false) => f[j],
            (true, false) => fb_compose(z[j] - l, f[j]),
            (false, true) => -fb_compose(u - z[j], -f[j]),
            (true, true) => fb_compose(z[j] - l, -fb_compose(u - z[j], -f[j])),
        };
    }
}

/// `‖z − mid(l, u, z − F)‖∞`.
pub fn natural_residual(lower: &[f64], upper: &[f64], z: &[f64], f: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..z.len() {
        let p = (z[j] - f[j]).max(lower[j]).min(upper[j]);
        worst = worst.max(abs(z[j] - p));
    }
    worst
}

struct Workspace {
    f: Vec<f64>,
    phi: Vec<f64>,
    jac: DenseMatrix,
    newton: DenseMatrix,
}

fn merit<P: Mcp + ?Sized>(mcp: &P, z: &[f64], ws: &mut Workspace) -> f64 {
    mcp.eval(z, &mut ws.f);
    fb_residual_vector(mcp.lower(), mcp.upper(), z, &ws.f, &mut ws.phi);
    0.5 * dot(&ws.phi, &ws.phi)
}

/// Fills `ws.newton` with a generalized Jacobian element of `Φ` at `z`
/// (`ws.f` must hold `F(z)`).
fn newton_matrix<P: Mcp + ?Sized>(mcp: &P, z: &[f64], ws: &mut Workspace) {
    mcp.jacobian(z, &mut ws.jac);
    let (lower, upper) = (mcp.lower(), mcp.upper());
    let d = z.len();
    for j in 0..d {
        let (l, u, fj) = (lower[j], upper[j], ws.f[j]);
        // row = diag_coef · e_j + grad_coef · ∇F_j
        let (diag_coef, grad_coef) = match (l.is_finite(), u.is_finite()) {
            (false, false) => (0.0, 1.0),
            (true, false) => fb_partials(z[j] - l, fj),
            (false, true) => fb_partials(u - z[j], -fj),
            (true, true) => {
                let inner = fb_compose(u - z[j], -fj);
                let (ia, ib) = fb_partials(u - z[j], -fj);
                let (oa, ob) = fb_partials(z[j] - l, -inner);
                (oa + ob * ia, ob * ib)
            }
        };
        let src = ws.jac.row(j);
        let dst = ws.newton.row_mut(j);
        if grad_coef == 0.0 {
            dst.iter_mut().for_each(|v| *v = 0.0);
        } else if grad_coef == 1.0 {
            dst.copy_from_slice(src);
        } else {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a = grad_coef * b;
            }
        }
        dst[j] += diag_coef;
    }
}

/// Systems at least this large are factored in a bandwidth-reducing order.
const BAND_ORDER_MIN_DIM: usize = 64;

/// Reverse Cuthill–McKee order of the Newton matrix, rebuilt whenever the
/// matrix gains entries outside the pattern seen so far.
struct BandOrder {
    seen: Vec<bool>,
    adj: Vec<Vec<usize>>,
    order: Vec<usize>,
    permuted: DenseMatrix,
}

impl BandOrder {
    fn new(d: usize) -> Self {
        Self {
            seen: vec![false; d * d],
            adj: vec![Vec::new(); d],
            order: (0..d).collect(),
            permuted: DenseMatrix::zeros(d, d),
        }
    }

    fn update(&mut self, m: &DenseMatrix) {
        let d = self.adj.len();
        let mut grew = false;
        for i in 0..d {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 && !self.seen[i * d + j] {
                    self.seen[i * d + j] = true;
                    self.seen[j * d + i] = true;
                    if i != j {
                        self.adj[i].push(j);
                        self.adj[j].push(i);
                    }
                    grew = true;
                }
            }
        }
        if grew {
            self.order = reverse_cuthill_mckee(&self.adj);
        }
    }
}

/// Solves `N dir = rhs`, or `None` when `N` is numerically singular.
fn newton_direction(n: &DenseMatrix, band: Option<&mut BandOrder>, rhs: &[f64], floor: f64) -> Option<Vec<f64>> {
    match band {
        None => Lu::factor(n, floor).ok().map(|lu| lu.solve_refined(n, rhs, 1)),
        Some(b) => {
            b.update(n);
            permute_symmetric(n, &b.order, &mut b.permuted);
            let lu = Lu::factor(&b.permuted, floor).ok()?;
            let rp: Vec<f64> = b.order.iter().map(|&o| rhs[o]).collect();
            let xp = lu.solve_refined(&b.permuted, &rp, 1);
            let mut x = vec![0.0; rhs.len()];
            for (new, &old) in b.order.iter().enumerate() {
                x[old] = xp[new];
            }
            Some(x)
        }
    }
}

/// Solves the MCP from `initial` (or the instance's default start).
pub fn solve<P: Mcp + ?Sized>(mcp: &P, options: &SolverOptions, initial: Option<&[f64]>) -> Result<SolveReport, SolveError> {
    options.validate()?;
    let d = mcp.dim();
    let mut z = match initial {
        Some(z0) if z0.len() != d => return Err(SolveError::Dimension { expected: d, got: z0.len() }),
        Some(z0) => z0.to_vec(),
        None => mcp.default_start(),
    };
    let mut ws = Workspace {
        f: vec![0.0; d],
        phi: vec![0.0; d],
        jac: DenseMatrix::zeros(d, d),
        newton: DenseMatrix::zeros(d, d),
    };
    let mut band = (d >= BAND_ORDER_MIN_DIM).then(|| BandOrder::new(d));
    let mut trial = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut psi = merit(mcp, &z, &mut ws);
    let mut restarts_left = options.restarts;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;

    while iterations < options.max_iters {
        let res = norm_inf(&ws.phi);
        if res <= options.tol {
            status = SolveStatus::Converged;
            break;
        }
        if !(res <= options.divergence) {
            status = SolveStatus::Diverged;
            break;
        }
        iterations += 1;
        newton_matrix(mcp, &z, &mut ws);
        ws.newton.mul_transpose_vec(&ws.phi, &mut grad);

        let rhs: Vec<f64> = ws.phi.iter().map(|v| -v).collect();
        let mut dir = match newton_direction(&ws.newton, band.as_mut(), &rhs, options.reg_floor) {
            Some(dir) => dir,
            None => {
                // Levenberg–Marquardt step on the normal equations
                let mut normal = ws.newton.gram();
                let nu = options.reg_floor.max(sqrt(dot(&grad, &grad)).min(1.0)) * normal.max_abs().max(1.0);
                for j in 0..d {
                    normal[(j, j)] += nu;
                }
                match Lu::factor(&normal, options.reg_floor * 1e-3) {
                    Ok(lu) => lu.solve(&grad).into_iter().map(|v| -v).collect(),
                    Err(_) => {
                        status = SolveStatus::Singular;
                        break;
                    }
                }
            }
        };
        let dn = sqrt(dot(&dir, &dir));
        let mut slope = dot(&grad, &dir);
        if !slope.is_finite() || slope > -1e-8 * libm::pow(dn, 2.1) {
            dir.iter_mut().zip(&grad).for_each(|(di, gi)| *di = -gi);
            slope = -dot(&grad, &grad);
        }

        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            for j in 0..d {
                trial[j] = z[j] + t * dir[j];
            }
            let psi_t = merit(mcp, &trial, &mut ws);
            if psi_t.is_finite() && psi_t <= psi + options.armijo * t * slope {
                core::mem::swap(&mut z, &mut trial);
                psi = psi_t;
                accepted = true;
                break;
            }
            t *= options.backtrack;
        }
        if !accepted {
            if restarts_left == 0 {
                merit(mcp, &z, &mut ws);
                break;
            }
            restarts_left -= 1;
            let (lower, upper) = (mcp.lower(), mcp.upper());
            for j in 0..d {
                let jitter = rng.random_range(-1.0..1.0) * 1e-2 * (1.0 + abs(z[j]));
                z[j] = (z[j] + jitter).max(lower[j]).min(upper[j]);
            }
            psi = merit(mcp, &z, &mut ws);
        }
    }
    let fb_res = norm_inf(&ws.phi);
    if status == SolveStatus::MaxIters && fb_res <= options.tol {
        status = SolveStatus::Converged;
    }
    let nat = natural_residual(mcp.lower(), mcp.upper(), &z, &ws.f);
    Ok(SolveReport { status, iterations, fb_residual: fb_res, natural_residual: nat, z })
}

/// Outcome of several starts on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistartReport {
    /// Best converged report: smallest natural residual, then lexicographically
    /// smallest `z`.
    pub best: SolveReport,
    /// Every report, in start order.
    pub reports: Vec<SolveReport>,
    /// Indices into `reports` of pairwise distinct converged solutions, best first.
    pub distinct: Vec<usize>,
}

impl MultistartReport {
    pub fn distinct_solutions(&self) -> impl Iterator<Item = &SolveReport> {
        self.distinct.iter().map(|&i| &self.reports[i])
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> core::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(core::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    core::cmp::Ordering::Equal
}

/// Whether two solutions differ by more than `1e-6` relative.
pub fn distinct_points(a: &[f64], b: &[f64]) -> bool {
    let scale = norm_inf(a).max(norm_inf(b)).max(1.0);
    a.iter().zip(b).any(|(x, y)| abs(x - y) > 1e-6 * scale)
}

/// Combines independently computed reports (in start order) into a
/// [`MultistartReport`]. Sequential and parallel drivers both use this so they
/// agree on the winner.
pub fn collect_multistart(reports: Vec<SolveReport>) -> Result<MultistartReport, SolveError> {
    if reports.is_empty() {
        return Err(SolveError::NoStarts);
    }
    let mut order: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].converged()).collect();
    if order.is_empty() {
        return Err(SolveError::NoneConverged { attempts: reports.len(), reports });
    }
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&reports[a], &reports[b]);
        ra.natural_residual
            .partial_cmp(&rb.natural_residual)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| lex_cmp(&ra.z, &rb.z))
            .then(a.cmp(&b))
    });
    let mut distinct: Vec<usize> = Vec::new();
    for &i in &order {
        if distinct.iter().all(|&k| distinct_points(&reports[k].z, &reports[i].z)) {
            distinct.push(i);
        }
    }
    Ok(MultistartReport { best: reports[order[0]].clone(), reports, distinct })
}

/// Runs [`solve`] from every start and keeps the best converged result.
pub fn multistart_solve<P: Mcp + ?Sized>(
    mcp: &P,
    options: &SolverOptions,
    starts: &[Vec<f64>],
) -> Result<MultistartReport, SolveError> {
    let reports = starts.iter().map(|s| solve(mcp, options, Some(s))).collect::<Result<Vec<_>, _>>()?;
    collect_multistart(reports)
}

/// Affine MCP `F(z) = M z + q`, handy for linear complementarity problems.
#[derive(Debug, Clone)]
pub struct AffineMcp {
    pub m: DenseMatrix,
    pub q: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Mcp for AffineMcp {
    fn dim(&self) -> usize {
        self.q.len()
    }
    fn lower(&self) -> &[f64] {
        &self.lower
    }
    fn upper(&self) -> &[f64] {
        &self.upper
    }
    fn eval(&self, z: &[f64], f: &mut [f64]) {
        self.m.mul_vec(z, f);
        for (fi, qi) in f.iter_mut().zip(&self.q) {
            *fi += qi;
        }
    }
    fn jacobian(&self, _z: &[f64], jac: &mut DenseMatrix) {
        jac.clone_from(&self.m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fb_examples() {
        assert_eq!(fb_compose(0.0, 0.0), 0.0);
        assert!(abs(fb_compose(3.0, 4.0) - 2.0) < 1e-15);
        assert_eq!(fb_compose(0.0, 7.0), 0.0);
        assert_eq!(fb_compose(5.0, 0.0), 0.0);
        assert!(fb_compose(-1.0, 2.0) < 0.0);
    }

    #[test]
    fn solves_small_lcp() {
        // min ½ z'Mz + q'z, z ≥ 0 with M = [[2,1],[1,2]], q = [-1, 1] → z = (0.5, 0)
        let mcp = AffineMcp {
            m: DenseMatrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 2.0]),
            q: vec![-1.0, 1.0],
            lower: vec![0.0; 2],
            upper: vec![f64::INFINITY; 2],
        };
        let r = solve(&mcp, &SolverOptions::default(), None).unwrap();
        assert!(r.converged());
        assert!(abs(r.z[0] - 0.5) < 1e-9 && abs(r.z[1]) < 1e-9, "{:?}", r.z);
    }

    #[test]
    fn doubly_bounded_variable_hits_upper_bound() {
        // F(z) = z - 3 on [0, 1] → z = 1 with F < 0
        let mcp = AffineMcp {
            m: DenseMatrix::identity(1),
            q: vec![-3.0],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let r = solve(&mcp, &SolverOptions::default(), None).unwrap();
        assert!(r.converged() && abs(r.z[0] - 1.0) < 1e-9);
    }

    #[test]
    fn upper_bounded_only() {
        // F(z) = z + 2 on (-inf, -5] → z = -5, F = -3 ≤ 0
        let mcp = AffineMcp {
            m: DenseMatrix::identity(1),
            q: vec![2.0],
            lower: vec![f64::NEG_INFINITY],
            upper: vec![-5.0],
        };
        let r = solve(&mcp, &SolverOptions::default(), None).unwrap();
        assert!(r.converged() && abs(r.z[0] + 5.0) < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_initial_dimension() {
        let mcp = AffineMcp { m: DenseMatrix::identity(1), q: vec![0.0], lower: vec![0.0], upper: vec![1.0] };
        assert!(matches!(
            solve(&mcp, &SolverOptions::default(), Some(&[0.0, 1.0])),
            Err(SolveError::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn singular_free_system() {
        // F(z) = [z0 + z1 - 1, z0 + z1 - 2] has no root
        let mcp = AffineMcp {
            m: DenseMatrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]),
            q: vec![-1.0, -2.0],
            lower: vec![f64::NEG_INFINITY; 2],
            upper: vec![f64::INFINITY; 2],
        };
        let r = solve(&mcp, &SolverOptions { max_iters: 20, ..Default::default() }, None).unwrap();
        assert!(!r.converged());
    }
}
