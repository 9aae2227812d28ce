//! Smooth scalar functions over a designated block of the stacked decision vector.
//!
//! Every cost and constraint in a game is a [`SmoothFn`]: a list of global
//! variable indices (its support) plus a body that is evaluated on the local
//! vector gathered from those indices. Quadratic bodies keep their `(Q, q, b)`
//! data so the sensitivity code can read the curvature directly.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{abs, powi};

/// Body of a general smooth function, evaluated on its local argument vector.
pub trait SmoothKernel: Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64], grad: &mut [f64]);
    /// Writes the row-major `arity × arity` Hessian and returns `true`, or
    /// returns `false` when no analytic Hessian exists (finite differences are
    /// then used).
    fn hessian(&self, _y: &[f64], _hess: &mut [f64]) -> bool {
        false
    }
}

/// `½ yᵀ Q y + qᵀ y + b` with symmetric `Q` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q_mat: Vec<f64>,
    pub lin: Vec<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn arity(&self) -> usize {
        self.lin.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let k = self.arity();
        let mut v = self.constant;
        for i in 0..k {
            v += self.lin[i] * y[i];
            let row = &self.q_mat[i * k..(i + 1) * k];
            let qy: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
            v += 0.5 * y[i] * qy;
        }
        v
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let k = self.arity();
        for i in 0..k {
            let row = &self.q_mat[i * k..(i + 1) * k];
            grad[i] = self.lin[i] + row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Sum of monomials `coef · Π y_j^p_j` in local variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    arity: usize,
    terms: Vec<Monomial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    /// `(local variable, power)`, powers ≥ 1.
    pub powers: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|p| p.1).sum()
    }

    fn eval_with(&self, y: &[f64], skip: &[(usize, u32)]) -> f64 {
        // `skip` lists (variable, order) pairs to differentiate by
        for &(j, r) in skip {
            let p: u32 = self.powers.iter().filter(|q| q.0 == j).map(|q| q.1).sum();
            if r > p {
                return 0.0;
            }
        }
        let mut v = self.coef;
        for &(j, p) in &self.powers {
            let red = skip.iter().filter(|s| s.0 == j).map(|s| s.1).sum::<u32>();
            if red > p {
                return 0.0;
            }
            let mut falling = 1.0;
            for r in 0..red {
                falling *= (p - r) as f64;
            }
            v *= falling * powi(y[j], (p - red) as i32);
        }
        v
    }
}

impl Polynomial {
    /// Builds a polynomial, merging repeated variables inside each monomial.
    pub fn new(arity: usize, terms: Vec<Monomial>) -> Self {
        let terms = terms
            .into_iter()
            .map(|m| {
                let mut merged: Vec<(usize, u32)> = Vec::new();
                for (j, p) in m.powers {
                    assert!(j < arity, "monomial variable {j} outside arity {arity}");
                    match merged.iter_mut().find(|q| q.0 == j) {
                        Some(q) => q.1 += p,
                        None if p > 0 => merged.push((j, p)),
                        None => {}
                    }
                }
                merged.sort_unstable();
                Monomial { coef: m.coef, powers: merged }
            })
            .collect();
        Self { arity, terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Converts a polynomial of degree ≤ 2 into `(Q, q, b)` form.
    pub fn to_quadratic(&self) -> Option<Quadratic> {
        if self.degree() > 2 {
            return None;
        }
        let k = self.arity;
        let mut q_mat = vec![0.0; k * k];
        let mut lin = vec![0.0; k];
        let mut constant = 0.0;
        for t in &self.terms {
            match t.powers.as_slice() {
                [] => constant += t.coef,
                [(j, 1)] => lin[*j] += t.coef,
                [(j, 2)] => q_mat[j * k + j] += 2.0 * t.coef,
                [(a, 1), (b, 1)] if a == b => q_mat[a * k + a] += 2.0 * t.coef,
                [(a, 1), (b, 1)] => {
                    q_mat[a * k + b] += t.coef;
                    q_mat[b * k + a] += t.coef;
                }
                _ => return None,
            }
        }
        Some(Quadratic { q_mat, lin, constant })
    }
}

impl SmoothKernel for Polynomial {
    fn arity(&self) -> usize {
        self.arity
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval_with(y, &[])).sum()
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        for (j, g) in grad.iter_mut().enumerate().take(self.arity) {
            *g = self.terms.iter().map(|t| t.eval_with(y, &[(j, 1)])).sum();
        }
    }

    fn hessian(&self, y: &[f64], hess: &mut [f64]) -> bool {
        let k = self.arity;
        for a in 0..k {
            for b in 0..k {
                let skip: &[(usize, u32)] = if a == b { &[(a, 2)] } else { &[(a, 1), (b, 1)] };
                hess[a * k + b] = self.terms.iter().map(|t| t.eval_with(y, skip)).sum();
            }
        }
        true
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Kernel built from closures; the Hessian comes from finite differences.
pub struct FnKernel {
    arity: usize,
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
}

impl SmoothKernel for FnKernel {
    fn arity(&self) -> usize {
        self.arity
    }
    fn value(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        (self.gradient)(y, grad)
    }
}

#[derive(Clone)]
enum Body {
    Quadratic(Quadratic),
    Kernel(Arc<dyn SmoothKernel>),
}

/// Smooth scalar function of the variables listed in `support`.
#[derive(Clone)]
pub struct SmoothFn {
    support: Vec<usize>,
    body: Body,
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn")
            .field("support", &self.support)
            .field("quadratic", &self.is_quadratic())
            .finish()
    }
}

impl SmoothFn {
    /// Quadratic `½ yᵀQy + qᵀy + b` of `y = x[support]`. `q_mat` is row-major
    /// and is symmetrized.
    pub fn quadratic(support: Vec<usize>, q_mat: Vec<f64>, lin: Vec<f64>, constant: f64) -> Self {
        let k = support.len();
        assert_eq!(lin.len(), k, "linear term length must match support");
        assert_eq!(q_mat.len(), k * k, "quadratic term must be k×k");
        let mut sym = q_mat;
        for i in 0..k {
            for j in i + 1..k {
                let m = 0.5 * (sym[i * k + j] + sym[j * k + i]);
                sym[i * k + j] = m;
                sym[j * k + i] = m;
            }
        }
        Self { support, body: Body::Quadratic(Quadratic { q_mat: sym, lin, constant }) }
    }

    pub fn linear(support: Vec<usize>, coeffs: Vec<f64>, constant: f64) -> Self {
        let k = support.len();
        Self::quadratic(support, vec![0.0; k * k], coeffs, constant)
    }

    pub fn constant(value: f64) -> Self {
        Self::linear(Vec::new(), Vec::new(), value)
    }

    /// Wraps a polynomial; degree ≤ 2 polynomials are stored as quadratics.
    pub fn polynomial(support: Vec<usize>, poly: Polynomial) -> Self {
        assert_eq!(poly.arity, support.len(), "polynomial arity must match support");
        match poly.to_quadratic() {
            Some(q) => Self { support, body: Body::Quadratic(q) },
            None => Self::from_kernel(support, Arc::new(poly)),
        }
    }

    pub fn from_kernel(support: Vec<usize>, kernel: Arc<dyn SmoothKernel>) -> Self {
        assert_eq!(kernel.arity(), support.len(), "kernel arity must match support");
        Self { support, body: Body::Kernel(kernel) }
    }

    /// General function from value and gradient closures over the local vector.
    pub fn from_closures<V, G>(support: Vec<usize>, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let arity = support.len();
        Self::from_kernel(
            support,
            Arc::new(FnKernel { arity, value: Box::new(value), gradient: Box::new(gradient) }),
        )
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn arity(&self) -> usize {
        self.support.len()
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.body, Body::Quadratic(_))
    }

    pub fn as_quadratic(&self) -> Option<&Quadratic> {
        match &self.body {
            Body::Quadratic(q) => Some(q),
            Body::Kernel(_) => None,
        }
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.support.iter().map(|&i| x[i]).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_local(&self.gather(x))
    }

    pub fn value_local(&self, y: &[f64]) -> f64 {
        match &self.body {
            Body::Quadratic(q) => q.value(y),
            Body::Kernel(k) => k.value(y),
        }
    }

    /// Gradient with respect to the support variables.
    pub fn gradient_local(&self, y: &[f64], grad: &mut [f64]) {
        match &self.body {
            Body::Quadratic(q) => q.gradient(y, grad),
            Body::Kernel(k) => k.gradient(y, grad),
        }
    }

    /// Dense gradient over the full vector `x` (length of `x`).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let y = self.gather(x);
        let mut g = vec![0.0; y.len()];
        self.gradient_local(&y, &mut g);
        let mut full = vec![0.0; x.len()];
        for (&i, gi) in self.support.iter().zip(g) {
            full[i] += gi;
        }
        full
    }

    /// Row-major Hessian with respect to the support variables. Falls back to
    /// central differences of the gradient (step `1e-6·(1+|y|)`).
    pub fn hessian_local(&self, y: &[f64], hess: &mut [f64]) {
        let k = y.len();
        match &self.body {
            Body::Quadratic(q) => hess[..k * k].copy_from_slice(&q.q_mat),
            Body::Kernel(kern) => {
                if !kern.hessian(y, hess) {
                    fd_hessian(kern.as_ref(), y, hess);
                }
            }
        }
    }
}

fn fd_hessian(kern: &dyn SmoothKernel, y: &[f64], hess: &mut [f64]) {
    let k = y.len();
    let mut yp = y.to_vec();
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    for j in 0..k {
        let h = 1e-6 * (1.0 + abs(y[j]));
        yp[j] = y[j] + h;
        kern.gradient(&yp, &mut gp);
        yp[j] = y[j] - h;
        kern.gradient(&yp, &mut gm);
        yp[j] = y[j];
        for i in 0..k {
            hess[i * k + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let m = 0.5 * (hess[i * k + j] + hess[j * k + i]);
            hess[i * k + j] = m;
            hess[j * k + i] = m;
        }
    }
}

/// Largest relative mismatch between the analytic gradient of `f` at `x` and
/// central differences of its value, with an absolute floor of 1 on the scale.
pub fn gradient_fd_mismatch(f: &SmoothFn, x: &[f64]) -> f64 {
    let y = f.gather(x);
    let k = y.len();
    let mut g = vec![0.0; k];
    f.gradient_local(&y, &mut g);
    let mut yp = y.clone();
    let mut worst = 0.0f64;
    for j in 0..k {
        let h = 1e-6 * (1.0 + abs(y[j]));
        yp[j] = y[j] + h;
        let fp = f.value_local(&yp);
        yp[j] = y[j] - h;
        let fm = f.value_local(&yp);
        yp[j] = y[j];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max(abs(fd - g[j]) / abs(g[j]).max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> SmoothFn {
        // 2 a^3 b - a b + 3
        SmoothFn::polynomial(
            vec![0, 2],
            Polynomial::new(
                2,
                vec![
                    Monomial { coef: 2.0, powers: vec![(0, 3), (1, 1)] },
                    Monomial { coef: -1.0, powers: vec![(0, 1), (1, 1)] },
                    Monomial { coef: 3.0, powers: vec![] },
                ],
            ),
        )
    }

    #[test]
    fn polynomial_value_and_derivatives() {
        let f = cubic();
        assert!(!f.is_quadratic());
        let x = [1.5, 99.0, -2.0];
        assert!(abs(f.value(&x) - (2.0 * 3.375 * -2.0 + 3.0 + 3.0)) < 1e-12);
        let g = f.gradient(&x);
        assert!(abs(g[0] - (6.0 * 2.25 * -2.0 + 2.0)) < 1e-12);
        assert_eq!(g[1], 0.0);
        assert!(abs(g[2] - (2.0 * 3.375 - 1.5)) < 1e-12);
        let mut h = [0.0; 4];
        f.hessian_local(&f.gather(&x), &mut h);
        assert!(abs(h[0] - 12.0 * 1.5 * -2.0) < 1e-12);
        assert!(abs(h[1] - (6.0 * 2.25 - 1.0)) < 1e-12);
        assert_eq!(h[3], 0.0);
    }

    #[test]
    fn low_degree_polynomial_becomes_quadratic() {
        // (x-1)^2 = x^2 - 2x + 1
        let f = SmoothFn::polynomial(
            vec![0],
            Polynomial::new(
                1,
                vec![
                    Monomial { coef: 1.0, powers: vec![(0, 2)] },
                    Monomial { coef: -2.0, powers: vec![(0, 1)] },
                    Monomial { coef: 1.0, powers: vec![] },
                ],
            ),
        );
        let q = f.as_quadratic().unwrap();
        assert_eq!(q.q_mat, vec![2.0]);
        assert_eq!(f.value(&[3.0]), 4.0);
    }

    #[test]
    fn finite_difference_hessian_fallback() {
        let f = SmoothFn::from_closures(
            vec![0, 1],
            |y| crate::math::sin(y[0]) * y[1],
            |y, g| {
                g[0] = crate::math::cos(y[0]) * y[1];
                g[1] = crate::math::sin(y[0]);
            },
        );
        let mut h = [0.0; 4];
        f.hessian_local(&[0.3, 2.0], &mut h);
        assert!(abs(h[0] + crate::math::sin(0.3) * 2.0) < 1e-6);
        assert!(abs(h[1] - crate::math::cos(0.3)) < 1e-6);
        assert!(gradient_fd_mismatch(&f, &[0.3, 2.0]) < 1e-5);
    }
}
