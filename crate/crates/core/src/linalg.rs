//! Small dense linear algebra: row-major matrices and LU with partial pivoting.
//!
//! The factorization skips structurally zero multipliers and only touches the
//! nonzero tail of each pivot row, so the banded/block-sparse KKT matrices of
//! the racing game factor much faster than their dense size suggests.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::math::abs;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn max_abs(&self) -> f64 {
        crate::math::norm_inf(&self.data)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            *yi = crate::math::dot(self.row(i), x);
        }
    }

    /// `y = Aᵀ x`
    pub fn mul_transpose_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate().take(self.rows) {
            if xi == 0.0 {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `AᵀA`, skipping zero entries.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        let mut nz = Vec::with_capacity(n);
        for i in 0..self.rows {
            let row = self.row(i);
            nz.clear();
            nz.extend((0..n).filter(|&j| row[j] != 0.0));
            for &a in &nz {
                let ra = row[a];
                for &b in &nz {
                    g.data[a * n + b] += ra * row[b];
                }
            }
        }
        g
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &a) in sums.iter_mut().zip(self.row(i)) {
                *s += abs(a);
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular at column {column} (pivot {pivot:e})")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

/// LU factorization `P A = L U` of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl Lu {
    /// Factors `a`. A pivot below `floor * max|a|` is reported as singular.
    pub fn factor(a: &DenseMatrix, floor: f64) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::NotSquare { rows: a.rows, cols: a.cols });
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = floor * a.max_abs().max(f64::MIN_POSITIVE);
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        let mut tail: Vec<usize> = Vec::with_capacity(n);

        for k in 0..n {
            let mut p = k;
            let mut best = abs(lu[k * n + k]);
            for i in k + 1..n {
                let v = abs(lu[i * n + k]);
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > threshold) {
                return Err(LinalgError::Singular { column: k, pivot: best });
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            tail.clear();
            tail.extend((k + 1..n).filter(|&j| lu[k * n + j] != 0.0));
            let (head, rest) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..];
            for row in rest.chunks_exact_mut(n) {
                let lik = row[k];
                if lik == 0.0 {
                    continue;
                }
                let l = lik / pivot;
                row[k] = l;
                for &j in &tail {
                    row[j] -= l * pivot_row[j];
                }
            }
        }
        Ok(Self { n, lu, perm, min_pivot, max_pivot })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&y[i + 1..]).map(|(u, v)| u * v).sum();
            y[i] = (y[i] - s) / row[i];
        }
        b.copy_from_slice(&y);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ z = b
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lu[k * n + i] * z[k];
            }
            z[i] = s / self.lu[i * n + i];
        }
        // Lᵀ w = z
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.lu[k * n + i] * z[k];
            }
            z[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Solve with `passes` rounds of iterative refinement against the original matrix.
    pub fn solve_refined(&self, a: &DenseMatrix, b: &[f64], passes: usize) -> Vec<f64> {
        let mut x = self.solve(b);
        let mut r = vec![0.0; self.n];
        for _ in 0..passes {
            a.mul_vec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            self.solve_in_place(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        x
    }

    /// Ratio of extreme pivots; a cheap lower bound on the condition number.
    pub fn pivot_ratio(&self) -> f64 {
        if self.n == 0 {
            return 1.0;
        }
        self.max_pivot / self.min_pivot
    }

    /// Hager's estimate of the 1-norm condition number `‖A‖₁ ‖A⁻¹‖₁`.
    pub fn condition_estimate(&self, a: &DenseMatrix) -> f64 {
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let new_est: f64 = y.iter().map(|v| abs(*v)).sum();
            let xi: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bj, bv), (j, &v)| if abs(v) > bv { (j, abs(v)) } else { (bj, bv) });
            let ztx = crate::math::dot(&z, &x);
            if new_est <= est || zmax <= ztx {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x.iter_mut().for_each(|v| *v = 0.0);
            x[j] = 1.0;
        }
        est * a.norm_one()
    }
}

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern given as
/// adjacency lists. Returns `order` with `order[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut neighbors: Vec<usize> = Vec::new();
    while order.len() < n {
        // start each component from an unplaced node of minimum degree
        let start = (0..n).filter(|&v| !placed[v]).min_by_key(|&v| (adj[v].len(), v)).expect("unplaced node");
        placed[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            neighbors.clear();
            neighbors.extend(adj[v].iter().copied().filter(|&w| !placed[w]));
            neighbors.sort_by_key(|&w| (adj[w].len(), w));
            for &w in &neighbors {
                if !placed[w] {
                    placed[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// `B = P A Pᵀ` with `B[a][b] = A[order[a]][order[b]]`.
pub fn permute_symmetric(a: &DenseMatrix, order: &[usize], out: &mut DenseMatrix) {
    let n = order.len();
    for (r, &src) in order.iter().enumerate() {
        let row = a.row(src);
        let dst = out.row_mut(r);
        for c in 0..n {
            dst[c] = row[order[c]];
        }
    }
}
