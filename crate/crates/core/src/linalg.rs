// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Dense state matrices, compressed sparse operators and the kernels that
//! combine them.
//!
//! States (density matrices, adjoint states) are dense column-major
//! [`CMat`]s. Operators are stored as [`CsrMatrix`] and only ever multiply
//! dense matrices from the left or the right, so no superoperator is built.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `e^{iθ}`
#[inline]
pub fn cis(theta: f64) -> C64 {
    let (s, co) = theta.sin_cos();
    C64::new(co, s)
}

/// Compressed sparse row matrix with complex entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![ONE; n],
        }
    }

    pub fn diagonal(d: &[C64]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed,
    /// explicit zeros produced by summation are kept so the pattern only depends
    /// on the positions supplied.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Self {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, col, _) in &t {
            assert!(r < nrows && col < ncols, "triplet ({r},{col}) out of bounds");
        }
        t.sort_by_key(|&(r, col, _)| (r, col));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, col, v) in t {
            if last == Some((r, col)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(col);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, col));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    /// Keeps entries with `|a_ij| > tol`.
    pub fn from_dense(m: &CMat, tol: f64) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for col in 0..m.ncols() {
                let v = m[(r, col)];
                if v.norm() > tol {
                    t.push((r, col, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.nrows, self.ncols);
        for (r, col, v) in self.iter() {
            m[(r, col)] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_ptr
    }

    /// Row index of every stored entry, in storage order.
    pub fn row_indices(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            rows.extend(std::iter::repeat(r).take(self.row_ptr[r + 1] - self.row_ptr[r]));
        }
        rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, r: usize, col: usize) -> C64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => ZERO,
        }
    }

    /// Position of `(r, col)` in the value array, if stored.
    pub fn slot(&self, r: usize, col: usize) -> Option<usize> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].binary_search(&col).ok().map(|k| range.start + k)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, col, v)| (col, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.iter().chain(other.iter()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for (r, k, v) in self.iter() {
            for p in other.row_ptr[k]..other.row_ptr[k + 1] {
                t.push((r, other.col_idx[p], v * other.values[p]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                t.push((r1 * other.nrows + r2, c1 * other.ncols + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |A - A†|`
    pub fn hermiticity_error(&self) -> f64 {
        self.iter()
            .map(|(r, col, v)| (v - self.get(col, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Same sparsity pattern as `self`, with `values` replaced.
    pub fn with_values(&self, values: Vec<C64>) -> Self {
        assert_eq!(values.len(), self.nnz());
        CsrMatrix { values, ..self.clone() }
    }

    /// Re-expresses `self` on a wider pattern that contains it.
    pub fn values_on_pattern(&self, pattern: &CsrMatrix) -> Vec<C64> {
        let mut out = vec![ZERO; pattern.nnz()];
        for (r, col, v) in self.iter() {
            let s = pattern.slot(r, col).expect("pattern does not contain operator");
            out[s] += v;
        }
        out
    }

    fn check_square_dense(&self, x: &CMat, out: &CMat) {
        debug_assert_eq!(self.nrows, self.ncols);
        debug_assert_eq!(x.nrows(), self.nrows);
        debug_assert_eq!(x.ncols(), self.nrows);
        debug_assert_eq!(out.shape(), x.shape());
    }

    /// `out += α·S·X`
    pub fn mul_acc(&self, x: &CMat, out: &mut CMat, alpha: C64) {
        self.check_square_dense(x, out);
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..x.ncols() {
            let xc = &xs[j * n..(j + 1) * n];
            let oc = &mut os[j * n..(j + 1) * n];
            for r in 0..self.nrows {
                let mut acc = ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * xc[self.col_idx[k]];
                }
                oc[r] += alpha * acc;
            }
        }
    }

    /// `out += α·S†·X`
    pub fn adj_mul_acc(&self, x: &CMat, out: &mut CMat, alpha: C64) {
        self.check_square_dense(x, out);
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..x.ncols() {
            let xc = &xs[j * n..(j + 1) * n];
            let oc = &mut os[j * n..(j + 1) * n];
            for r in 0..self.nrows {
                let xr = alpha * xc[r];
                if xr == ZERO {
                    continue;
                }
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    oc[self.col_idx[k]] += self.values[k].conj() * xr;
                }
            }
        }
    }

    /// `out += α·X·S`
    pub fn right_mul_acc(&self, x: &CMat, out: &mut CMat, alpha: C64) {
        self.check_square_dense(x, out);
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for r in 0..self.nrows {
            let xc = &xs[r * n..(r + 1) * n];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let col = self.col_idx[k];
                let v = alpha * self.values[k];
                let oc = &mut os[col * n..(col + 1) * n];
                for (o, &xv) in oc.iter_mut().zip(xc) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += α·X·S†`
    pub fn right_adj_mul_acc(&self, x: &CMat, out: &mut CMat, alpha: C64) {
        self.check_square_dense(x, out);
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for r in 0..self.nrows {
            let oc = &mut os[r * n..(r + 1) * n];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let col = self.col_idx[k];
                let v = alpha * self.values[k].conj();
                let xc = &xs[col * n..(col + 1) * n];
                for (o, &xv) in oc.iter_mut().zip(xc) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `Tr[Φ†·S·R]`
    pub fn trace_sandwich_left(&self, phi: &CMat, rho: &CMat) -> C64 {
        // Σ_{(i,k)} S_ik Σ_j conj(Φ_ij) R_kj
        let n = phi.nrows();
        let (ps, rs) = (phi.as_slice(), rho.as_slice());
        let mut acc = ZERO;
        for j in 0..n {
            let pc = &ps[j * n..(j + 1) * n];
            let rc = &rs[j * n..(j + 1) * n];
            for i in 0..self.nrows {
                let mut s = ZERO;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[k] * rc[self.col_idx[k]];
                }
                acc += pc[i].conj() * s;
            }
        }
        acc
    }

    /// `Tr[Φ†·R·S]`
    pub fn trace_sandwich_right(&self, phi: &CMat, rho: &CMat) -> C64 {
        // Σ_{(k,j)} S_kj Σ_i conj(Φ_ij) R_ik
        let n = phi.nrows();
        let (ps, rs) = (phi.as_slice(), rho.as_slice());
        let mut acc = ZERO;
        for k in 0..self.nrows {
            let rc = &rs[k * n..(k + 1) * n];
            for p in self.row_ptr[k]..self.row_ptr[k + 1] {
                let j = self.col_idx[p];
                let pc = &ps[j * n..(j + 1) * n];
                let mut s = ZERO;
                for (a, b) in pc.iter().zip(rc) {
                    s += a.conj() * b;
                }
                acc += self.values[p] * s;
            }
        }
        acc
    }

    /// `Tr[S·R]`
    pub fn trace_product(&self, rho: &CMat) -> C64 {
        self.iter().map(|(r, col, v)| v * rho[(col, r)]).sum()
    }
}

/// `Tr[A†B] = Σ conj(A_ij) B_ij`
pub fn inner(a: &CMat, b: &CMat) -> C64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.conj() * y).sum()
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermiticity_error(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut e: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            e = e.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    e
}

pub fn ket(n: usize, k: usize) -> CMat {
    let mut v = CMat::zeros(n, 1);
    v[(k, 0)] = ONE;
    v
}

/// `|k⟩⟨k|` in dimension `n`.
pub fn projector(n: usize, k: usize) -> CMat {
    let mut m = CMat::zeros(n, n);
    m[(k, k)] = ONE;
    m
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// `out = a`, without reallocating.
#[inline]
pub fn copy_into(out: &mut CMat, a: &CMat) {
    out.as_mut_slice().copy_from_slice(a.as_slice());
}

/// `out += α·a`
#[inline]
pub fn axpy(out: &mut CMat, alpha: C64, a: &CMat) {
    for (o, x) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
        *o += alpha * x;
    }
}

/// `out += α·a` with real α.
#[inline]
pub fn axpy_re(out: &mut CMat, alpha: f64, a: &CMat) {
    for (o, x) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
        *o += x * alpha;
    }
}

#[inline]
pub fn fill_zero(out: &mut CMat) {
    out.as_mut_slice().fill(ZERO);
}

#[inline]
pub fn scale_re(out: &mut CMat, s: f64) {
    out.as_mut_slice().iter_mut().for_each(|v| *v *= s);
}

/// Ascending eigenpairs of a Hermitian matrix (eigenvectors as columns).
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(a.clone(), 1e-15, 100 * n.max(10))
        .ok_or_else(|| Error::EigenNoConvergence(format!("hermitian eigensolve of order {n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    Ok((vals, vecs))
}

/// Ascending eigenpairs of a real symmetric matrix.
pub fn eigh_real(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(a.clone(), 1e-15, 100 * n.max(10))
        .ok_or_else(|| Error::EigenNoConvergence(format!("symmetric eigensolve of order {n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    Ok((vals, vecs))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> Result<f64> {
    let (vals, _) = eigh(&((a + a.adjoint()) * c(0.5, 0.0)))?;
    Ok(vals[0])
}

#[derive(Debug, Default)]
struct CounterInner {
    live: AtomicUsize,
    peak: AtomicUsize,
}

/// Counts simultaneously retained N×N matrices created through it.
#[derive(Clone, Debug, Default)]
pub struct MatrixCounter(Arc<CounterInner>);

impl MatrixCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(&self, n: usize) -> TrackedMatrix {
        self.track(CMat::zeros(n, n))
    }

    pub fn track(&self, mat: CMat) -> TrackedMatrix {
        let live = self.0.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.0.peak.fetch_max(live, Ordering::SeqCst);
        TrackedMatrix { mat, counter: self.clone() }
    }

    pub fn live(&self) -> usize {
        self.0.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.0.peak.load(Ordering::SeqCst)
    }

    /// Restarts peak tracking from the current live count.
    pub fn reset_peak(&self) {
        self.0.peak.store(self.live(), Ordering::SeqCst);
    }
}

/// A dense matrix registered with a [`MatrixCounter`] for its whole lifetime.
#[derive(Debug)]
pub struct TrackedMatrix {
    mat: CMat,
    counter: MatrixCounter,
}

impl TrackedMatrix {
    /// Releases the matrix from tracking.
    pub fn into_inner(mut self) -> CMat {
        std::mem::replace(&mut self.mat, CMat::zeros(0, 0))
    }
}

impl Clone for TrackedMatrix {
    fn clone(&self) -> Self {
        self.counter.track(self.mat.clone())
    }
}

impl Drop for TrackedMatrix {
    fn drop(&mut self) {
        self.counter.0.live.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Deref for TrackedMatrix {
    type Target = CMat;
    fn deref(&self) -> &CMat {
        &self.mat
    }
}

impl DerefMut for TrackedMatrix {
    fn deref_mut(&mut self) -> &mut CMat {
        &mut self.mat
    }
}
