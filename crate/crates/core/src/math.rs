//! Scalar math and the small dense kernels the network is built from.
//!
//! All transcendentals go through `libm` (never `std`) so that a given build
//! produces identical bits on every platform. Dot products accumulate in four
//! partial sums combined as `(s0+s1)+(s2+s3)`; that order is part of the
//! reproducibility contract and is mirrored by the independent reference
//! implementations in the test suites.

use alloc::vec;
use alloc::vec::Vec;

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Four-accumulator dot product (see module docs for the ordering contract).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let mut ia = a.chunks_exact(4);
    let mut ib = b.chunks_exact(4);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        s0 += ca[0] * cb[0];
        s1 += ca[1] * cb[1];
        s2 += ca[2] * cb[2];
        s3 += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ia.remainder().iter().zip(ib.remainder()) {
        tail += x * y;
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Dense row-major matrix backed by a flat `Vec<f64>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `y += A x`
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *yi += dot(row, x);
        }
    }

    /// `y[i] += A[i,:] x` for rows with `active[i]`; inactive rows untouched.
    pub fn matvec_rows_acc(&self, x: &[f64], y: &mut [f64], active: &[bool]) {
        debug_assert_eq!(active.len(), self.rows);
        for ((yi, row), act) in y
            .iter_mut()
            .zip(self.data.chunks_exact(self.cols.max(1)))
            .zip(active)
        {
            if *act {
                *yi += dot(row, x);
            }
        }
    }

    /// `y += A^T g`. Rows whose adjoint is exactly zero are skipped; adding a
    /// zero row is a bitwise no-op, so the skip cannot change results.
    pub fn matvec_t_acc(&self, g: &[f64], y: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (gi, row) in g.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            if *gi != 0.0 {
                axpy(*gi, row, y);
            }
        }
    }

    /// `A += g x^T` (gradient accumulation), skipping zero-adjoint rows.
    pub fn outer_acc(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (gi, row) in g.iter().zip(self.data.chunks_exact_mut(self.cols.max(1))) {
            if *gi != 0.0 {
                axpy(*gi, x, row);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}
