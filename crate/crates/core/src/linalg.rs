//! Dense and banded linear algebra on complex matrices.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// LU factorization with partial pivoting of a banded matrix, stored as
/// rows of width `2*kl + ku + 1` (fill-in from pivoting widens the upper
/// band to `kl + ku`).
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<C64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidParameter("banded LU needs a square matrix".into()));
        }
        let (kl, ku) = a.linear_bandwidth();
        let width = 2 * kl + ku + 1;
        let mut band = vec![ZERO; n * width];
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        for (i, j, v) in a.triplets() {
            band[idx(i, j)] = v;
        }
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[idx(k, k)].norm();
            for i in k + 1..=last_row {
                let v = band[idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Solve {
                    reason: format!("exactly singular pivot at column {k}"),
                    residual: f64::INFINITY,
                });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    band.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = band[idx(k, k)];
            for i in k + 1..=last_row {
                let l = band[idx(i, k)] / pivot;
                band[idx(i, k)] = l;
                if l != ZERO {
                    for j in k + 1..=last_col {
                        let u = band[idx(k, j)];
                        band[idx(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            band,
            pivots,
        })
    }

    fn at(&self, i: usize, j: usize) -> C64 {
        self.band[i * self.width + (j + self.kl - i)]
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            if bk != ZERO {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + self.kl + self.ku).min(n - 1) {
                acc -= self.at(i, j) * b[j];
            }
            b[i] = acc / self.at(i, i);
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn residual_norm(a: &SparseMatrix, x: &[C64], b: &[C64]) -> f64 {
    let ax = a.apply(x);
    ax.iter()
        .zip(b)
        .map(|(u, v)| (u - v).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a normal (in particular unitary) matrix through
/// the complex Schur form `A = Q T Q^*`; for normal `A` the triangle `T` is
/// diagonal and `Q` holds orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct NormalEigen {
    pub values: Vec<C64>,
    pub vectors: DMatrix<C64>,
    /// Largest strictly-upper entry of `T`; zero for an exactly normal input.
    pub departure: f64,
}

pub fn normal_eigen(a: &DMatrix<C64>) -> Result<NormalEigen> {
    let n = a.nrows();
    if n == 0 {
        return Ok(NormalEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
            departure: 0.0,
        });
    }
    let schur = a.clone().try_schur(1e-14, 10_000).ok_or_else(|| Error::Solve {
        reason: "Schur iteration did not converge".into(),
        residual: f64::NAN,
    })?;
    let (q, t) = schur.unpack();
    let values = (0..n).map(|i| t[(i, i)]).collect();
    let mut departure: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            departure = departure.max(t[(i, j)].norm());
        }
    }
    if departure > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "matrix is not normal (Schur departure {departure:e})"
        )));
    }
    Ok(NormalEigen {
        values,
        vectors: q,
        departure,
    })
}

/// Eigenvalues of a general square matrix (diagonal of its Schur form).
pub fn eigenvalues(a: &DMatrix<C64>) -> Result<Vec<C64>> {
    let schur = a.clone().try_schur(1e-14, 10_000).ok_or_else(|| Error::Solve {
        reason: "Schur iteration did not converge".into(),
        residual: f64::NAN,
    })?;
    let (_, t) = schur.unpack();
    Ok((0..a.nrows()).map(|i| t[(i, i)]).collect())
}

pub fn inverse(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    a.clone().lu().try_inverse().ok_or_else(|| Error::Solve {
        reason: "matrix is singular".into(),
        residual: f64::INFINITY,
    })
}

pub fn singular_values(a: &DMatrix<C64>) -> Vec<f64> {
    a.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// `max |A^* A - I|` entrywise.
pub fn unitarity_defect(a: &DMatrix<C64>) -> f64 {
    let p = a.adjoint() * a;
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

/// Same as [`unitarity_defect`] without densifying.
pub fn sparse_unitarity_defect(a: &SparseMatrix) -> f64 {
    let n = a.ncols();
    let adj = a.adjoint();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        // row i of A^* times A, using the sparsity of both
        let mut acc = std::collections::BTreeMap::<usize, C64>::new();
        for (k, v) in adj.row(i) {
            for (j, w) in a.row(k) {
                *acc.entry(j).or_insert(ZERO) += v * w;
            }
        }
        acc.entry(i).or_insert(ZERO);
        for (j, v) in acc {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).norm());
        }
    }
    worst
}

/// Operator 2-norm estimate by power iteration on `A^* A`.
pub fn power_norm(a: &SparseMatrix, iterations: usize) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment
    let mut x: Vec<C64> = (0..n)
        .map(|i| C64::from_polar(1.0, 0.618_034 * i as f64 * TAU))
        .collect();
    let mut estimate = 0.0;
    let mut y = vec![ZERO; a.nrows()];
    for _ in 0..iterations {
        let nx = vec_norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        a.matvec(&x, &mut y);
        estimate = vec_norm(&y);
        a.adjoint_matvec(&y, &mut x);
    }
    estimate
}

pub fn to_dvector(x: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(x)
}
