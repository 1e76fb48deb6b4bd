use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Compressed-row complex matrix. Column indices are sorted within each row
/// and explicit zeros are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let rows = diag.iter().enumerate().map(|(i, v)| vec![(i, *v)]).collect();
        Self::from_rows(diag.len(), rows)
    }

    /// Build from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, C64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(j, _)| *j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                assert!(j < ncols, "column {j} out of range");
                let mut v = C64::new(0.0, 0.0);
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != C64::new(0.0, 0.0) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != C64::new(0.0, 0.0))
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.ncols(), rows)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// `(row, col, value)` for every stored entry in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `y = A^* x`.
    pub fn adjoint_matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v.conj() * xi;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v));
        }
        Self::from_rows(self.nrows, rows)
    }

    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v.conj()));
        }
        Self::from_rows(self.nrows, rows)
    }

    /// Row `i` multiplied by `factors[i]`.
    pub fn scale_rows(&self, factors: &[C64]) -> Self {
        assert_eq!(factors.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[p] *= factors[i];
            }
        }
        out
    }

    /// `A + shift * I`.
    pub fn add_diagonal(&self, shift: C64) -> Self {
        let rows = (0..self.nrows)
            .map(|i| {
                let mut r: Vec<_> = self.row(i).collect();
                r.push((i, shift));
                r
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows)
            .map(|i| {
                self.row(i)
                    .chain(other.row(i).map(|(j, v)| (j, -v)))
                    .collect()
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows)
            .map(|i| self.row(i).chain(other.row(i)).collect())
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Largest `|i - j|` over stored entries.
    pub fn linear_bandwidth(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for (i, j, _) in self.triplets() {
            if i > j {
                lower = lower.max(i - j);
            } else {
                upper = upper.max(j - i);
            }
        }
        (lower, upper)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// CSV dump with header `row,col,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,re,im")?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i},{j},{},{}", v.re, v.im)?;
        }
        Ok(())
    }
}
