use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, Result};
use crate::params::ModelParams;

/// Product of integer intervals `[a_1, b_1] x ... x [a_d, b_d]`.
///
/// Sites are enumerated row-major with the last axis fastest: the linear index
/// of `(x_1, ..., x_d)` is `sum_j (x_j - a_j) * stride_j` with
/// `stride_d = 1` and `stride_j = stride_{j+1} * len_{j+1}`. This matches the
/// Kronecker product `A_1 ⊗ ... ⊗ A_d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    intervals: Vec<(i64, i64)>,
}

impl LatticeBox {
    pub fn new(intervals: Vec<(i64, i64)>) -> Result<Self> {
        if intervals.is_empty() {
            return geometry("box needs at least one axis");
        }
        if let Some((a, b)) = intervals.iter().find(|(a, b)| b < a) {
            return geometry(format!("empty interval [{a}, {b}]"));
        }
        Ok(Self { intervals })
    }

    pub fn interval(a: i64, b: i64) -> Result<Self> {
        Self::new(vec![(a, b)])
    }

    /// `[lo, hi]^d`.
    pub fn cube(d: usize, lo: i64, hi: i64) -> Result<Self> {
        Self::new(vec![(lo, hi); d])
    }

    /// The box `[-2L, 2L+1]^d`, union of the cubes `[2n, 2n+1]^d` with
    /// `|n|_inf <= L`.
    pub fn centered(d: usize, l: usize) -> Self {
        let l = l as i64;
        Self::cube(d, -2 * l, 2 * l + 1).expect("nonempty")
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(i64, i64)] {
        &self.intervals
    }

    pub fn axis_len(&self, axis: usize) -> usize {
        let (a, b) = self.intervals[axis];
        (b - a + 1) as usize
    }

    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|j| self.axis_len(j)).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.axis_len(j + 1);
        }
        s
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dim()
            && site
                .iter()
                .zip(&self.intervals)
                .all(|(x, (a, b))| a <= x && x <= b)
    }

    pub fn contains_box(&self, other: &LatticeBox) -> bool {
        other.dim() == self.dim()
            && other
                .intervals
                .iter()
                .zip(&self.intervals)
                .all(|((oa, ob), (a, b))| a <= oa && ob <= b)
    }

    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let strides = self.strides();
        Some(
            site.iter()
                .zip(&self.intervals)
                .zip(&strides)
                .map(|((x, (a, _)), s)| (x - a) as usize * s)
                .sum(),
        )
    }

    pub fn site(&self, mut index: usize) -> Vec<i64> {
        let strides = self.strides();
        let mut out = vec![0i64; self.dim()];
        for j in 0..self.dim() {
            out[j] = self.intervals[j].0 + (index / strides[j]) as i64;
            index %= strides[j];
        }
        out
    }

    pub fn sites(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.volume()).map(move |i| self.site(i))
    }

    /// Even start, odd end and at least four sites on every axis.
    pub fn is_neumann_compatible(&self) -> bool {
        self.intervals
            .iter()
            .all(|&(a, b)| a.rem_euclid(2) == 0 && b.rem_euclid(2) == 1 && b >= a + 3)
    }

    pub fn translated(&self, shift: &[i64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return geometry("shift dimension mismatch");
        }
        Self::new(
            self.intervals
                .iter()
                .zip(shift)
                .map(|((a, b), s)| (a + s, b + s))
                .collect(),
        )
    }

    pub fn with_axis(&self, axis: usize, a: i64, b: i64) -> Result<Self> {
        let mut iv = self.intervals.clone();
        iv[axis] = (a, b);
        Self::new(iv)
    }
}

/// Cube index `x` of a site: the site lies in `[2x_1, 2x_1+1] x ...`.
pub fn cube_of(site: &[i64]) -> Vec<i64> {
    site.iter().map(|x| x.div_euclid(2)).collect()
}

pub fn max_norm(v: &[i64]) -> i64 {
    v.iter().map(|x| x.abs()).max().unwrap_or(0)
}

/// Boundary condition at one end of an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EndCondition {
    /// Boundary block `e^{i eta}`.
    Eta { eta: f64 },
    /// `e^{i eta} = r + i t`.
    NeumannUpper,
    /// `e^{i eta} = r - i t`.
    NeumannLower,
}

impl EndCondition {
    pub fn phase(&self, params: &ModelParams) -> C64 {
        match *self {
            EndCondition::Eta { eta } => C64::from_polar(1.0, eta),
            EndCondition::NeumannUpper => C64::new(params.r(), params.t()),
            EndCondition::NeumannLower => C64::new(params.r(), -params.t()),
        }
    }

    pub fn is_neumann(&self) -> bool {
        !matches!(self, EndCondition::Eta { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: EndCondition,
    pub right: EndCondition,
}

impl BoundarySpec {
    pub fn eta(left: f64, right: f64) -> Self {
        Self {
            left: EndCondition::Eta { eta: left },
            right: EndCondition::Eta { eta: right },
        }
    }

    /// `eta = 0` at both ends.
    pub fn simple() -> Self {
        Self::eta(0.0, 0.0)
    }

    pub fn neumann() -> Self {
        Self {
            left: EndCondition::NeumannUpper,
            right: EndCondition::NeumannUpper,
        }
    }

    pub fn neumann_lower() -> Self {
        Self {
            left: EndCondition::NeumannLower,
            right: EndCondition::NeumannLower,
        }
    }
}
