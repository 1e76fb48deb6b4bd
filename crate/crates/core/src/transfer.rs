//! Transfer matrices of the one-dimensional model.
//!
//! A solution of `U psi = z psi` is determined by consecutive pairs
//! `(psi_{2k-1}, psi_{2k})`, and
//! `(psi_{2k+1}, psi_{2k+2}) = T_z(theta_{2k}, theta_{2k+1}) (psi_{2k-1}, psi_{2k})`.

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::params::{ModelParams, PhaseDistribution};
use crate::phases::PhaseField;
use crate::quadrature::singular_integral;
use crate::seeding::derive_seed;
use crate::stats::{MeanAccumulator, MomentEstimate};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferMatrix(pub Matrix2<C64>);

impl TransferMatrix {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn det(&self) -> C64 {
        let m = &self.0;
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        let m = &self.0;
        [
            m[(0, 0)] * v[0] + m[(0, 1)] * v[1],
            m[(1, 0)] * v[0] + m[(1, 1)] * v[1],
        ]
    }

    pub fn inverse(&self) -> Self {
        let m = &self.0;
        let det = self.det();
        Self(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn then(&self, next: &TransferMatrix) -> Self {
        Self(next.0 * self.0)
    }

    /// Operator 2-norm, the square root of the largest eigenvalue of `M^* M`.
    pub fn norm(&self) -> f64 {
        matrix_two_norm(&self.0)
    }

    pub fn eigenvalues(&self) -> [C64; 2] {
        let m = &self.0;
        let tr = m[(0, 0)] + m[(1, 1)];
        let disc = (tr * tr - 4.0 * self.det()).sqrt();
        [(tr + disc) / 2.0, (tr - disc) / 2.0]
    }
}

fn matrix_two_norm(m: &Matrix2<C64>) -> f64 {
    let fro2: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    // largest singular value squared solves x^2 - fro2 x + det^2 = 0
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (fro2 + disc)).sqrt()
}

/// `T_z(theta, eta)`.
pub fn transfer_matrix(params: &ModelParams, z: C64, theta: f64, eta: f64) -> Result<TransferMatrix> {
    if z == ZERO {
        return invalid("transfer matrix needs z != 0");
    }
    let (r, t) = (params.r(), params.t());
    let rt = r / t;
    let e_eta = C64::from_polar(1.0, -eta) / z;
    let e_diff = C64::from_polar(1.0, theta - eta);
    let a = -e_eta;
    let b = (e_diff - e_eta) * rt;
    let c = (ONE - e_eta) * rt;
    let d = -z * C64::from_polar(1.0, theta) / (t * t) + (ONE + e_diff - e_eta) * (r * r / (t * t));
    Ok(TransferMatrix(Matrix2::new(a, b, c, d)))
}

/// `T(lambda) = T_{e^{i lambda}}(0, 0)`, the transfer matrix without disorder.
pub fn free_transfer_matrix(params: &ModelParams, lambda: f64) -> TransferMatrix {
    transfer_matrix(params, C64::from_polar(1.0, lambda), 0.0, 0.0).expect("z on the unit circle")
}

/// `T_z(θ_{2n-2}, θ_{2n-1}) ··· T_z(θ_0, θ_1)` from the phases
/// `θ_0, θ_1, ...`; `n = 0` gives the identity.
pub fn cocycle(params: &ModelParams, z: C64, thetas: &[f64], n: usize) -> Result<TransferMatrix> {
    if thetas.len() < 2 * n {
        return Err(Error::InvalidParameter(format!(
            "cocycle of length {n} needs {} phases, got {}",
            2 * n,
            thetas.len()
        )));
    }
    let mut acc = TransferMatrix::identity();
    for k in 0..n {
        let step = transfer_matrix(params, z, thetas[2 * k], thetas[2 * k + 1])?;
        acc = acc.then(&step);
    }
    Ok(acc)
}

/// Cocycle over the sites `0 .. 2n-1` of a one-dimensional phase field.
pub fn cocycle_from_field(params: &ModelParams, z: C64, field: &PhaseField, n: usize) -> Result<TransferMatrix> {
    let thetas = (0..2 * n as i64)
        .map(|x| field.get(&[x]))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::InvalidParameter("phase field does not cover [0, 2n-1]".into()))?;
    cocycle(params, z, &thetas, n)
}

/// `ln |T_z(ω, n)|` for the given phases. With `renormalize`, the running
/// product is divided by its largest entry after every step and the logs of
/// the factors are accumulated, so long products never overflow.
pub fn log_cocycle_norm(params: &ModelParams, z: C64, thetas: &[f64], renormalize: bool) -> Result<f64> {
    let n = thetas.len() / 2;
    let mut m = Matrix2::<C64>::identity();
    let mut log_scale = 0.0;
    for k in 0..n {
        let step = transfer_matrix(params, z, thetas[2 * k], thetas[2 * k + 1])?;
        m = step.0 * m;
        if renormalize {
            let s = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
            m /= C64::new(s, 0.0);
            log_scale += s.ln();
        }
    }
    let norm = matrix_two_norm(&m);
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Overflow(format!(
            "cocycle norm left the floating-point range after {n} steps"
        )));
    }
    Ok(norm.ln() + log_scale)
}

/// `ln |T_z(ω, n) v|` with the same renormalization as [`log_cocycle_norm`].
pub fn log_vector_growth(params: &ModelParams, z: C64, thetas: &[f64], v: [C64; 2]) -> Result<f64> {
    let mut w = v;
    let mut log_scale = 0.0;
    for k in 0..thetas.len() / 2 {
        w = transfer_matrix(params, z, thetas[2 * k], thetas[2 * k + 1])?.apply(w);
        let s = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
        w = [w[0] / s, w[1] / s];
        log_scale += s.ln();
    }
    Ok(log_scale + (w[0].norm_sqr() + w[1].norm_sqr()).sqrt().ln())
}

/// I.i.d. phases `θ_0 .. θ_{len-1}` for one cocycle realization, drawn from a
/// single ChaCha stream keyed by the derived sample seed.
pub fn sample_sequence(dist: &PhaseDistribution, seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| dist.quantile(rng.random::<f64>())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub z_re: f64,
    pub z_im: f64,
    pub gamma: f64,
    pub stderr: f64,
    pub n_steps: usize,
    pub n_samples: usize,
}

impl LyapunovEstimate {
    pub fn z(&self) -> C64 {
        C64::new(self.z_re, self.z_im)
    }

    pub const CSV_HEADER: &'static str = "z_re,z_im,gamma,stderr,n,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.z_re, self.z_im, self.gamma, self.stderr, self.n_steps, self.n_samples
        )
    }
}

/// Mean of `ln |T_z(ω, n)| / n` over independent realizations.
pub fn lyapunov_estimate(
    params: &ModelParams,
    z: C64,
    dist: &PhaseDistribution,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if n < 50 {
        return invalid("Lyapunov estimate needs n >= 50");
    }
    if samples < 100 {
        return invalid("Lyapunov estimate needs at least 100 samples");
    }
    let values = (0..samples)
        .into_par_iter()
        .map(|i| {
            let thetas = sample_sequence(dist, derive_seed(seed, "lyapunov", i as u64), 2 * n);
            log_cocycle_norm(params, z, &thetas, true).map(|v| v / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let acc: MeanAccumulator = values.into_iter().collect();
    Ok(LyapunovEstimate {
        z_re: z.re,
        z_im: z.im,
        gamma: acc.mean(),
        stderr: acc.stderr(),
        n_steps: n,
        n_samples: samples,
    })
}

/// Growth exponent `ln |T(λ)^n| / n` of the disorder-free cocycle.
pub fn free_growth_exponent(params: &ModelParams, z: C64, n: usize) -> Result<f64> {
    let zeros = vec![0.0; 2 * n];
    Ok(log_cocycle_norm(params, z, &zeros, true)? / n as f64)
}

/// Monte Carlo estimates of `E |T_z(ω, n) v|^{-δ}` for every `n` in
/// `n_values`, all read off the same realizations.
#[allow(clippy::too_many_arguments)]
pub fn ckm_moments(
    params: &ModelParams,
    z: C64,
    dist: &PhaseDistribution,
    delta: f64,
    n_values: &[usize],
    samples: usize,
    v: [C64; 2],
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid("negative moment exponent must lie in (0,1)");
    }
    let nv = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if (nv - 1.0).abs() > 1e-12 {
        return invalid("initial vector must have unit norm");
    }
    let n_max = n_values.iter().copied().max().unwrap_or(0);
    let per_sample = (0..samples)
        .into_par_iter()
        .map(|i| {
            let thetas = sample_sequence(dist, derive_seed(seed, "ckm", i as u64), 2 * n_max);
            let mut out = vec![0.0; n_values.len()];
            let mut w = v;
            let mut log_norm = 0.0;
            for step in 0..=n_max {
                for (slot, &n) in n_values.iter().enumerate() {
                    if n == step {
                        out[slot] = (-delta * log_norm).exp();
                    }
                }
                if step == n_max {
                    break;
                }
                w = transfer_matrix(params, z, thetas[2 * step], thetas[2 * step + 1])?.apply(w);
                let s = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
                w = [w[0] / s, w[1] / s];
                log_norm += s.ln();
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((0..n_values.len())
        .map(|slot| {
            let vals: Vec<f64> = per_sample.iter().map(|row| row[slot]).collect();
            let mut m = MomentEstimate::from_samples("ckm", &vals, delta, Some(z));
            m.quantity = format!("ckm_n{}", n_values[slot]);
            m
        })
        .collect())
}

/// Single-`n` form of [`ckm_moments`].
#[allow(clippy::too_many_arguments)]
pub fn ckm_moment(
    params: &ModelParams,
    z: C64,
    dist: &PhaseDistribution,
    delta: f64,
    n: usize,
    samples: usize,
    v: [C64; 2],
    seed: u64,
) -> Result<MomentEstimate> {
    Ok(ckm_moments(params, z, dist, delta, &[n], samples, v, seed)?.remove(0))
}

/// Which end of `[a, b]` carries the normalization `φ(end) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    Left,
    Right,
}

/// A generalized eigenvector on a stretch of sites and its transformed
/// sequence `(φ̃_{2n}, φ̃_{2n+1}) = [[t², rt], [rt, r² − z e^{iθ_{2n}}]] (φ_{2n−1}, φ_{2n})`.
#[derive(Clone, Debug)]
pub struct SolutionPair {
    /// Site of `psi[0]`.
    pub first: i64,
    pub psi: Vec<C64>,
    /// Site of `tilde[0]`; always even.
    pub tilde_first: i64,
    pub tilde: Vec<C64>,
}

impl SolutionPair {
    pub fn psi_at(&self, site: i64) -> Option<C64> {
        let i = site - self.first;
        (i >= 0).then(|| self.psi.get(i as usize).copied()).flatten()
    }

    pub fn tilde_at(&self, site: i64) -> Option<C64> {
        let i = site - self.tilde_first;
        (i >= 0).then(|| self.tilde.get(i as usize).copied()).flatten()
    }

    pub fn last(&self) -> i64 {
        self.first + self.psi.len() as i64 - 1
    }
}

fn theta_at(phases: &PhaseField, site: i64) -> Result<f64> {
    phases
        .get(&[site])
        .ok_or_else(|| Error::InvalidParameter(format!("no phase at site {site}")))
}

/// Solution of `(U^{[a,∞)} − z) φ = 0` with `φ(a) = 1` (left end) or of
/// `(U^{(−∞,b]} − z) φ = 0` with `φ(b) = 1` (right end), boundary block
/// `e^{iη}`, evaluated on `[a−1, b+1]` as far as the pair structure reaches.
/// The phase field must cover `[a, b]`.
pub fn boundary_solution(
    params: &ModelParams,
    z: C64,
    eta: f64,
    phases: &PhaseField,
    a: i64,
    b: i64,
    from_end: End,
) -> Result<SolutionPair> {
    if z == ZERO {
        return invalid("boundary solution needs z != 0");
    }
    if b - a < 2 {
        return invalid("interval too short");
    }
    let (r, t) = (params.r(), params.t());
    let e_eta = C64::from_polar(1.0, eta);
    // pairs (ψ_{2k−1}, ψ_{2k}) keyed by k
    let mut pairs: Vec<(i64, [C64; 2])> = Vec::new();
    match from_end {
        End::Left => {
            let (k0, seed) = if a.rem_euclid(2) == 0 {
                (a / 2, [(e_eta - r) / t, ONE])
            } else {
                let th = theta_at(phases, a)?;
                let next = (C64::new(r, 0.0) - z * C64::from_polar(1.0, th) / e_eta) / t;
                ((a + 1) / 2, [ONE, next])
            };
            pairs.push((k0, seed));
            let mut k = k0;
            while 2 * k < b {
                let step = transfer_matrix(params, z, theta_at(phases, 2 * k)?, theta_at(phases, 2 * k + 1)?)?;
                let prev = pairs.last().expect("seeded").1;
                k += 1;
                pairs.push((k, step.apply(prev)));
            }
        }
        End::Right => {
            let (k0, seed) = if b.rem_euclid(2) == 1 {
                ((b + 1) / 2, [ONE, (C64::new(r, 0.0) - e_eta) / t])
            } else {
                let th = theta_at(phases, b)?;
                let prev = (z * C64::from_polar(1.0, th) / e_eta - r) / t;
                (b / 2, [prev, ONE])
            };
            pairs.push((k0, seed));
            let mut k = k0;
            while 2 * k - 1 > a {
                let step = transfer_matrix(params, z, theta_at(phases, 2 * k - 2)?, theta_at(phases, 2 * k - 1)?)?;
                let next = pairs.last().expect("seeded").1;
                k -= 1;
                pairs.push((k, step.inverse().apply(next)));
            }
            pairs.reverse();
        }
    }
    let first = 2 * pairs[0].0 - 1;
    let psi: Vec<C64> = pairs.iter().flat_map(|(_, p)| [p[0], p[1]]).collect();
    let mut tilde_first = i64::MAX;
    let mut tilde = Vec::new();
    for (k, p) in &pairs {
        let even = 2 * k;
        let Some(th) = phases.get(&[even]) else {
            continue;
        };
        if tilde_first == i64::MAX {
            tilde_first = even;
        }
        let zt = z * C64::from_polar(1.0, th);
        tilde.push(p[0] * (t * t) + p[1] * (r * t));
        tilde.push(p[0] * (r * t) + p[1] * (r * r) - zt * p[1]);
    }
    Ok(SolutionPair {
        first,
        psi,
        tilde_first,
        tilde,
    })
}

/// Green function of `U^{[a,b]}` (boundary blocks `e^{i·0}`) assembled from
/// the two boundary solutions. Requires `a` even.
pub struct GreenFromSolutions {
    left: SolutionPair,
    right: SolutionPair,
    phases: PhaseField,
    a: i64,
    b: i64,
}

impl GreenFromSolutions {
    pub fn new(params: &ModelParams, phases: &PhaseField, a: i64, b: i64, z: C64) -> Result<Self> {
        if a.rem_euclid(2) != 0 {
            return invalid("the left end must be even");
        }
        let left = boundary_solution(params, z, 0.0, phases, a, b, End::Left)?;
        let right = boundary_solution(params, z, 0.0, phases, a, b, End::Right)?;
        Ok(Self {
            left,
            right,
            phases: phases.clone(),
            a,
            b,
        })
    }

    /// `c_l = e^{iθ_l} / (φ̃^a_{2n+1} φ̃^b_{2n} − φ̃^a_{2n} φ̃^b_{2n+1})` for
    /// `l ∈ {2n, 2n+1}`.
    pub fn normalization(&self, l: i64) -> Result<C64> {
        let n2 = 2 * l.div_euclid(2);
        let get = |s: &SolutionPair, x: i64| {
            s.tilde_at(x)
                .ok_or_else(|| Error::InvalidParameter(format!("no transformed value at {x}")))
        };
        let den = get(&self.left, n2 + 1)? * get(&self.right, n2)? - get(&self.left, n2)? * get(&self.right, n2 + 1)?;
        if den.norm() < 1e-12 {
            return Err(Error::Degenerate { gap: den.norm() });
        }
        Ok(C64::from_polar(1.0, theta_at(&self.phases, l)?) / den)
    }

    pub fn entry(&self, k: i64, l: i64) -> Result<C64> {
        if k < self.a || k > self.b || l < self.a || l > self.b {
            return invalid(format!("({k}, {l}) outside [{}, {}]", self.a, self.b));
        }
        let c = self.normalization(l)?;
        let pick = |s: &SolutionPair, x: i64, tilde: bool| {
            if tilde { s.tilde_at(x) } else { s.psi_at(x) }
                .ok_or_else(|| Error::InvalidParameter(format!("solution not available at {x}")))
        };
        let left_branch = k < l || (k == l && l.rem_euclid(2) == 0);
        if left_branch {
            Ok(c * pick(&self.right, l, true)? * pick(&self.left, k, false)?)
        } else {
            Ok(c * pick(&self.left, l, true)? * pick(&self.right, k, false)?)
        }
    }
}

/// `G^{[a,b]}(k, l; z)` from boundary solutions.
pub fn green_via_solutions(params: &ModelParams, phases: &PhaseField, a: i64, b: i64, z: C64, k: i64, l: i64) -> Result<C64> {
    GreenFromSolutions::new(params, phases, a, b, z)?.entry(k, l)
}

/// Last column of the Green function of `U^{[a,b]}` for an even right end:
/// `G(k, b; z) = φ^a_k e^{iθ_b} / (t φ^a_{b−1} + (r − z e^{iθ_b}) φ^a_b)`.
pub fn corner_green(params: &ModelParams, phases: &PhaseField, a: i64, b: i64, z: C64, k: i64) -> Result<C64> {
    if b.rem_euclid(2) != 0 {
        return invalid("corner formula needs an even right end");
    }
    if k < a || k > b {
        return invalid(format!("{k} outside [{a}, {b}]"));
    }
    let sol = boundary_solution(params, z, 0.0, phases, a, b, End::Left)?;
    let th = theta_at(phases, b)?;
    let zt = z * C64::from_polar(1.0, th);
    let p1 = sol.psi_at(b - 1).expect("inside");
    let p2 = sol.psi_at(b).expect("inside");
    let den = p1 * params.t() + (C64::new(params.r(), 0.0) - zt) * p2;
    Ok(sol.psi_at(k).expect("inside") * C64::from_polar(1.0, th) / den)
}

/// `∫ dμ(θ) |t φ_1 + (r − z e^{iθ}) φ_2|^{−s}`, the single-site average that
/// controls the last step of a solution.
pub fn decoupling_integral(params: &ModelParams, dist: &PhaseDistribution, z: C64, s: f64, phi: [C64; 2], nodes: usize) -> f64 {
    let base = phi[0] * params.t() + phi[1] * params.r();
    let lead = z * phi[1];
    // |base − lead e^{iθ}| is smallest at θ = arg(base) − arg(lead)
    let crit = (base.arg() - lead.arg()).rem_euclid(std::f64::consts::TAU);
    let singular = [crit, crit - std::f64::consts::TAU, crit + std::f64::consts::TAU];
    let f = |th: f64| (base - lead * C64::from_polar(1.0, th)).norm().powf(-s) * dist.density(th);
    match dist.shape() {
        crate::params::DistributionShape::Uniform => singular_integral(f, dist.lo(), dist.hi(), &singular, s, nodes),
        crate::params::DistributionShape::Piecewise { edges, .. } => edges
            .windows(2)
            .map(|w| singular_integral(f, w[0], w[1], &singular, s, nodes))
            .sum(),
    }
}
