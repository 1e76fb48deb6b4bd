//! Monte Carlo estimators for fractional moments of the Green function,
//! dynamical amplitudes and wave-packet moments, with the deterministic
//! oracles they are checked against.

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::{max_norm, BoundarySpec, LatticeBox};
use crate::operators::{build_s_tensor, build_u, BandedUnitary};
use crate::params::{DistributionShape, ModelParams, PhaseDistribution};
use crate::phases::PhaseField;
use crate::quadrature::singular_integral;
use crate::resolvent::{DecayProfile, ResolventSolver};
use crate::seeding::derive_seed;
use crate::stats::{compensated_sum, linear_fit, MeanAccumulator, MomentEstimate};

/// Random operators `D_ω S` on a fixed box.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub params: ModelParams,
    pub dist: PhaseDistribution,
    pub lattice: LatticeBox,
    pub bc: BoundarySpec,
    free: BandedUnitary,
}

impl Ensemble {
    pub fn new(params: ModelParams, dist: PhaseDistribution, lattice: LatticeBox, bc: BoundarySpec) -> Result<Self> {
        let free = build_s_tensor(&params, &lattice, &bc)?;
        Ok(Self {
            params,
            dist,
            lattice,
            bc,
            free,
        })
    }

    /// Ensemble with `e^{i·0}` boundary blocks.
    pub fn simple(params: ModelParams, dist: PhaseDistribution, lattice: LatticeBox) -> Result<Self> {
        Self::new(params, dist, lattice, BoundarySpec::simple())
    }

    pub fn free(&self) -> &BandedUnitary {
        &self.free
    }

    pub fn phases(&self, seed: u64) -> PhaseField {
        PhaseField::sample(&self.dist, &self.lattice, seed)
    }

    pub fn operator(&self, phases: &PhaseField) -> Result<BandedUnitary> {
        build_u(phases, &self.free)
    }

    /// Realization number `index` of the experiment `name`.
    pub fn realization(&self, master: u64, name: &str, index: usize) -> Result<BandedUnitary> {
        self.operator(&self.phases(derive_seed(master, name, index as u64)))
    }

    fn index(&self, site: &[i64]) -> Result<usize> {
        self.lattice
            .index_of(site)
            .ok_or_else(|| Error::Geometry(format!("site {site:?} outside the box")))
    }
}

fn check_exponent(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("fractional exponent must lie in (0,1), got {s}"));
    }
    Ok(())
}

fn check_off_circle(z: C64) -> Result<()> {
    let m = z.norm();
    if m == 0.0 || (m - 1.0).abs() < 1e-14 {
        return invalid(format!("|z| must differ from 0 and 1 (z = {z})"));
    }
    Ok(())
}

/// Map per-sample results to `Some(value)` or `None` for a rejected solve;
/// other errors abort.
fn keep_or_reject<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Solve { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn estimate(quantity: &str, per_sample: Vec<Option<f64>>, s: f64, z: Option<C64>) -> MomentEstimate {
    let rejected = per_sample.iter().filter(|v| v.is_none()).count();
    let kept: Vec<f64> = per_sample.into_iter().flatten().collect();
    let mut m = MomentEstimate::from_samples(quantity, &kept, s, z);
    m.rejected = rejected;
    m
}

/// `E |G(k, l; z)|^s` over realizations of the ensemble.
#[allow(clippy::too_many_arguments)]
pub fn fractional_moment(
    ens: &Ensemble,
    z: C64,
    k: &[i64],
    l: &[i64],
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check_exponent(s)?;
    check_off_circle(z)?;
    fractional_moment_range(ens, z, k, l, s, 0..samples, seed)
}

/// Quadrature nodes `(θ, weight)` for `dist`, weights summing to one:
/// `n` midpoints on each piece of constant density.
pub fn distribution_nodes(dist: &PhaseDistribution, n: usize) -> Vec<(f64, f64)> {
    let pieces: Vec<(f64, f64, f64)> = match dist.shape() {
        DistributionShape::Uniform => vec![(dist.lo(), dist.hi(), 1.0)],
        DistributionShape::Piecewise { edges, .. } => edges
            .windows(2)
            .map(|w| {
                let mass = dist.cdf(w[1]) - dist.cdf(w[0]);
                (w[0], w[1], mass)
            })
            .collect(),
    };
    pieces
        .into_iter()
        .filter(|p| p.2 > 0.0)
        .flat_map(|(a, b, mass)| {
            (0..n).map(move |j| (a + (b - a) * (j as f64 + 0.5) / n as f64, mass / n as f64))
        })
        .collect()
}

/// `|G(k, l; z)|^s` for `phases` with the two designated sites overwritten.
fn two_site_value(
    ens: &Ensemble,
    base: &PhaseField,
    sites: [usize; 2],
    angles: [f64; 2],
    z: C64,
    ki: usize,
    li: usize,
    s: f64,
) -> Result<f64> {
    let mut ph = base.clone();
    ph.values_mut()[sites[0]] = angles[0];
    ph.values_mut()[sites[1]] = angles[1];
    let u = ens.operator(&ph)?;
    let col = ResolventSolver::columns(&u, z)?.solve_unit(li)?;
    Ok(col[ki].norm().powf(s))
}

/// `∬ |G(k, l; z)|^s dμ(θ_a) dμ(θ_b)` with all other phases fixed to
/// `frozen`, by tensor midpoint quadrature with `nodes` points per piece.
#[allow(clippy::too_many_arguments)]
pub fn two_phase_quadrature(
    ens: &Ensemble,
    frozen: &PhaseField,
    varied: [&[i64]; 2],
    z: C64,
    k: &[i64],
    l: &[i64],
    s: f64,
    nodes: usize,
) -> Result<f64> {
    check_exponent(s)?;
    check_off_circle(z)?;
    let sites = [ens.index(varied[0])?, ens.index(varied[1])?];
    if sites[0] == sites[1] {
        return invalid("the two varied sites must differ");
    }
    let (ki, li) = (ens.index(k)?, ens.index(l)?);
    let grid = distribution_nodes(&ens.dist, nodes);
    let terms = grid
        .par_iter()
        .flat_map_iter(|&(a, wa)| grid.iter().map(move |&(b, wb)| (a, b, wa * wb)))
        .map(|(a, b, w)| Ok(w * two_site_value(ens, frozen, sites, [a, b], z, ki, li, s)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(compensated_sum(terms))
}

/// Monte Carlo counterpart of [`two_phase_quadrature`]: only the two
/// designated phases are resampled.
#[allow(clippy::too_many_arguments)]
pub fn two_phase_monte_carlo(
    ens: &Ensemble,
    frozen: &PhaseField,
    varied: [&[i64]; 2],
    z: C64,
    k: &[i64],
    l: &[i64],
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check_exponent(s)?;
    check_off_circle(z)?;
    let sites = [ens.index(varied[0])?, ens.index(varied[1])?];
    let (ki, li) = (ens.index(k)?, ens.index(l)?);
    let per_sample = (0..samples)
        .into_par_iter()
        .map(|i| {
            let fresh = ens.phases(derive_seed(seed, "two-phase", i as u64));
            let angles = [fresh.values()[sites[0]], fresh.values()[sites[1]]];
            keep_or_reject(two_site_value(ens, frozen, sites, angles, z, ki, li, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(estimate("two_phase_moment", per_sample, s, Some(z)))
}

/// `(A − A^*)/2i ≥ −slack`.
pub fn is_dissipative(a: &Matrix2<C64>, slack: f64) -> bool {
    let im = (a - a.adjoint()) / C64::new(0.0, 2.0);
    let (p, q, r) = (im[(0, 0)].re, im[(1, 1)].re, im[(0, 1)]);
    let mean = 0.5 * (p + q);
    let rad = (0.25 * (p - q) * (p - q) + r.norm_sqr()).sqrt();
    mean - rad >= -slack
}

/// Smallest singular value of a 2×2 matrix, as `|det| / σ_max`.
fn smallest_singular_value(m: &Matrix2<C64>) -> f64 {
    let fro2: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let smax = (0.5 * (fro2 + disc)).sqrt();
    if smax == 0.0 {
        0.0
    } else {
        det / smax
    }
}

fn eigenvalues2(a: &Matrix2<C64>) -> [C64; 2] {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (tr * tr - 4.0 * det).sqrt();
    [(tr + disc) / 2.0, (tr - disc) / 2.0]
}

/// `∫_E ‖(A + x)^{-1}‖^s dx` for a dissipative 2×2 matrix `A` and an
/// interval `E` of length one. The integrand peaks where `x` meets minus
/// the real part of an eigenvalue; those points are handled by the
/// singular quadrature.
pub fn dissipative_integral_check(a: &Matrix2<C64>, s: f64, interval: (f64, f64), nodes: usize) -> Result<f64> {
    check_exponent(s)?;
    if !is_dissipative(a, 1e-12) {
        return invalid("matrix is not dissipative");
    }
    let (lo, hi) = interval;
    if ((hi - lo) - 1.0).abs() > 1e-12 {
        return invalid("integration interval must have length one");
    }
    let singular: Vec<f64> = eigenvalues2(a).iter().map(|l| -l.re).collect();
    let f = |x: f64| {
        let shifted = a + Matrix2::identity() * C64::new(x, 0.0);
        smallest_singular_value(&shifted).powf(-s)
    };
    Ok(singular_integral(f, lo, hi, &singular, s, nodes))
}

/// Upper-triangular (Schur) form `Q^* A Q` of a 2×2 matrix.
pub fn schur_form(a: &Matrix2<C64>) -> Matrix2<C64> {
    let [l1, _] = eigenvalues2(a);
    // eigenvector for l1
    let (b, c) = (a[(0, 1)], a[(1, 0)]);
    let v = if b.norm() >= c.norm() && b.norm() > 0.0 {
        [b, l1 - a[(0, 0)]]
    } else if c.norm() > 0.0 {
        [l1 - a[(1, 1)], c]
    } else if (a[(0, 0)] - l1).norm() <= (a[(1, 1)] - l1).norm() {
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    } else {
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
    };
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let (v0, v1) = (v[0] / n, v[1] / n);
    let q = Matrix2::new(v0, -v1.conj(), v1, v0.conj());
    q.adjoint() * a * q
}

/// `|Im a11 + Im a22|² / |a12|²` of the Schur form of `A`; infinite when the
/// form is diagonal.
pub fn schur_ratio(a: &Matrix2<C64>) -> f64 {
    let t = schur_form(a);
    let off = t[(0, 1)].norm_sqr();
    let tr = t[(0, 0)].im + t[(1, 1)].im;
    if off == 0.0 {
        f64::INFINITY
    } else {
        tr * tr / off
    }
}

/// Box and origin for a decay ladder along the first axis: the origin sits
/// `buffer` sites from the left face, the box extends `buffer` sites beyond
/// the farthest target, and transverse axes span `2 * transverse` sites
/// around the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayGeometry {
    pub buffer: i64,
    pub transverse: i64,
}

impl Default for DecayGeometry {
    fn default() -> Self {
        Self {
            buffer: 30,
            transverse: 6,
        }
    }
}

impl DecayGeometry {
    pub fn layout(&self, d: usize, max_dist: i64) -> Result<(LatticeBox, Vec<i64>)> {
        if self.buffer < 2 || self.transverse < 2 {
            return invalid("decay geometry needs buffer and transverse half-width of at least 2");
        }
        let mut intervals = vec![(0, 2 * self.buffer + max_dist - 1)];
        intervals.extend(std::iter::repeat((0, 2 * self.transverse - 1)).take(d - 1));
        let mut origin = vec![self.buffer];
        origin.extend(std::iter::repeat(self.transverse).take(d - 1));
        Ok((LatticeBox::new(intervals)?, origin))
    }
}

/// `E |G(k, k + n e_1; z)|^s` for each distance `n`, with a log-linear fit
/// over the estimates above the noise floor. One row solve per realization
/// yields every distance.
#[allow(clippy::too_many_arguments)]
pub fn decay_experiment(
    params: &ModelParams,
    dist: &PhaseDistribution,
    z: C64,
    s: f64,
    distances: &[i64],
    samples: usize,
    seed: u64,
    geometry: DecayGeometry,
) -> Result<DecayProfile> {
    check_exponent(s)?;
    check_off_circle(z)?;
    if distances.is_empty() || distances.iter().any(|&n| n < 0) {
        return invalid("distances must be a nonempty list of nonnegative integers");
    }
    let max_dist = *distances.iter().max().expect("nonempty");
    let (lattice, origin) = geometry.layout(params.d(), max_dist)?;
    let ens = Ensemble::simple(*params, dist.clone(), lattice)?;
    let ki = ens.index(&origin)?;
    let targets = distances
        .iter()
        .map(|&n| {
            let mut site = origin.clone();
            site[0] += n;
            ens.index(&site)
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows = (0..samples)
        .into_par_iter()
        .map(|i| {
            let u = ens.realization(seed, "fractional-decay", i)?;
            keep_or_reject(ResolventSolver::rows(&u, z).and_then(|sv| sv.solve_unit(ki)))
                .map(|row| row.map(|r| targets.iter().map(|&j| r[j].norm().powf(s)).collect::<Vec<f64>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Solve {
            reason: "every realization failed its residual check".into(),
            residual: f64::NAN,
        });
    }
    let (values, stderrs): (Vec<f64>, Vec<f64>) = (0..targets.len())
        .map(|j| {
            let acc: MeanAccumulator = kept.iter().map(|r| r[j]).collect();
            (acc.mean(), acc.stderr())
        })
        .unzip();
    Ok(DecayProfile::fitted_above_noise(distances.to_vec(), values, stderrs))
}

/// `E (1 − |z|²)|G(k,l;z)|²` against `Σ_{|m−k|≤4} E |G(m,l;z)|^s`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecondMomentRatio {
    pub modulus: f64,
    pub lhs: MomentEstimate,
    pub rhs: MomentEstimate,
    pub ratio: f64,
    /// Delta-method standard error of the ratio of means.
    pub ratio_stderr: f64,
}

pub fn second_moment_ratio(
    ens: &Ensemble,
    z: C64,
    k: &[i64],
    l: &[i64],
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<SecondMomentRatio> {
    check_exponent(s)?;
    if !(z.norm() < 1.0) {
        return invalid("second-moment bound needs |z| < 1");
    }
    let li = ens.index(l)?;
    ens.index(k)?;
    let near: Vec<usize> = ens
        .lattice
        .sites()
        .enumerate()
        .filter(|(_, m)| max_norm(&m.iter().zip(k).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 4)
        .map(|(i, _)| i)
        .collect();
    let ki = ens.index(k)?;
    let weight = 1.0 - z.norm_sqr();
    let pairs = (0..samples)
        .into_par_iter()
        .map(|i| {
            let u = ens.realization(seed, "second-moment", i)?;
            keep_or_reject(ResolventSolver::columns(&u, z).and_then(|sv| sv.solve_unit(li))).map(|col| {
                col.map(|c| {
                    let lhs = weight * c[ki].norm_sqr();
                    let rhs = compensated_sum(near.iter().map(|&m| c[m].norm().powf(s)));
                    (lhs, rhs)
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lhs_vals: Vec<Option<f64>> = pairs.iter().map(|p| p.map(|v| v.0)).collect();
    let rhs_vals: Vec<Option<f64>> = pairs.iter().map(|p| p.map(|v| v.1)).collect();
    let lhs = estimate("second_moment_lhs", lhs_vals, s, Some(z));
    let rhs = estimate("second_moment_rhs", rhs_vals, s, Some(z));
    let ratio = lhs.value / rhs.value;
    let kept: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    let resid: MeanAccumulator = kept.iter().map(|(x, y)| x - ratio * y).collect();
    let ratio_stderr = resid.stderr() / rhs.value;
    Ok(SecondMomentRatio {
        modulus: z.norm(),
        lhs,
        rhs,
        ratio,
        ratio_stderr,
    })
}

/// Ratios along a grid of `|z| ↑ 1` and the slope of the ratio against
/// `−ln(1 − |z|)`, with its standard error propagated from the per-point
/// standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct SecondMomentTrend {
    pub points: Vec<SecondMomentRatio>,
    pub slope: f64,
    pub slope_stderr: f64,
}

impl SecondMomentTrend {
    /// No statistically significant growth towards the circle.
    pub fn bounded(&self) -> bool {
        self.points.iter().all(|p| p.ratio.is_finite()) && self.slope <= 3.0 * self.slope_stderr
    }
}

pub fn second_moment_trend(
    ens: &Ensemble,
    arg: f64,
    moduli: &[f64],
    k: &[i64],
    l: &[i64],
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<SecondMomentTrend> {
    let points = moduli
        .iter()
        .map(|&m| second_moment_ratio(ens, C64::from_polar(m, arg), k, l, s, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = moduli.iter().map(|m| -(1.0 - m).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::InvalidParameter("need two distinct moduli".into()))?;
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let var: f64 = xs
        .iter()
        .zip(&points)
        .map(|(x, p)| ((x - mx) / sxx).powi(2) * p.ratio_stderr * p.ratio_stderr)
        .sum();
    Ok(SecondMomentTrend {
        points,
        slope: fit.slope,
        slope_stderr: var.sqrt(),
    })
}

/// Blow-up test for `E|G|^s` along `|z| → 1` at fixed `arg z`.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub estimates: Vec<MomentEstimate>,
    /// Largest `|first half − second half|` in units of the joint standard
    /// error, over the grid.
    pub split_half_z: f64,
    /// The last increment is significant and at least as large as the one
    /// before it.
    pub blow_up: bool,
}

impl StabilityReport {
    pub fn stable(&self) -> bool {
        !self.blow_up && self.split_half_z <= 3.0 && self.estimates.iter().all(|e| e.value.is_finite())
    }
}

/// Fractional moments on a grid of moduli approaching the circle, each
/// also estimated on two disjoint halves of the sample. A monotone blow-up
/// is flagged when successive increments do not shrink: for moduli chosen
/// at geometric distances from the circle a bounded sequence has
/// decreasing increments, a divergent one has non-decreasing increments.
#[allow(clippy::too_many_arguments)]
pub fn stability_protocol(
    ens: &Ensemble,
    arg: f64,
    moduli: &[f64],
    k: &[i64],
    l: &[i64],
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if samples < 4 {
        return invalid("stability protocol needs at least four samples");
    }
    let mut estimates = Vec::new();
    let mut split_half_z: f64 = 0.0;
    for &m in moduli {
        let z = C64::from_polar(m, arg);
        let full = fractional_moment(ens, z, k, l, s, samples, seed)?;
        let half = samples / 2;
        let first = fractional_moment(ens, z, k, l, s, half, seed)?;
        // the second half reuses the same seed schedule shifted by `half`
        let second = fractional_moment_range(ens, z, k, l, s, half..samples, seed)?;
        let joint = (first.stderr.powi(2) + second.stderr.powi(2)).sqrt();
        if joint > 0.0 {
            split_half_z = split_half_z.max((first.value - second.value).abs() / joint);
        }
        estimates.push(full);
    }
    let blow_up = if estimates.len() >= 3 {
        let n = estimates.len();
        let (a, b, c) = (&estimates[n - 3], &estimates[n - 2], &estimates[n - 1]);
        let last = c.value - b.value;
        let prev = b.value - a.value;
        let joint = (b.stderr.powi(2) + c.stderr.powi(2)).sqrt();
        last > 3.0 * joint && last >= prev
    } else {
        false
    };
    Ok(StabilityReport {
        estimates,
        split_half_z,
        blow_up,
    })
}

fn fractional_moment_range(
    ens: &Ensemble,
    z: C64,
    k: &[i64],
    l: &[i64],
    s: f64,
    range: std::ops::Range<usize>,
    seed: u64,
) -> Result<MomentEstimate> {
    let (ki, li) = (ens.index(k)?, ens.index(l)?);
    let per_sample = range
        .into_par_iter()
        .map(|i| {
            let u = ens.realization(seed, "fractional-moment", i)?;
            keep_or_reject(ResolventSolver::columns(&u, z).and_then(|sv| sv.solve_unit(li)))
                .map(|col| col.map(|c| c[ki].norm().powf(s)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(estimate("fractional_moment", per_sample, s, Some(z)))
}

/// Sites a single step of `D S` can move amplitude by, per axis.
pub const STEP_REACH: i64 = 2;

fn within_reach_of_boundary(lattice: &LatticeBox, site: &[i64], horizon: usize) -> bool {
    let reach = STEP_REACH * horizon as i64;
    lattice
        .intervals()
        .iter()
        .zip(site)
        .any(|(&(a, b), &x)| x - a <= reach || b - x <= reach)
}

/// `sup_{|n| ≤ N} |⟨e_j | U^n e_k⟩|` for every site `j`, evolving `e_k`
/// under `U` (for `n ≥ 0`) and `U^*` (for `n < 0`). Also returns the running
/// value at `N/2`.
pub fn amplitude_sups(u: &BandedUnitary, k: usize, horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let n = u.dim();
    let mut fwd = vec![C64::new(0.0, 0.0); n];
    fwd[k] = C64::new(1.0, 0.0);
    let mut bwd = fwd.clone();
    let mut sup: Vec<f64> = fwd.iter().map(|x| x.norm()).collect();
    let mut half = sup.clone();
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    for step in 1..=horizon {
        u.matrix().matvec(&fwd, &mut tmp);
        std::mem::swap(&mut fwd, &mut tmp);
        u.matrix().adjoint_matvec(&bwd, &mut tmp);
        std::mem::swap(&mut bwd, &mut tmp);
        for ((s, f), b) in sup.iter_mut().zip(&fwd).zip(&bwd) {
            *s = s.max(f.norm()).max(b.norm());
        }
        if step == horizon / 2 {
            half.clone_from(&sup);
        }
    }
    (sup, half)
}

/// `E sup_{|n| ≤ N} |⟨e_k | U^n e_l⟩|` for `l = k + offset·e_1`.
#[derive(Clone, Debug, Serialize)]
pub struct AmplitudeProfile {
    pub offsets: Vec<i64>,
    pub amplitudes: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Same estimate with horizon `N/2`, to judge convergence in `N`.
    pub half_horizon: Vec<f64>,
    pub horizon: usize,
    pub samples: usize,
    pub fit: DecayProfile,
    /// Some site of interest is within `2N` sites of the box boundary, so
    /// the finite box may have reflected amplitude back.
    pub truncated: bool,
}

impl AmplitudeProfile {
    pub const CSV_HEADER: &'static str = "offset,amplitude,stderr,half_horizon,horizon,samples";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for i in 0..self.offsets.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.offsets[i], self.amplitudes[i], self.stderrs[i], self.half_horizon[i], self.horizon, self.samples
            ));
        }
        s
    }
}

pub fn dynamical_profile(
    ens: &Ensemble,
    k: &[i64],
    offsets: &[i64],
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<AmplitudeProfile> {
    if horizon < 1 {
        return invalid("time horizon must be at least 1");
    }
    let ki = ens.index(k)?;
    let mut truncated = within_reach_of_boundary(&ens.lattice, k, horizon);
    let targets = offsets
        .iter()
        .map(|&o| {
            let mut site = k.to_vec();
            site[0] += o;
            truncated |= within_reach_of_boundary(&ens.lattice, &site, horizon);
            ens.index(&site)
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows = (0..samples)
        .into_par_iter()
        .map(|i| {
            let u = ens.realization(seed, "dynamical", i)?;
            let (sup, half) = amplitude_sups(&u, ki, horizon);
            Ok(targets.iter().map(|&j| (sup[j], half[j])).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut amplitudes = Vec::new();
    let mut stderrs = Vec::new();
    let mut half_horizon = Vec::new();
    for j in 0..targets.len() {
        let acc: MeanAccumulator = rows.iter().map(|r| r[j].0).collect();
        let acc_half: MeanAccumulator = rows.iter().map(|r| r[j].1).collect();
        amplitudes.push(acc.mean());
        stderrs.push(acc.stderr());
        half_horizon.push(acc_half.mean());
    }
    let abs_offsets: Vec<i64> = offsets.iter().map(|o| o.abs()).collect();
    let fit = DecayProfile::fitted_above_noise(abs_offsets, amplitudes.clone(), stderrs.clone());
    Ok(AmplitudeProfile {
        offsets: offsets.to_vec(),
        amplitudes,
        stderrs,
        half_horizon,
        horizon,
        samples,
        fit,
        truncated,
    })
}

fn euclidean(site: &[i64]) -> f64 {
    site.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt()
}

/// Running `max_{|n| ≤ m} ‖ |X|^p U^n ψ ‖` for `m = 0..=N`, with `|X|` the
/// Euclidean distance to the lattice origin.
pub fn position_curve(u: &BandedUnitary, psi: &[C64], p: f64, horizon: usize) -> Vec<f64> {
    let weights: Vec<f64> = u.lattice().sites().map(|s| euclidean(&s).powf(p)).collect();
    let moment = |v: &[C64]| compensated_sum(v.iter().zip(&weights).map(|(x, w)| w * w * x.norm_sqr())).sqrt();
    let mut fwd = psi.to_vec();
    let mut bwd = psi.to_vec();
    let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
    let mut best = moment(psi);
    let mut out = vec![best];
    for _ in 0..horizon {
        u.matrix().matvec(&fwd, &mut tmp);
        std::mem::swap(&mut fwd, &mut tmp);
        u.matrix().adjoint_matvec(&bwd, &mut tmp);
        std::mem::swap(&mut bwd, &mut tmp);
        best = best.max(moment(&fwd)).max(moment(&bwd));
        out.push(best);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct PositionMoment {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Mean running supremum for each horizon `0..=N`.
    pub curve: Vec<f64>,
    pub truncated: bool,
}

/// Late-time slope of a running-supremum curve relative to its early slope
/// (last quarter against first quarter of the horizon).
pub fn plateau_ratio(curve: &[f64]) -> f64 {
    let n = curve.len() - 1;
    let q = (n / 4).max(1);
    let early = (curve[q] - curve[0]) / q as f64;
    let late = (curve[n] - curve[n - q]) / q as f64;
    late / early
}

/// `E max_{|n| ≤ N} ‖ |X|^p U^n ψ ‖` for a finitely supported `ψ` given on
/// the box.
pub fn position_moment(
    ens: &Ensemble,
    psi: &[C64],
    p: f64,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<PositionMoment> {
    if psi.len() != ens.lattice.volume() {
        return Err(Error::BoxMismatch("vector length differs from the box volume".into()));
    }
    if !(p >= 0.0) {
        return invalid("moment order must be nonnegative");
    }
    let truncated = ens
        .lattice
        .sites()
        .zip(psi)
        .any(|(s, x)| x.norm() > 0.0 && within_reach_of_boundary(&ens.lattice, &s, horizon));
    let curves = (0..samples)
        .into_par_iter()
        .map(|i| Ok(position_curve(&ens.realization(seed, "position-moment", i)?, psi, p, horizon)))
        .collect::<Result<Vec<_>>>()?;
    let curve: Vec<f64> = (0..=horizon)
        .map(|m| compensated_sum(curves.iter().map(|c| c[m])) / samples as f64)
        .collect();
    let acc: MeanAccumulator = curves.iter().map(|c| c[horizon]).collect();
    Ok(PositionMoment {
        value: acc.mean(),
        stderr: acc.stderr(),
        samples,
        curve,
        truncated,
    })
}

/// `r ↦ max_{|n| ≤ N} ‖(I − P_r) U^n ψ‖` for one operator, `P_r` projecting
/// onto the sites with `max_j |x_j| ≤ r`.
pub fn trajectory_profile(u: &BandedUnitary, psi: &[C64], radii: &[i64], horizon: usize) -> Vec<(i64, f64)> {
    let norms: Vec<i64> = u.lattice().sites().map(|s| max_norm(&s)).collect();
    let outside = |v: &[C64], r: i64| {
        compensated_sum(v.iter().zip(&norms).filter(|(_, n)| **n > r).map(|(x, _)| x.norm_sqr())).sqrt()
    };
    let mut best: Vec<f64> = radii.iter().map(|&r| outside(psi, r)).collect();
    let mut fwd = psi.to_vec();
    let mut bwd = psi.to_vec();
    let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
    for _ in 0..horizon {
        u.matrix().matvec(&fwd, &mut tmp);
        std::mem::swap(&mut fwd, &mut tmp);
        u.matrix().adjoint_matvec(&bwd, &mut tmp);
        std::mem::swap(&mut bwd, &mut tmp);
        for (b, &r) in best.iter_mut().zip(radii) {
            *b = b.max(outside(&fwd, r)).max(outside(&bwd, r));
        }
    }
    radii.iter().copied().zip(best).collect()
}

/// [`trajectory_profile`] for the realization drawn with `seed`.
pub fn trajectory_diagnostic(
    ens: &Ensemble,
    psi: &[C64],
    radii: &[i64],
    horizon: usize,
    seed: u64,
) -> Result<Vec<(i64, f64)>> {
    if psi.len() != ens.lattice.volume() {
        return Err(Error::BoxMismatch("vector length differs from the box volume".into()));
    }
    let u = ens.operator(&ens.phases(seed))?;
    Ok(trajectory_profile(&u, psi, radii, horizon))
}

/// Unit vector at `site` of `lattice`.
pub fn basis_vector(lattice: &LatticeBox, site: &[i64]) -> Result<Vec<C64>> {
    let i = lattice
        .index_of(site)
        .ok_or_else(|| Error::Geometry(format!("site {site:?} outside the box")))?;
    let mut v = vec![C64::new(0.0, 0.0); lattice.volume()];
    v[i] = C64::new(1.0, 0.0);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolvent::green;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ensemble(t: f64, lo: i64, hi: i64, dist: PhaseDistribution) -> Ensemble {
        Ensemble::simple(
            ModelParams::new(t, 1).unwrap(),
            dist,
            LatticeBox::interval(lo, hi).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn moment_far_from_circle_is_bounded() {
        let ens = ensemble(0.5, 0, 19, PhaseDistribution::full_circle());
        let z = C64::new(3.0, 0.0);
        let m = fractional_moment(&ens, z, &[3], &[7], 0.4, 200, 1).unwrap();
        assert!(m.value <= 2f64.powf(-0.4));
        assert_eq!(m.rejected, 0);
        assert!(fractional_moment(&ens, z, &[3], &[7], 1.0, 10, 1).is_err());
        assert!(fractional_moment(&ens, C64::new(0.0, 1.0), &[3], &[7], 0.5, 10, 1).is_err());
    }

    #[test]
    fn moment_matches_direct_green() {
        let ens = ensemble(0.5, 0, 11, PhaseDistribution::full_circle());
        let z = C64::from_polar(1.05, 0.4);
        let m = fractional_moment(&ens, z, &[2], &[8], 0.3, 16, 5).unwrap();
        let direct: f64 = (0..16)
            .map(|i| {
                let u = ens.realization(5, "fractional-moment", i).unwrap();
                green(&u, z, &[2], &[8]).unwrap().norm().powf(0.3)
            })
            .sum::<f64>()
            / 16.0;
        assert!((m.value - direct).abs() < 1e-12);
    }

    #[test]
    fn nodes_integrate_density() {
        let d = PhaseDistribution::piecewise(vec![0.0, 1.0, 3.0], vec![0.5, 0.25]).unwrap();
        let nodes = distribution_nodes(&d, 50);
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = nodes.iter().map(|n| n.0 * n.1).sum();
        assert!((mean - d.mean()).abs() < 1e-12);
    }

    #[test]
    fn two_phase_quadrature_agrees_with_sampling() {
        let ens = ensemble(0.5, 0, 9, PhaseDistribution::full_circle());
        let frozen = ens.phases(77);
        let z = C64::from_polar(1.1, 1.0);
        let q = two_phase_quadrature(&ens, &frozen, [&[3], &[6]], z, &[3], &[6], 0.5, 48).unwrap();
        let mc = two_phase_monte_carlo(&ens, &frozen, [&[3], &[6]], z, &[3], &[6], 0.5, 4000, 3).unwrap();
        assert!((q - mc.value).abs() < 3.0 * mc.stderr, "{q} vs {} ± {}", mc.value, mc.stderr);
    }

    #[test]
    fn dissipative_identity_bound() {
        let a = Matrix2::identity() * C64::new(0.0, 1.0);
        let v = dissipative_integral_check(&a, 0.5, (0.0, 1.0), 400).unwrap();
        // ∫_0^1 (1 + x²)^{-1/4} dx
        let want = singular_integral(|x: f64| (1.0 + x * x).powf(-0.25), 0.0, 1.0, &[], 0.5, 4000);
        assert!((v - want).abs() < 1e-5 && v <= 1.0, "{v} vs {want}");
        let bad = Matrix2::identity() * C64::new(0.0, -1.0);
        assert!(dissipative_integral_check(&bad, 0.5, (0.0, 1.0), 100).is_err());
        assert!(dissipative_integral_check(&a, 0.5, (0.0, 2.0), 100).is_err());
    }

    fn random_dissipative(rng: &mut ChaCha8Rng, im_scale: f64) -> Matrix2<C64> {
        let mut g = || C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let h = Matrix2::new(g(), g(), g(), g());
        let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
        let b = Matrix2::new(g(), g(), g(), g());
        let psd = b * b.adjoint() * C64::new(im_scale, 0.0);
        herm + psd * C64::new(0.0, 1.0)
    }

    #[test]
    fn schur_form_is_triangular_and_ratio_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = random_dissipative(&mut rng, 0.3);
            assert!(is_dissipative(&a, 1e-12));
            let t = schur_form(&a);
            assert!(t[(1, 0)].norm() < 1e-12);
            assert!(((t[(0, 0)] + t[(1, 1)]) - (a[(0, 0)] + a[(1, 1)])).norm() < 1e-12);
            assert!(schur_ratio(&a) >= 0.5);
        }
    }

    #[test]
    fn near_real_eigenvalue_integral_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random_dissipative(&mut rng, 1e-6);
            let c = -eigenvalues2(&a)[0].re;
            let v = dissipative_integral_check(&a, 0.5, (c - 0.5, c + 0.5), 400).unwrap();
            assert!(v.is_finite() && v > 0.0);
        }
    }

    #[test]
    fn decay_profile_shape() {
        let p = ModelParams::new(0.5, 1).unwrap();
        let prof = decay_experiment(
            &p,
            &PhaseDistribution::full_circle(),
            C64::from_polar(1.001, 0.3),
            0.1,
            &[4, 8, 12, 16, 20],
            400,
            2,
            DecayGeometry::default(),
        )
        .unwrap();
        assert_eq!(prof.values.len(), 5);
        assert!(prof.values.iter().all(|v| *v >= 0.0));
        assert!(prof.fitted_rate > 0.0);
    }

    #[test]
    fn geometry_layout() {
        let (b, o) = DecayGeometry { buffer: 5, transverse: 3 }.layout(2, 10).unwrap();
        assert_eq!(b.intervals(), &[(0, 19), (0, 5)]);
        assert_eq!(o, vec![5, 3]);
    }

    #[test]
    fn second_moment_ratio_finite() {
        let ens = ensemble(0.5, 0, 19, PhaseDistribution::full_circle());
        let r = second_moment_ratio(&ens, C64::from_polar(0.5, 0.2), &[8], &[10], 0.3, 300, 1).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0 && r.ratio_stderr >= 0.0);
        assert!(second_moment_ratio(&ens, C64::new(1.5, 0.0), &[8], &[10], 0.3, 10, 1).is_err());
    }

    #[test]
    fn amplitudes_trivial_bounds() {
        let ens = ensemble(0.5, 0, 59, PhaseDistribution::full_circle());
        let prof = dynamical_profile(&ens, &[30], &[0, 2, 4, 6], 10, 30, 1).unwrap();
        assert!((prof.amplitudes[0] - 1.0).abs() < 1e-15);
        assert!(prof.amplitudes.iter().all(|a| *a <= 1.0 + 1e-12 && *a >= 0.0));
        assert!(!prof.truncated);
        let prof = dynamical_profile(&ens, &[30], &[2], 20, 2, 1).unwrap();
        assert!(prof.truncated);
    }

    #[test]
    fn amplitude_sup_is_monotone_in_horizon() {
        let ens = ensemble(0.5, 0, 39, PhaseDistribution::full_circle());
        let u = ens.realization(3, "x", 0).unwrap();
        let mut last = vec![0.0; 40];
        for n in [0, 1, 3, 7, 15] {
            let (sup, _) = amplitude_sups(&u, 20, n);
            assert!(sup.iter().zip(&last).all(|(a, b)| a >= b));
            last = sup;
        }
        // matches explicit powers
        let dense = u.dense();
        let mut pow = dense.clone();
        let mut want: f64 = 0.0;
        for _ in 0..4 {
            want = want.max(pow[(25, 20)].norm()).max(pow[(20, 25)].norm());
            pow = &pow * &dense;
        }
        let (sup, _) = amplitude_sups(&u, 20, 4);
        assert!((sup[25] - want).abs() < 1e-12);
    }

    #[test]
    fn position_moment_order_zero_is_norm() {
        let ens = ensemble(0.5, -20, 19, PhaseDistribution::full_circle());
        let mut psi = basis_vector(&ens.lattice, &[0]).unwrap();
        psi[21] = C64::new(0.0, 2.0);
        let pm = position_moment(&ens, &psi, 0.0, 5, 4, 1).unwrap();
        assert!((pm.value - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn free_transport_grows() {
        let ens = ensemble(0.5, -100, 99, PhaseDistribution::full_circle());
        let s = ens.free().clone();
        let psi = basis_vector(&ens.lattice, &[0]).unwrap();
        let curve = position_curve(&s, &psi, 2.0, 40);
        assert!(curve[40] > 4.0 * curve[10]);
    }

    #[test]
    fn trajectory_trivial_cases() {
        let ens = ensemble(0.5, -30, 29, PhaseDistribution::full_circle());
        let mut psi = basis_vector(&ens.lattice, &[0]).unwrap();
        psi[33] = C64::new(1.0, 0.0);
        let prof = trajectory_diagnostic(&ens, &psi, &[0, 3, 30], 0, 1).unwrap();
        assert!((prof[0].1 - 1.0).abs() < 1e-15);
        assert_eq!(prof[1].1, 0.0);
        let prof = trajectory_diagnostic(&ens, &psi, &[30], 10, 1).unwrap();
        assert_eq!(prof[0].1, 0.0);
    }

    #[test]
    fn plateau_of_linear_and_flat_curves() {
        let flat: Vec<f64> = (0..=40).map(|n| 1.0 - (-(n as f64)).exp()).collect();
        assert!(plateau_ratio(&flat) < 0.01);
        let line: Vec<f64> = (0..=40).map(|n| n as f64).collect();
        assert!((plateau_ratio(&line) - 1.0).abs() < 1e-12);
    }
}
