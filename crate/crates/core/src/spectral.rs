//! Spectra of Neumann restrictions, the top eigenvalue of `D S_N` and its
//! dependence on the disorder strength, and Lifshitz-tail sampling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::{BoundarySpec, LatticeBox};
use crate::linalg::{eigenvalues, normal_eigen, NormalEigen};
use crate::operators::{build_partitioned_neumann, build_s_tensor, build_u, BandedUnitary, OperatorKind, UNITARITY_TOL};
use crate::params::{wrap_angle, ModelParams, PhaseDistribution};
use crate::phases::PhaseField;
use crate::seeding::derive_seed;

/// `(π(4−π))²/8`.
pub const GAP_CONSTANT: f64 = {
    let x = PI * (4.0 - PI);
    x * x / 8.0
};

/// Multiset of unit-modulus eigenvalues with their arguments in `(−π, π]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralSet {
    pub eigenvalues: Vec<C64>,
    pub args: Vec<f64>,
}

impl SpectralSet {
    pub fn from_args(args: Vec<f64>) -> Self {
        let args: Vec<f64> = args.into_iter().map(wrap_angle).collect();
        Self {
            eigenvalues: args.iter().map(|&a| C64::from_polar(1.0, a)).collect(),
            args,
        }
    }

    pub fn from_eigenvalues(eigenvalues: Vec<C64>) -> Self {
        let args = eigenvalues.iter().map(|z| z.arg()).collect();
        Self { eigenvalues, args }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest `| |λ| − 1 |`.
    pub fn modulus_defect(&self) -> f64 {
        self.eigenvalues.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn count_near(&self, z: C64, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|w| (*w - z).norm() <= tol).count()
    }

    /// Greedy pairing of the two multisets: every element of `self` takes the
    /// closest unused element of `other`. Returns the largest paired distance,
    /// or infinity when the sizes differ.
    pub fn match_distance(&self, other: &SpectralSet) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        let mut used = vec![false; other.len()];
        let mut worst: f64 = 0.0;
        for z in &self.eigenvalues {
            let (best, dist) = other
                .eigenvalues
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, w)| (j, (z - w).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("sizes agree");
            used[best] = true;
            worst = worst.max(dist);
        }
        worst
    }
}

/// `λ_k = arccos(r² − t² cos(kπ/L))`.
pub fn neumann_angle(params: &ModelParams, k: usize, l: usize) -> f64 {
    let (r, t) = (params.r(), params.t());
    (r * r - t * t * (k as f64 * PI / l as f64).cos()).clamp(-1.0, 1.0).acos()
}

/// Arguments of the spectrum of `S_N` on `[0, 2L−1]`: `λ_0`, `0` and `±λ_k`
/// for `k = 1..L−1`.
pub fn neumann_args_1d(params: &ModelParams, l: usize) -> Vec<f64> {
    let mut out = vec![params.lambda0(), 0.0];
    for k in 1..l {
        let lk = neumann_angle(params, k, l);
        out.push(lk);
        out.push(-lk);
    }
    out
}

/// Spectrum of `S_N` on `[0, 2L−1]^d` from the closed form: all products of
/// one eigenvalue per axis.
pub fn neumann_spectrum_closed_form(params: &ModelParams, l: usize, d: usize) -> Result<SpectralSet> {
    if l < 2 {
        return invalid("closed-form spectrum needs L >= 2");
    }
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let one = neumann_args_1d(params, l);
    let mut sums = vec![0.0];
    for _ in 0..d {
        sums = sums.iter().flat_map(|s| one.iter().map(move |a| s + a)).collect();
    }
    Ok(SpectralSet::from_args(sums))
}

/// `[0, 2L−1]^d`, the box the closed form refers to.
pub fn neumann_box(l: usize, d: usize) -> Result<LatticeBox> {
    LatticeBox::cube(d, 0, 2 * l as i64 - 1)
}

/// Eigenvalues of a unitary operator from the dense eigensolver.
pub fn numerical_spectrum(u: &BandedUnitary) -> Result<SpectralSet> {
    check_unitary(u)?;
    Ok(SpectralSet::from_eigenvalues(eigenvalues(&u.dense())?))
}

fn check_unitary(u: &BandedUnitary) -> Result<()> {
    let defect = u.unitarity_defect();
    if u.kind() != OperatorKind::Unitary || defect >= UNITARITY_TOL {
        return Err(Error::NotUnitary { defect });
    }
    Ok(())
}

fn tensor_power(v: &[C64], d: usize) -> Vec<C64> {
    let mut acc = vec![C64::new(1.0, 0.0)];
    for _ in 0..d {
        acc = acc.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    acc
}

/// `(1, i, 1, i, …)` on `[0, 2L−1]`, tensored `d` times.
pub fn band_edge_vector(l: usize, d: usize) -> Vec<C64> {
    let one: Vec<C64> = (0..2 * l)
        .map(|j| if j % 2 == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) })
        .collect();
    tensor_power(&one, d)
}

/// `(i, 1, −i, −1, i, 1, …)` on `[0, 2L−1]`, tensored `d` times.
pub fn unit_eigenvalue_vector(l: usize, d: usize) -> Vec<C64> {
    let cycle = [C64::new(0.0, 1.0), C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0)];
    let one: Vec<C64> = (0..2 * l).map(|j| cycle[j % 4]).collect();
    tensor_power(&one, d)
}

fn relative_residual(u: &BandedUnitary, v: &[C64], eigenvalue: C64) -> f64 {
    let uv = u.matrix().apply(v);
    let num: f64 = uv.iter().zip(v).map(|(a, b)| (a - eigenvalue * b).norm_sqr()).sum();
    let den: f64 = v.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

fn neumann_operator(params: &ModelParams, l: usize, d: usize) -> Result<BandedUnitary> {
    if l < 2 {
        return invalid("L >= 2 required");
    }
    let p = params.with_dimension(d)?;
    build_s_tensor(&p, &neumann_box(l, d)?, &BoundarySpec::neumann())
}

/// `‖S_N φ − e^{idλ₀} φ‖ / ‖φ‖` for the band-edge vector.
pub fn band_edge_eigvec_check(params: &ModelParams, l: usize, d: usize) -> Result<f64> {
    let s = neumann_operator(params, l, d)?;
    let edge = C64::from_polar(1.0, d as f64 * params.lambda0());
    Ok(relative_residual(&s, &band_edge_vector(l, d), edge))
}

/// `‖S_N φ − φ‖ / ‖φ‖` for the eigenvector of eigenvalue `1`.
pub fn unit_eigvec_check(params: &ModelParams, l: usize, d: usize) -> Result<f64> {
    let s = neumann_operator(params, l, d)?;
    Ok(relative_residual(&s, &unit_eigenvalue_vector(l, d), C64::new(1.0, 0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralGap {
    pub gap: f64,
    pub lower_bound: f64,
}

/// Distance from `e^{idλ₀}` to the rest of the closed-form spectrum on
/// `[0, 2L−1]^d`, and `c₀ t² / |Λ|^{2/d}`.
pub fn spectral_gap(params: &ModelParams, l: usize, d: usize) -> Result<SpectralGap> {
    if d as f64 * params.lambda0() >= PI {
        return Err(Error::Degenerate { gap: 0.0 });
    }
    let set = neumann_spectrum_closed_form(params, l, d)?;
    let edge = C64::from_polar(1.0, d as f64 * params.lambda0());
    let mut dists: Vec<f64> = set.eigenvalues.iter().map(|z| (z - edge).norm()).collect();
    dists.sort_by(f64::total_cmp);
    let gap = dists[1];
    if gap < 1e-12 {
        return Err(Error::Degenerate { gap });
    }
    let volume = (2 * l).pow(d as u32) as f64;
    let t = params.t();
    Ok(SpectralGap {
        gap,
        lower_bound: GAP_CONSTANT * t * t / volume.powf(2.0 / d as f64),
    })
}

/// For `k = 1..L−1`: `(|e^{iλ₀} − e^{iλ_k}|, 2t² sin²(πk/2L))`.
pub fn per_level_gaps(params: &ModelParams, l: usize) -> Vec<(f64, f64)> {
    let edge = C64::from_polar(1.0, params.lambda0());
    let t2 = params.t() * params.t();
    (1..l)
        .map(|k| {
            let lk = neumann_angle(params, k, l);
            let s = (PI * k as f64 / (2.0 * l as f64)).sin();
            ((edge - C64::from_polar(1.0, lk)).norm(), 2.0 * t2 * s * s)
        })
        .collect()
}

/// Position of the branch cut for arguments when the phases lie in
/// `[0, θ_M]`: the spectrum of `D S` avoids the arc between `dλ₀` and
/// `2π − dλ₀ − θ_M`, whose midpoint is `π − θ_M/2`.
pub fn branch_cut(theta_max: f64) -> f64 {
    PI - 0.5 * theta_max
}

/// Argument of `z` in `(cut − 2π, cut]`.
pub fn arg_below_cut(z: C64, cut: f64) -> f64 {
    let a = z.arg();
    let shifted = a - 2.0 * PI * ((a - cut) / (2.0 * PI)).ceil();
    if shifted <= cut - 2.0 * PI { shifted + 2.0 * PI } else { shifted }
}

#[derive(Clone, Debug)]
pub struct TopEigen {
    pub value: C64,
    pub arg: f64,
    pub vector: Vec<C64>,
    /// Distance to the nearest other eigenvalue.
    pub gap: f64,
}

fn top_of(eig: &NormalEigen, cut: f64) -> TopEigen {
    let (idx, arg) = eig
        .values
        .iter()
        .map(|z| arg_below_cut(*z, cut))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty spectrum");
    let value = eig.values[idx];
    let gap = eig
        .values
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .map(|(_, z)| (z - value).norm())
        .fold(f64::INFINITY, f64::min);
    TopEigen {
        value,
        arg,
        vector: eig.vectors.column(idx).iter().copied().collect(),
        gap,
    }
}

/// The eigenvalue of largest argument, arguments being taken in
/// `(cut − 2π, cut]`.
pub fn top_eigenvalue(u: &BandedUnitary, cut: f64) -> Result<(C64, f64)> {
    let top = top_eigenpair(u, cut)?;
    Ok((top.value, top.arg))
}

pub fn top_eigenpair(u: &BandedUnitary, cut: f64) -> Result<TopEigen> {
    check_unitary(u)?;
    Ok(top_of(&normal_eigen(&u.dense())?, cut))
}

/// `α ↦ U(α) = diag(e^{−iαθ_k}) S_N`, so `U(0) = S_N` and `U(1) = D S_N`.
#[derive(Clone, Debug)]
pub struct InterpolationFamily {
    pub phases: PhaseField,
    pub s_n: BandedUnitary,
    dense_s: DMatrix<C64>,
}

impl InterpolationFamily {
    pub fn new(phases: PhaseField, s_n: BandedUnitary) -> Result<Self> {
        if phases.lattice() != s_n.lattice() {
            return Err(Error::BoxMismatch("phases and S_N live on different boxes".into()));
        }
        check_unitary(&s_n)?;
        let dense_s = s_n.dense();
        Ok(Self { phases, s_n, dense_s })
    }

    /// Family over `S_N` on the box of `phases`.
    pub fn neumann(params: &ModelParams, phases: PhaseField) -> Result<Self> {
        let s = build_s_tensor(params, phases.lattice(), &BoundarySpec::neumann())?;
        Self::new(phases, s)
    }

    pub fn at(&self, alpha: f64) -> DMatrix<C64> {
        let mut m = self.dense_s.clone();
        for (i, th) in self.phases.values().iter().enumerate() {
            let f = C64::from_polar(1.0, -alpha * th);
            m.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        m
    }

    pub fn eigen(&self, alpha: f64) -> Result<NormalEigen> {
        normal_eigen(&self.at(alpha))
    }

    /// `−Σ θ_k |v_k|²` for a normalized vector.
    pub fn weighted_phase(&self, v: &[C64]) -> f64 {
        let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        -self
            .phases
            .values()
            .iter()
            .zip(v)
            .map(|(th, x)| th * x.norm_sqr())
            .sum::<f64>()
            / norm
    }

    fn cut(&self) -> f64 {
        let theta_max = self.phases.values().iter().copied().fold(0.0, f64::max);
        branch_cut(theta_max)
    }
}

fn overlap(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>().norm()
}

/// Eigenpair of `eig` with maximal overlap with `v`, plus that overlap.
fn best_match(eig: &NormalEigen, v: &[C64]) -> (usize, f64) {
    (0..eig.values.len())
        .map(|j| {
            let col: Vec<C64> = eig.vectors.column(j).iter().copied().collect();
            (j, overlap(&col, v))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty")
}

fn gap_at(eig: &NormalEigen, idx: usize) -> f64 {
    let z = eig.values[idx];
    eig.values
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .map(|(_, w)| (w - z).norm())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub analytic: f64,
    pub finite_difference: f64,
    pub gap: f64,
}

impl DerivativeCheck {
    pub fn difference(&self) -> f64 {
        (self.analytic - self.finite_difference).abs()
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const MIN_GAP: f64 = 1e-8;

/// `λ'(α) = −Σ θ_k |φ_k(α)|²` for the top eigenvalue of `U(α)`, next to the
/// centered difference of its argument with step [`FD_STEP`], the branch
/// being followed to `α ± h` by maximal overlap.
pub fn feynman_hellmann_derivative(family: &InterpolationFamily, alpha: f64) -> Result<DerivativeCheck> {
    let eig = family.eigen(alpha)?;
    let top = top_of(&eig, family.cut());
    if top.gap < MIN_GAP {
        return Err(Error::Degenerate { gap: top.gap });
    }
    let analytic = family.weighted_phase(&top.vector);
    let follow = |a: f64| -> Result<C64> {
        let e = family.eigen(a)?;
        let (j, ov) = best_match(&e, &top.vector);
        if ov < 0.5 {
            return Err(Error::Tracking(format!("overlap {ov:.3} at alpha = {a}")));
        }
        Ok(e.values[j])
    };
    let plus = follow(alpha + FD_STEP)?;
    let minus = follow(alpha - FD_STEP)?;
    let finite_difference = (plus / minus).arg() / (2.0 * FD_STEP);
    Ok(DerivativeCheck {
        analytic,
        finite_difference,
        gap: top.gap,
    })
}

/// Argument of the top eigenvalue along a grid of `α`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MonotonicityScan {
    pub alphas: Vec<f64>,
    /// Continuous argument of the branch that starts at the top eigenvalue.
    pub tracked: Vec<f64>,
    /// Largest argument below the branch cut at each grid point.
    pub top: Vec<f64>,
    /// Grid points dropped because the tracked eigenvalue was within
    /// [`MIN_GAP`] of another one.
    pub skipped: Vec<f64>,
    pub min_overlap: f64,
}

impl MonotonicityScan {
    /// Largest step-to-step increase of either sequence.
    pub fn max_increase(&self) -> f64 {
        let inc = |xs: &[f64]| xs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        inc(&self.tracked).max(inc(&self.top))
    }

    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.tracked.len() < 2 || self.max_increase() <= slack
    }
}

const SUBSTEP_OVERLAP: f64 = 0.9;
const FAIL_OVERLAP: f64 = 0.5;
const MAX_BISECTIONS: usize = 12;

/// Follow the top eigenvalue of `U(α)` over `alpha_grid` (increasing),
/// refining a step whenever consecutive eigenvectors overlap by less than
/// 0.9.
pub fn monotonicity_scan(family: &InterpolationFamily, alpha_grid: &[f64]) -> Result<MonotonicityScan> {
    if family.phases.values().iter().any(|&th| th < 0.0) {
        return invalid("monotonicity scan needs nonnegative phases");
    }
    if alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("alpha grid must be strictly increasing");
    }
    let mut scan = MonotonicityScan {
        min_overlap: 1.0,
        ..Default::default()
    };
    let Some(&first) = alpha_grid.first() else {
        return Ok(scan);
    };
    let cut = family.cut();
    let eig = family.eigen(first)?;
    let start = top_of(&eig, cut);
    let mut vector = start.vector.clone();
    let mut arg = start.arg;
    let mut alpha = first;
    let record = |scan: &mut MonotonicityScan, a: f64, tracked: f64, gap: f64, e: &NormalEigen| {
        if gap < MIN_GAP {
            scan.skipped.push(a);
        } else {
            scan.alphas.push(a);
            scan.tracked.push(tracked);
            scan.top.push(top_of(e, cut).arg);
        }
    };
    record(&mut scan, first, arg, start.gap, &eig);
    for &target in &alpha_grid[1..] {
        let mut pending = vec![target];
        let mut depth = 0;
        while let Some(&next) = pending.last() {
            let e = family.eigen(next)?;
            let (j, ov) = best_match(&e, &vector);
            if ov < SUBSTEP_OVERLAP && depth < MAX_BISECTIONS {
                pending.push(0.5 * (alpha + next));
                depth += 1;
                continue;
            }
            if ov < FAIL_OVERLAP {
                return Err(Error::Tracking(format!("overlap {ov:.3} between alpha {alpha} and {next}")));
            }
            scan.min_overlap = scan.min_overlap.min(ov);
            let value = e.values[j];
            let step = (value / C64::from_polar(1.0, arg)).arg();
            arg += step;
            vector = e.vectors.column(j).iter().copied().collect();
            alpha = next;
            pending.pop();
            depth = depth.saturating_sub(1);
            if pending.is_empty() {
                record(&mut scan, next, arg, gap_at(&e, j), &e);
            }
        }
    }
    Ok(scan)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bracketing {
    pub arg_joined: f64,
    pub arg_split: f64,
}

impl Bracketing {
    pub fn holds(&self, slack: f64) -> bool {
        self.arg_joined <= self.arg_split + slack
    }
}

/// Top arguments of `D S_N` on the whole box and of `D (⊕ S_N)` on the
/// pieces cut out by `cuts` (one list of cut positions per axis).
pub fn partition_bracketing(params: &ModelParams, phases: &PhaseField, cuts: &[Vec<i64>]) -> Result<Bracketing> {
    let lattice = phases.lattice();
    let theta_max = phases.values().iter().copied().fold(0.0, f64::max);
    if phases.values().iter().any(|&th| th < 0.0) {
        return invalid("bracketing needs nonnegative phases");
    }
    let cut = branch_cut(theta_max);
    let joined = build_u(phases, &build_s_tensor(params, lattice, &BoundarySpec::neumann())?)?;
    let split = build_u(phases, &build_partitioned_neumann(params, lattice, cuts, &BoundarySpec::neumann())?)?;
    Ok(Bracketing {
        arg_joined: top_eigenvalue(&joined, cut)?.1,
        arg_split: top_eigenvalue(&split, cut)?.1,
    })
}

/// Single cut perpendicular to `axis` between `cut − 1` and `cut`.
pub fn neumann_bracketing_check(params: &ModelParams, phases: &PhaseField, axis: usize, cut: i64) -> Result<Bracketing> {
    let mut cuts = vec![Vec::new(); phases.lattice().dim()];
    if axis >= cuts.len() {
        return invalid(format!("axis {axis} out of range"));
    }
    cuts[axis].push(cut);
    partition_bracketing(params, phases, &cuts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LifshitzTrial {
    #[serde(rename = "L")]
    pub l: usize,
    pub b: f64,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub stderr: f64,
}

impl LifshitzTrial {
    pub const CSV_HEADER: &'static str = "L,b,samples,hits,p_hat,stderr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.l, self.b, self.samples, self.hits, self.p_hat, self.stderr)
    }
}

/// Fraction of realizations on `Λ_L = [−2L, 2L+1]^d` whose top eigenvalue of
/// `D S_N` lies within `b / L²` of `e^{idλ₀}`.
pub fn lifshitz_trial(
    params: &ModelParams,
    dist: &PhaseDistribution,
    l: usize,
    b: f64,
    samples: usize,
    seed: u64,
) -> Result<LifshitzTrial> {
    if !(b > 0.0) {
        return invalid("Lifshitz window b must be positive");
    }
    if l < 1 || samples == 0 {
        return invalid("Lifshitz trial needs L >= 1 and at least one sample");
    }
    if dist.lo() < 0.0 {
        return invalid("Lifshitz trial needs phases in [0, θ_M]");
    }
    let lattice = LatticeBox::centered(params.d(), l);
    let s = build_s_tensor(params, &lattice, &BoundarySpec::neumann())?;
    let edge = C64::from_polar(1.0, params.edge_angle());
    let radius = b / (l * l) as f64;
    let cut = branch_cut(dist.hi());
    let hit_flags = (0..samples)
        .into_par_iter()
        .map(|i| {
            let phases = PhaseField::sample(dist, &lattice, derive_seed(seed, "lifshitz", i as u64));
            let u = build_u(&phases, &s)?;
            let values = eigenvalues(&u.dense())?;
            let top = values
                .iter()
                .copied()
                .max_by(|a, b| arg_below_cut(*a, cut).total_cmp(&arg_below_cut(*b, cut)))
                .expect("nonempty");
            Ok((top - edge).norm() <= radius)
        })
        .collect::<Result<Vec<bool>>>()?;
    let hits = hit_flags.iter().filter(|h| **h).count();
    let p_hat = hits as f64 / samples as f64;
    Ok(LifshitzTrial {
        l,
        b,
        samples,
        hits,
        p_hat,
        stderr: (p_hat * (1.0 - p_hat) / samples as f64).sqrt(),
    })
}
