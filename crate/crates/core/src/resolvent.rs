//! Resolvents `G(z) = (U - z)^{-1}`, the modified resolvent, the Poisson
//! functional calculus, the geometric resolvent identity and Combes–Thomas
//! profiles.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{geometry, invalid, Error, Result};
use crate::lattice::{max_norm, LatticeBox};
use crate::linalg::{inverse, normal_eigen, residual_norm, vec_norm, BandedLu};
use crate::operators::{boundary_operator, AndersonOperator, BandedUnitary};
use crate::sparse::SparseMatrix;
use crate::stats::{above_noise_floor, fit_decay};

/// Residual bound for a resolvent solve, relative to `max(1, |x|)`.
pub const SOLVE_TOL: f64 = 1e-10;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

fn check_z(z: C64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return invalid("spectral parameter must be finite");
    }
    if (z.norm() - 1.0).abs() < 1e-14 {
        return invalid(format!("|z| = 1 is not allowed (z = {z})"));
    }
    Ok(())
}

/// Factorized `U - z`, solving for columns of `G(z)` (or rows, when built on
/// the transpose).
pub struct ResolventSolver {
    shifted: SparseMatrix,
    lu: BandedLu,
    transposed: bool,
}

impl ResolventSolver {
    /// Solver for columns `G(., l)`.
    pub fn columns(u: &BandedUnitary, z: C64) -> Result<Self> {
        check_z(z)?;
        let shifted = u.matrix().add_diagonal(-z);
        let lu = BandedLu::factor(&shifted)?;
        Ok(Self {
            shifted,
            lu,
            transposed: false,
        })
    }

    /// Solver for rows `G(k, .)`, through `(U - z)^T y = e_k`.
    pub fn rows(u: &BandedUnitary, z: C64) -> Result<Self> {
        check_z(z)?;
        let shifted = u.matrix().add_diagonal(-z).transpose();
        let lu = BandedLu::factor(&shifted)?;
        Ok(Self {
            shifted,
            lu,
            transposed: true,
        })
    }

    /// Column `l` (or row `l` for a row solver), checked by its residual.
    pub fn solve_unit(&self, index: usize) -> Result<Vec<C64>> {
        let mut b = vec![ZERO; self.shifted.nrows()];
        b[index] = ONE;
        self.solve(&b)
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let x = self.lu.solve(b);
        let res = residual_norm(&self.shifted, &x, b);
        let scale = vec_norm(&x).max(1.0);
        if !(res <= SOLVE_TOL * scale) {
            return Err(Error::Solve {
                reason: "z too close to the spectrum".into(),
                residual: res,
            });
        }
        Ok(x)
    }

    pub fn is_row_solver(&self) -> bool {
        self.transposed
    }
}

fn index(u: &BandedUnitary, site: &[i64]) -> Result<usize> {
    u.lattice()
        .index_of(site)
        .ok_or_else(|| Error::Geometry(format!("site {site:?} outside the box")))
}

/// `<e_k | (U - z)^{-1} e_l>` by a direct solve.
pub fn green(u: &BandedUnitary, z: C64, k: &[i64], l: &[i64]) -> Result<C64> {
    let (ki, li) = (index(u, k)?, index(u, l)?);
    let x = ResolventSolver::columns(u, z)?.solve_unit(li)?;
    Ok(x[ki])
}

/// `<e_k | (U + z)(U - z)^{-1} e_l>`, computed as `(U x)_k + z x_k` with
/// `x = (U - z)^{-1} e_l`.
pub fn modified_green(u: &BandedUnitary, z: C64, k: &[i64], l: &[i64]) -> Result<C64> {
    if z == ZERO {
        return invalid("modified resolvent needs z != 0");
    }
    let (ki, li) = (index(u, k)?, index(u, l)?);
    let x = ResolventSolver::columns(u, z)?.solve_unit(li)?;
    let ux: C64 = u.matrix().row(ki).map(|(j, v)| v * x[j]).sum();
    Ok(ux + z * x[ki])
}

/// Trapezoidal approximation of
/// `(1 - r^2)/2π ∫ (U - r e^{iθ})^{-1} (U^* - r e^{-iθ})^{-1} f(e^{iθ}) dθ`.
pub fn poisson_functional<F>(u: &DMatrix<C64>, f: F, r: f64, quadrature_n: usize) -> Result<DMatrix<C64>>
where
    F: Fn(C64) -> C64,
{
    if !(r > 0.0 && r < 1.0) {
        return invalid("Poisson radius must lie in (0,1)");
    }
    if quadrature_n < 64 {
        return invalid("quadrature needs at least 64 nodes");
    }
    let n = u.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let ua = u.adjoint();
    let mut acc = DMatrix::<C64>::zeros(n, n);
    for j in 0..quadrature_n {
        let theta = TAU * j as f64 / quadrature_n as f64;
        let w = C64::from_polar(r, theta);
        let a = inverse(&(u - &id * w))?;
        let b = inverse(&(&ua - &id * w.conj()))?;
        acc += (a * b) * f(C64::from_polar(1.0, theta));
    }
    Ok(acc * C64::new((1.0 - r * r) / quadrature_n as f64, 0.0))
}

/// `f(U)` from the eigen-decomposition of a normal matrix.
pub fn spectral_function<F>(u: &DMatrix<C64>, f: F) -> Result<DMatrix<C64>>
where
    F: Fn(C64) -> C64,
{
    let e = normal_eigen(u)?;
    let n = u.nrows();
    let mut scaled = e.vectors.clone();
    for j in 0..n {
        let fj = f(e.values[j]);
        for i in 0..n {
            scaled[(i, j)] *= fj;
        }
    }
    Ok(scaled * e.vectors.adjoint())
}

/// Residuals of the geometric resolvent identity around `Λ_L`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeometricResidual {
    /// `max |χ_0 G χ_y - χ_0 G^(L) T^(L) G T^(L+1) G^(L+1) χ_y|`.
    pub identity: f64,
    /// `max |χ_0 G^(L) χ_y|`, zero because the two cubes are decoupled.
    pub vanishing_block: f64,
    /// `max |G - (G^(L) - G^(L) T^(L) G^(L+1) + G^(L) T^(L) G T^(L+1) G^(L+1))|`.
    pub double_resolvent: f64,
    /// Size of the block `χ_0 G χ_y` for scale.
    pub block_norm: f64,
}

fn cube_indices(lattice: &LatticeBox, cube: &[i64]) -> Vec<usize> {
    let d = cube.len();
    (0..(1usize << d))
        .filter_map(|mask| {
            let site: Vec<i64> = (0..d)
                .map(|j| 2 * cube[j] + ((mask >> (d - 1 - j)) & 1) as i64)
                .collect();
            lattice.index_of(&site)
        })
        .collect()
}

/// Evaluate the geometric resolvent identity for the cube `y` on a world
/// operator. Needs `|y| >= L + 2` and a world box containing every cube with
/// `|x| <= L + 4`.
pub fn geometric_resolvent_residual(world: &AndersonOperator, l: usize, y: &[i64], z: C64) -> Result<GeometricResidual> {
    check_z(z)?;
    let d = world.params.d();
    if y.len() != d {
        return geometry("cube index has the wrong dimension");
    }
    if max_norm(y) < l as i64 + 2 {
        return geometry(format!("cube {y:?} must satisfy |y| >= L + 2 = {}", l + 2));
    }
    if !world.lattice().contains_box(&LatticeBox::centered(d, l + 4)) {
        return geometry("world box must contain all cubes with |x| <= L + 4");
    }
    let n = world.lattice().volume();
    let id = DMatrix::<C64>::identity(n, n);
    let dec0 = boundary_operator(world, l)?;
    let dec1 = boundary_operator(world, l + 1)?;
    let g = inverse(&(world.op.dense() - &id * z))?;
    let g0 = inverse(&(dec0.direct_sum().to_dense() - &id * z))?;
    let g1 = inverse(&(dec1.direct_sum().to_dense() - &id * z))?;
    let t0 = dec0.coupling.to_dense();
    let t1 = dec1.coupling.to_dense();

    let rows = cube_indices(world.lattice(), &vec![0; d]);
    let cols = cube_indices(world.lattice(), y);
    let g0_rows = g0.select_rows(rows.iter());
    let g1_cols = g1.select_columns(cols.iter());
    let rhs = g0_rows * &t0 * &g * &t1 * g1_cols;
    let lhs = g.select_rows(rows.iter()).select_columns(cols.iter());
    let identity = (&lhs - &rhs).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let block_norm = lhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let vanishing_block = g0
        .select_rows(rows.iter())
        .select_columns(cols.iter())
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);

    let g0t0 = &g0 * &t0;
    let expanded = &g0 - &g0t0 * &g1 + &g0t0 * &g * &t1 * &g1;
    let double_resolvent = (&g - expanded).iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(GeometricResidual {
        identity,
        vanishing_block,
        double_resolvent,
        block_norm,
    })
}

/// Profile `distance -> value` with a log-linear fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayProfile {
    pub distances: Vec<i64>,
    pub values: Vec<f64>,
    /// Monte Carlo standard errors; zero for deterministic profiles.
    pub stderrs: Vec<f64>,
    pub fitted_rate: f64,
    pub rate_stderr: f64,
    pub fitted_prefactor: f64,
    pub r_squared: f64,
    /// Number of points that entered the fit.
    pub fit_points: usize,
}

impl DecayProfile {
    /// Fit `ln value = ln C - rate * dist` over the values at or above
    /// `1e-14`.
    pub fn fitted(distances: Vec<i64>, values: Vec<f64>) -> Self {
        let stderrs = vec![0.0; values.len()];
        Self::fitted_above_noise(distances, values, stderrs)
    }

    /// As [`DecayProfile::fitted`], additionally dropping estimates below
    /// ten standard errors.
    pub fn fitted_above_noise(distances: Vec<i64>, values: Vec<f64>, stderrs: Vec<f64>) -> Self {
        let xs: Vec<f64> = distances.iter().map(|&x| x as f64).collect();
        let (fx, fy) = above_noise_floor(&xs, &values, &stderrs);
        let fit = fit_decay(&fx, &fy);
        Self {
            distances,
            values,
            stderrs,
            fitted_rate: fit.map_or(f64::NAN, |f| f.rate),
            rate_stderr: fit.map_or(f64::NAN, |f| f.rate_stderr),
            fitted_prefactor: fit.map_or(f64::NAN, |f| f.prefactor),
            r_squared: fit.map_or(f64::NAN, |f| f.r_squared),
            fit_points: fit.map_or(0, |f| f.points),
        }
    }

    pub const CSV_HEADER: &'static str = "dist,value,stderr,fitted_rate,fitted_prefactor,r_squared";

    /// One row per distance, the fit repeated on every row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for ((d, v), e) in self.distances.iter().zip(&self.values).zip(&self.stderrs) {
            let _ = writeln!(
                s,
                "{d},{v},{e},{},{},{}",
                self.fitted_rate, self.fitted_prefactor, self.r_squared
            );
        }
        s
    }
}

/// Shell maxima of `|G(j, origin; z)|` and the Combes–Thomas envelope
/// `(2/δ) e^{-δ n B}` with `δ = dist(z, σ(U))`.
#[derive(Clone, Debug, Serialize)]
pub struct CombesThomasProfile {
    pub profile: DecayProfile,
    pub dist_to_spectrum: f64,
    /// `fitted_rate / δ`.
    pub b_least_squares: f64,
    /// Largest `B` for which every shell value lies under the envelope.
    pub b_envelope: f64,
    /// `min(b_least_squares, b_envelope)`.
    pub b_fit: f64,
    /// Largest ratio of a shell value to the envelope at `b_fit`.
    pub max_envelope_ratio: f64,
}

pub fn combes_thomas_profile(u: &BandedUnitary, z: C64, origin: &[i64], max_dist: usize) -> Result<CombesThomasProfile> {
    let e = normal_eigen(&u.dense())?;
    let dist = e
        .values
        .iter()
        .map(|v| (v - z).norm())
        .fold(f64::INFINITY, f64::min);
    if dist < 1e-8 {
        return invalid(format!("z lies within {dist:e} of the spectrum"));
    }
    let oi = index(u, origin)?;
    let col = ResolventSolver::columns(u, z)?.solve_unit(oi)?;
    let mut shells = vec![f64::NEG_INFINITY; max_dist + 1];
    for (i, g) in col.iter().enumerate() {
        let site = u.lattice().site(i);
        let n = site
            .iter()
            .zip(origin)
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or(0) as usize;
        if n <= max_dist {
            shells[n] = shells[n].max(g.norm());
        }
    }
    let (distances, values): (Vec<i64>, Vec<f64>) = shells
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(n, v)| (n as i64, *v))
        .unzip();
    let profile = DecayProfile::fitted(distances, values);
    let b_ls = profile.fitted_rate / dist;
    let envelope0 = 2.0 / dist;
    let b_env = profile
        .distances
        .iter()
        .zip(&profile.values)
        .filter(|(n, v)| **n > 0 && **v > 0.0)
        .map(|(n, v)| (envelope0 / v).ln() / (dist * *n as f64))
        .fold(f64::INFINITY, f64::min);
    let b_fit = b_ls.min(b_env);
    let max_envelope_ratio = profile
        .distances
        .iter()
        .zip(&profile.values)
        .map(|(n, v)| v / (envelope0 * (-dist * *n as f64 * b_fit).exp()))
        .fold(0.0, f64::max);
    Ok(CombesThomasProfile {
        profile,
        dist_to_spectrum: dist,
        b_least_squares: b_ls,
        b_envelope: b_env,
        b_fit,
        max_envelope_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoundarySpec;
    use crate::operators::{phase_operator, AndersonOperator};
    use crate::params::{ModelParams, PhaseDistribution};
    use crate::phases::PhaseField;

    fn random_world(t: f64, a: i64, b: i64, seed: u64) -> AndersonOperator {
        let p = ModelParams::new(t, 1).unwrap();
        let lat = LatticeBox::interval(a, b).unwrap();
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, seed);
        AndersonOperator::new(p, ph, BoundarySpec::simple()).unwrap()
    }

    #[test]
    fn diagonal_double_inverts_entrywise() {
        let lat = LatticeBox::interval(0, 5).unwrap();
        let ph = PhaseField::from_values(&lat, vec![0.1, 0.5, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = phase_operator(&ph);
        let z = C64::new(0.3, 1.4);
        for k in 0..6i64 {
            let g = green(&d, z, &[k], &[k]).unwrap();
            let want = ONE / (C64::from_polar(1.0, -ph.values()[k as usize]) - z);
            assert!((g - want).norm() < 1e-14);
            assert_eq!(green(&d, z, &[k], &[(k + 1) % 6]).unwrap(), ZERO);
        }
    }

    #[test]
    fn modified_resolvent_relation() {
        let w = random_world(0.5, 0, 15, 3);
        for z in [C64::new(0.2, 0.3), C64::from_polar(1.7, 2.0), C64::from_polar(1e-6, 0.4)] {
            for (k, l) in [(2i64, 7i64), (5, 5), (11, 1)] {
                let g = green(&w.op, z, &[k], &[l]).unwrap();
                let m = modified_green(&w.op, z, &[k], &[l]).unwrap();
                let delta = if k == l { ONE } else { ZERO };
                assert!(((m - delta) / (2.0 * z) - g).norm() < 1e-10 * g.norm().max(1.0));
            }
        }
        let m = modified_green(&w.op, C64::from_polar(1e-6, 0.4), &[4], &[4]).unwrap();
        assert!((m - ONE).norm() < 1e-5);
    }

    #[test]
    fn resolvent_norm_bound_far_from_circle() {
        let w = random_world(0.5, 0, 19, 5);
        let z = C64::from_polar(3.0, 0.8);
        let solver = ResolventSolver::columns(&w.op, z).unwrap();
        for l in 0..20 {
            let col = solver.solve_unit(l).unwrap();
            assert!(col.iter().all(|g| g.norm() <= 0.5 + 1e-12));
        }
    }

    #[test]
    fn resolvent_identity() {
        let w = random_world(0.4, 0, 11, 6);
        let (z, v) = (C64::new(0.3, 0.2), C64::from_polar(1.5, -1.0));
        let n = 12;
        let id = DMatrix::<C64>::identity(n, n);
        let u = w.op.dense();
        let gz = inverse(&(&u - &id * z)).unwrap();
        let gw = inverse(&(&u - &id * v)).unwrap();
        let diff = &gz - &gw - (&gz * &gw) * (z - v);
        assert!(diff.iter().all(|x| x.norm() < 1e-10));
    }

    #[test]
    fn row_solver_matches_column_solver() {
        let w = random_world(0.5, -5, 14, 9);
        let z = C64::from_polar(1.01, 0.4);
        let cols = ResolventSolver::columns(&w.op, z).unwrap();
        let rows = ResolventSolver::rows(&w.op, z).unwrap();
        let row3 = rows.solve_unit(3).unwrap();
        for l in 0..20 {
            let col = cols.solve_unit(l).unwrap();
            assert!((col[3] - row3[l]).norm() < 1e-10 * col[3].norm().max(1.0));
        }
    }

    #[test]
    fn reflection_identity() {
        // conj G(l,k;z) = -(1/conj z) <e_k| U G(1/conj z) |e_l>
        let w = random_world(0.5, 0, 13, 12);
        let z = C64::from_polar(0.7, 1.1);
        let u = w.op.dense();
        let id = DMatrix::<C64>::identity(14, 14);
        let g = inverse(&(&u - &id * z)).unwrap();
        let zr = ONE / z.conj();
        let h = &u * inverse(&(&u - &id * zr)).unwrap();
        for k in 0..14 {
            for l in 0..14 {
                let lhs = g[(l, k)].conj();
                let rhs = -h[(k, l)] / z.conj();
                assert!((lhs - rhs).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn poisson_of_constant_and_identity() {
        let w = random_world(0.5, 0, 7, 1);
        let u = w.op.dense();
        let one = poisson_functional(&u, |_| ONE, 0.99, 4096).unwrap();
        let id = DMatrix::<C64>::identity(8, 8);
        assert!((&one - &id).iter().all(|x| x.norm() < 1e-2));
        let lin = poisson_functional(&u, |w| w, 0.99, 4096).unwrap();
        let exact = spectral_function(&u, |w| w).unwrap();
        assert!((&exact - &u).iter().all(|x| x.norm() < 1e-12));
        assert!((&lin - &u).iter().all(|x| x.norm() < 2e-2));
        assert!(poisson_functional(&u, |w| w, 0.99, 32).is_err());
    }

    #[test]
    fn poisson_error_shrinks_as_radius_grows() {
        let w = random_world(0.5, 0, 7, 2);
        let u = w.op.dense();
        let exact = spectral_function(&u, |w| w * w).unwrap();
        let mut last = f64::INFINITY;
        for r in [0.9, 0.99, 0.999] {
            let n = (10.0_f64 / (1.0 - r)).ceil() as usize;
            let approx = poisson_functional(&u, |w| w * w, r, n).unwrap();
            let err = (&approx - &exact).iter().map(|x| x.norm()).fold(0.0, f64::max);
            assert!(err < last, "r={r} err={err} last={last}");
            last = err;
        }
    }

    #[test]
    fn smoothed_arc_indicator_has_bounded_diagonal() {
        let w = random_world(0.5, 0, 7, 3);
        let u = w.op.dense();
        let f = |w: C64| {
            let x = w.arg();
            C64::new(0.5 * (((x - 0.5) * 8.0).tanh() - ((x - 1.5) * 8.0).tanh()), 0.0)
        };
        let p = poisson_functional(&u, f, 0.99, 2048).unwrap();
        for i in 0..8 {
            let v = p[(i, i)];
            assert!(v.re > -1e-3 && v.re < 1.0 + 1e-3 && v.im.abs() < 1e-3);
        }
    }

    #[test]
    fn geometric_identity_one_dimensional() {
        let w = random_world(0.5, -40, 39, 21);
        let z = C64::from_polar(1.5, w.params.lambda0());
        let res = geometric_resolvent_residual(&w, 3, &[6], z).unwrap();
        assert!(res.identity < 1e-10, "{res:?}");
        assert!(res.vanishing_block == 0.0);
        assert!(res.double_resolvent < 1e-10);
        assert!(geometric_resolvent_residual(&w, 3, &[4], z).is_err());
    }

    #[test]
    fn combes_thomas_diagonal_bound() {
        let w = random_world(0.5, 0, 59, 4);
        let z = C64::from_polar(1.3, 0.2);
        let ct = combes_thomas_profile(&w.op, z, &[30], 25).unwrap();
        assert!(ct.profile.values[0] <= 1.0 / ct.dist_to_spectrum + 1e-12);
        assert!(ct.b_fit > 0.0);
        assert!(ct.max_envelope_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn decay_profile_csv_header() {
        let p = DecayProfile::fitted(vec![0, 1, 2], vec![1.0, 0.5, 0.25]);
        assert!((p.fitted_rate - 2f64.ln()).abs() < 1e-12);
        assert!(p.to_csv().starts_with("dist,value,stderr,fitted_rate,fitted_prefactor,r_squared\n0,1,0,"));
    }
}
