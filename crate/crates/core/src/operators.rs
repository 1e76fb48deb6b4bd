//! Construction of `S_0`, its tensor powers, boundary restrictions and the
//! random operators `U = D S`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{geometry, Error, Result};
use crate::lattice::{cube_of, max_norm, BoundarySpec, LatticeBox};
use crate::linalg::{power_norm, sparse_unitarity_defect, unitarity_defect, vec_norm};
use crate::params::ModelParams;
use crate::phases::PhaseField;
use crate::sparse::SparseMatrix;

pub const UNITARITY_TOL: f64 = 1e-12;
pub const CONTRACTION_TOL: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Unitary,
    /// Restriction `P U P` to the complement of an inner box.
    Contraction,
}

/// Finite operator with lattice geometry. Entries vanish whenever two sites
/// differ by more than `band_width` along some axis.
#[derive(Clone, Debug)]
pub struct BandedUnitary {
    lattice: LatticeBox,
    matrix: SparseMatrix,
    kind: OperatorKind,
    band_width: usize,
    hole: Option<LatticeBox>,
}

impl BandedUnitary {
    /// Wrap a matrix as a unitary operator on `lattice`, checking unitarity.
    pub fn unitary(lattice: LatticeBox, matrix: SparseMatrix) -> Result<Self> {
        check_shape(&lattice, &matrix)?;
        let defect = sparse_unitarity_defect(&matrix);
        if defect >= UNITARITY_TOL {
            return Err(Error::NotUnitary { defect });
        }
        Ok(Self {
            lattice,
            matrix,
            kind: OperatorKind::Unitary,
            band_width: 2,
            hole: None,
        })
    }

    /// Wrap an arbitrary matrix without any unitarity check (test doubles,
    /// diagonal operators, perturbed matrices).
    pub fn unchecked(lattice: LatticeBox, matrix: SparseMatrix, kind: OperatorKind) -> Result<Self> {
        check_shape(&lattice, &matrix)?;
        Ok(Self {
            lattice,
            matrix,
            kind,
            band_width: 2,
            hole: None,
        })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn band_width(&self) -> usize {
        self.band_width
    }

    /// Sites removed by an exterior restriction.
    pub fn hole(&self) -> Option<&LatticeBox> {
        self.hole.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dense(&self) -> DMatrix<C64> {
        self.matrix.to_dense()
    }

    pub fn entry(&self, j: &[i64], k: &[i64]) -> Option<C64> {
        let a = self.lattice.index_of(j)?;
        let b = self.lattice.index_of(k)?;
        Some(self.matrix.get(a, b))
    }

    pub fn unitarity_defect(&self) -> f64 {
        sparse_unitarity_defect(&self.matrix)
    }

    /// Operator norm by 20 steps of power iteration.
    pub fn norm_estimate(&self) -> f64 {
        power_norm(&self.matrix, 20)
    }

    /// Largest `|j - k|_inf` over nonzero entries.
    pub fn measured_band_width(&self) -> i64 {
        self.matrix
            .triplets()
            .map(|(i, j, _)| {
                let a = self.lattice.site(i);
                let b = self.lattice.site(j);
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).max().unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Check the invariants of the declared kind.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            OperatorKind::Unitary => {
                let defect = self.unitarity_defect();
                if defect >= UNITARITY_TOL {
                    return Err(Error::NotUnitary { defect });
                }
            }
            OperatorKind::Contraction => {
                let n = self.norm_estimate();
                if n > 1.0 + CONTRACTION_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "contraction has norm estimate {n}"
                    )));
                }
            }
        }
        if self.measured_band_width() > self.band_width as i64 {
            return Err(Error::InvalidParameter("band structure violated".into()));
        }
        Ok(())
    }

    /// CSV dump `row,col,re,im` in the box enumeration order.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.matrix.write_csv(w)
    }
}

fn check_shape(lattice: &LatticeBox, m: &SparseMatrix) -> Result<()> {
    if m.nrows() != lattice.volume() || m.ncols() != lattice.volume() {
        return Err(Error::BoxMismatch(format!(
            "matrix {}x{} on a box of {} sites",
            m.nrows(),
            m.ncols(),
            lattice.volume()
        )));
    }
    Ok(())
}

/// The pair of block-diagonal unitaries `(U_e, U_o)` on `[a, b]`, local
/// indices. `U_e` carries `[[r, t], [-t, r]]` on pairs `(2k, 2k+1)`, `U_o`
/// carries `[[r, -t], [t, r]]` on pairs `(2k-1, 2k)`; uncovered endpoint
/// sites get the boundary phase of that end.
pub fn rotation_factors(
    params: &ModelParams,
    a: i64,
    b: i64,
    bc: &BoundarySpec,
) -> Result<(SparseMatrix, SparseMatrix)> {
    check_interval(a, b, bc)?;
    let (r, t) = (C64::new(params.r(), 0.0), C64::new(params.t(), 0.0));
    let n = (b - a + 1) as usize;
    let left = bc.left.phase(params);
    let right = bc.right.phase(params);
    let build = |first_even: bool, block: [[C64; 2]; 2]| {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        let mut x = a;
        while x <= b {
            let starts_pair = (x.rem_euclid(2) == 0) == first_even;
            let i = (x - a) as usize;
            if starts_pair && x < b {
                rows[i].push((i, block[0][0]));
                rows[i].push((i + 1, block[0][1]));
                rows[i + 1].push((i, block[1][0]));
                rows[i + 1].push((i + 1, block[1][1]));
                x += 2;
            } else {
                let phase = if x == a { left } else { right };
                rows[i].push((i, phase));
                x += 1;
            }
        }
        SparseMatrix::from_rows(n, rows)
    };
    let even = build(true, [[r, t], [-t, r]]);
    let odd = build(false, [[r, -t], [t, r]]);
    Ok((even, odd))
}

fn check_interval(a: i64, b: i64, bc: &BoundarySpec) -> Result<()> {
    if b - a + 1 < 3 {
        return geometry(format!(
            "interval [{a}, {b}] too short: two-site boxes are degenerate and not supported"
        ));
    }
    if bc.left.is_neumann() && a.rem_euclid(2) != 0 {
        return geometry(format!("Neumann condition needs an even left end, got {a}"));
    }
    if bc.right.is_neumann() && b.rem_euclid(2) != 1 {
        return geometry(format!("Neumann condition needs an odd right end, got {b}"));
    }
    Ok(())
}

fn sparse_product(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let rows = (0..a.nrows())
        .map(|i| {
            a.row(i)
                .flat_map(|(k, v)| b.row(k).map(move |(j, w)| (j, v * w)))
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(b.ncols(), rows)
}

fn kron(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let (n2, m2) = (b.nrows(), b.ncols());
    let mut rows = Vec::with_capacity(a.nrows() * n2);
    for i1 in 0..a.nrows() {
        for i2 in 0..n2 {
            let row = a
                .row(i1)
                .flat_map(|(j1, v)| b.row(i2).map(move |(j2, w)| (j1 * m2 + j2, v * w)))
                .collect();
            rows.push(row);
        }
    }
    SparseMatrix::from_rows(a.ncols() * m2, rows)
}

fn block_diag(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let off = a.ncols();
    let mut rows: Vec<Vec<(usize, C64)>> = (0..a.nrows()).map(|i| a.row(i).collect()).collect();
    rows.extend((0..b.nrows()).map(|i| b.row(i).map(|(j, v)| (j + off, v)).collect()));
    SparseMatrix::from_rows(off + b.ncols(), rows)
}

fn interval_matrix(params: &ModelParams, a: i64, b: i64, bc: &BoundarySpec) -> Result<SparseMatrix> {
    let (even, odd) = rotation_factors(params, a, b, bc)?;
    Ok(sparse_product(&even, &odd))
}

/// `S` restricted to `[a, b]` as the product `U_e U_o`.
pub fn build_s_interval(params: &ModelParams, a: i64, b: i64, bc: &BoundarySpec) -> Result<BandedUnitary> {
    let m = interval_matrix(params, a, b, bc)?;
    BandedUnitary::unitary(LatticeBox::interval(a, b)?, m)
}

/// Tensor product of the one-dimensional restrictions along every axis, in
/// the box enumeration order (last axis fastest).
pub fn build_s_tensor(params: &ModelParams, lattice: &LatticeBox, bc: &BoundarySpec) -> Result<BandedUnitary> {
    if lattice.dim() != params.d() {
        return Err(Error::BoxMismatch(format!(
            "box of dimension {} for a model of dimension {}",
            lattice.dim(),
            params.d()
        )));
    }
    if (bc.left.is_neumann() || bc.right.is_neumann()) && !lattice.is_neumann_compatible() {
        return geometry("box is not compatible with Neumann conditions (even start, odd end, at least 4 sites per axis)");
    }
    let factors = lattice
        .intervals()
        .iter()
        .map(|&(a, b)| interval_matrix(params, a, b, bc))
        .collect::<Result<Vec<_>>>()?;
    BandedUnitary::unitary(lattice.clone(), kron_all(&factors))
}

fn kron_all(factors: &[SparseMatrix]) -> SparseMatrix {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = kron(&acc, f);
    }
    acc
}

/// `S_N^{Λ1} ⊕ S_N^{Λ2}` on the box `Λ0 = Λ1 ∪ Λ2` obtained by cutting
/// `Λ0` perpendicular to `axis` between `cut - 1` and `cut`.
pub fn build_split_neumann(
    params: &ModelParams,
    lattice: &LatticeBox,
    axis: usize,
    cut: i64,
    bc: &BoundarySpec,
) -> Result<BandedUnitary> {
    check_cut(lattice, axis, cut)?;
    let mut cuts = vec![Vec::new(); lattice.dim()];
    cuts[axis].push(cut);
    build_partitioned_neumann(params, lattice, &cuts, bc)
}

/// Direct sum of restrictions over the sub-boxes obtained by cutting axis
/// `j` at every position in `cuts[j]` (a cut at `c` separates `c - 1` from
/// `c`). Each piece must itself be a valid restriction box.
pub fn build_partitioned_neumann(
    params: &ModelParams,
    lattice: &LatticeBox,
    cuts: &[Vec<i64>],
    bc: &BoundarySpec,
) -> Result<BandedUnitary> {
    if cuts.len() != lattice.dim() {
        return geometry("one cut list per axis is required");
    }
    for (axis, list) in cuts.iter().enumerate() {
        for &c in list {
            check_cut(lattice, axis, c)?;
        }
    }
    let factors = lattice
        .intervals()
        .iter()
        .zip(cuts)
        .map(|(&(a, b), list)| {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let mut lo = a;
            let mut acc: Option<SparseMatrix> = None;
            for hi_excl in sorted.into_iter().chain(std::iter::once(b + 1)) {
                if hi_excl - lo < 4 {
                    return geometry(format!("piece [{lo}, {}] has fewer than four sites", hi_excl - 1));
                }
                let piece = interval_matrix(params, lo, hi_excl - 1, bc)?;
                acc = Some(match acc {
                    None => piece,
                    Some(m) => block_diag(&m, &piece),
                });
                lo = hi_excl;
            }
            Ok(acc.expect("at least one piece"))
        })
        .collect::<Result<Vec<_>>>()?;
    BandedUnitary::unitary(lattice.clone(), kron_all(&factors))
}

fn check_cut(lattice: &LatticeBox, axis: usize, cut: i64) -> Result<()> {
    if axis >= lattice.dim() {
        return geometry(format!("axis {axis} out of range"));
    }
    if !lattice.is_neumann_compatible() {
        return geometry("box is not compatible with Neumann conditions");
    }
    let (a, b) = lattice.intervals()[axis];
    if cut.rem_euclid(2) != 0 || cut < a + 4 || b - cut + 1 < 4 {
        return geometry(format!(
            "cut {cut} must be even with at least four sites on each side of [{a}, {b}]"
        ));
    }
    Ok(())
}

/// `D S`: row `k` of `S` multiplied by `e^{-i theta_k}`.
pub fn build_u(phases: &PhaseField, s: &BandedUnitary) -> Result<BandedUnitary> {
    if phases.lattice() != s.lattice() {
        return Err(Error::BoxMismatch("phase field and operator live on different boxes".into()));
    }
    let factors: Vec<C64> = phases
        .values()
        .iter()
        .map(|th| C64::from_polar(1.0, -th))
        .collect();
    let mut out = s.clone();
    out.matrix = s.matrix.scale_rows(&factors);
    if out.kind == OperatorKind::Unitary {
        out.validate_unitary()?;
    }
    Ok(out)
}

impl BandedUnitary {
    fn validate_unitary(&self) -> Result<()> {
        let defect = self.unitarity_defect();
        if defect >= UNITARITY_TOL {
            return Err(Error::NotUnitary { defect });
        }
        Ok(())
    }
}

/// The diagonal operator `D` alone.
pub fn phase_operator(phases: &PhaseField) -> BandedUnitary {
    let diag: Vec<C64> = phases
        .values()
        .iter()
        .map(|th| C64::from_polar(1.0, -th))
        .collect();
    BandedUnitary::unitary(phases.lattice().clone(), SparseMatrix::from_diagonal(&diag))
        .expect("diagonal phases are unitary")
}

/// `P U P` with `P` the projection onto the sites outside `inner`.
pub fn exterior_restriction(world: &BandedUnitary, inner: Option<&LatticeBox>) -> Result<BandedUnitary> {
    let Some(inner) = inner else {
        return Ok(world.clone());
    };
    if !world.lattice.contains_box(inner) {
        return geometry("inner box is not contained in the world box");
    }
    let lattice = &world.lattice;
    let outside: Vec<bool> = lattice.sites().map(|s| !inner.contains(&s)).collect();
    let rows = (0..world.dim())
        .map(|i| {
            if !outside[i] {
                return Vec::new();
            }
            world.matrix.row(i).filter(|(j, _)| outside[*j]).collect()
        })
        .collect();
    Ok(BandedUnitary {
        lattice: lattice.clone(),
        matrix: SparseMatrix::from_rows(world.dim(), rows),
        kind: OperatorKind::Contraction,
        band_width: world.band_width,
        hole: Some(inner.clone()),
    })
}

/// A random operator `U = D S` on a world box together with the data it was
/// built from, so that restrictions can be rebuilt with the same phases.
#[derive(Clone, Debug)]
pub struct AndersonOperator {
    pub params: ModelParams,
    pub phases: PhaseField,
    pub bc: BoundarySpec,
    pub op: BandedUnitary,
}

impl AndersonOperator {
    pub fn new(params: ModelParams, phases: PhaseField, bc: BoundarySpec) -> Result<Self> {
        let s = build_s_tensor(&params, phases.lattice(), &bc)?;
        let op = build_u(&phases, &s)?;
        Ok(Self {
            params,
            phases,
            bc,
            op,
        })
    }

    pub fn lattice(&self) -> &LatticeBox {
        self.op.lattice()
    }

    /// `D S_N` on a Neumann-compatible sub-box, with the phases of the world.
    pub fn neumann_restriction(&self, inner: &LatticeBox) -> Result<BandedUnitary> {
        let phases = self.phases.restrict(inner)?;
        let s = build_s_tensor(&self.params, inner, &BoundarySpec::neumann())?;
        build_u(&phases, &s)
    }
}

/// `U = U^{Λ_L} ⊕ U^{Λ_L^c} + T^{(L)}` on the world box, with
/// `Λ_L = [-2L, 2L+1]^d` and `U^{Λ_L}` the Neumann restriction.
#[derive(Clone, Debug)]
pub struct BoundaryDecomposition {
    pub l: usize,
    pub inner_box: LatticeBox,
    /// `U^{Λ_L}` on its own box.
    pub inner: BandedUnitary,
    /// `U^{Λ_L^c}` on the world box with `Λ_L` as a hole.
    pub exterior: BandedUnitary,
    /// `T^{(L)}` in world indexing.
    pub coupling: SparseMatrix,
}

impl BoundaryDecomposition {
    /// `U^{Λ_L} ⊕ U^{Λ_L^c}` in world indexing.
    pub fn direct_sum(&self) -> SparseMatrix {
        let world = self.exterior.lattice();
        let embed = embedded(world, &self.inner);
        embed.add(self.exterior.matrix())
    }
}

fn embedded(world: &LatticeBox, op: &BandedUnitary) -> SparseMatrix {
    let map: Vec<usize> = op
        .lattice()
        .sites()
        .map(|s| world.index_of(&s).expect("contained"))
        .collect();
    let mut rows = vec![Vec::new(); world.volume()];
    for (i, j, v) in op.matrix().triplets() {
        rows[map[i]].push((map[j], v));
    }
    SparseMatrix::from_rows(world.volume(), rows)
}

/// Decompose a world operator around `Λ_L`. The world box must contain all
/// cubes with `|x|_inf <= L + 2`.
pub fn boundary_operator(world: &AndersonOperator, l: usize) -> Result<BoundaryDecomposition> {
    let d = world.params.d();
    let needed = LatticeBox::centered(d, l + 2);
    if !world.lattice().contains_box(&needed) {
        return geometry(format!(
            "world box must contain [-2(L+2), 2(L+2)+1]^d for L = {l}"
        ));
    }
    let inner_box = LatticeBox::centered(d, l);
    let inner = world.neumann_restriction(&inner_box)?;
    let exterior = exterior_restriction(&world.op, Some(&inner_box))?;
    let sum = embedded(world.lattice(), &inner).add(exterior.matrix());
    let coupling = world.op.matrix().sub(&sum);
    Ok(BoundaryDecomposition {
        l,
        inner_box,
        inner,
        exterior,
        coupling,
    })
}

/// Largest entry of `χ_x T χ_y` over all cube pairs where the coupling is
/// asserted to vanish: `|x| <= L-1`, `|x| >= L+2`, or `|x - y| >= 2` (and the
/// same with the roles of `x` and `y` swapped).
pub fn coupling_support_violation(dec: &BoundaryDecomposition) -> f64 {
    let world = dec.exterior.lattice();
    let l = dec.l as i64;
    let mut worst: f64 = 0.0;
    for (i, j, v) in dec.coupling.triplets() {
        let x = cube_of(&world.site(i));
        let y = cube_of(&world.site(j));
        let diff: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let forbidden = |c: &[i64]| max_norm(c) <= l - 1 || max_norm(c) >= l + 2;
        if forbidden(&x) || forbidden(&y) || max_norm(&diff) >= 2 {
            worst = worst.max(v.norm());
        }
    }
    worst
}

/// The rank-one data of a Neumann cut of an interval.
#[derive(Clone, Debug)]
pub struct SplittingData {
    pub lattice: LatticeBox,
    pub cut: i64,
    /// `-t e_{c-2} - r e_{c-1} - i r e_c + i t e_{c+1}` with `c` the cut.
    pub psi: Vec<C64>,
    /// `t (-i e_{c-1} + e_c)`.
    pub phi: Vec<C64>,
    /// Angle with `e^{iβ} = 1 + <(U1 ⊕ U2) φ | D ψ>`.
    pub beta: f64,
    /// `|1 + <(U1 ⊕ U2) φ | D ψ>|`, equal to one for an admissible split.
    pub modulus: f64,
    /// Largest entry of `U − (U1 ⊕ U2) − |D ψ><φ|`.
    pub reconstruction_error: f64,
}

/// Splitting vectors for cutting the interval of `phases` at `cut`, where
/// the left piece ends at `cut - 1`.
pub fn splitting_data(params: &ModelParams, cut: i64, phases: &PhaseField) -> Result<SplittingData> {
    let lattice = phases.lattice().clone();
    if lattice.dim() != 1 {
        return geometry("splitting vectors are defined on intervals");
    }
    check_cut(&lattice, 0, cut)?;
    let a = lattice.intervals()[0].0;
    let n = lattice.volume();
    let (r, t) = (params.r(), params.t());
    let at = |x: i64| (x - a) as usize;
    let mut psi = vec![ZERO; n];
    psi[at(cut - 2)] = C64::new(-t, 0.0);
    psi[at(cut - 1)] = C64::new(-r, 0.0);
    psi[at(cut)] = C64::new(0.0, -r);
    psi[at(cut + 1)] = C64::new(0.0, t);
    let mut phi = vec![ZERO; n];
    phi[at(cut - 1)] = C64::new(0.0, -t);
    phi[at(cut)] = C64::new(t, 0.0);

    let split = build_split_neumann(params, &lattice, 0, cut, &BoundarySpec::neumann())?;
    let u_split = build_u(phases, &split)?;
    let u_phi = u_split.matrix().apply(&phi);
    let d_psi: Vec<C64> = psi
        .iter()
        .zip(phases.values())
        .map(|(p, th)| p * C64::from_polar(1.0, -th))
        .collect();
    let mu = C64::new(1.0, 0.0) + inner(&u_phi, &d_psi);
    let joined = build_u(phases, &build_s_tensor(params, &lattice, &BoundarySpec::neumann())?)?;
    let rank_one = SparseMatrix::from_rows(
        n,
        d_psi
            .iter()
            .map(|p| phi.iter().enumerate().map(|(j, f)| (j, p * f.conj())).collect())
            .collect(),
    );
    let reconstruction_error = joined.matrix().sub(u_split.matrix()).sub(&rank_one).max_abs();
    Ok(SplittingData {
        lattice,
        cut,
        psi,
        phi,
        beta: mu.arg(),
        modulus: mu.norm(),
        reconstruction_error,
    })
}

/// `<x|y>`, conjugate-linear in `x`.
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Result of writing `V = U + |f><g|` as `e^{iβ|f̂><f̂|} U`.
#[derive(Clone, Copy, Debug)]
pub struct RankOnePhase {
    pub beta: f64,
    pub modulus: f64,
    pub reconstruction_error: f64,
}

/// For unitary `U` and `V = U + |f><g|` unitary, `e^{iβ} = 1 + <Ug|f>` and
/// `V = e^{iβ|f̂><f̂|} U` with `f̂ = f/|f|`.
pub fn rank_one_phase(u: &DMatrix<C64>, f: &[C64], g: &[C64]) -> Result<RankOnePhase> {
    let n = u.nrows();
    let fv = nalgebra::DVector::from_column_slice(f);
    let gv = nalgebra::DVector::from_column_slice(g);
    let v = u + &fv * gv.adjoint();
    let defect = unitarity_defect(&v);
    if defect > 1e-10 {
        return Err(Error::NotUnitary { defect });
    }
    let ug = u * &gv;
    let mu = C64::new(1.0, 0.0) + ug.dotc(&fv);
    let nf = vec_norm(f);
    let rebuilt = if nf > 0.0 {
        let fh = &fv / C64::new(nf, 0.0);
        let proj = &fh * fh.adjoint();
        let rot = DMatrix::<C64>::identity(n, n) + proj * (mu / mu.norm() - C64::new(1.0, 0.0));
        rot * u
    } else {
        u.clone()
    };
    let err = (&rebuilt - &v).iter().map(|x| x.norm()).fold(0.0, f64::max);
    Ok(RankOnePhase {
        beta: mu.arg(),
        modulus: mu.norm(),
        reconstruction_error: err,
    })
}

/// Permutation check used by the translation covariance property: entry of
/// the operator at `(j, k)` compared with entry at `(j + shift, k + shift)`.
pub fn max_translation_mismatch(a: &BandedUnitary, b: &BandedUnitary, shift: &[i64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, j, v) in a.matrix().triplets() {
        let si: Vec<i64> = a.lattice().site(i).iter().zip(shift).map(|(x, s)| x + s).collect();
        let sj: Vec<i64> = a.lattice().site(j).iter().zip(shift).map(|(x, s)| x + s).collect();
        let w = b.entry(&si, &sj).unwrap_or(ZERO);
        worst = worst.max((v - w).norm());
    }
    worst.max(if a.matrix().nnz() == b.matrix().nnz() { 0.0 } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PhaseDistribution;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn interior_rows_match_five_diagonal_pattern() {
        let p = ModelParams::new(0.3, 1).unwrap();
        let (r, t) = (p.r(), p.t());
        let s = build_s_interval(&p, 0, 11, &BoundarySpec::simple()).unwrap();
        let g = |i: i64, j: i64| s.entry(&[i], &[j]).unwrap();
        for k in 1..5i64 {
            let e = 2 * k;
            assert!((g(e, e - 1) - c(r * t, 0.0)).norm() < 1e-15);
            assert!((g(e, e) - c(r * r, 0.0)).norm() < 1e-15);
            assert!((g(e, e + 1) - c(r * t, 0.0)).norm() < 1e-15);
            assert!((g(e, e + 2) - c(-t * t, 0.0)).norm() < 1e-15);
            assert!((g(e + 1, e - 1) - c(-t * t, 0.0)).norm() < 1e-15);
            assert!((g(e + 1, e) - c(-r * t, 0.0)).norm() < 1e-15);
            assert!((g(e + 1, e + 1) - c(r * r, 0.0)).norm() < 1e-15);
            assert!((g(e + 1, e + 2) - c(-r * t, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn neumann_corner_entries() {
        let p = ModelParams::new(0.6, 1).unwrap();
        let s = build_s_interval(&p, 0, 5, &BoundarySpec::neumann()).unwrap();
        let e = c(0.8, 0.6);
        assert!((s.entry(&[0], &[0]).unwrap() - e * 0.8).norm() < 1e-15);
        assert!((s.entry(&[1], &[0]).unwrap() + e * 0.6).norm() < 1e-15);
        assert!((s.entry(&[4], &[5]).unwrap() - e * 0.6).norm() < 1e-15);
        assert!((s.entry(&[5], &[5]).unwrap() - e * 0.8).norm() < 1e-15);
    }

    #[test]
    fn parity_and_length_rules() {
        let p = ModelParams::new(0.5, 1).unwrap();
        assert!(build_s_interval(&p, 0, 1, &BoundarySpec::simple()).is_err());
        assert!(build_s_interval(&p, 1, 6, &BoundarySpec::neumann()).is_err());
        assert!(build_s_interval(&p, 0, 6, &BoundarySpec::neumann()).is_err());
        for (a, b) in [(0, 4), (1, 5), (1, 6), (-3, 8)] {
            let s = build_s_interval(&p, a, b, &BoundarySpec::eta(0.3, -1.1)).unwrap();
            assert!(s.unitarity_defect() < 1e-12);
        }
    }

    #[test]
    fn tensor_of_one_axis_is_interval() {
        let p = ModelParams::new(0.4, 1).unwrap();
        let a = build_s_interval(&p, 0, 7, &BoundarySpec::neumann()).unwrap();
        let b = build_s_tensor(&p, &LatticeBox::interval(0, 7).unwrap(), &BoundarySpec::neumann()).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn tensor_band_width_and_unitarity() {
        let p = ModelParams::new(0.4, 2).unwrap();
        let lat = LatticeBox::cube(2, -4, 5).unwrap();
        let s = build_s_tensor(&p, &lat, &BoundarySpec::neumann()).unwrap();
        assert!(s.measured_band_width() <= 2);
        assert!(s.unitarity_defect() < 1e-12);
        assert!(build_s_tensor(&p, &LatticeBox::interval(0, 3).unwrap(), &BoundarySpec::neumann()).is_err());
    }

    #[test]
    fn exterior_restriction_is_contraction() {
        let p = ModelParams::new(0.5, 1).unwrap();
        let lat = LatticeBox::interval(-10, 11).unwrap();
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, 4);
        let w = AndersonOperator::new(p, ph, BoundarySpec::simple()).unwrap();
        let inner = LatticeBox::interval(-2, 3).unwrap();
        let e = exterior_restriction(&w.op, Some(&inner)).unwrap();
        assert_eq!(e.kind(), OperatorKind::Contraction);
        assert!(e.norm_estimate() <= 1.0 + 1e-12);
        assert!(e.validate().is_ok());
        let same = exterior_restriction(&w.op, None).unwrap();
        assert_eq!(same.matrix(), w.op.matrix());
    }

    #[test]
    fn splitting_phase_is_lower_edge() {
        let p = ModelParams::new(0.35, 1).unwrap();
        let lat = LatticeBox::interval(0, 15).unwrap();
        let ph = PhaseField::sample(&PhaseDistribution::uniform(0.0, 1.0).unwrap(), &lat, 2);
        let sd = splitting_data(&p, 8, &ph).unwrap();
        let e = C64::from_polar(1.0, sd.beta) - C64::from_polar(1.0, -p.lambda0());
        assert!(e.norm() < 1e-12);
        assert!((sd.modulus - 1.0).abs() < 1e-12);
        assert!(sd.reconstruction_error < 1e-14, "{}", sd.reconstruction_error);
        assert!((vec_norm(&sd.psi) - 2f64.sqrt()).abs() < 1e-15);
        assert!((vec_norm(&sd.phi) - p.t() * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rank_one_phase_recovers_rotation() {
        let p = ModelParams::new(0.5, 1).unwrap();
        let lat = LatticeBox::interval(0, 7).unwrap();
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, 8);
        let u = AndersonOperator::new(p, ph, BoundarySpec::simple()).unwrap().op.dense();
        let cangle = 0.7;
        let mut g = vec![ZERO; 8];
        g[3] = c(1.0, 0.0);
        let col: Vec<C64> = (0..8).map(|i| u[(i, 3)] * (C64::from_polar(1.0, cangle) - 1.0)).collect();
        let res = rank_one_phase(&u, &col, &g).unwrap();
        assert!((res.beta - cangle).abs() < 1e-12);
        assert!((res.modulus - 1.0).abs() < 1e-12);
        assert!(res.reconstruction_error < 1e-10);
        let mut bad = col.clone();
        bad[0] += 0.5;
        assert!(rank_one_phase(&u, &bad, &g).is_err());
    }
}
