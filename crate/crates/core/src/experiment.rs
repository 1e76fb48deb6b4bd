//! Batch experiments: TOML configuration, validation, execution, parameter
//! sweeps and result manifests.
//!
//! A run keeps every output in memory until the experiment has finished,
//! then writes each file through a temporary name and a rename, and writes
//! `manifest.json` last. A failed run leaves no CSV behind.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{BoundarySpec, LatticeBox};
use crate::moments::{decay_experiment, dynamical_profile, second_moment_trend, DecayGeometry, Ensemble};
use crate::operators::{splitting_data, AndersonOperator};
use crate::params::{DistributionShape, ModelParams, PhaseDistribution};
use crate::phases::PhaseField;
use crate::resolvent::{combes_thomas_profile, geometric_resolvent_residual, DecayProfile, ResolventSolver};
use crate::seeding::derive_seed;
use crate::spectral::{
    band_edge_eigvec_check, feynman_hellmann_derivative, lifshitz_trial, neumann_box, neumann_spectrum_closed_form,
    numerical_spectrum, spectral_gap, unit_eigvec_check, InterpolationFamily, LifshitzTrial,
};
use crate::stats::linear_fit;
use crate::transfer::{ckm_moments, lyapunov_estimate, transfer_matrix, GreenFromSolutions, LyapunovEstimate};

/// Registered experiment names.
pub const EXPERIMENTS: [&str; 9] = [
    "neumann-spectrum",
    "lifshitz",
    "lyapunov",
    "fractional-decay",
    "dynamical",
    "combes-thomas",
    "identities-suite",
    "second-moment",
    "ckm",
];

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "UA_LAB_OUTPUT_DIR";

pub const MANIFEST_NAME: &str = "manifest.json";

fn default_samples() -> usize {
    1000
}

fn default_dimension() -> usize {
    1
}

fn default_hi() -> f64 {
    TAU
}

fn default_kind() -> String {
    "uniform".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub t: f64,
    #[serde(default = "default_dimension")]
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub density: Vec<f64>,
}

impl Default for DistributionSection {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            lo: 0.0,
            hi: TAU,
            edges: Vec::new(),
            density: Vec::new(),
        }
    }
}

impl DistributionSection {
    pub fn build(&self) -> Result<PhaseDistribution> {
        match self.kind.as_str() {
            "uniform" => PhaseDistribution::from_shape(self.lo, self.hi, DistributionShape::Uniform),
            "piecewise" => PhaseDistribution::piecewise(self.edges.clone(), self.density.clone()),
            other => Err(Error::Config(format!(
                "PhaseDistribution: unknown kind '{other}' (expected uniform or piecewise)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, rename = "L_values", skip_serializing_if = "Vec::is_empty")]
    pub l_values: Vec<usize>,
    /// Box as one `[lo, hi]` pair per axis.
    #[serde(default, rename = "box", skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub site: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distances: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Cocycle lengths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transverse: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance: Option<usize>,
}

impl GeometrySection {
    fn lengths(&self) -> Vec<usize> {
        if self.l_values.is_empty() {
            self.l.into_iter().collect()
        } else {
            self.l_values.clone()
        }
    }
}

/// Spectral parameter: a single `modulus`/`arg`, or the product grid of
/// `moduli` and `args`. With `relative_to_edge` every argument is an offset
/// from `d λ₀`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moduli: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<f64>,
    #[serde(default)]
    pub relative_to_edge: bool,
}

impl ZSection {
    fn moduli(&self) -> Vec<f64> {
        if self.moduli.is_empty() {
            self.modulus.into_iter().collect()
        } else {
            self.moduli.clone()
        }
    }

    fn args(&self, params: &ModelParams) -> Vec<f64> {
        let raw: Vec<f64> = if self.args.is_empty() {
            self.arg.into_iter().collect()
        } else {
            self.args.clone()
        };
        let shift = if self.relative_to_edge { params.edge_angle() } else { 0.0 };
        raw.into_iter().map(|a| a + shift).collect()
    }

    pub fn values(&self, params: &ModelParams) -> Vec<C64> {
        let args = self.args(params);
        self.moduli()
            .into_iter()
            .flat_map(|m| args.iter().map(move |&a| C64::from_polar(m, a)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Largest number of grid points a sweep may run.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Dotted config path -> values, e.g. `"model.t" = [0.2, 0.5]`.
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

fn default_budget() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Fractional exponent(s); the negative-moment exponent for `ckm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<OneOrMany>,
    /// Lifshitz window: hits are within `b / L²` of the band edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub model: ModelSection,
    #[serde(default)]
    pub distribution: DistributionSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub z: ZSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    fn s_values(&self) -> Vec<f64> {
        self.s.as_ref().map(OneOrMany::values).unwrap_or_default()
    }
}

/// A precondition that the configuration does not satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Module or config section the precondition belongs to.
    pub module: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.starts_with(&format!("{}:", self.module)) {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.module, self.message)
        }
    }
}

fn detail(e: &Error) -> String {
    match e {
        Error::InvalidParameter(m) | Error::Geometry(m) | Error::BoxMismatch(m) | Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[derive(Default)]
struct Violations(Vec<Violation>);

impl Violations {
    fn push(&mut self, module: &str, message: impl Into<String>) {
        self.0.push(Violation {
            module: module.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, module: &str, message: impl Into<String>) {
        if !ok {
            self.push(module, message);
        }
    }

    fn take<T>(&mut self, module: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(module, detail(&e));
                None
            }
        }
    }
}

/// A validated experiment, ready to run.
enum Plan {
    NeumannSpectrum {
        params: ModelParams,
        l_values: Vec<usize>,
    },
    Lifshitz {
        params: ModelParams,
        dist: PhaseDistribution,
        l_values: Vec<usize>,
        b: f64,
    },
    Lyapunov {
        params: ModelParams,
        dist: PhaseDistribution,
        zs: Vec<C64>,
        steps: usize,
    },
    FractionalDecay {
        params: ModelParams,
        dist: PhaseDistribution,
        z: C64,
        s_values: Vec<f64>,
        distances: Vec<i64>,
        geometry: DecayGeometry,
    },
    Dynamical {
        ens: Box<Ensemble>,
        site: Vec<i64>,
        offsets: Vec<i64>,
        horizon: usize,
    },
    CombesThomas {
        ens: Box<Ensemble>,
        site: Vec<i64>,
        z: C64,
        max_distance: usize,
    },
    Identities {
        params: ModelParams,
        dist: PhaseDistribution,
    },
    SecondMoment {
        ens: Box<Ensemble>,
        site: Vec<i64>,
        target: Vec<i64>,
        arg: f64,
        moduli: Vec<f64>,
        s: f64,
    },
    Ckm {
        params: ModelParams,
        dist: PhaseDistribution,
        z: C64,
        delta: f64,
        steps: Vec<usize>,
    },
}

fn single_z(v: &mut Violations, module: &str, zs: &[C64]) -> Option<C64> {
    if zs.len() != 1 {
        v.push(module, format!("needs exactly one spectral parameter z, got {}", zs.len()));
        return None;
    }
    Some(zs[0])
}

fn off_circle(v: &mut Violations, module: &str, zs: &[C64]) {
    for z in zs {
        let m = z.norm();
        v.check(
            m > 0.0 && (m - 1.0).abs() >= 1e-14 && m.is_finite(),
            module,
            format!("|z| must differ from 0 and 1 (z = {z})"),
        );
    }
}

fn exponent(v: &mut Violations, module: &str, s: f64) {
    v.check(s > 0.0 && s < 1.0, module, format!("exponent must lie in (0,1), got {s}"));
}

fn ensemble(
    v: &mut Violations,
    module: &str,
    params: Option<ModelParams>,
    dist: Option<&PhaseDistribution>,
    geo: &GeometrySection,
) -> Option<Ensemble> {
    if geo.intervals.is_empty() {
        v.push(module, "geometry.box is required");
        return None;
    }
    let lattice = v.take(
        "LatticeBox",
        LatticeBox::new(geo.intervals.iter().map(|p| (p[0], p[1])).collect()),
    )?;
    let (params, dist) = (params?, dist?);
    if lattice.dim() != params.d() {
        v.push(
            module,
            format!("box has dimension {} but model.d = {}", lattice.dim(), params.d()),
        );
        return None;
    }
    let bc = geo.boundary.unwrap_or_else(BoundarySpec::simple);
    v.take("lattice-operators", Ensemble::new(params, dist.clone(), lattice, bc))
}

fn site_in(v: &mut Violations, module: &str, ens: &Ensemble, name: &str, site: &[i64]) -> bool {
    let ok = site.len() == ens.lattice.dim() && ens.lattice.contains(site);
    v.check(ok, module, format!("geometry.{name} {site:?} is not a site of the box"));
    ok
}

fn plan(config: &ExperimentConfig) -> std::result::Result<Plan, Vec<Violation>> {
    let mut v = Violations::default();
    let params = v.take("ModelParams", ModelParams::new(config.model.t, config.model.d));
    let dist = v.take("PhaseDistribution", config.distribution.build());
    let geo = &config.geometry;
    let samples = config.samples;
    v.check(samples >= 1, "experiment", "samples must be at least 1");
    if let Some(w) = config.workers {
        v.check(w >= 1, "experiment", "workers must be at least 1");
    }
    let name = config.experiment.as_str();
    let zs = params.map(|p| config.z.values(&p)).unwrap_or_default();
    let plan = match name {
        "neumann-spectrum" => {
            let l_values = geo.lengths();
            v.check(!l_values.is_empty(), name, "geometry.L or geometry.L_values is required");
            v.check(l_values.iter().all(|&l| l >= 2), name, "closed-form spectra need L >= 2");
            params.map(|params| Plan::NeumannSpectrum { params, l_values })
        }
        "lifshitz" => {
            let l_values = geo.lengths();
            v.check(!l_values.is_empty(), name, "geometry.L or geometry.L_values is required");
            v.check(l_values.iter().all(|&l| l >= 1), name, "L must be positive");
            let b = config.b.unwrap_or(f64::NAN);
            v.check(b > 0.0, name, "b must be given and positive");
            if let (Some(p), Some(d)) = (params.as_ref(), dist.as_ref()) {
                v.check(
                    d.lo() >= 0.0 && d.hi() < TAU,
                    name,
                    format!("distribution support [{}, {}] must lie in [0, 2π)", d.lo(), d.hi()),
                );
                v.check(
                    d.leaves_spectral_gap(p),
                    name,
                    "support [0, θ_M] must satisfy 2 d λ0 + θ_M < 2π",
                );
            }
            match (params, dist.clone()) {
                (Some(params), Some(dist)) => Some(Plan::Lifshitz { params, dist, l_values, b }),
                _ => None,
            }
        }
        "lyapunov" => {
            if let Some(p) = params {
                v.check(p.d() == 1, name, "transfer matrices need model.d = 1");
            }
            v.check(!zs.is_empty(), name, "at least one spectral parameter z is required");
            v.check(zs.iter().all(|z| z.norm() > 0.0), name, "z must be nonzero");
            v.check(geo.steps.len() == 1, name, "geometry.steps must hold exactly one cocycle length");
            let steps = geo.steps.first().copied().unwrap_or(0);
            v.check(steps >= 50, name, "cocycle length must be at least 50");
            v.check(samples >= 100, name, "at least 100 samples are required");
            match (params, dist.clone()) {
                (Some(params), Some(dist)) => Some(Plan::Lyapunov {
                    params,
                    dist,
                    zs: zs.clone(),
                    steps,
                }),
                _ => None,
            }
        }
        "fractional-decay" => {
            let z = single_z(&mut v, name, &zs);
            off_circle(&mut v, name, &zs);
            let s_values = config.s_values();
            v.check(!s_values.is_empty(), name, "s is required");
            s_values.iter().for_each(|&s| exponent(&mut v, name, s));
            v.check(
                !geo.distances.is_empty() && geo.distances.iter().all(|&d| d >= 0),
                name,
                "geometry.distances must be a nonempty list of nonnegative integers",
            );
            let defaults = DecayGeometry::default();
            let geometry = DecayGeometry {
                buffer: geo.buffer.unwrap_or(defaults.buffer),
                transverse: geo.transverse.unwrap_or(defaults.transverse),
            };
            if let Some(p) = params {
                let max = geo.distances.iter().copied().max().unwrap_or(0);
                v.take(name, geometry.layout(p.d(), max));
            }
            match (params, dist.clone(), z) {
                (Some(params), Some(dist), Some(z)) => Some(Plan::FractionalDecay {
                    params,
                    dist,
                    z,
                    s_values,
                    distances: geo.distances.clone(),
                    geometry,
                }),
                _ => None,
            }
        }
        "dynamical" => {
            let horizon = geo.horizon.unwrap_or(0);
            v.check(horizon >= 1, name, "geometry.horizon must be at least 1");
            v.check(!geo.offsets.is_empty(), name, "geometry.offsets is required");
            let ens = ensemble(&mut v, name, params, dist.as_ref(), geo);
            let mut ok = ens.is_some();
            if let Some(e) = &ens {
                ok &= site_in(&mut v, name, e, "site", &geo.site);
                if ok {
                    for &o in &geo.offsets {
                        let mut s = geo.site.clone();
                        s[0] += o;
                        ok &= site_in(&mut v, name, e, "site + offset", &s);
                    }
                }
            }
            ens.filter(|_| ok).map(|ens| Plan::Dynamical {
                ens: Box::new(ens),
                site: geo.site.clone(),
                offsets: geo.offsets.clone(),
                horizon,
            })
        }
        "combes-thomas" => {
            let z = single_z(&mut v, name, &zs);
            off_circle(&mut v, name, &zs);
            let max_distance = geo.max_distance.unwrap_or(0);
            v.check(max_distance >= 2, name, "geometry.max_distance must be at least 2");
            let ens = ensemble(&mut v, name, params, dist.as_ref(), geo);
            let ok = ens.as_ref().is_some_and(|e| site_in(&mut v, name, e, "site", &geo.site));
            match (ens.filter(|_| ok), z) {
                (Some(ens), Some(z)) => Some(Plan::CombesThomas {
                    ens: Box::new(ens),
                    site: geo.site.clone(),
                    z,
                    max_distance,
                }),
                _ => None,
            }
        }
        "identities-suite" => {
            if let Some(p) = params {
                v.check(p.d() == 1, name, "the identity suite runs with model.d = 1");
            }
            match (params, dist.clone()) {
                (Some(params), Some(dist)) => Some(Plan::Identities { params, dist }),
                _ => None,
            }
        }
        "second-moment" => {
            let s_values = config.s_values();
            v.check(s_values.len() == 1, name, "exactly one exponent s is required");
            let s = s_values.first().copied().unwrap_or(f64::NAN);
            exponent(&mut v, name, s);
            let moduli = config.z.moduli();
            let args = params.map(|p| config.z.args(&p)).unwrap_or_default();
            v.check(!moduli.is_empty(), name, "at least one modulus |z| is required");
            v.check(
                moduli.iter().all(|&m| m > 0.0 && m < 1.0),
                name,
                "second-moment bound needs 0 < |z| < 1",
            );
            v.check(args.len() == 1, name, "exactly one arg z is required");
            let ens = ensemble(&mut v, name, params, dist.as_ref(), geo);
            let mut ok = ens.is_some();
            if let Some(e) = &ens {
                ok &= site_in(&mut v, name, e, "site", &geo.site);
                ok &= site_in(&mut v, name, e, "target", &geo.target);
            }
            match (ens.filter(|_| ok), args.first()) {
                (Some(ens), Some(&arg)) => Some(Plan::SecondMoment {
                    ens: Box::new(ens),
                    site: geo.site.clone(),
                    target: geo.target.clone(),
                    arg,
                    moduli,
                    s,
                }),
                _ => None,
            }
        }
        "ckm" => {
            if let Some(p) = params {
                v.check(p.d() == 1, name, "transfer matrices need model.d = 1");
            }
            let z = single_z(&mut v, name, &zs);
            v.check(zs.iter().all(|z| z.norm() > 0.0), name, "z must be nonzero");
            let s_values = config.s_values();
            v.check(s_values.len() == 1, name, "exactly one exponent s is required");
            let delta = s_values.first().copied().unwrap_or(f64::NAN);
            exponent(&mut v, name, delta);
            v.check(geo.steps.len() >= 2, name, "geometry.steps needs at least two cocycle lengths");
            match (params, dist.clone(), z) {
                (Some(params), Some(dist), Some(z)) => Some(Plan::Ckm {
                    params,
                    dist,
                    z,
                    delta,
                    steps: geo.steps.clone(),
                }),
                _ => None,
            }
        }
        other => {
            v.push(
                "experiment",
                format!("unknown experiment '{other}' (registered: {})", EXPERIMENTS.join(", ")),
            );
            None
        }
    };
    match plan {
        Some(p) if v.0.is_empty() => Ok(p),
        _ => Err(v.0),
    }
}

/// Every unmet precondition of the configured experiment; empty when the
/// experiment can run.
pub fn validate(config: &ExperimentConfig) -> Vec<Violation> {
    plan(config).err().unwrap_or_default()
}

/// One output file held in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    pub name: String,
    pub contents: String,
}

fn output(name: &str, contents: String) -> Output {
    Output {
        name: name.into(),
        contents,
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Prepend columns to every line of a CSV (header included).
fn prefix_csv(text: &str, header: &str, values: &str) -> String {
    let mut lines = text.lines();
    let mut out = String::new();
    if let Some(h) = lines.next() {
        out.push_str(&format!("{header},{h}\n"));
    }
    for l in lines {
        out.push_str(&format!("{values},{l}\n"));
    }
    out
}

fn decay_summary(p: &DecayProfile) -> String {
    format!(
        "{},{},{},{},{}",
        p.fitted_rate, p.rate_stderr, p.fitted_prefactor, p.r_squared, p.fit_points
    )
}

const DECAY_SUMMARY_HEADER: &str = "fitted_rate,rate_stderr,fitted_prefactor,r_squared,fit_points";

/// One exact check of the identity suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// Machine-precision identities on small boxes.
pub fn identity_suite(params: &ModelParams, dist: &PhaseDistribution, seed: u64) -> Result<Vec<IdentityCheck>> {
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, tolerance: f64| {
        checks.push(IdentityCheck {
            name: name.into(),
            value,
            tolerance,
        })
    };
    let mut worst: f64 = 0.0;
    for (d, ls) in [(1usize, 2..=6usize), (2, 2..=3)] {
        let p = params.with_dimension(d)?;
        for l in ls {
            let s = crate::operators::build_s_tensor(&p, &neumann_box(l, d)?, &BoundarySpec::neumann())?;
            let numeric = numerical_spectrum(&s)?;
            worst = worst.max(neumann_spectrum_closed_form(&p, l, d)?.match_distance(&numeric));
        }
    }
    push("neumann_closed_form_spectrum", worst, 1e-10);
    push("band_edge_eigenvector", band_edge_eigvec_check(params, 4, 1)?, 1e-12);
    push("unit_eigenvector", unit_eigvec_check(params, 4, 1)?, 1e-12);
    if params.lambda0() < std::f64::consts::PI {
        let g = spectral_gap(params, 4, 1)?;
        push("gap_above_bound", (g.lower_bound - g.gap).max(0.0), 0.0);
    }

    let interval = LatticeBox::interval(0, 15)?;
    let phases = PhaseField::sample(dist, &interval, derive_seed(seed, "identities", 0));
    let split = splitting_data(params, 8, &phases)?;
    let edge = C64::from_polar(1.0, -params.lambda0());
    push("splitting_phase", (C64::from_polar(split.modulus, split.beta) - edge).norm(), 1e-12);
    push("splitting_rank_one", split.reconstruction_error, 1e-14);

    let world_box = LatticeBox::interval(-16, 15)?;
    let world_phases = PhaseField::sample(dist, &world_box, derive_seed(seed, "identities", 1));
    let world = AndersonOperator::new(*params, world_phases, BoundarySpec::simple())?;
    let z = C64::from_polar(1.5, params.lambda0());
    let geo = geometric_resolvent_residual(&world, 2, &[5], z)?;
    push("geometric_resolvent_identity", geo.identity, 1e-10);
    push("double_resolvent_expansion", geo.double_resolvent, 1e-10);

    let mut det_err: f64 = 0.0;
    for (i, th) in [0.3, 1.7, 4.0].iter().enumerate() {
        let eta = 0.5 * i as f64;
        let m = transfer_matrix(params, C64::from_polar(1.2, 0.4 + i as f64), *th, eta)?;
        det_err = det_err.max((m.det() - C64::from_polar(1.0, th - eta)).norm());
    }
    push("transfer_determinant", det_err, 1e-14);

    let box20 = LatticeBox::interval(0, 19)?;
    let ph20 = PhaseField::sample(dist, &box20, derive_seed(seed, "identities", 2));
    let op = AndersonOperator::new(*params, ph20.clone(), BoundarySpec::simple())?;
    let zg = C64::from_polar(1.3, 0.7);
    let solver = ResolventSolver::columns(&op.op, zg)?;
    let g = GreenFromSolutions::new(params, &ph20, 0, 19, zg)?;
    let mut rel: f64 = 0.0;
    for l in 0..20 {
        let col = solver.solve_unit(l)?;
        for (k, want) in col.iter().enumerate() {
            let got = g.entry(k as i64, l as i64)?;
            rel = rel.max((got - want).norm() / want.norm());
        }
    }
    push("green_via_solutions", rel, 1e-8);

    let centered = LatticeBox::centered(1, 2);
    let fam_phases = PhaseField::sample(dist, &centered, derive_seed(seed, "identities", 3));
    let fam = InterpolationFamily::neumann(params, fam_phases)?;
    push(
        "feynman_hellmann_derivative",
        feynman_hellmann_derivative(&fam, 0.5)?.difference(),
        1e-6,
    );
    Ok(checks)
}

fn execute(plan: &Plan, samples: usize, seed: u64) -> Result<Vec<Output>> {
    Ok(match plan {
        Plan::NeumannSpectrum { params, l_values } => {
            let d = params.d();
            let mut spectrum = Vec::new();
            let mut checks = Vec::new();
            for &l in l_values {
                let closed = neumann_spectrum_closed_form(params, l, d)?;
                for (i, z) in closed.eigenvalues.iter().enumerate() {
                    spectrum.push(format!("{l},{d},{i},{},{},{}", z.re, z.im, closed.args[i]));
                }
                let s = crate::operators::build_s_tensor(params, &neumann_box(l, d)?, &BoundarySpec::neumann())?;
                let matched = closed.match_distance(&numerical_spectrum(&s)?);
                let (gap, bound) = match spectral_gap(params, l, d) {
                    Ok(g) => (g.gap, g.lower_bound),
                    Err(Error::Degenerate { .. }) => (f64::NAN, f64::NAN),
                    Err(e) => return Err(e),
                };
                checks.push(format!(
                    "{l},{d},{matched},{},{},{gap},{bound}",
                    band_edge_eigvec_check(params, l, d)?,
                    unit_eigvec_check(params, l, d)?
                ));
            }
            vec![
                output("neumann_spectrum.csv", csv("L,d,index,re,im,arg", spectrum)),
                output(
                    "neumann_checks.csv",
                    csv(
                        "L,d,match_distance,band_edge_residual,unit_residual,gap,gap_lower_bound",
                        checks,
                    ),
                ),
            ]
        }
        Plan::Lifshitz { params, dist, l_values, b } => {
            let rows = l_values
                .iter()
                .map(|&l| lifshitz_trial(params, dist, l, *b, samples, seed).map(|t| t.csv_row()))
                .collect::<Result<Vec<_>>>()?;
            vec![output("lifshitz.csv", csv(LifshitzTrial::CSV_HEADER, rows))]
        }
        Plan::Lyapunov { params, dist, zs, steps } => {
            let rows = zs
                .iter()
                .map(|&z| lyapunov_estimate(params, z, dist, *steps, samples, seed).map(|e| e.csv_row()))
                .collect::<Result<Vec<_>>>()?;
            vec![output("lyapunov.csv", csv(LyapunovEstimate::CSV_HEADER, rows))]
        }
        Plan::FractionalDecay {
            params,
            dist,
            z,
            s_values,
            distances,
            geometry,
        } => {
            let mut profile_csv = String::new();
            let mut summary = Vec::new();
            for &s in s_values {
                let p = decay_experiment(params, dist, *z, s, distances, samples, seed, *geometry)?;
                let block = prefix_csv(&p.to_csv(), "s", &s.to_string());
                if profile_csv.is_empty() {
                    profile_csv = block;
                } else {
                    profile_csv.extend(block.lines().skip(1).map(|l| format!("{l}\n")));
                }
                summary.push(format!("{s},{}", decay_summary(&p)));
            }
            vec![
                output("fractional_decay.csv", profile_csv),
                output(
                    "fractional_decay_fit.csv",
                    csv(&format!("s,{DECAY_SUMMARY_HEADER}"), summary),
                ),
            ]
        }
        Plan::Dynamical {
            ens,
            site,
            offsets,
            horizon,
        } => {
            let prof = dynamical_profile(ens, site, offsets, *horizon, samples, seed)?;
            vec![
                output("dynamical.csv", prof.to_csv()),
                output(
                    "dynamical_fit.csv",
                    csv(
                        &format!("{DECAY_SUMMARY_HEADER},truncated"),
                        [format!("{},{}", decay_summary(&prof.fit), prof.truncated)],
                    ),
                ),
            ]
        }
        Plan::CombesThomas {
            ens,
            site,
            z,
            max_distance,
        } => {
            let u = ens.realization(seed, "combes-thomas", 0)?;
            let ct = combes_thomas_profile(&u, *z, site, *max_distance)?;
            vec![
                output("combes_thomas.csv", ct.profile.to_csv()),
                output(
                    "combes_thomas_fit.csv",
                    csv(
                        "dist_to_spectrum,b_least_squares,b_envelope,b_fit,max_envelope_ratio",
                        [format!(
                            "{},{},{},{},{}",
                            ct.dist_to_spectrum, ct.b_least_squares, ct.b_envelope, ct.b_fit, ct.max_envelope_ratio
                        )],
                    ),
                ),
            ]
        }
        Plan::Identities { params, dist } => {
            let checks = identity_suite(params, dist, seed)?;
            let failed: Vec<String> = checks
                .iter()
                .filter(|c| !c.passed())
                .map(|c| format!("{} = {:e} > {:e}", c.name, c.value, c.tolerance))
                .collect();
            if !failed.is_empty() {
                return Err(Error::InvalidParameter(format!("identity checks failed: {}", failed.join("; "))));
            }
            let rows = checks
                .iter()
                .map(|c| format!("{},{},{},{}", c.name, c.value, c.tolerance, c.passed()));
            vec![output("identities.csv", csv("check,value,tolerance,pass", rows))]
        }
        Plan::SecondMoment {
            ens,
            site,
            target,
            arg,
            moduli,
            s,
        } => {
            let trend = second_moment_trend(ens, *arg, moduli, site, target, *s, samples, seed)?;
            let rows = trend.points.iter().map(|p| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    p.modulus,
                    p.lhs.value,
                    p.lhs.stderr,
                    p.rhs.value,
                    p.rhs.stderr,
                    p.ratio,
                    p.ratio_stderr,
                    p.lhs.samples,
                    p.lhs.rejected
                )
            });
            let trend_row = if moduli.len() >= 2 {
                format!("{},{},{}", trend.slope, trend.slope_stderr, trend.bounded())
            } else {
                "NaN,NaN,true".to_string()
            };
            vec![
                output(
                    "second_moment.csv",
                    csv(
                        "modulus,lhs,lhs_stderr,rhs,rhs_stderr,ratio,ratio_stderr,samples,rejected",
                        rows,
                    ),
                ),
                output("second_moment_trend.csv", csv("slope,slope_stderr,bounded", [trend_row])),
            ]
        }
        Plan::Ckm {
            params,
            dist,
            z,
            delta,
            steps,
        } => {
            let unit = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
            let est = ckm_moments(params, *z, dist, *delta, steps, samples, unit, seed)?;
            let rows = steps
                .iter()
                .zip(&est)
                .map(|(n, e)| format!("{n},{},{},{}", e.value, e.stderr, e.samples));
            let xs: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
            let ys: Vec<f64> = est.iter().map(|e| e.value.ln()).collect();
            let fit = linear_fit(&xs, &ys);
            let fit_row = fit.map_or("NaN,NaN,NaN".to_string(), |f| {
                format!("{},{},{}", f.slope, f.intercept, f.r_squared)
            });
            vec![
                output("ckm.csv", csv("n,value,stderr,samples", rows)),
                output("ckm_fit.csv", csv("log_slope,log_intercept,r_squared", [fit_row])),
            ]
        }
    })
}

/// Overrides applied on top of a configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunOptions {
    /// `--output`, then the config, then the environment, then
    /// `ua-lab-output`.
    pub fn resolve_output_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| config.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ua-lab-output"))
    }

    fn apply(&self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(w) = self.workers {
            c.workers = Some(w);
        }
        c
    }
}

#[derive(Debug)]
pub enum RunError {
    Validation(Vec<Violation>),
    Runtime(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Validation(v) => {
                writeln!(f, "configuration is invalid:")?;
                for x in v {
                    writeln!(f, "  - {x}")?;
                }
                Ok(())
            }
            RunError::Runtime(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Runtime(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputChecksum {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultManifest {
    pub experiment: String,
    pub code_version: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub started: String,
    pub finished: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<BTreeMap<String, serde_json::Value>>,
    pub outputs: Vec<OutputChecksum>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Option<ResultManifest>,
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Run the experiment and return its outputs without touching the disk.
pub fn run_in_memory(config: &ExperimentConfig) -> std::result::Result<Vec<Output>, RunError> {
    let plan = plan(config).map_err(RunError::Validation)?;
    let (samples, seed) = (config.samples, config.seed);
    Ok(with_workers(config.workers, || execute(&plan, samples, seed))??)
}

pub fn run(config: &ExperimentConfig, options: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let config = options.apply(config);
    let dir = options.resolve_output_dir(&config);
    let started = chrono::Utc::now();
    let outputs = run_in_memory(&config)?;
    let finished = chrono::Utc::now();
    Ok(persist(&dir, &config, outputs, Vec::new(), started, finished)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, &dest) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    Ok(dest)
}

fn persist(
    dir: &Path,
    config: &ExperimentConfig,
    outputs: Vec<Output>,
    grid: Vec<BTreeMap<String, serde_json::Value>>,
    started: chrono::DateTime<chrono::Utc>,
    finished: chrono::DateTime<chrono::Utc>,
) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let cleanup = |written: &[PathBuf]| {
        for p in written {
            let _ = fs::remove_file(p);
        }
    };
    let mut checksums = Vec::new();
    for o in &outputs {
        match write_atomic(dir, &o.name, o.contents.as_bytes()) {
            Ok(p) => written.push(p),
            Err(e) => {
                cleanup(&written);
                return Err(e.into());
            }
        }
        checksums.push(OutputChecksum {
            file: o.name.clone(),
            sha256: sha256_hex(o.contents.as_bytes()),
            bytes: o.contents.len(),
        });
    }
    let manifest = ResultManifest {
        experiment: config.experiment.clone(),
        code_version: code_version(),
        seed: config.seed,
        workers: config.workers,
        started: started.to_rfc3339(),
        finished: finished.to_rfc3339(),
        config: serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
        grid,
        outputs: checksums,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    match write_atomic(dir, MANIFEST_NAME, text.as_bytes()) {
        Ok(p) => written.push(p),
        Err(e) => {
            cleanup(&written);
            return Err(e.into());
        }
    }
    Ok(RunReport {
        output_dir: dir.to_path_buf(),
        files: written,
        manifest: Some(manifest),
    })
}

fn set_path(value: &mut toml::Value, path: &str, new: toml::Value) -> Result<()> {
    let mut cur = value;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("sweep key '{path}' does not name a config field")))?;
        if i + 1 == parts.len() {
            table.insert((*key).to_string(), new);
            return Ok(());
        }
        cur = table
            .entry((*key).to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    Err(Error::Config("empty sweep key".into()))
}

fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Grid points of a sweep: the product of the value lists, keys in sorted
/// order, last key fastest.
pub fn expand_grid(config: &ExperimentConfig) -> std::result::Result<Vec<(BTreeMap<String, toml::Value>, ExperimentConfig)>, Vec<Violation>> {
    let Some(sweep) = &config.sweep else {
        return Err(vec![Violation {
            module: "sweep".into(),
            message: "a [sweep] section with a grid is required".into(),
        }]);
    };
    let mut v = Violations::default();
    v.check(sweep.grid.len() <= 3, "sweep", format!("at most 3 grid dimensions, got {}", sweep.grid.len()));
    let total: usize = if sweep.grid.is_empty() {
        0
    } else {
        sweep.grid.values().map(Vec::len).product()
    };
    v.check(
        total <= sweep.budget,
        "sweep",
        format!("grid has {total} points, over the budget of {}", sweep.budget),
    );
    if !v.0.is_empty() {
        return Err(v.0);
    }
    let mut base = config.clone();
    base.sweep = None;
    let base_value = toml::Value::try_from(&base).map_err(|e| {
        vec![Violation {
            module: "sweep".into(),
            message: e.to_string(),
        }]
    })?;
    let keys: Vec<&String> = sweep.grid.keys().collect();
    let mut points = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut assignment = BTreeMap::new();
        let mut value = base_value.clone();
        for key in keys.iter().rev() {
            let vals = &sweep.grid[*key];
            let pick = vals[rem % vals.len()].clone();
            rem /= vals.len();
            if let Err(e) = set_path(&mut value, key, pick.clone()) {
                v.push("sweep", detail(&e));
            }
            assignment.insert((*key).clone(), pick);
        }
        match value.try_into::<ExperimentConfig>() {
            Ok(c) => {
                for viol in validate(&c) {
                    v.push(&viol.module, format!("at {}: {}", describe(&assignment), viol));
                }
                points.push((assignment, c));
            }
            Err(e) => v.push("sweep", format!("at {}: {e}", describe(&assignment))),
        }
    }
    if v.0.is_empty() {
        Ok(points)
    } else {
        Err(v.0)
    }
}

fn describe(assignment: &BTreeMap<String, toml::Value>) -> String {
    assignment
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Violations of the sweep section and of every grid point.
pub fn validate_sweep(config: &ExperimentConfig) -> Vec<Violation> {
    expand_grid(config).err().unwrap_or_default()
}

fn grid_cell(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(a) => a.iter().map(grid_cell).collect::<Vec<_>>().join(" "),
        other => other.to_string(),
    }
}

/// Run every grid point and merge outputs file by file, prefixing each row
/// with the grid coordinates. An empty grid writes nothing.
pub fn sweep(config: &ExperimentConfig, options: &RunOptions) -> std::result::Result<RunReport, RunError> {
    let config = options.apply(config);
    let dir = options.resolve_output_dir(&config);
    let points = expand_grid(&config).map_err(RunError::Validation)?;
    if points.is_empty() {
        return Ok(RunReport {
            output_dir: dir,
            files: Vec::new(),
            manifest: None,
        });
    }
    let keys: Vec<String> = points[0].0.keys().cloned().collect();
    let header_prefix = keys.join(",");
    let started = chrono::Utc::now();
    let mut merged: Vec<Output> = Vec::new();
    for (assignment, point) in &points {
        let mut point = point.clone();
        point.seed = config.seed;
        point.workers = config.workers;
        let values: Vec<String> = assignment.values().map(grid_cell).collect();
        for out in run_in_memory(&point)? {
            let block = prefix_csv(&out.contents, &header_prefix, &values.join(","));
            match merged.iter_mut().find(|m| m.name == out.name) {
                Some(m) => m.contents.extend(block.lines().skip(1).map(|l| format!("{l}\n"))),
                None => merged.push(output(&out.name, block)),
            }
        }
    }
    let finished = chrono::Utc::now();
    let grid = points
        .iter()
        .map(|(a, _)| a.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect())
        .collect();
    Ok(persist(&dir, &config, merged, grid, started, finished)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    const SPECTRUM: &str = r#"
experiment = "neumann-spectrum"
[model]
t = 0.5
[geometry]
L_values = [2, 3]
"#;

    #[test]
    fn bad_coupling_is_reported() {
        let mut c = parse(SPECTRUM);
        assert!(validate(&c).is_empty());
        c.model.t = 1.2;
        let v = validate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("ModelParams: t ∉ (0,1)"), "{}", v[0]);
    }

    #[test]
    fn lifshitz_support_must_avoid_full_circle() {
        let text = r#"
experiment = "lifshitz"
b = 1.0
[model]
t = 0.5
[distribution]
lo = 0.0
hi = 6.283185307179586
[geometry]
L = 2
"#;
        let v = validate(&parse(text));
        assert!(v.iter().any(|x| x.module == "lifshitz"), "{v:?}");
        let ok = text.replace("hi = 6.283185307179586", "hi = 2.0");
        assert!(validate(&parse(&ok)).is_empty());
    }

    #[test]
    fn unknown_experiment_and_fields() {
        let c = parse(&SPECTRUM.replace("neumann-spectrum", "nope"));
        assert_eq!(validate(&c)[0].module, "experiment");
        assert!(ExperimentConfig::from_toml_str(&format!("{SPECTRUM}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn spectrum_outputs() {
        let out = run_in_memory(&parse(SPECTRUM)).unwrap();
        assert_eq!(out[0].name, "neumann_spectrum.csv");
        assert_eq!(out[0].contents.lines().count(), 1 + 4 + 6);
        assert!(out[1].contents.starts_with("L,d,match_distance"));
    }

    #[test]
    fn identities_suite_passes() {
        let c = parse(
            r#"
experiment = "identities-suite"
seed = 3
[model]
t = 0.5
[distribution]
hi = 1.0
"#,
        );
        let out = run_in_memory(&c).unwrap();
        assert!(out[0].contents.lines().skip(1).all(|l| l.ends_with(",true")), "{}", out[0].contents);
    }

    #[test]
    fn grid_expansion_order_and_budget() {
        let mut c = parse(SPECTRUM);
        c.sweep = Some(SweepSection {
            budget: 10,
            grid: BTreeMap::from([
                ("model.t".to_string(), vec![toml::Value::Float(0.2), toml::Value::Float(0.5)]),
                ("geometry.L_values".to_string(), vec![toml::Value::Array(vec![toml::Value::Integer(2)])]),
            ]),
        });
        let pts = expand_grid(&c).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].1.model.t, 0.5);
        c.sweep.as_mut().unwrap().budget = 1;
        assert!(expand_grid(&c).is_err());
        c.sweep.as_mut().unwrap().grid.clear();
        assert!(expand_grid(&c).unwrap().is_empty());
    }

    #[test]
    fn run_writes_manifest_last_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let report = run(&parse(SPECTRUM), &opts).unwrap();
        assert_eq!(report.files.last().unwrap().file_name().unwrap(), MANIFEST_NAME);
        let m = report.manifest.unwrap();
        let text = fs::read(dir.path().join("neumann_spectrum.csv")).unwrap();
        assert_eq!(m.outputs[0].sha256, sha256_hex(&text));
        assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    }

    #[test]
    fn failed_run_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            output_dir: Some(dir.path().join("out")),
            ..Default::default()
        };
        let mut c = parse(SPECTRUM);
        c.model.t = 2.0;
        let err = run(&c, &opts).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!dir.path().join("out").exists());
    }
}
