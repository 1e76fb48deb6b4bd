//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitary_anderson::experiment::{run_in_memory, ExperimentConfig};
use unitary_anderson::lattice::{BoundarySpec, LatticeBox};
use unitary_anderson::linalg::normal_eigen;
use unitary_anderson::moments::{
    decay_experiment, dynamical_profile, stability_protocol, two_phase_monte_carlo, two_phase_quadrature,
    DecayGeometry, Ensemble,
};
use unitary_anderson::operators::{build_s_tensor, build_u, splitting_data, AndersonOperator};
use unitary_anderson::params::wrap_angle;
use unitary_anderson::resolvent::{combes_thomas_profile, geometric_resolvent_residual, ResolventSolver};
use unitary_anderson::spectral::{
    band_edge_eigvec_check, branch_cut, feynman_hellmann_derivative, lifshitz_trial, monotonicity_scan,
    neumann_bracketing_check, neumann_box, neumann_spectrum_closed_form, numerical_spectrum, partition_bracketing,
    top_eigenvalue, unit_eigvec_check, InterpolationFamily,
};
use unitary_anderson::stats::linear_fit;
use unitary_anderson::transfer::{
    ckm_moments, free_growth_exponent, lyapunov_estimate, transfer_matrix, GreenFromSolutions,
};
use unitary_anderson::{Error, ModelParams, PhaseDistribution, PhaseField, C64};

type Check = std::result::Result<(bool, String), Error>;

fn params(t: f64, d: usize) -> ModelParams {
    ModelParams::new(t, d).unwrap()
}

fn uniform(lo: f64, hi: f64) -> PhaseDistribution {
    PhaseDistribution::uniform(lo, hi).unwrap()
}

fn below(value: f64, tol: f64) -> (bool, String) {
    (value < tol, format!("max {value:.3e} (tol {tol:.0e})"))
}

// --- 1. exact identities ---------------------------------------------------

fn neumann_closed_form() -> Check {
    let mut worst: f64 = 0.0;
    for t in [0.3, 0.5, 0.8] {
        for (d, ls) in [(1usize, 2..=8usize), (2, 2..=4)] {
            let p = params(t, d);
            for l in ls {
                let s = build_s_tensor(&p, &neumann_box(l, d)?, &BoundarySpec::neumann())?;
                let closed = neumann_spectrum_closed_form(&p, l, d)?;
                worst = worst.max(closed.match_distance(&numerical_spectrum(&s)?));
            }
        }
    }
    Ok(below(worst, 1e-10))
}

fn neumann_eigenvectors() -> Check {
    let mut worst: f64 = 0.0;
    for t in [0.3, 0.5, 0.8] {
        for (d, ls) in [(1usize, 2..=8usize), (2, 2..=4)] {
            let p = params(t, d);
            for l in ls {
                worst = worst.max(band_edge_eigvec_check(&p, l, d)?);
                worst = worst.max(unit_eigvec_check(&p, l, d)?);
            }
        }
    }
    Ok(below(worst, 1e-12))
}

fn rank_one_splitting() -> Check {
    let mut beta_err: f64 = 0.0;
    let mut rec_err: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..50u64 {
        let p = params(rng.random_range(0.1..0.9), 1);
        let lat = LatticeBox::interval(0, 2 * rng.random_range(4..12) - 1)?;
        let cut = 2 * rng.random_range(2..(lat.axis_len(0) as i64 / 2 - 1));
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, seed);
        let data = splitting_data(&p, cut, &ph)?;
        beta_err = beta_err.max(wrap_angle(data.beta + p.lambda0()).abs()).max((data.modulus - 1.0).abs());
        rec_err = rec_err.max(data.reconstruction_error);
    }
    Ok((
        beta_err < 1e-12 && rec_err < 1e-14,
        format!("beta {beta_err:.3e} (tol 1e-12), reconstruction {rec_err:.3e} (tol 1e-14)"),
    ))
}

fn geometric_identity() -> Check {
    let mut worst: f64 = 0.0;
    let z = C64::from_polar(1.4, 0.9);
    for (d, l, y) in [(1usize, 2usize, vec![5i64]), (1, 3, vec![-6]), (2, 1, vec![3, 1])] {
        let p = params(0.5, d);
        let world_box = LatticeBox::centered(d, l + 4);
        for seed in 0..3 {
            let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &world_box, seed);
            let world = AndersonOperator::new(p, ph, BoundarySpec::simple())?;
            let r = geometric_resolvent_residual(&world, l, &y, z)?;
            worst = worst.max(r.identity).max(r.double_resolvent);
        }
    }
    Ok(below(worst, 1e-10))
}

fn transfer_identities() -> Check {
    let mut det_err: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = params(0.5, 1);
    for _ in 0..1000 {
        let z = C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(0.0..TAU));
        let (th, eta) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
        let m = transfer_matrix(&p, z, th, eta)?;
        det_err = det_err.max((m.det() - C64::from_polar(1.0, th - eta)).norm());
    }
    // eigenvectors of U on [0, 2n−1]: each interior pair (ψ_{2k−1}, ψ_{2k})
    // is carried to the next by T_z(θ_{2k}, θ_{2k+1})
    let mut prop_err: f64 = 0.0;
    for seed in 0..5u64 {
        let lat = LatticeBox::interval(0, 23)?;
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, seed);
        let op = AndersonOperator::new(p, ph.clone(), BoundarySpec::simple())?;
        let eig = normal_eigen(&op.op.dense())?;
        for (j, &z) in eig.values.iter().enumerate() {
            let psi: Vec<C64> = eig.vectors.column(j).iter().copied().collect();
            for k in 1..10usize {
                let th = ph.values();
                let m = transfer_matrix(&p, z, th[2 * k], th[2 * k + 1])?;
                let next = m.apply([psi[2 * k - 1], psi[2 * k]]);
                let scale = m.norm() * (psi[2 * k - 1].norm() + psi[2 * k].norm()).max(1e-300);
                let e = ((next[0] - psi[2 * k + 1]).norm() + (next[1] - psi[2 * k + 2]).norm()) / scale;
                prop_err = prop_err.max(e);
            }
        }
    }
    Ok((
        det_err < 1e-14 && prop_err < 1e-8,
        format!("det {det_err:.3e} (tol 1e-14), propagation {prop_err:.3e} (tol 1e-8)"),
    ))
}

fn green_via_solutions() -> Check {
    let mut worst: f64 = 0.0;
    for (seed, z) in [(1u64, C64::from_polar(1.3, 0.7)), (2, C64::from_polar(0.7, 2.5))] {
        let p = params(0.5, 1);
        let lat = LatticeBox::interval(0, 19)?;
        let ph = PhaseField::sample(&PhaseDistribution::full_circle(), &lat, seed);
        let op = AndersonOperator::new(p, ph.clone(), BoundarySpec::simple())?;
        let solver = ResolventSolver::columns(&op.op, z)?;
        let g = GreenFromSolutions::new(&p, &ph, 0, 19, z)?;
        for l in 0..20usize {
            let col = solver.solve_unit(l)?;
            for (k, want) in col.iter().enumerate() {
                let got = g.entry(k as i64, l as i64)?;
                worst = worst.max((got - want).norm() / want.norm());
            }
        }
    }
    Ok(below(worst, 1e-8))
}

fn feynman_hellmann() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    let (mut done, mut degenerate) = (0, 0);
    while done < 100 {
        let d = if done % 4 == 3 { 2 } else { 1 };
        let p = params(rng.random_range(0.2..0.8), d);
        let lat = LatticeBox::centered(d, if d == 1 { rng.random_range(1..4) } else { 1 });
        let ph = PhaseField::sample(&uniform(0.0, 1.0), &lat, rng.random());
        let fam = InterpolationFamily::neumann(&p, ph)?;
        match feynman_hellmann_derivative(&fam, rng.random_range(0.0..1.0)) {
            Ok(c) => {
                worst = worst.max(c.difference());
                done += 1;
            }
            Err(Error::Degenerate { .. }) if degenerate < 20 => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    let (ok, msg) = below(worst, 1e-6);
    Ok((ok, format!("{msg}, {degenerate} degenerate draws replaced")))
}

// --- 2. order properties ---------------------------------------------------

fn monotonicity() -> Check {
    let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let dist = uniform(0.0, 1.0);
    let mut worst = f64::NEG_INFINITY;
    let mut skipped = 0;
    for seed in 0..100u64 {
        let d = if seed % 5 == 4 { 2 } else { 1 };
        let p = params(0.5, d);
        let lat = LatticeBox::centered(d, if d == 1 { 2 } else { 1 });
        let fam = InterpolationFamily::neumann(&p, PhaseField::sample(&dist, &lat, seed))?;
        let scan = monotonicity_scan(&fam, &grid)?;
        worst = worst.max(scan.max_increase());
        skipped += scan.skipped.len();
    }
    Ok((
        worst <= 1e-10,
        format!("largest increase {worst:.3e} (slack 1e-10), {skipped} near-degenerate grid points skipped"),
    ))
}

fn bracketing() -> Check {
    let dist = uniform(0.0, 1.0);
    let mut worst = f64::NEG_INFINITY;
    let p1 = params(0.5, 1);
    let line = LatticeBox::interval(0, 15)?;
    let p2 = params(0.5, 2);
    let square = LatticeBox::cube(2, 0, 7)?;
    for seed in 0..200u64 {
        let b = neumann_bracketing_check(&p1, &PhaseField::sample(&dist, &line, seed), 0, 8)?;
        worst = worst.max(b.arg_joined - b.arg_split);
        let ph = PhaseField::sample(&dist, &square, seed);
        let b = if seed % 2 == 0 {
            neumann_bracketing_check(&p2, &ph, (seed / 2 % 2) as usize, 4)?
        } else {
            partition_bracketing(&p2, &ph, &[vec![4], vec![4]])?
        };
        worst = worst.max(b.arg_joined - b.arg_split);
    }
    Ok((
        worst <= 1e-10,
        format!("max arg_joined − arg_split {worst:.3e} (slack 1e-10)"),
    ))
}

fn top_argument_bound() -> Check {
    let mut worst = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..200u64 {
        let d = 1 + (i % 2) as usize;
        let p = params(rng.random_range(0.1..0.9), d);
        // support [0, θ_M] leaving the spectral gap open
        let room = TAU - 2.0 * p.edge_angle();
        if room <= 0.05 {
            continue;
        }
        let theta_max = rng.random_range(0.01..room.min(3.0));
        let lat = LatticeBox::centered(d, if d == 1 { 3 } else { 1 });
        let s = build_s_tensor(&p, &lat, &BoundarySpec::neumann())?;
        let u = build_u(&PhaseField::sample(&uniform(0.0, theta_max), &lat, i), &s)?;
        let (_, arg) = top_eigenvalue(&u, branch_cut(theta_max))?;
        worst = worst.max(arg - p.edge_angle());
    }
    Ok((worst <= 1e-10, format!("max arg − dλ0 {worst:.3e} (slack 1e-10)")))
}

// --- 3. statistics ---------------------------------------------------------

fn fractional_decay() -> Check {
    let p = params(0.5, 1);
    let z = C64::from_polar(1.001, 0.3);
    let distances: Vec<i64> = (1..=10).map(|k| 4 * k).collect();
    let prof = decay_experiment(
        &p,
        &PhaseDistribution::full_circle(),
        z,
        0.1,
        &distances,
        10_000,
        2024,
        DecayGeometry::default(),
    )?;
    Ok((
        prof.fitted_rate > 0.0 && prof.r_squared > 0.9,
        format!(
            "rate {:.4} ± {:.1e}, r² {:.4} over {} points",
            prof.fitted_rate, prof.rate_stderr, prof.r_squared, prof.fit_points
        ),
    ))
}

fn dynamical() -> Check {
    let p = params(0.5, 1);
    let ens = Ensemble::simple(p, PhaseDistribution::full_circle(), LatticeBox::interval(0, 399)?)?;
    let offsets: Vec<i64> = (2..=30).collect();
    let prof = dynamical_profile(&ens, &[200], &offsets, 200, 1000, 77)?;
    let fit = &prof.fit;
    Ok((
        fit.fitted_rate > 0.0 && fit.r_squared > 0.9,
        format!(
            "rate {:.4} ± {:.1e}, r² {:.4} over {} points",
            fit.fitted_rate, fit.rate_stderr, fit.r_squared, fit.fit_points
        ),
    ))
}

fn lyapunov() -> Check {
    let p = params(0.5, 1);
    let dist = PhaseDistribution::full_circle();
    let mut worst_z = f64::INFINITY;
    for k in 0..10 {
        let z = C64::from_polar(1.0, TAU * k as f64 / 10.0);
        let e = lyapunov_estimate(&p, z, &dist, 500, 200, 31)?;
        worst_z = worst_z.min(e.gamma / e.stderr);
    }
    let free = free_growth_exponent(&p, C64::from_polar(1.0, p.lambda0() / 2.0), 10_000)?;
    Ok((
        worst_z > 3.0 && free < 0.01,
        format!("min gamma/stderr {worst_z:.1} (need > 3), free exponent {free:.2e} (need < 0.01)"),
    ))
}

fn ckm() -> Check {
    let p = params(0.5, 1);
    let n: Vec<usize> = (1..=10).map(|k| 10 * k).collect();
    let v = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let est = ckm_moments(&p, C64::from_polar(1.0, 0.5), &PhaseDistribution::full_circle(), 0.1, &n, 4000, v, 9)?;
    let xs: Vec<f64> = n.iter().map(|&k| k as f64).collect();
    let ys: Vec<f64> = est.iter().map(|e| e.value.ln()).collect();
    let fit = linear_fit(&xs, &ys).expect("distinct n");
    Ok((
        fit.slope < 0.0 && fit.r_squared > 0.9,
        format!("log-slope {:.3e}, r² {:.4}", fit.slope, fit.r_squared),
    ))
}

/// Window radius `b / L²` around the band edge; chosen so that hits are
/// still resolvable at L = 8 with 10⁴ samples.
const LIFSHITZ_WINDOW: f64 = 12.0;

fn lifshitz() -> Check {
    let p = params(0.5, 1);
    let dist = uniform(0.0, 2.0);
    let trials = [2usize, 4, 6, 8]
        .iter()
        .map(|&l| lifshitz_trial(&p, &dist, l, LIFSHITZ_WINDOW, 10_000, 17))
        .collect::<Result<Vec<_>, _>>()?;
    let p_hat: Vec<f64> = trials.iter().map(|t| t.p_hat).collect();
    let decreasing = p_hat.windows(2).all(|w| w[1] < w[0]);
    Ok((decreasing, format!("b = {LIFSHITZ_WINDOW}, p_hat {p_hat:?}")))
}

fn stability() -> Check {
    let p = params(0.5, 1);
    let ens = Ensemble::simple(p, PhaseDistribution::full_circle(), LatticeBox::interval(0, 59)?)?;
    let mut notes = Vec::new();
    let mut ok = true;
    for s in [0.1, 0.3] {
        let rep = stability_protocol(&ens, 0.3, &[1.1, 1.01, 1.001], &[25], &[35], s, 4000, 3)?;
        ok &= rep.stable();
        let vals: Vec<String> = rep.estimates.iter().map(|e| format!("{:.4}", e.value)).collect();
        notes.push(format!("s={s}: [{}] split-half z {:.2}", vals.join(", "), rep.split_half_z));
    }
    Ok((ok, notes.join("; ")))
}

fn combes_thomas() -> Check {
    let p = params(0.5, 1);
    let lat = LatticeBox::interval(0, 199)?;
    let ens = Ensemble::simple(p, uniform(0.0, 1.0), lat)?;
    let mut worst_ratio: f64 = 0.0;
    let mut min_b = f64::INFINITY;
    let z = C64::from_polar(1.2, p.lambda0() + 0.5);
    for i in 0..5 {
        let u = ens.realization(4, "combes-thomas", i)?;
        let ct = combes_thomas_profile(&u, z, &[100], 80)?;
        worst_ratio = worst_ratio.max(ct.max_envelope_ratio);
        min_b = min_b.min(ct.b_fit);
    }
    Ok((
        min_b > 0.0 && worst_ratio <= 1.0 + 1e-12,
        format!("min B_fit {min_b:.4}, max shell/envelope {worst_ratio:.6}"),
    ))
}

// --- 4. infrastructure -----------------------------------------------------

fn workers_invariance() -> Check {
    let configs = [
        r#"
experiment = "fractional-decay"
samples = 300
seed = 12
s = [0.1, 0.3]
[model]
t = 0.5
[geometry]
distances = [2, 6, 10]
[z]
modulus = 1.01
arg = 0.3
"#,
        r#"
experiment = "dynamical"
samples = 200
seed = 4
[model]
t = 0.4
d = 2
[geometry]
box = [[0, 19], [0, 9]]
site = [6, 5]
offsets = [1, 2, 4, 6]
horizon = 10
"#,
        r#"
experiment = "lifshitz"
samples = 500
b = 2.0
[model]
t = 0.5
[distribution]
hi = 2.0
[geometry]
L_values = [2, 3]
"#,
    ];
    let mut same = true;
    for text in configs {
        let mut c = ExperimentConfig::from_toml_str(text)?;
        c.workers = Some(1);
        let one = run_in_memory(&c).map_err(|e| Error::Config(e.to_string()))?;
        c.workers = Some(8);
        let eight = run_in_memory(&c).map_err(|e| Error::Config(e.to_string()))?;
        same &= one == eight;
    }
    let p = params(0.5, 1);
    let ens = Ensemble::simple(p, uniform(0.0, PI), LatticeBox::interval(0, 11)?)?;
    let frozen = ens.phases(99);
    let z = C64::from_polar(1.05, 0.4);
    let (k, l) = ([3i64], [8i64]);
    let varied: [&[i64]; 2] = [&[5], &[6]];
    let quad = two_phase_quadrature(&ens, &frozen, varied, z, &k, &l, 0.5, 60)?;
    let mc = two_phase_monte_carlo(&ens, &frozen, varied, z, &k, &l, 0.5, 20_000, 5)?;
    let gap = (quad - mc.value).abs();
    Ok((
        same && gap <= 3.0 * mc.stderr,
        format!(
            "workers 1 vs 8 identical: {same}; quadrature {quad:.6} vs Monte Carlo {:.6} ± {:.1e} ({:.2} stderr)",
            mc.value,
            mc.stderr,
            gap / mc.stderr
        ),
    ))
}

fn main() {
    let criteria: Vec<(&str, &str, fn() -> Check)> = vec![
        ("1a", "Neumann closed-form spectra", neumann_closed_form),
        ("1b", "band-edge and unit eigenvectors", neumann_eigenvectors),
        ("1c", "rank-one splitting", rank_one_splitting),
        ("1d", "geometric resolvent identity", geometric_identity),
        ("1e", "transfer determinant and propagation", transfer_identities),
        ("1f", "Green function from solutions", green_via_solutions),
        ("1g", "Feynman-Hellmann derivative", feynman_hellmann),
        ("2a", "top eigenvalue non-increasing in alpha", monotonicity),
        ("2b", "Neumann bracketing", bracketing),
        ("2c", "top argument below d*lambda0", top_argument_bound),
        ("3a", "fractional-moment decay", fractional_decay),
        ("3b", "dynamical localization", dynamical),
        ("3c", "Lyapunov positivity", lyapunov),
        ("3d", "negative moment of the cocycle", ckm),
        ("3e", "Lifshitz trend", lifshitz),
        ("3f", "fractional-moment stability", stability),
        ("3g", "Combes-Thomas decay", combes_thomas),
        ("4", "worker invariance and quadrature oracle", workers_invariance),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {id} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
