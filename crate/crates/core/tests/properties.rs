use proptest::prelude::*;
use unitary_anderson::lattice::{BoundarySpec, LatticeBox};
use unitary_anderson::operators::{build_s_tensor, build_u};
use unitary_anderson::seeding::derive_seed;
use unitary_anderson::spectral::arg_below_cut;
use unitary_anderson::transfer::{cocycle, transfer_matrix};
use unitary_anderson::{ModelParams, PhaseDistribution, PhaseField, C64};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_operators_are_unitary(t in 0.05f64..0.95, n in 2i64..20, seed in any::<u64>()) {
        let p = ModelParams::new(t, 1).unwrap();
        let lat = LatticeBox::interval(0, 2 * n - 1).unwrap();
        for bc in [BoundarySpec::simple(), BoundarySpec::neumann()] {
            let s = build_s_tensor(&p, &lat, &bc).unwrap();
            let u = build_u(&PhaseField::sample(&PhaseDistribution::full_circle(), &lat, seed), &s).unwrap();
            prop_assert!(u.unitarity_defect() < 1e-13);
        }
    }

    #[test]
    fn cocycle_determinant_is_product_of_phases(
        thetas in prop::collection::vec(0.0f64..6.28, 2..40),
        modulus in 0.5f64..2.0,
        arg in 0.0f64..6.28,
    ) {
        let p = ModelParams::new(0.5, 1).unwrap();
        let z = C64::from_polar(modulus, arg);
        let n = thetas.len() / 2;
        let m = cocycle(&p, z, &thetas, n).unwrap();
        let phase: f64 = (0..n).map(|k| thetas[2 * k] - thetas[2 * k + 1]).sum();
        let det = m.det();
        // ad − bc of the product cancels down from ‖M‖²
        let tol = 1e-13 * m.norm().powi(2).max(1.0);
        prop_assert!((det - C64::from_polar(1.0, phase)).norm() < tol);
        let single = transfer_matrix(&p, z, thetas[0], thetas[1]).unwrap().det();
        prop_assert!((single - C64::from_polar(1.0, thetas[0] - thetas[1])).norm() < 1e-13);
    }

    #[test]
    fn argument_lands_below_cut(arg in -20.0f64..20.0, cut in -3.0f64..3.0) {
        let a = arg_below_cut(C64::from_polar(1.0, arg), cut);
        prop_assert!(a <= cut && a > cut - std::f64::consts::TAU);
        prop_assert!((C64::from_polar(1.0, a) - C64::from_polar(1.0, arg)).norm() < 1e-12);
    }

    #[test]
    fn derived_seeds_separate_streams(master in any::<u64>(), i in 0u64..1000) {
        prop_assert_ne!(derive_seed(master, "a", i), derive_seed(master, "b", i));
        prop_assert_ne!(derive_seed(master, "a", i), derive_seed(master, "a", i + 1));
    }
}
