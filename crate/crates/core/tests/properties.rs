use std::sync::Arc;

use electrolyte::analysis::CapacitanceCurve;
use electrolyte::comparator::{solve_poisson_boltzmann, PbProblem};
use electrolyte::fem::{fractions_from_unknowns, BoundaryValue, FieldState, Problem, SpeciesVariables};
use electrolyte::mesh::{build_interval_mesh, build_rectangle_mesh, BoundaryTag};
use electrolyte::physics::{Compressibility, Mixture, Species, StateSample};
use electrolyte::scenario::channel_bcs;
use electrolyte::solver::NewtonConfig;
use proptest::prelude::*;

fn mixture(kappa: f64, compressibility: Compressibility) -> Mixture {
    Mixture::with_charges(&[-1, 1], kappa, compressibility, 8.553e-6, 7.5412e-4).unwrap()
}

/// Two ion fractions that leave room for the solvent.
fn fractions() -> impl Strategy<Value = (f64, f64)> {
    (0.01..0.6f64, 0.01..0.6f64).prop_filter("solvent present", |(a, b)| a + b < 0.98)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gibbs_energy_approaches_incompressible(p in 1.5..500.0f64, kappa in 0.0..10.0f64) {
        let inc = mixture(kappa, Compressibility::Incompressible).gibbs_energy(p, 0).unwrap();
        let mut last = f64::INFINITY;
        for k in [1e3, 1e4, 1e5, 1e6] {
            let g = mixture(kappa, Compressibility::BulkModulus(k)).gibbs_energy(p, 0).unwrap();
            let d = (g - inc).abs();
            prop_assert!(g <= inc);
            prop_assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn free_charge_is_linear_in_each_fraction((ya, yc) in fractions(), p in -0.5..50.0f64, dy in 1e-3..0.01f64) {
        let m = mixture(0.0, Compressibility::BulkModulus(100.0));
        let n = m.number_density(p).unwrap();
        let base = m.free_charge(&StateSample { phi: 0.0, p, y: &[ya, yc] }).unwrap();
        let bumped = m.free_charge(&StateSample { phi: 0.0, p, y: &[ya + dy, yc] }).unwrap();
        prop_assert!(((bumped - base) / dy - (-n)).abs() < 1e-9);
        let bumped = m.free_charge(&StateSample { phi: 0.0, p, y: &[ya, yc + dy] }).unwrap();
        prop_assert!(((bumped - base) / dy - n).abs() < 1e-9);
    }

    #[test]
    fn flux_potential_ignores_common_reference_shift((ya, yc) in fractions(), p in 0.0..100.0f64, c in -50.0..50.0f64, kappa in 0.0..8.0f64) {
        let build = |shift: f64| {
            let mut species = vec![Species::ion(-1, kappa), Species::ion(1, kappa), Species::solvent()];
            for (i, s) in species.iter_mut().enumerate() {
                s.g_ref = 0.3 * i as f64 + shift;
            }
            Mixture::new(species, Compressibility::Incompressible, 1e-3, 1e-3).unwrap()
        };
        let sample = StateSample { phi: 1.7, p, y: &[ya, yc] };
        for alpha in 0..2 {
            let w0 = build(0.0).flux_potential(&sample, alpha).unwrap().w;
            let w1 = build(c).flux_potential(&sample, alpha).unwrap().w;
            prop_assert!((w0 - w1).abs() < 1e-12 * (1.0 + w0.abs() + c.abs()));
        }
    }

    #[test]
    fn chemical_potential_increases_with_fraction(y in 1e-10..0.99f64, dy in 1e-6..1e-3f64, p in -0.5..100.0f64) {
        let m = mixture(2.0, Compressibility::BulkModulus(50.0));
        prop_assume!(y + dy < 1.0 - 1e-14);
        prop_assert!(m.chemical_potential(y + dy, p, 1).unwrap() > m.chemical_potential(y, p, 1).unwrap());
    }

    #[test]
    fn log_ratio_fractions_are_a_partition(s in prop::collection::vec(-700.0..700.0f64, 1..6)) {
        let y = fractions_from_unknowns(SpeciesVariables::LogRatio, &s);
        prop_assert_eq!(y.len(), s.len() + 1);
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn profile_fractions_sum_to_one(seed in prop::collection::vec((-5.0..5.0f64, -3.0..3.0f64), 9)) {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, 8).unwrap());
        let m = mixture(0.0, Compressibility::Incompressible);
        let values: Vec<f64> = seed.iter().flat_map(|&(a, b)| [0.0, 0.0, a, b]).collect();
        let state = FieldState::new(mesh, 3, SpeciesVariables::LogRatio, values).unwrap();
        let profile = state.to_profile(&m);
        for node in 0..9 {
            let total: f64 = (2..5).map(|c| profile.value(node, c)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_residual_ignores_potential_offset(c in -20.0..20.0f64, bias in -3.0..3.0f64) {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, 12).unwrap());
        let problem = Problem::new(mesh, mixture(3.0, Compressibility::BulkModulus(40.0)), channel_bcs(0.0, 0.0, &[0.2, 0.2]), SpeciesVariables::LogRatio)
            .unwrap()
            .with_bias(bias);
        let state = problem.initial_guess().unwrap();
        let mut shifted = state.clone();
        for node in 0..13 {
            shifted.values_mut()[node * 4] += c;
        }
        let (r0, r1) = (problem.residual(&state).unwrap(), problem.residual(&shifted).unwrap());
        for node in 1..12 {
            for f in 0..4 {
                let i = node * 4 + f;
                prop_assert!((r0[i] - r1[i]).abs() < 1e-9 * (1.0 + r0[i].abs()));
            }
        }
    }

    #[test]
    fn cell_measures_sum_to_area(lx in 0.01..10.0f64, ly in 0.01..10.0f64, nx in 1usize..12, ny in 1usize..12) {
        let mesh = build_rectangle_mesh(lx, ly, nx, ny).unwrap();
        let total: f64 = (0..mesh.n_cells()).map(|c| mesh.cell_measure(c)).sum();
        prop_assert!((total - lx * ly).abs() < 1e-12 * lx * ly);
    }

    #[test]
    fn capacitance_is_exact_for_quadratic_charge(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -1.0..1.0f64) {
        let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let q: Vec<f64> = grid.iter().map(|x| a + b * x + c * x * x).collect();
        let curve = CapacitanceCurve::from_charges(&grid, &q).unwrap();
        for pt in &curve.points {
            prop_assert!((pt.c_dl + b + 2.0 * c * pt.phi_l).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn boltzmann_relation_holds_for_any_bias(bias in -6.0..6.0f64, bulk in 0.001..0.3f64) {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, 256).unwrap());
        let pb = PbProblem::new(
            mesh,
            1e-3,
            vec![-1.0, 1.0],
            vec![bulk, bulk],
            0.0,
            vec![(BoundaryTag::Left, BoundaryValue::Biased { offset: 0.0 }), (BoundaryTag::Right, BoundaryValue::Constant(0.0))],
        )
        .unwrap()
        .with_bias(bias);
        let sol = solve_poisson_boltzmann(&pb, &NewtonConfig::default()).unwrap();
        for node in 0..=256 {
            let phi = sol.phi.value(node, 0);
            prop_assert!((sol.fractions.value(node, 0) * (-phi).exp() / bulk - 1.0).abs() < 1e-12);
            prop_assert!(phi.abs() <= bias.abs() + 1e-12);
        }
    }
}
