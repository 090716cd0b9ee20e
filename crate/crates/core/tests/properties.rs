use ndarray::{Array1, Array2};
use proptest::prelude::*;

use spde_holder_core::field::{Provenance, SpaceTimeField};
use spde_holder_core::grid::{Domain, SpaceTimeGrid, SpatialGrid};
use spde_holder_core::noise::{normal_at, sample_path};
use spde_holder_core::operators::OperatorSpec;
use spde_holder_core::regularity::{holder_seminorms, lemma4_bound, osc_profile, sup_norm};

fn small_field(values: Vec<f64>) -> SpaceTimeField<f64> {
    // 9 x 9 nodes: h = dt = 1/8, one unit window
    let grid = SpaceTimeGrid::new(Domain::new(1).unwrap(), 9, 0.125, 0.0).unwrap();
    let arr = Array2::from_shape_vec((9, 9), values).unwrap();
    SpaceTimeField::new(grid, arr, Provenance::default()).unwrap()
}

fn field_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 81)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operators_are_linear(
        u in prop::collection::vec(-1.0f64..1.0, 33),
        v in prop::collection::vec(-1.0f64..1.0, 33),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        amp in 0.0f64..0.5,
    ) {
        let g = SpatialGrid::new(1, 33);
        let (u, v) = (Array1::from(u), Array1::from(v));
        for spec in [OperatorSpec::laplacian(1), OperatorSpec::smooth_variable(1, amp), OperatorSpec::divergence_step(1, 1.0, 10.0, 0.5)] {
            let combo = &u * a + &v * b;
            let lhs = spec.apply(&g, combo.view()).unwrap();
            let rhs = spec.apply(&g, u.view()).unwrap() * a + spec.apply(&g, v.view()).unwrap() * b;
            let scale = lhs.iter().chain(rhs.iter()).fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn seminorms_grow_with_theta(values in field_values()) {
        let f = small_field(values);
        let thetas = [0.05, 0.2, 0.45, 0.7, 1.0];
        let r = holder_seminorms(&f, &thetas, 1000).unwrap();
        for w in r.seminorms.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn sup_norm_is_absolutely_homogeneous(values in field_values(), c in -4.0f64..4.0) {
        let f = small_field(values.clone());
        let g = small_field(values.iter().map(|v| c * v).collect());
        let (a, b) = (sup_norm(&f, None).unwrap(), sup_norm(&g, None).unwrap());
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * (1.0 + b));
    }

    #[test]
    fn oscillation_bound_dominates_every_increment(values in field_values()) {
        let f = small_field(values);
        let profile = osc_profile(&f, 3).unwrap();
        let v = f.values();
        for l1 in 0..9usize {
            for i1 in 0..9usize {
                for l2 in 0..9 {
                    for i2 in 0..9 {
                        let steps = l1.abs_diff(l2).max(i1.abs_diff(i2));
                        if steps == 0 {
                            continue;
                        }
                        let bound = lemma4_bound(&profile, steps as f64 / 8.0).unwrap();
                        prop_assert!((v[[l1, i1]] - v[[l2, i2]]).abs() <= bound);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_is_a_pure_function_of_its_coordinates(seed in any::<u64>(), sample in 0u64..1_000_000, j in 0usize..4) {
        let dt = 1.0 / 64.0;
        let a = sample_path(seed, sample, j + 1, dt, 1.0).unwrap();
        let b = sample_path(seed, sample, j + 1, dt, 1.0).unwrap();
        prop_assert_eq!(&a, &b);
        for m in [0usize, 17, 63] {
            let z = normal_at(seed, sample, j, m as u64, 0);
            prop_assert!((a.increments[[j, m]] - dt.sqrt() * z).abs() <= 1e-15);
        }
        let other = sample_path(seed, sample + 1, j + 1, dt, 1.0).unwrap();
        prop_assert_ne!(a.increments.row(j), other.increments.row(j));
    }

    #[test]
    fn refinement_preserves_the_brownian_path(seed in any::<u64>(), sample in 0u64..1000) {
        let coarse = sample_path(seed, sample, 2, 1.0 / 16.0, 2.0).unwrap();
        let fine = coarse.refine().refine();
        prop_assert_eq!(fine.steps(), 4 * coarse.steps());
        for j in 0..2 {
            for m in 0..coarse.steps() {
                let sum: f64 = (0..4).map(|k| fine.increments[[j, 4 * m + k]]).sum();
                prop_assert!((sum - coarse.increments[[j, m]]).abs() <= 1e-14);
            }
        }
    }
}
