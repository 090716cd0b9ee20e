//! Adding `alpha` to the zero-order term equals multiplying by `e^{alpha t}`
//! the solution driven by `e^{-alpha t} f`, on the same noise path.

use spde_holder_core::grid::SpatialGrid;
use spde_holder_core::mild_solver::{MildSolver, SolverOptions};
use spde_holder_core::noise::{make_forcing, sample_path, Modulation, NoiseCondition, ProfileSpec, Shape};
use spde_holder_core::operators::OperatorSpec;
use spde_holder_core::semigroup::SemigroupBackend;

#[test]
fn zero_order_shift_is_an_exponential_weight() {
    let alpha = 1.5;
    let g = SpatialGrid::new(1, 65);
    let dt = 1.0 / 256.0;
    let shifted = SemigroupBackend::spectral(&OperatorSpec::with_reaction(1, alpha), g, 63).unwrap();
    let plain = SemigroupBackend::spectral(&OperatorSpec::laplacian(1), g, 63).unwrap();
    let shapes = [Shape::SmoothBump, Shape::Checkerboard { cells: 4 }];
    let f = make_forcing::<f64>(shapes.iter().cloned().map(ProfileSpec::new).collect(), NoiseCondition::BInfty, g).unwrap();
    let f_decay = make_forcing::<f64>(
        shapes.iter().cloned().map(|s| ProfileSpec::new(s).modulated(Modulation::ExpDecay { rate: alpha })).collect(),
        NoiseCondition::BInfty,
        g,
    )
    .unwrap();
    let growth = SolverOptions {
        allow_growth: true,
        ..SolverOptions::default()
    };
    let u_solver = MildSolver::new(&shifted, &f, growth).unwrap();
    let v_solver = MildSolver::new(&plain, &f_decay, SolverOptions::default()).unwrap();
    let path = sample_path(5, 0, 2, dt, 3.0).unwrap();
    let u = u_solver.solve_windows(&path, &[0, 2]).unwrap();
    let v = v_solver.solve_windows(&path, &[0, 2]).unwrap();
    for (uw, vw) in u.iter().zip(&v) {
        let scale = uw.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(scale > 0.0);
        for level in 0..uw.grid().time_levels() {
            let weight = (alpha * uw.grid().time_at(level)).exp();
            for (a, b) in uw.level(level).iter().zip(vw.level(level)) {
                assert!((a - weight * b).abs() <= 1e-10 * scale, "level {level}: {a} vs {}", weight * b);
            }
        }
    }
}
