use quiver_hk::geometry::make_sphere_grid;
use quiver_hk::instances::stable_nonconstant;
use quiver_hk::solver::{continuity_solve, resample, Outcome, SolveConfig};

#[test]
fn stable_solution_agrees_across_grids() {
    let (m, p) = stable_nonconstant();
    let coarse = make_sphere_grid(32, 64, 1.0).unwrap();
    let fine = make_sphere_grid(64, 128, 1.0).unwrap();
    let cfg = SolveConfig::default();
    let (sc, rc) = continuity_solve(&m, &p, &coarse, &cfg).unwrap();
    let (sf, rf) = continuity_solve(&m, &p, &fine, &cfg).unwrap();
    assert_eq!((rc.outcome, rf.outcome), (Outcome::Converged, Outcome::Converged));
    for (i, c) in sc.coeffs.iter().enumerate() {
        let up = resample(&coarse, c, &fine);
        let diff = up
            .values
            .iter()
            .zip(&sf.u[i].values)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-6, "vertex {i}: {diff:e}");
    }
}
