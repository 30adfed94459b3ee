use lpcurv::geom::Ellipsoid;
use lpcurv::homotopy::{phi_map, solve_main, HomotopyConfig};
use lpcurv::pde::{main_residual, ProblemSpec};
use lpcurv::{Error, ScalarField, SphericalGrid};

fn ellipsoid_spec(n: usize) -> (ProblemSpec, ScalarField) {
    let g = SphericalGrid::new(n, 2 * n).unwrap();
    let e = Ellipsoid::new(1.3, 1.0, 0.8).unwrap();
    let f = ScalarField::from_fn(g.clone(), |x| e.density(1.5, x));
    (ProblemSpec::new(2, 1, 1.5, f).unwrap(), e.support_field(g))
}

#[test]
fn picard_residuals_do_not_increase_after_warm_up() {
    let (ellipsoid, _) = ellipsoid_spec(24);
    let g = ellipsoid.grid().clone();
    let bumpy = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.3 * x[0] * x[0] - 0.2 * x[1] * x[2]);
    let mut specs = vec![ellipsoid, ProblemSpec::new(2, 1, 1.3, bumpy).unwrap()];
    for p in [1.2, 1.5, 1.8] {
        specs.push(ProblemSpec::new(2, 1, p, ScalarField::constant(g.clone(), 1.0)).unwrap());
    }
    for spec in &specs {
        let sol = solve_main(spec, &HomotopyConfig::default()).unwrap();
        for rec in sol.outer.iter().filter(|r| r.converged && !r.newton_krylov) {
            let r = &rec.fixed_point_residuals;
            for (i, w) in r.windows(2).enumerate().skip(3) {
                assert!(w[1] <= w[0], "p = {}, t = {}: step {i} {:?}", spec.p(), rec.t, r);
            }
        }
    }
}

#[test]
fn t_one_fixed_point_is_the_manufactured_solution() {
    let (spec, truth) = ellipsoid_spec(24);
    let w = truth.map(f64::ln);
    let out = phi_map(&w, 1.0, &spec, &Default::default()).unwrap();
    let gap = out
        .values()
        .iter()
        .zip(w.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap < 1e-9, "{gap:e}");
}

#[test]
fn solution_satisfies_its_invariants() {
    let (spec, truth) = ellipsoid_spec(24);
    let cfg = HomotopyConfig::default();
    let sol = solve_main(&spec, &cfg).unwrap();
    assert_eq!(sol.s.evenness_defect(), 0.0);
    assert!(sol.diagnostics.convexity_margin > 0.0);
    assert!(sol.diagnostics.lemmas_ok() && sol.diagnostics.bounds_ok());
    let scale = truth
        .values()
        .iter()
        .zip(spec.f().values())
        .fold(0.0f64, |m, (s, f)| m.max(s.sqrt() * f));
    assert!(main_residual(&sol.s, &spec).unwrap().sup_norm() <= 1e-8 * scale);
    assert!(sol.relative_residual <= 1e-8);
    let last = sol.outer.last().unwrap();
    assert_eq!(last.t, 1.0);
    assert!(last.converged && *last.fixed_point_residuals.last().unwrap() <= cfg.outer_tol);
    let err = sol
        .s
        .values()
        .iter()
        .zip(truth.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn rejects_bad_configuration() {
    let (spec, _) = ellipsoid_spec(8);
    for cfg in [
        HomotopyConfig {
            damping: 0.0,
            ..Default::default()
        },
        HomotopyConfig {
            outer_tol: -1.0,
            ..Default::default()
        },
        HomotopyConfig {
            polish_tol: 0.0,
            ..Default::default()
        },
    ] {
        assert!(matches!(solve_main(&spec, &cfg), Err(Error::InvalidProblem(_))));
    }
}
