use std::sync::Arc;
use std::time::Instant;

use lpcurv::geom::{curvature_quotient, Ellipsoid};
use lpcurv::grid::{covariant_hessian, symmetrize_even};
use lpcurv::pde::{
    aux_residual, linearized_operator, solve_auxiliary, solve_auxiliary_from, AuxState, ProblemSpec, SolverConfig,
};
use lpcurv::{ScalarField, SphericalGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(g: &Arc<SphericalGrid>, p: f64) -> ProblemSpec {
    ProblemSpec::new(2, 1, p, ScalarField::constant(g.clone(), 1.0)).unwrap()
}

/// `f_t` for which `s` solves the auxiliary equation with coefficient `v`.
fn manufactured_density(s: &ScalarField, v: &ScalarField, q: f64) -> ScalarField {
    let tau = covariant_hessian(s).add_metric(v);
    let fv = curvature_quotient(&tau, 1).unwrap().f_value;
    let vals = (0..s.len())
        .map(|i| v.values()[i] * s.values()[i].powf(-q) * fv.values()[i])
        .collect();
    symmetrize_even(&ScalarField::new(s.grid().clone(), vals).unwrap())
}

fn random_even_field(g: &Arc<SphericalGrid>, rng: &mut ChaCha8Rng, base: f64, amp: f64) -> ScalarField {
    let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-amp..amp)).collect();
    ScalarField::from_fn(g.clone(), |x| {
        base + c[0] * x[0] * x[0]
            + c[1] * x[1] * x[1]
            + c[2] * x[0] * x[1]
            + c[3] * x[1] * x[2]
            + c[4] * x[0] * x[2]
            + c[5] * x[2].powi(4)
    })
}

#[test]
fn manufactured_auxiliary_solution_is_recovered() {
    let g = SphericalGrid::new(32, 64).unwrap();
    let sp = spec(&g, 1.5);
    let cfg = SolverConfig::default();
    let s_star = Ellipsoid::new(1.3, 1.0, 0.8).unwrap().support_field(g.clone());
    let v = ScalarField::from_fn(g.clone(), |x| (0.2 * x[0] * x[0] - 0.1 * x[2] * x[1]).exp());
    let f_t = manufactured_density(&s_star, &v, sp.q());
    let start = Instant::now();
    let (s, trace) = solve_auxiliary(&v, &f_t, &sp, &cfg).unwrap();
    let err = s
        .values()
        .iter()
        .zip(s_star.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    eprintln!(
        "manufactured aux: err {err:e}, {} newton iterations, {:?}",
        trace.total_newton_iterations(),
        start.elapsed()
    );
    assert!(err < 1e-9, "err = {err:e}");
    assert_eq!(s.evenness_defect(), 0.0);
}

#[test]
fn newton_converges_quadratically() {
    let g = SphericalGrid::new(24, 48).unwrap();
    let sp = spec(&g, 1.5);
    let cfg = SolverConfig {
        linear_tol: 1e-12,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s_star = random_even_field(&g, &mut rng, 1.5, 0.15);
    let v = random_even_field(&g, &mut rng, 1.0, 0.1);
    let f_t = manufactured_density(&s_star, &v, sp.q());
    let s0 = s_star.map(|x| x * 1.05);
    let (_, trace) = solve_auxiliary_from(&s0, &v, &f_t, &sp, &cfg).unwrap();
    let r = &trace.steps[0].residual_norms;
    let mut checked = 0;
    for w in r.windows(2) {
        if w[0] < 1e-2 && w[1] > 1e-10 {
            assert!(w[1] <= 10.0 * w[0] * w[0], "{:?}", r);
            checked += 1;
        }
    }
    assert!(checked >= 1, "{:?}", r);
}

#[test]
fn constant_data_gives_constant_solution_from_perturbed_start() {
    let g = SphericalGrid::new(16, 32).unwrap();
    let sp = spec(&g, 1.5);
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = ScalarField::constant(g.clone(), 2.0);
    let f = ScalarField::constant(g.clone(), 1.0);
    let want = 2f64.powf(2.0 / sp.q());
    for _ in 0..5 {
        let pert = random_even_field(&g, &mut rng, 0.0, 1e-2);
        let s0 = ScalarField::new(g.clone(), pert.values().iter().map(|p| want * (1.0 + p)).collect()).unwrap();
        let (s, _) = solve_auxiliary_from(&s0, &v, &f, &sp, &cfg).unwrap();
        for &x in s.values() {
            assert!((x - want).abs() < 1e-10 * want);
        }
    }
}

#[test]
fn linearization_matches_finite_differences() {
    let g = SphericalGrid::new(16, 32).unwrap();
    let sp = spec(&g, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = random_even_field(&g, &mut rng, 1.2, 0.15);
        let v = random_even_field(&g, &mut rng, 1.0, 0.2);
        let f_t = random_even_field(&g, &mut rng, 1.0, 0.3);
        let eta = random_even_field(&g, &mut rng, 0.0, 1.0);
        let state = AuxState::new(s.clone(), v.clone(), 1.0);
        let l = linearized_operator(&state, &sp, &f_t).unwrap().apply(&eta);
        let shifted = |h: f64| {
            let sh = s.zip_map(&eta, |a, b| a + h * b);
            aux_residual(&AuxState::new(sh, v.clone(), 1.0), &sp, &f_t).unwrap()
        };
        let (rp, rm) = (shifted(eps), shifted(-eps));
        let fd: Vec<f64> = rp
            .values()
            .iter()
            .zip(rm.values())
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let scale = l.sup_norm();
        let err = l
            .values()
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}
