//! Checks of the a-priori estimates and geometric lemmas for even, strictly
//! convex support functions.
//!
//! Inequalities with explicit constants are pass/fail checks. Constants that
//! are only known to exist are measured and reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{binomial, principal_radii, tau_field, DIM};
use crate::grid::{covariant_gradient, covariant_hessian, laplacian, ScalarField};
use crate::pde::{relative_main_residual, ProblemSpec, EVENNESS_TOL};

/// Relative tolerance used when an inequality is tight on exact data.
pub const CHECK_TOL: f64 = 1e-8;

/// `C_n = 32(n+1)/√27`.
pub fn chou_wang_constant(n: usize) -> f64 {
    32.0 * (n as f64 + 1.0) / 27f64.sqrt()
}

/// `c_{n,k} = 1/C(n,k)`.
pub fn c0_constant(n: usize, k: usize) -> f64 {
    1.0 / binomial(n, k)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct C0Check {
    /// `R^{p-k-1} ≤ c_{n,k} / min f`
    pub upper_ok: bool,
    /// `r^{p-k-1} ≥ c_{n,k} / max f`
    pub lower_ok: bool,
    /// Ratio of the larger to the smaller side; at least 1 when the bound holds.
    pub upper_slack: f64,
    pub lower_slack: f64,
}

pub fn c0_bounds_check(s: &ScalarField, spec: &ProblemSpec) -> C0Check {
    let (big_r, r) = (s.max(), s.min());
    let e = spec.p() - spec.k() as f64 - 1.0;
    let c = c0_constant(spec.n(), spec.k());
    let upper_slack = c / spec.f().min() / big_r.powf(e);
    let lower_slack = r.powf(e) / (c / spec.f().max());
    C0Check {
        upper_ok: upper_slack >= 1.0 - CHECK_TOL,
        lower_ok: lower_slack >= 1.0 - CHECK_TOL,
        upper_slack,
        lower_slack,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ChouWangBranch {
    /// `R/r ≤ √(n+1)`
    Ratio,
    /// `R²/r ≤ C_n max λ_n`
    Curvature,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChouWang {
    pub branch: ChouWangBranch,
    /// Larger side over smaller side of the branch that holds.
    pub margin: f64,
    pub ratio_margin: f64,
    pub curvature_margin: f64,
}

fn require_even_convex(s: &ScalarField) -> Result<f64> {
    let defect = s.evenness_defect();
    if defect > EVENNESS_TOL * s.sup_norm() {
        return Err(Error::NotEven { defect });
    }
    let radii = principal_radii(&tau_field(s));
    let margin = radii.min_radius();
    if !(margin > 0.0) {
        return Err(Error::NotConvex { margin });
    }
    Ok(radii.max_radius())
}

/// Either `R/r ≤ √(n+1)` or `R²/r ≤ C_n max λ_n` for even convex bodies.
pub fn chou_wang_check(s: &ScalarField) -> Result<ChouWang> {
    let max_lambda = require_even_convex(s)?;
    let (big_r, r) = (s.max(), s.min());
    let ratio_margin = ((DIM + 1) as f64).sqrt() / (big_r / r);
    let curvature_margin = chou_wang_constant(DIM) * max_lambda / (big_r * big_r / r);
    let (branch, margin) = if ratio_margin >= 1.0 {
        (ChouWangBranch::Ratio, ratio_margin)
    } else if curvature_margin >= 1.0 {
        (ChouWangBranch::Curvature, curvature_margin)
    } else {
        return Err(Error::LemmaViolated(format!(
            "neither R/r ≤ √{} (margin {ratio_margin}) nor R²/r ≤ C max λ (margin {curvature_margin})",
            DIM + 1
        )));
    };
    Ok(ChouWang {
        branch,
        margin,
        ratio_margin,
        curvature_margin,
    })
}

/// `β = max (s² + |∇s|²) / (s^γ R^{2-γ})`, defined for `0 < γ < 2(p-1)/k`.
pub fn gradient_bound_report(s: &ScalarField, gamma: f64, spec: &ProblemSpec) -> Result<f64> {
    let upper = 2.0 * (spec.p() - 1.0) / spec.k() as f64;
    if !(gamma > 0.0 && gamma < upper) {
        return Err(Error::GammaOutOfRange { gamma, upper });
    }
    let big_r = s.max();
    let grad = covariant_gradient(s);
    Ok(s.values()
        .iter()
        .zip(grad.components())
        .map(|(&si, g)| (si / big_r).powf(2.0 - gamma) * (1.0 + (g[0] * g[0] + g[1] * g[1]) / (si * si)))
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct NewtonMaclaurin {
    pub ok: bool,
    pub min_slack: f64,
}

/// Nodewise `σ_n ≥ C(n,k) (min f) r^{p-1} σ_n^{(n-k)/n}`, with `σ_n` on the
/// left replaced through the equation by `f s^{p-1} σ_{n-k}`.
pub fn newton_maclaurin_from(sigma: &[[f64; 2]], s: &[f64], f: &[f64], p: f64, k: usize) -> NewtonMaclaurin {
    let n = DIM;
    let min_f = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let r = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = binomial(n, k);
    let exponent = (n - k) as f64 / n as f64;
    let min_slack = sigma
        .iter()
        .zip(s)
        .zip(f)
        .map(|((sg, &si), &fi)| {
            let sn = sg[n - 1];
            let snk = sg[n - k - 1];
            fi * si.powf(p - 1.0) * snk / (c * min_f * r.powf(p - 1.0) * sn.powf(exponent))
        })
        .fold(f64::INFINITY, f64::min);
    NewtonMaclaurin {
        ok: min_slack >= 1.0 - CHECK_TOL,
        min_slack,
    }
}

pub fn newton_maclaurin_check(s: &ScalarField, spec: &ProblemSpec) -> Result<NewtonMaclaurin> {
    require_even_convex(s)?;
    let radii = principal_radii(&tau_field(s));
    let sigma: Vec<[f64; 2]> = radii.lambda().iter().map(|l| [l[0] + l[1], l[0] * l[1]]).collect();
    Ok(newton_maclaurin_from(
        &sigma,
        s.values(),
        spec.f().values(),
        spec.p(),
        spec.k(),
    ))
}

/// Discrete `C^0`, `C^1`, `C^2` norms in max form.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiscreteNorms {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_laplacian: f64,
    /// `‖s‖²_{C¹} ≤ 4 ‖s‖_{C⁰} ‖s‖_{C²}`
    pub interpolation_ok: bool,
}

pub fn discrete_norms(s: &ScalarField) -> DiscreteNorms {
    let c0 = s.sup_norm();
    let grad = covariant_gradient(s)
        .components()
        .iter()
        .map(|g| g[0].hypot(g[1]))
        .fold(0.0, f64::max);
    let hess = covariant_hessian(s)
        .components()
        .iter()
        .map(|t| {
            let mean = 0.5 * (t[0] + t[2]);
            let rad = (0.5 * (t[0] - t[2])).hypot(t[1]);
            mean.abs() + rad
        })
        .fold(0.0, f64::max);
    let c1 = c0.max(grad);
    let c2 = c1.max(hess);
    DiscreteNorms {
        c0,
        c1,
        c2,
        max_laplacian: laplacian(s).max(),
        interpolation_ok: c1 * c1 <= 4.0 * c0 * c2 * (1.0 + CHECK_TOL),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct GammaBeta {
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimateReport {
    #[serde(rename = "R")]
    pub big_r: f64,
    pub r: f64,
    pub c0_bounds: C0Check,
    /// `None` when the input is not even and strictly convex.
    pub chou_wang: Option<ChouWang>,
    pub beta_measured: Vec<GammaBeta>,
    pub convexity_margin: f64,
    pub sigma1_max: f64,
    pub newton_maclaurin: Option<NewtonMaclaurin>,
    pub evenness_defect: f64,
    pub norms: DiscreteNorms,
    /// `max |main residual| / max(s^{p-1} f)`; `None` outside the cone.
    pub relative_residual: Option<f64>,
    /// Error message when a lemma-type check was violated.
    pub lemma_violation: Option<String>,
}

impl EstimateReport {
    /// Geometry is valid: even, strictly convex, and no lemma violated.
    pub fn lemmas_ok(&self) -> bool {
        self.convexity_margin > 0.0
            && self.lemma_violation.is_none()
            && self.chou_wang.is_some()
            && self.newton_maclaurin.is_some_and(|nm| nm.ok)
    }

    /// Bounds that hold on solutions in the existence regime.
    pub fn bounds_ok(&self) -> bool {
        self.c0_bounds.upper_ok
            && self.c0_bounds.lower_ok
            && self.beta_measured.iter().all(|gb| gb.beta.is_finite())
            && self.norms.interpolation_ok
    }
}

/// Runs every check on `s` against the data of `spec`.
pub fn report_for_field(s: &ScalarField, spec: &ProblemSpec) -> EstimateReport {
    let radii = principal_radii(&tau_field(s));
    let convexity_margin = radii.min_radius();
    let sigma1_max = radii
        .lambda()
        .iter()
        .map(|l| l[0] + l[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let evenness_defect = s.evenness_defect();
    let mut lemma_violation = None;
    let even = evenness_defect <= EVENNESS_TOL * s.sup_norm();
    let (chou_wang, newton_maclaurin) = if even && convexity_margin > 0.0 {
        let cw = match chou_wang_check(s) {
            Ok(cw) => Some(cw),
            Err(e) => {
                lemma_violation = Some(e.to_string());
                None
            }
        };
        (cw, newton_maclaurin_check(s, spec).ok())
    } else {
        (None, None)
    };
    let gamma = (spec.p() - 1.0) / spec.k() as f64;
    let beta_measured = gradient_bound_report(s, gamma, spec)
        .map(|beta| vec![GammaBeta { gamma, beta }])
        .unwrap_or_default();
    EstimateReport {
        big_r: s.max(),
        r: s.min(),
        c0_bounds: c0_bounds_check(s, spec),
        chou_wang,
        beta_measured,
        convexity_margin,
        sigma1_max,
        newton_maclaurin,
        evenness_defect,
        norms: discrete_norms(s),
        relative_residual: relative_main_residual(s, spec).ok(),
        lemma_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Ellipsoid;
    use crate::grid::SphericalGrid;

    fn sphere_spec() -> (ScalarField, ProblemSpec) {
        let g = SphericalGrid::new(16, 32).unwrap();
        let spec = ProblemSpec::new(2, 1, 1.5, ScalarField::constant(g.clone(), 1.0)).unwrap();
        (ScalarField::constant(g, 4.0), spec)
    }

    #[test]
    fn c0_bounds_examples() {
        let (s, spec) = sphere_spec();
        let c = c0_bounds_check(&s, &spec);
        assert!(c.upper_ok && c.lower_ok);
        assert!((c.upper_slack - 1.0).abs() < 1e-14 && (c.lower_slack - 1.0).abs() < 1e-14);
        let wrong = s.map(|_| 1.0);
        let c = c0_bounds_check(&wrong, &spec);
        assert!(!(c.upper_ok && c.lower_ok));
    }

    #[test]
    fn chou_wang_examples() {
        let (s, _) = sphere_spec();
        let cw = chou_wang_check(&s).unwrap();
        assert_eq!(cw.branch, ChouWangBranch::Ratio);
        assert!((cw.margin - 3f64.sqrt()).abs() < 1e-12);

        let g = SphericalGrid::new(64, 128).unwrap();
        let e = Ellipsoid::new(10.0, 1.0, 1.0).unwrap().support_field(g);
        let cw = chou_wang_check(&e).unwrap();
        assert_eq!(cw.branch, ChouWangBranch::Curvature);
        // R²/r = 100 against C_2 · 100
        assert!((cw.curvature_margin - chou_wang_constant(2)).abs() < 1e-3 * chou_wang_constant(2));
    }

    #[test]
    fn chou_wang_rejects_bad_input() {
        let (s, _) = sphere_spec();
        let odd = ScalarField::from_fn(s.grid().clone(), |x| 4.0 + 0.1 * x[2]);
        assert!(matches!(chou_wang_check(&odd), Err(Error::NotEven { .. })));
        let dent = ScalarField::from_fn(s.grid().clone(), |x| 1.0 + 3.0 * x[2].powi(4));
        assert!(matches!(chou_wang_check(&dent), Err(Error::NotConvex { .. })));
    }

    #[test]
    fn gradient_bound_examples() {
        let (s, spec) = sphere_spec();
        assert_eq!(gradient_bound_report(&s, 0.5, &spec).unwrap(), 1.0);
        assert_eq!(gradient_bound_report(&s, 0.99, &spec).unwrap(), 1.0);
        assert!(matches!(
            gradient_bound_report(&s, 1.0, &spec),
            Err(Error::GammaOutOfRange { .. })
        ));
        assert!(gradient_bound_report(&s, 0.0, &spec).is_err());
    }

    #[test]
    fn newton_maclaurin_examples() {
        let (s, spec) = sphere_spec();
        let nm = newton_maclaurin_check(&s, &spec).unwrap();
        assert!(nm.ok);
        assert!((nm.min_slack - 1.0).abs() < 1e-12);
        let ident = newton_maclaurin_from(&[[2.0, 1.0]; 4], &[1.0; 4], &[1.0; 4], 2.7, 1);
        assert!(ident.ok);
        assert!((ident.min_slack - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_flags_bad_inputs() {
        let (s, spec) = sphere_spec();
        let rep = report_for_field(&s, &spec);
        assert!(rep.lemmas_ok() && rep.bounds_ok());
        assert_eq!(rep.evenness_defect, 0.0);
        assert_eq!(rep.beta_measured[0].beta, 1.0);

        let odd = ScalarField::from_fn(s.grid().clone(), |x| 4.0 + 0.1 * x[2]);
        let rep = report_for_field(&odd, &spec);
        assert!(rep.evenness_defect > 0.0);
        assert!(!rep.lemmas_ok());

        let dent = ScalarField::from_fn(s.grid().clone(), |x| 1.0 + 3.0 * x[2].powi(4));
        let rep = report_for_field(&dent, &spec);
        assert!(rep.convexity_margin < 0.0);
        assert!(rep.chou_wang.is_none());
    }
}
