//! The outer fixed-point map `φ_t(w) = log s^t` and its continuation from
//! `t = 0` to `t = 1`.
//!
//! For `v = e^w` and `f^t = t g_aux + 1 - t`, `s^t` solves the auxiliary
//! equation `F(∇²s + v g) = s^q f^t / v`. A fixed point `w = φ_1(w)` gives
//! `v = s`, and then `s` solves the target equation.

use std::f64::consts::PI;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{filter_poles, integrate, symmetrize_even, ScalarField, SphericalGrid};
use crate::harmonics::real_harmonic;
use crate::linalg::{gmres, mode_operator, GmresOptions};
use crate::pde::{
    linearized_operator, polish_main, relative_main_residual, residual_v_derivative, solve_auxiliary,
    solve_auxiliary_from, AuxState, ProblemSpec, SolveTrace, SolverConfig,
};
use crate::validators::{report_for_field, EstimateReport};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HomotopyConfig {
    pub initial_dt: f64,
    pub min_dt: f64,
    /// Picard mixing weight `α` for the non-constant part.
    pub damping: f64,
    /// Tolerance on `‖w - φ_1(w)‖_∞`.
    pub outer_tol: f64,
    /// Relative residual targeted by the final Newton iterations on the
    /// target equation.
    pub polish_tol: f64,
    /// Tolerance used at intermediate `t < 1`.
    pub intermediate_tol: f64,
    pub max_outer_iters: usize,
    /// Picard is abandoned for Newton–Krylov once the fixed-point residual
    /// shrinks by less than this factor per iteration.
    pub stagnation_ratio: f64,
    pub force: bool,
    pub solver: SolverConfig,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        Self {
            initial_dt: 0.5,
            min_dt: 1e-4,
            damping: 1.0,
            outer_tol: 1e-7,
            polish_tol: 1e-13,
            intermediate_tol: 1e-6,
            max_outer_iters: 200,
            stagnation_ratio: 0.9,
            force: false,
            solver: SolverConfig::default(),
        }
    }
}

impl HomotopyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidProblem(format!(
                "damping {} must lie in (0, 1]",
                self.damping
            )));
        }
        let positive = [
            self.initial_dt,
            self.min_dt,
            self.outer_tol,
            self.polish_tol,
            self.intermediate_tol,
            self.solver.newton_tol,
            self.solver.linear_tol,
        ];
        if positive.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidProblem("tolerances and steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct OuterRecord {
    pub t: f64,
    /// `‖w - φ_t(w)‖_∞` per outer iteration.
    pub fixed_point_residuals: Vec<f64>,
    pub newton_krylov: bool,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub s: ScalarField,
    pub spec: ProblemSpec,
    pub diagnostics: EstimateReport,
    pub trace: SolveTrace,
    pub outer: Vec<OuterRecord>,
    /// Relative target-equation residuals of the final Newton iterations.
    pub polish_residuals: Vec<f64>,
    /// `max |main residual| / max(s^{p-1} f)`.
    pub relative_residual: f64,
}

fn homotopy_density(spec: &ProblemSpec, t: f64) -> ScalarField {
    spec.g_aux().map(|g| t * g + (1.0 - t))
}

fn mean(u: &ScalarField) -> f64 {
    integrate(u) / (4.0 * PI)
}

/// `φ_t(w) = log s^t`.
pub fn phi_map(w: &ScalarField, t: f64, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<ScalarField> {
    let v = symmetrize_even(&w.map(f64::exp));
    let (s, _) = solve_auxiliary(&v, &homotopy_density(spec, t), spec, cfg)?;
    Ok(s.map(f64::ln))
}

struct Evaluator<'a> {
    spec: &'a ProblemSpec,
    cfg: &'a SolverConfig,
    trace: SolveTrace,
}

impl Evaluator<'_> {
    /// `(φ_t(w), s^t)`, warm-started from `s0`.
    fn eval(&mut self, w: &ScalarField, t: f64, s0: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        let v = symmetrize_even(&w.map(f64::exp));
        let f_t = homotopy_density(self.spec, t);
        let (s, tr) = solve_auxiliary_from(s0, &v, &f_t, self.spec, self.cfg)?;
        self.trace.extend(tr);
        Ok((s.map(f64::ln), s))
    }
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Solves `w = φ_t(w)` from `w` by damped Picard with an exact 1-D Newton
/// step on the constant mode, switching to Newton–Krylov on stagnation.
fn fixed_point(
    ev: &mut Evaluator<'_>,
    mut w: ScalarField,
    mut s: ScalarField,
    t: f64,
    tol: f64,
    cfg: &HomotopyConfig,
) -> (Result<(ScalarField, ScalarField)>, OuterRecord) {
    let mut rec = OuterRecord {
        t,
        ..Default::default()
    };
    // d mean(w - φ)/d mean(w) on constants at t = 0
    let mut slope = 1.0 - 2.0 / ev.spec.q();
    let mut prev: Option<(f64, f64)> = None;
    for it in 0..cfg.max_outer_iters {
        let (phi, s_new) = match ev.eval(&w, t, &s) {
            Ok(x) => x,
            Err(e) => return (Err(e), rec),
        };
        s = s_new;
        let g = w.zip_map(&phi, |a, b| a - b);
        let gn = g.sup_norm();
        rec.fixed_point_residuals.push(gn);
        debug!("outer t={t:.4} iter={it} |w - φ(w)| = {gn:e}");
        if gn <= tol {
            rec.converged = true;
            return (Ok((phi, s)), rec);
        }
        let hist = &rec.fixed_point_residuals;
        let stalled = hist.len() > 3 && {
            let n = hist.len();
            hist[n - 1] > cfg.stagnation_ratio * hist[n - 2] && hist[n - 2] > cfg.stagnation_ratio * hist[n - 3]
        };
        if stalled || !gn.is_finite() {
            rec.newton_krylov = true;
            let out = newton_krylov(ev, w, s, t, tol, cfg, &mut rec);
            return (out, rec);
        }

        let (mw, mg) = (mean(&w), mean(&g));
        if let Some((pw, pg)) = prev {
            let dw = mw - pw;
            if dw.abs() > 1e-12 * (1.0 + mw.abs()) {
                let secant = (mg - pg) / dw;
                // the non-constant update also moves the mean, so secants
                // far from the current slope are treated as noise
                let ratio = secant / slope;
                if secant.is_finite() && secant.abs() > 1e-3 && (0.25..=4.0).contains(&ratio) {
                    slope = secant;
                }
            }
        }
        prev = Some((mw, mg));
        let shift = -mg / slope;
        let alpha = cfg.damping;
        w = filter_poles(
            &ScalarField::new(
                w.grid().clone(),
                w.values()
                    .iter()
                    .zip(g.values())
                    .map(|(wi, gi)| wi - alpha * (gi - mg) + shift)
                    .collect(),
            )
            .unwrap_or_else(|_| w.clone()),
        );
    }
    rec.newton_krylov = true;
    let out = newton_krylov(ev, w, s, t, tol, cfg, &mut rec);
    (out, rec)
}

/// Newton's method on `G(w) = w - φ_t(w)` with directional finite
/// differences of `φ_t` inside GMRES.
fn newton_krylov(
    ev: &mut Evaluator<'_>,
    mut w: ScalarField,
    mut s: ScalarField,
    t: f64,
    tol: f64,
    cfg: &HomotopyConfig,
    rec: &mut OuterRecord,
) -> Result<(ScalarField, ScalarField)> {
    let grid = w.grid().clone();
    let (phi, s1) = ev.eval(&w, t, &s)?;
    s = s1;
    let mut phi = phi;
    let mut g = w.zip_map(&phi, |a, b| a - b);
    let mut gn = g.sup_norm();
    for _ in 0..cfg.max_outer_iters {
        if gn <= tol {
            rec.converged = true;
            return Ok((phi, s));
        }
        let err = std::cell::RefCell::new(None);
        let jv = |d: &[f64]| -> Vec<f64> {
            let dn = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if dn == 0.0 {
                return vec![0.0; d.len()];
            }
            let h = 1e-7 * (1.0 + w.sup_norm()) / dn;
            let wp = ScalarField::from_vec_unchecked(
                grid.clone(),
                w.values().iter().zip(d).map(|(a, b)| a + h * b).collect(),
            );
            let v = symmetrize_even(&wp.map(f64::exp));
            let f_t = homotopy_density(ev.spec, t);
            match solve_auxiliary_from(&s, &v, &f_t, ev.spec, ev.cfg) {
                Ok((sp, _)) => (0..d.len())
                    .map(|i| d[i] - (sp.values()[i].ln() - phi.values()[i]) / h)
                    .collect(),
                Err(e) => {
                    *err.borrow_mut() = Some(e);
                    vec![f64::NAN; d.len()]
                }
            }
        };
        let rhs: Vec<f64> = g.values().iter().map(|x| -x).collect();
        let solved = gmres(
            jv,
            |r: &[f64]| r.to_vec(),
            &rhs,
            GmresOptions {
                tol: 1e-4,
                restart: 30,
                max_iters: 60,
            },
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let (d, _) = solved?;
        let mut lambda = 1.0;
        loop {
            let wc = filter_poles(&ScalarField::from_vec_unchecked(
                grid.clone(),
                w.values().iter().zip(&d).map(|(a, b)| a + lambda * b).collect(),
            ));
            if let Ok((pc, sc)) = ev.eval(&wc, t, &s) {
                let gc = wc.zip_map(&pc, |a, b| a - b);
                let gcn = gc.sup_norm();
                if gcn < (1.0 - 1e-4 * lambda) * gn {
                    w = wc;
                    phi = pc;
                    s = sc;
                    g = gc;
                    gn = gcn;
                    rec.fixed_point_residuals.push(gn);
                    debug!("newton-krylov t={t:.4} |w - φ(w)| = {gn:e} (λ = {lambda})");
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1.0 / 64.0 {
                return Err(Error::HomotopyStalled { t, dt: 0.0 });
            }
        }
    }
    if gn <= tol {
        rec.converged = true;
        return Ok((phi, s));
    }
    Err(Error::MaxStepsExceeded {
        steps: cfg.max_outer_iters,
        t,
    })
}

fn polish_config(cfg: &SolverConfig) -> SolverConfig {
    SolverConfig {
        linear_tol: cfg.linear_tol.min(1e-10),
        ..cfg.clone()
    }
}

/// Solves the target equation by continuation in `t` of the fixed point of
/// `φ_t`, from `w = 0` at `t = 0`.
pub fn solve_main(spec: &ProblemSpec, cfg: &HomotopyConfig) -> Result<Solution> {
    cfg.validate()?;
    if spec.p() <= 1.0 {
        return Err(Error::InvalidProblem(format!(
            "p = {} is not supported; the method needs p > 1",
            spec.p()
        )));
    }
    if !spec.guarantee_regime() {
        if !cfg.force {
            return Err(Error::OutsideGuaranteeRegime {
                p: spec.p(),
                upper: spec.regime_upper(),
            });
        }
        warn!(
            "p = {} outside 1 < p < {}: no existence guarantee",
            spec.p(),
            spec.regime_upper()
        );
    }
    let grid = spec.grid().clone();
    let mut ev = Evaluator {
        spec,
        cfg: &cfg.solver,
        trace: SolveTrace::default(),
    };
    let mut outer = Vec::new();
    let mut w = ScalarField::constant(grid.clone(), 0.0);
    let mut s = ScalarField::constant(grid.clone(), 1.0);
    let mut t = 0.0;
    let mut dt = cfg.initial_dt.clamp(cfg.min_dt, 1.0);
    let mut fixed = None;
    while t < 1.0 {
        let next = (t + dt).min(1.0);
        let tol = if next >= 1.0 {
            cfg.outer_tol
        } else {
            cfg.intermediate_tol
        };
        let (out, rec) = fixed_point(&mut ev, w.clone(), s.clone(), next, tol, cfg);
        outer.push(rec);
        match out {
            Ok((phi, sn)) => {
                info!("homotopy reached t = {next:.4}");
                w = phi;
                s = sn;
                t = next;
                dt = (2.0 * dt).min(1.0);
                if t >= 1.0 {
                    fixed = Some(s.clone());
                }
            }
            Err(e @ Error::InvalidProblem(_)) => return Err(e),
            Err(e) => {
                dt *= 0.5;
                debug!("homotopy step to t = {next:.4} failed ({e}); dt -> {dt:e}");
                if dt < cfg.min_dt {
                    return Err(Error::HomotopyStalled { t, dt });
                }
            }
        }
    }
    let s = fixed.expect("loop exits at t = 1");
    let (s, polish) = polish_main(&s, spec, &polish_config(&cfg.solver), cfg.polish_tol)?;
    debug!("target-equation residual history {polish:?}");
    let relative_residual = relative_main_residual(&s, spec)?;
    let diagnostics = report_for_field(&s, spec);
    Ok(Solution {
        s,
        spec: spec.clone(),
        diagnostics,
        trace: ev.trace,
        outer,
        polish_residuals: polish,
        relative_residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumRow {
    pub ell: usize,
    pub computed: f64,
    pub analytic: f64,
    /// `‖A Y - λ Y‖_∞ / ‖Y‖_∞` for the sampled harmonic.
    pub eigen_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumReport {
    pub q: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub rows: Vec<SpectrumRow>,
    /// Eigenvalues of the discrete linearization with real part above one.
    pub above_one: usize,
    pub max_error: f64,
}

impl SpectrumReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_error <= tol && self.above_one == 1
    }
}

/// `(cn + 1)/(q + c ℓ(ℓ + n - 1))` with `c = 1/n`, `n = 2`.
pub fn model_eigenvalue(q: f64, ell: usize) -> f64 {
    2.0 / (q + (ell * (ell + 1)) as f64 / 2.0)
}

/// Linearization of `φ_0` at its fixed point `w = 0`, where the auxiliary
/// solution is `s ≡ 1`, checked against the model eigenvalues.
pub fn model_spectrum_check(grid: &std::sync::Arc<SphericalGrid>, q: f64, ell_max: usize) -> Result<SpectrumReport> {
    if !(q > 0.0) {
        return Err(Error::InvalidProblem(format!("q = {q} must be positive")));
    }
    let one = ScalarField::constant(grid.clone(), 1.0);
    let spec = ProblemSpec::new(2, 1, q, one.clone())?;
    let state = AuxState::new(one.clone(), one.clone(), 0.0);
    let op = linearized_operator(&state, &spec, &one)?;
    let pre = op.preconditioner()?;
    // φ'ω = -L⁻¹(∂_v R · v ω) / s with v = s = 1
    let apply = |omega: &ScalarField| -> Result<ScalarField> {
        let rhs = residual_v_derivative(&state, &spec, &one, omega)?;
        let (eta, out) = gmres(
            |x| op.apply_slice(x),
            |r| pre.apply(r),
            rhs.values(),
            GmresOptions {
                tol: 1e-12,
                restart: 60,
                max_iters: 600,
            },
        )?;
        if !out.converged {
            return Err(Error::LinearSolveFailure {
                iterations: out.iterations,
                residual: out.relative_residual,
            });
        }
        Ok(ScalarField::from_vec_unchecked(
            grid.clone(),
            eta.iter().map(|x| -x).collect(),
        ))
    };

    let mut rows = Vec::new();
    for ell in 0..=ell_max {
        let mut computed = 0.0;
        let mut eigen_residual = 0.0f64;
        let mut worst = -1.0f64;
        for m in -(ell as i64)..=(ell as i64) {
            let y = ScalarField::from_angles(grid.clone(), |th, ph| real_harmonic(ell, m, th, ph));
            let ay = apply(&y)?;
            let lambda = integrate(&y.zip_map(&ay, |a, b| a * b)) / integrate(&y.zip_map(&y, |a, b| a * b));
            let res = sup_diff(&ay, &y.map(|x| lambda * x)) / y.sup_norm();
            let err = (lambda - model_eigenvalue(q, ell)).abs();
            eigen_residual = eigen_residual.max(res);
            if err > worst {
                worst = err;
                computed = lambda;
            }
        }
        rows.push(SpectrumRow {
            ell,
            computed,
            analytic: model_eigenvalue(q, ell),
            eigen_residual,
        });
    }

    // The operator has constant coefficients, so it splits by wavenumber.
    let (n, mphi) = (grid.n_theta(), grid.n_phi());
    let fm = op.coefficients()[0];
    let zeroth = op.zeroth_order()[0];
    let dv = fm[0] + fm[2] + 1.0;
    let a11 = vec![fm[0]; n];
    let a22 = vec![fm[2]; n];
    let c = vec![zeroth; n];
    let mut above_one = 0;
    for k in 0..=mphi / 2 {
        let p: DMatrix<f64> = mode_operator(grid, k, &a11, &a22, &c);
        let count = p
            .complex_eigenvalues()
            .iter()
            .filter(|mu| {
                let lam = -dv / **mu;
                lam.re > 1.0
            })
            .count();
        let copies = if k == 0 || k == mphi / 2 { 1 } else { 2 };
        above_one += copies * count;
    }
    let max_error = rows
        .iter()
        .map(|r| (r.computed - r.analytic).abs().max(r.eigen_residual))
        .fold(0.0, f64::max);
    Ok(SpectrumReport {
        q,
        n_theta: grid.n_theta(),
        n_phi: grid.n_phi(),
        rows,
        above_one,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_eigenvalues() {
        assert!((model_eigenvalue(1.5, 0) - 4.0 / 3.0).abs() < 1e-15);
        assert!((model_eigenvalue(1.5, 1) - 0.8).abs() < 1e-15);
        assert!((model_eigenvalue(1.5, 2) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn phi_map_at_t_zero() {
        let g = SphericalGrid::new(16, 32).unwrap();
        let spec = ProblemSpec::new(2, 1, 1.5, ScalarField::constant(g.clone(), 1.0)).unwrap();
        let cfg = SolverConfig::default();
        let zero = ScalarField::constant(g.clone(), 0.0);
        assert!(phi_map(&zero, 0.0, &spec, &cfg).unwrap().sup_norm() < 1e-12);
        let a: f64 = 3.0;
        let out = phi_map(&ScalarField::constant(g, a.ln()), 0.0, &spec, &cfg).unwrap();
        let want = 2.0 / 1.5 * a.ln();
        assert!(out.values().iter().all(|x| (x - want).abs() < 1e-10));
    }

    #[test]
    fn spectrum_at_small_grid() {
        let g = SphericalGrid::new(16, 32).unwrap();
        let rep = model_spectrum_check(&g, 1.5, 4).map_err(|e| e.to_string()).unwrap();
        assert!(rep.passes(1e-8), "{rep:?}");
    }

    #[test]
    fn regime_gate() {
        let g = SphericalGrid::new(8, 16).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let spec = ProblemSpec::new(2, 1, 2.0, one.clone()).unwrap();
        assert!(matches!(
            solve_main(&spec, &HomotopyConfig::default()),
            Err(Error::OutsideGuaranteeRegime { .. })
        ));
        let spec = ProblemSpec::new(2, 1, 0.5, one).unwrap();
        let cfg = HomotopyConfig {
            force: true,
            ..Default::default()
        };
        assert!(matches!(solve_main(&spec, &cfg), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn sphere_solution() {
        let g = SphericalGrid::new(16, 32).unwrap();
        let spec = ProblemSpec::new(2, 1, 1.5, ScalarField::constant(g, 1.0)).unwrap();
        let sol = solve_main(&spec, &HomotopyConfig::default()).unwrap();
        for &x in sol.s.values() {
            assert!((x - 4.0).abs() < 4e-9, "{x}");
        }
        assert_eq!(sol.s.evenness_defect(), 0.0);
    }
}
