//! Residuals, linearization and the Newton solver of the auxiliary equation
//!
//! ```text
//! F(∇²s + v g) = s^q f / v,    q = (p - 1)/k + 1,
//! ```
//!
//! where `F = (C(n,k) σ_n/σ_{n-k})^{1/k}` is normalized so that `F(I) = 1`.

use std::sync::Arc;

use log::{debug, trace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, binomial, curvature_quotient, principal_radii, CurvatureEval};
use crate::grid::{covariant_hessian, filter_poles, symmetrize_even, ScalarField, SphericalGrid, SymTensorField};
use crate::linalg::{gmres, GmresOptions, GmresOutcome, ModePreconditioner, OperatorCoefficients};

/// Largest relative linear residual at which an unconverged Krylov solve
/// still supplies a Newton direction.
const INEXACT_STEP_TOL: f64 = 0.1;

fn usable_step((x, out): (Vec<f64>, GmresOutcome)) -> Result<(Vec<f64>, GmresOutcome)> {
    if out.converged || out.relative_residual <= INEXACT_STEP_TOL {
        if !out.converged {
            debug!(
                "using inexact Newton direction (linear residual {:e} after {} iterations)",
                out.relative_residual, out.iterations
            );
        }
        Ok((x, out))
    } else {
        Err(Error::LinearSolveFailure {
            iterations: out.iterations,
            residual: out.relative_residual,
        })
    }
}

/// Largest antipodal defect, relative to `max |f|`, accepted as even input.
pub const EVENNESS_TOL: f64 = 1e-10;

/// The target problem `σ_n/σ_{n-k}(τ[s]) = s^{p-1} f`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    n: usize,
    k: usize,
    p: f64,
    f: ScalarField,
    q: f64,
    g_aux: ScalarField,
}

impl ProblemSpec {
    /// Validates the data and symmetrizes `f` so that it is exactly even.
    pub fn new(n: usize, k: usize, p: f64, f: ScalarField) -> Result<Self> {
        if n != geom::DIM {
            return Err(Error::InvalidProblem(format!(
                "only n = {} is discretized, got n = {n}",
                geom::DIM
            )));
        }
        if k == 0 || k >= n {
            return Err(Error::InvalidProblem(format!("k = {k} must satisfy 1 <= k < n = {n}")));
        }
        if !p.is_finite() {
            return Err(Error::InvalidProblem(format!("p = {p} is not finite")));
        }
        if let Some(node) = f.values().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::InvalidProblem(format!(
                "f must be positive; f = {} at node {node}",
                f.values()[node]
            )));
        }
        let defect = f.evenness_defect();
        if defect > EVENNESS_TOL * f.sup_norm() {
            return Err(Error::NotEven { defect });
        }
        let f = symmetrize_even(&f);
        let kf = k as f64;
        let c = binomial(n, k);
        let g_aux = f.map(|x| (c * x).powf(1.0 / kf));
        Ok(Self {
            n,
            k,
            p,
            f,
            q: (p - 1.0) / kf + 1.0,
            g_aux,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    /// `(C(n,k) f)^{1/k}`, the density whose auxiliary fixed point solves the
    /// target equation.
    pub fn g_aux(&self) -> &ScalarField {
        &self.g_aux
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        self.f.grid()
    }

    /// Upper end `k + 1` of the existence range for `p`.
    pub fn regime_upper(&self) -> f64 {
        self.k as f64 + 1.0
    }

    /// `1 < p < k + 1`.
    pub fn guarantee_regime(&self) -> bool {
        self.p > 1.0 && self.p < self.regime_upper()
    }

    /// The same problem with `f` replaced.
    pub fn with_f(&self, f: ScalarField) -> Result<Self> {
        Self::new(self.n, self.k, self.p, f)
    }
}

/// An iterate of the auxiliary problem.
#[derive(Clone, Debug)]
pub struct AuxState {
    pub s: ScalarField,
    pub v: ScalarField,
    pub t: f64,
    pub residual_norm: f64,
}

impl AuxState {
    pub fn new(s: ScalarField, v: ScalarField, t: f64) -> Self {
        Self {
            s,
            v,
            t,
            residual_norm: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolverConfig {
    /// Newton stops once `‖R‖_∞ ≤ newton_tol · ‖s^q f/v‖_∞`.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub initial_dt: f64,
    pub min_dt: f64,
    pub max_steps: usize,
    /// Relative tolerance of each inner linear solve.
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub max_linear_iters: usize,
    /// Smallest line-search damping before a Newton step is declared failed.
    pub min_damping: f64,
    /// A residual within this factor of the tolerance that no longer
    /// decreases is accepted as the discretization's roundoff floor.
    pub stagnation_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 40,
            initial_dt: 1.0,
            min_dt: 1e-4,
            max_steps: 200,
            linear_tol: 1e-7,
            gmres_restart: 100,
            max_linear_iters: 1200,
            min_damping: 1.0 / 64.0,
            stagnation_factor: 100.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub newton_iterations: usize,
    pub residual_norms: Vec<f64>,
    pub convexity_margin: f64,
    pub damping: Vec<f64>,
    pub linear_iterations: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SolveTrace {
    pub steps: Vec<StepRecord>,
}

impl SolveTrace {
    pub fn total_newton_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.newton_iterations).sum()
    }

    pub fn extend(&mut self, other: SolveTrace) {
        self.steps.extend(other.steps);
    }
}

fn check_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if !Arc::ptr_eq(a.grid(), b.grid()) {
        return Err(Error::FieldMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `σ_n/σ_{n-k}(τ[s]) - s^{p-1} f` with the raw quotient.
pub fn main_residual(s: &ScalarField, spec: &ProblemSpec) -> Result<ScalarField> {
    check_grid(s, spec.f())?;
    let raw = geom::raw_quotient(&geom::tau_field(s), spec.k())?;
    let p1 = spec.p() - 1.0;
    let values = raw
        .values()
        .iter()
        .zip(s.values())
        .zip(spec.f().values())
        .map(|((r, si), fi)| r - si.powf(p1) * fi)
        .collect();
    Ok(ScalarField::from_vec_unchecked(s.grid().clone(), values))
}

/// `max |main_residual| / max(s^{p-1} f)`.
pub fn relative_main_residual(s: &ScalarField, spec: &ProblemSpec) -> Result<f64> {
    let r = main_residual(s, spec)?;
    let p1 = spec.p() - 1.0;
    let scale = s
        .values()
        .iter()
        .zip(spec.f().values())
        .fold(0.0f64, |m, (si, fi)| m.max(si.powf(p1) * fi));
    Ok(r.sup_norm() / scale)
}

struct AuxEval {
    residual: Vec<f64>,
    curv: CurvatureEval,
    tau: SymTensorField,
    /// `s^q f_t / v`
    rhs: Vec<f64>,
}

fn evaluate(s: &ScalarField, v: &ScalarField, f_t: &ScalarField, spec: &ProblemSpec) -> Result<AuxEval> {
    check_grid(s, v)?;
    check_grid(s, f_t)?;
    if let Some(node) = s.values().iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NotInCone {
            node,
            lambda_min: s.values()[node],
        });
    }
    let tau = covariant_hessian(s).add_metric(v);
    let curv = curvature_quotient(&tau, spec.k())?;
    let q = spec.q();
    let rhs: Vec<f64> = (0..s.len())
        .into_par_iter()
        .map(|i| s.values()[i].powf(q) * f_t.values()[i] / v.values()[i])
        .collect();
    let residual = curv.f_value.values().iter().zip(&rhs).map(|(a, b)| a - b).collect();
    Ok(AuxEval {
        residual,
        curv,
        tau,
        rhs,
    })
}

/// `F(∇²s + v g) - s^q f_t / v`.
pub fn aux_residual(state: &AuxState, spec: &ProblemSpec, f_t: &ScalarField) -> Result<ScalarField> {
    let e = evaluate(&state.s, &state.v, f_t, spec)?;
    Ok(ScalarField::from_vec_unchecked(state.s.grid().clone(), e.residual))
}

/// `η ↦ F^{ij} η_{;ij} - q s^{q-1} (f_t/v) η` at a fixed state.
pub struct LinearizedOperator {
    grid: Arc<SphericalGrid>,
    f_matrix: Vec<[f64; 3]>,
    zeroth: Vec<f64>,
}

impl LinearizedOperator {
    fn from_eval(s: &ScalarField, e: &AuxEval, spec: &ProblemSpec) -> Self {
        let q = spec.q();
        let zeroth = e.rhs.iter().zip(s.values()).map(|(r, si)| q * r / si).collect();
        Self {
            grid: s.grid().clone(),
            f_matrix: e.curv.f_matrix.components().to_vec(),
            zeroth,
        }
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    /// `F^{ij}` in the frame as `(F^11, F^12, F^22)`.
    pub fn coefficients(&self) -> &[[f64; 3]] {
        &self.f_matrix
    }

    /// The zeroth-order coefficient `q s^{q-1} f_t / v`.
    pub fn zeroth_order(&self) -> &[f64] {
        &self.zeroth
    }

    pub fn apply(&self, eta: &ScalarField) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid.clone(), self.apply_slice(eta.values()))
    }

    pub(crate) fn apply_slice(&self, eta: &[f64]) -> Vec<f64> {
        let d = self.grid.partials(eta);
        (0..eta.len())
            .into_par_iter()
            .map(|i| {
                let h = self.grid.hessian_components(&d, i);
                let a = self.f_matrix[i];
                a[0] * h[0] + 2.0 * a[1] * h[1] + a[2] * h[2] - self.zeroth[i] * eta[i]
            })
            .collect()
    }

    pub(crate) fn preconditioner(&self) -> Result<ModePreconditioner> {
        let a11: Vec<f64> = self.f_matrix.iter().map(|a| a[0]).collect();
        let a22: Vec<f64> = self.f_matrix.iter().map(|a| a[2]).collect();
        ModePreconditioner::new(
            &self.grid,
            &OperatorCoefficients {
                a11: &a11,
                a22: &a22,
                c: &self.zeroth,
            },
        )
    }

    /// Solves `L x = b` by preconditioned GMRES.
    pub fn solve(&self, b: &ScalarField, cfg: &SolverConfig) -> Result<ScalarField> {
        let pre = self.preconditioner()?;
        let (x, out) = self.solve_with(&pre, b.values(), cfg, 0.0)?;
        if !out.converged {
            return Err(Error::LinearSolveFailure {
                iterations: out.iterations,
                residual: out.relative_residual,
            });
        }
        Ok(ScalarField::from_vec_unchecked(self.grid.clone(), x))
    }

    /// GMRES to relative tolerance `cfg.linear_tol`, or until the residual's
    /// 2-norm drops below `abs_tol`.
    fn solve_with(
        &self,
        pre: &ModePreconditioner,
        b: &[f64],
        cfg: &SolverConfig,
        abs_tol: f64,
    ) -> Result<(Vec<f64>, GmresOutcome)> {
        let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tol = if b_norm > 0.0 {
            cfg.linear_tol.max(abs_tol / b_norm)
        } else {
            cfg.linear_tol
        };
        gmres(
            |x| self.apply_slice(x),
            |r| pre.apply(r),
            b,
            GmresOptions {
                tol,
                restart: cfg.gmres_restart,
                max_iters: cfg.max_linear_iters,
            },
        )
    }
}

pub fn linearized_operator(state: &AuxState, spec: &ProblemSpec, f_t: &ScalarField) -> Result<LinearizedOperator> {
    let e = evaluate(&state.s, &state.v, f_t, spec)?;
    Ok(LinearizedOperator::from_eval(&state.s, &e, spec))
}

/// Linearization of [`main_residual`] at `s`:
/// `η ↦ R^{ij}(η_{;ij} + η g_{ij}) - (p-1) s^{p-2} f η`, where `R^{ij}` is the
/// derivative of the raw quotient.
pub fn main_linearization(s: &ScalarField, spec: &ProblemSpec) -> Result<LinearizedOperator> {
    check_grid(s, spec.f())?;
    let curv = curvature_quotient(&geom::tau_field(s), spec.k())?;
    let kf = spec.k() as f64;
    let c = binomial(spec.n(), spec.k());
    let p1 = spec.p() - 1.0;
    let (f_matrix, zeroth): (Vec<[f64; 3]>, Vec<f64>) = (0..s.len())
        .map(|i| {
            let fv = curv.f_value.values()[i];
            let scale = kf * fv.powf(kf - 1.0) / c;
            let a = curv.f_matrix.components()[i].map(|x| scale * x);
            let si = s.values()[i];
            let z = p1 * si.powf(p1 - 1.0) * spec.f().values()[i] - (a[0] + a[2]);
            (a, z)
        })
        .unzip();
    Ok(LinearizedOperator {
        grid: s.grid().clone(),
        f_matrix,
        zeroth,
    })
}

/// Newton iterations on the target equation from a nearby `s0` until the
/// relative residual reaches `tol` or stops decreasing. Returns the iterate
/// and its relative residual history.
pub fn polish_main(
    s0: &ScalarField,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    tol: f64,
) -> Result<(ScalarField, Vec<f64>)> {
    let mut s = filter_poles(s0);
    let mut r = main_residual(&s, spec)?;
    let mut rel = relative_main_residual(&s, spec)?;
    let mut hist = vec![rel];
    for _ in 0..cfg.max_newton_iters {
        if rel <= tol {
            break;
        }
        let op = main_linearization(&s, spec)?;
        let pre = op.preconditioner()?;
        let forcing = 1e-3 * r.sup_norm();
        let (delta, _) = usable_step(op.solve_with(&pre, r.values(), cfg, forcing)?)?;
        let mut alpha = 1.0;
        let accepted = loop {
            let cand = filter_poles(&ScalarField::from_vec_unchecked(
                s.grid().clone(),
                s.values().iter().zip(&delta).map(|(a, d)| a - alpha * d).collect(),
            ));
            if let (Ok(rc), Ok(relc)) = (main_residual(&cand, spec), relative_main_residual(&cand, spec)) {
                if relc < (1.0 - 1e-4 * alpha) * rel {
                    break Some((cand, rc, relc));
                }
            }
            alpha *= 0.5;
            if alpha < cfg.min_damping {
                break None;
            }
        };
        let Some((cand, rc, relc)) = accepted else {
            debug!("main newton stopped at relative residual {rel:e}");
            break;
        };
        trace!("main newton: {rel:e} -> {relc:e} (alpha {alpha})");
        let stalled = relc > 0.5 * rel;
        s = cand;
        r = rc;
        rel = relc;
        hist.push(rel);
        if stalled {
            break;
        }
    }
    Ok((s, hist))
}

/// Derivative of the auxiliary residual in `v` applied to `ω`:
/// `(tr F^{ij} + s^q f_t / v²) ω`.
pub fn residual_v_derivative(
    state: &AuxState,
    spec: &ProblemSpec,
    f_t: &ScalarField,
    omega: &ScalarField,
) -> Result<ScalarField> {
    let e = evaluate(&state.s, &state.v, f_t, spec)?;
    let values = (0..omega.len())
        .map(|i| {
            let a = e.curv.f_matrix.components()[i];
            (a[0] + a[2] + e.rhs[i] / state.v.values()[i]) * omega.values()[i]
        })
        .collect();
    Ok(ScalarField::from_vec_unchecked(omega.grid().clone(), values))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn check_data(v: &ScalarField, f: &ScalarField) -> Result<()> {
    check_grid(v, f)?;
    for (name, x) in [("v", v), ("f", f)] {
        if let Some(node) = x.values().iter().position(|&y| !(y > 0.0)) {
            return Err(Error::InvalidProblem(format!(
                "{name} must be positive; {name} = {} at node {node}",
                x.values()[node]
            )));
        }
        let defect = x.evenness_defect();
        if defect > EVENNESS_TOL * x.sup_norm() {
            return Err(Error::NotEven { defect });
        }
    }
    Ok(())
}

/// Damped Newton on the auxiliary equation at fixed data.
fn newton(
    s0: ScalarField,
    v: &ScalarField,
    f_t: &ScalarField,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    t: f64,
) -> (Result<ScalarField>, StepRecord) {
    let mut rec = StepRecord {
        t,
        ..Default::default()
    };
    let mut s = filter_poles(&s0);
    let mut e = match evaluate(&s, v, f_t, spec) {
        Ok(e) => e,
        Err(err) => return (Err(err), rec),
    };
    let mut r = sup(&e.residual);
    rec.residual_norms.push(r);
    for iter in 0..=cfg.max_newton_iters {
        let tol = cfg.newton_tol * sup(&e.rhs);
        if r <= tol {
            rec.newton_iterations = iter;
            rec.convexity_margin = principal_radii(&e.tau).min_radius();
            return (Ok(s), rec);
        }
        if iter == cfg.max_newton_iters {
            break;
        }
        let op = LinearizedOperator::from_eval(&s, &e, spec);
        let step = op
            .preconditioner()
            .and_then(|pre| op.solve_with(&pre, &e.residual, cfg, 0.1 * tol))
            .and_then(usable_step);
        let (delta, outcome) = match step {
            Ok(x) => x,
            Err(err) => return (Err(err), rec),
        };
        rec.linear_iterations += outcome.iterations;
        trace!(
            "gmres: {} iterations, relative residual {:e}",
            outcome.iterations,
            outcome.relative_residual
        );

        let mut alpha = 1.0;
        let accepted = loop {
            let cand = ScalarField::from_vec_unchecked(
                s.grid().clone(),
                s.values().iter().zip(&delta).map(|(a, d)| a - alpha * d).collect(),
            );
            let cand = filter_poles(&cand);
            if let Ok(ce) = evaluate(&cand, v, f_t, spec) {
                let rc = sup(&ce.residual);
                if rc.is_finite() && rc < (1.0 - 1e-4 * alpha) * r {
                    break Some((cand, ce, rc));
                }
            }
            alpha *= 0.5;
            if alpha < cfg.min_damping {
                break None;
            }
        };
        match accepted {
            Some((cand, ce, rc)) => {
                trace!("newton t={t:.4} iter={iter} residual {r:e} -> {rc:e} (alpha {alpha})");
                s = cand;
                e = ce;
                r = rc;
                rec.damping.push(alpha);
                rec.residual_norms.push(r);
            }
            None if r <= cfg.stagnation_factor * tol => {
                debug!("newton stagnated at roundoff floor {r:e} (tol {tol:e})");
                rec.newton_iterations = iter;
                rec.convexity_margin = principal_radii(&e.tau).min_radius();
                return (Ok(s), rec);
            }
            None => return (Err(Error::ConeExit { t }), rec),
        }
    }
    rec.newton_iterations = cfg.max_newton_iters;
    (
        Err(Error::MaxStepsExceeded {
            steps: cfg.max_newton_iters,
            t,
        }),
        rec,
    )
}

fn blend(a: &ScalarField, t: f64) -> ScalarField {
    a.map(|x| t * x + (1.0 - t))
}

/// Solves `F(∇²s + v g) = s^q f / v` by continuation from `v = f = 1`,
/// where `s ≡ 1` is the solution, along `v^t = t v + 1 - t`,
/// `f^t = t f + 1 - t`.
pub fn solve_auxiliary(
    v: &ScalarField,
    f_target: &ScalarField,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<(ScalarField, SolveTrace)> {
    check_data(v, f_target)?;
    let mut trace = SolveTrace::default();
    let mut s = ScalarField::constant(v.grid().clone(), 1.0);
    let mut t = 0.0;
    let mut dt = cfg.initial_dt.clamp(cfg.min_dt, 1.0);
    let mut attempts = 0;
    while t < 1.0 {
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                steps: cfg.max_steps,
                t,
            });
        }
        let next = (t + dt).min(1.0);
        let (vt, ft) = (blend(v, next), blend(f_target, next));
        let (out, rec) = newton(s.clone(), &vt, &ft, spec, cfg, next);
        trace.steps.push(rec);
        match out {
            Ok(sn) => {
                s = sn;
                t = next;
                dt = (2.0 * dt).min(1.0);
            }
            Err(err @ (Error::InvalidProblem(_) | Error::FieldMismatch { .. })) => return Err(err),
            Err(err) => {
                dt *= 0.5;
                debug!("auxiliary continuation: step to t={next:.4} failed ({err}); dt -> {dt:e}");
                if dt < cfg.min_dt {
                    return Err(err);
                }
            }
        }
    }
    Ok((s, trace))
}

/// Newton from `s0` directly at the target data, falling back to
/// [`solve_auxiliary`] if that fails.
pub fn solve_auxiliary_from(
    s0: &ScalarField,
    v: &ScalarField,
    f_target: &ScalarField,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<(ScalarField, SolveTrace)> {
    check_data(v, f_target)?;
    let (out, rec) = newton(s0.clone(), v, f_target, spec, cfg, 1.0);
    match out {
        Ok(s) => Ok((s, SolveTrace { steps: vec![rec] })),
        Err(err) => {
            debug!("warm start failed ({err}); restarting continuation");
            let (s, mut trace) = solve_auxiliary(v, f_target, spec, cfg)?;
            trace.steps.insert(0, rec);
            Ok((s, trace))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<SphericalGrid> {
        SphericalGrid::new(16, 32).unwrap()
    }

    fn spec(g: &Arc<SphericalGrid>, p: f64) -> ProblemSpec {
        ProblemSpec::new(2, 1, p, ScalarField::constant(g.clone(), 1.0)).unwrap()
    }

    #[test]
    fn spec_validation() {
        let g = grid();
        let one = ScalarField::constant(g.clone(), 1.0);
        assert!(ProblemSpec::new(3, 1, 1.5, one.clone()).is_err());
        assert!(ProblemSpec::new(2, 2, 1.5, one.clone()).is_err());
        assert!(ProblemSpec::new(2, 1, 1.5, one.map(|x| x - 1.0)).is_err());
        let odd = ScalarField::from_fn(g.clone(), |x| 2.0 + x[2]);
        assert!(matches!(ProblemSpec::new(2, 1, 1.5, odd), Err(Error::NotEven { .. })));
        let s = spec(&g, 1.5);
        assert!(s.guarantee_regime());
        assert!((s.q() - 1.5).abs() < 1e-15);
        assert!(s.g_aux().values().iter().all(|&x| x == 2.0));
        assert!(!spec(&g, 2.0).guarantee_regime());
        assert!(!spec(&g, 1.0).guarantee_regime());
    }

    #[test]
    fn main_residual_examples() {
        let g = grid();
        let sp = spec(&g, 1.5);
        let r = main_residual(&ScalarField::constant(g.clone(), 4.0), &sp).unwrap();
        assert!(r.sup_norm() < 1e-14);
        let r = main_residual(&ScalarField::constant(g.clone(), 1.0), &sp).unwrap();
        assert!(r.values().iter().all(|&x| (x + 0.5).abs() < 1e-14));
    }

    #[test]
    fn aux_residual_examples() {
        let g = grid();
        let sp = spec(&g, 1.5);
        let one = ScalarField::constant(g.clone(), 1.0);
        let st = AuxState::new(one.clone(), one.clone(), 0.0);
        assert!(aux_residual(&st, &sp, &one).unwrap().sup_norm() < 1e-14);
        let a: f64 = 3.0;
        let st = AuxState::new(
            ScalarField::constant(g.clone(), a.powf(2.0 / 1.5)),
            ScalarField::constant(g.clone(), a),
            0.0,
        );
        assert!(aux_residual(&st, &sp, &one).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn linearization_at_identity() {
        let g = grid();
        let sp = spec(&g, 1.5);
        let one = ScalarField::constant(g.clone(), 1.0);
        let op = linearized_operator(&AuxState::new(one.clone(), one.clone(), 0.0), &sp, &one).unwrap();
        assert!(op.apply(&one).values().iter().all(|&x| (x + 1.5).abs() < 1e-13));
        let z = ScalarField::from_fn(g.clone(), |x| x[2]);
        let lz = op.apply(&z);
        for (a, b) in lz.values().iter().zip(z.values()) {
            assert!((a + 2.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_solves() {
        let g = grid();
        let sp = spec(&g, 1.5);
        let cfg = SolverConfig::default();
        let one = ScalarField::constant(g.clone(), 1.0);
        let (s, _) = solve_auxiliary(&one, &one, &sp, &cfg).unwrap();
        assert!(s.values().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let two = ScalarField::constant(g.clone(), 2.0);
        let (s, tr) = solve_auxiliary(&two, &one, &sp, &cfg).unwrap();
        let want = 2f64.powf(4.0 / 3.0);
        assert!(s.values().iter().all(|&x| (x - want).abs() < 1e-10 * want));
        assert!(!tr.steps.is_empty());
    }
}
