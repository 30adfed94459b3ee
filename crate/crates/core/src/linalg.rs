//! Krylov solver and the longitude-mode preconditioner for second-order
//! operators on the grid.

use nalgebra::{DMatrix, DVector, LU};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use std::sync::Arc;

use crate::grid::SphericalGrid;

#[derive(Clone, Copy, Debug)]
pub(crate) struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES for `A x = b` with `x₀ = 0`.
///
/// Converges when `‖b - A x‖₂ ≤ tol ‖b‖₂`. When the iteration budget runs
/// out the last iterate is returned with `converged = false`.
pub(crate) fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: GmresOptions,
) -> Result<(Vec<f64>, GmresOutcome)> {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            GmresOutcome {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut r = b.to_vec();
    let mut beta = b_norm;

    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;

        for j in 0..m {
            let mut w = apply(&precond(&basis[j]));
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let wn = norm(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            if d == 0.0 {
                break;
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if !g[j + 1].is_finite() {
                return Err(Error::LinearSolveFailure {
                    iterations: total,
                    residual: f64::NAN,
                });
            }
            if g[j + 1].abs() <= opts.tol * b_norm || wn == 0.0 || total >= opts.max_iters {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }

        // back substitution on the triangular Hessenberg factor
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let tail: f64 = (i + 1..used).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - tail) / h[i][i];
        }
        let mut z = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            z.iter_mut().zip(v).for_each(|(zk, vk)| *zk += yi * vk);
        }
        let dx = precond(&z);
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);

        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        beta = norm(&r);
        let rel = beta / b_norm;
        if rel <= opts.tol {
            return Ok((
                x,
                GmresOutcome {
                    iterations: total,
                    relative_residual: rel,
                    converged: true,
                },
            ));
        }
        if !rel.is_finite() {
            return Err(Error::LinearSolveFailure {
                iterations: total,
                residual: rel,
            });
        }
        if total >= opts.max_iters || used == 0 {
            return Ok((
                x,
                GmresOutcome {
                    iterations: total,
                    relative_residual: rel,
                    converged: false,
                },
            ));
        }
    }
}

/// Coefficients of `η ↦ a11 η_θθ + 2 a12 ∇²η_12 + a22 ∇²η_22 - c η`.
pub(crate) struct OperatorCoefficients<'a> {
    pub a11: &'a [f64],
    pub a22: &'a [f64],
    pub c: &'a [f64],
}

/// Exact inverse of the operator with ring-averaged coefficients and no mixed
/// term. Such an operator commutes with rotations about the polar axis, so it
/// splits into one `n_theta × n_theta` system per longitudinal wavenumber.
pub(crate) struct ModePreconditioner {
    grid: Arc<SphericalGrid>,
    factors: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

/// The meridian matrix of `η ↦ a11 η_θθ + a22 (cot θ η_θ - m² η / sin²θ) - c η`
/// for wavenumber `m`, restricted to the wavenumbers the grid differentiates.
pub(crate) fn mode_operator(grid: &SphericalGrid, m: usize, a11: &[f64], a22: &[f64], c: &[f64]) -> DMatrix<f64> {
    let n = grid.n_theta();
    let d1 = grid.meridian_matrix(m as i64, 1);
    let d2 = grid.meridian_matrix(m as i64, 2);
    let (sin, cos) = (grid.sin_theta(), grid.cos_theta());
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let cot = cos[i] / sin[i];
        for col in 0..n {
            p[(i, col)] = a11[i] * d2[(i, col)] + a22[i] * cot * d1[(i, col)];
        }
        let mm = if m <= grid.ring_cutoff(i) { (m * m) as f64 } else { 0.0 };
        p[(i, i)] -= a22[i] * mm / (sin[i] * sin[i]) + c[i];
    }
    p
}

impl ModePreconditioner {
    pub fn new(grid: &Arc<SphericalGrid>, coef: &OperatorCoefficients<'_>) -> Result<Self> {
        let m = grid.n_phi();
        let ring_mean = |f: &[f64]| -> Vec<f64> { f.chunks(m).map(|r| r.iter().sum::<f64>() / m as f64).collect() };
        let a11 = ring_mean(coef.a11);
        let a22 = ring_mean(coef.a22);
        let c = ring_mean(coef.c);
        let factors = (0..=m / 2)
            .into_par_iter()
            .map(|k| mode_operator(grid, k, &a11, &a22, &c).lu())
            .collect::<Vec<_>>();
        if factors.iter().any(|lu| !lu.is_invertible()) {
            return Err(Error::LinearSolveFailure {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        Ok(Self {
            grid: grid.clone(),
            factors,
        })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let (n, m) = (grid.n_theta(), grid.n_phi());
        let spec = grid.ring_transform(r);
        let cols: Vec<(usize, Vec<Complex64>)> = (0..m)
            .into_par_iter()
            .map(|k| {
                let w = if k <= m / 2 { k } else { m - k };
                let lu = &self.factors[w];
                let re = DVector::from_iterator(n, (0..n).map(|i| spec[i * m + k].re));
                let im = DVector::from_iterator(n, (0..n).map(|i| spec[i * m + k].im));
                let xr = lu.solve(&re).expect("factor checked invertible");
                let xi = lu.solve(&im).expect("factor checked invertible");
                (k, (0..n).map(|i| Complex64::new(xr[i], xi[i])).collect())
            })
            .collect();
        let mut out = vec![Complex64::default(); n * m];
        for (k, col) in cols {
            for (i, v) in col.into_iter().enumerate() {
                out[i * m + k] = v;
            }
        }
        grid.ring_inverse(out)
    }
}
