//! Collocation grid on the unit sphere.
//!
//! Nodes are a tensor product of `n_theta` colatitudes `θ_i = (i + ½)π / n_theta`
//! and `n_phi` uniform longitudes `φ_j = 2πj / n_phi`. No node sits on a pole and
//! the colatitudes are symmetric about the equator, so with `n_phi` even every
//! node has its antipode `(π - θ, φ + π)` on the grid.
//!
//! Differentiation is spectral in both directions. Longitudes use the ring FFT.
//! Colatitudes use the double Fourier sphere construction: the meridian at `φ`
//! is glued to the meridian at `φ + π` through both poles, which gives a periodic
//! function on a great circle sampled at `2 n_theta` equispaced points. Any
//! smooth function on the sphere is smooth along that circle, so FFT
//! differentiation there is exact for spherical harmonics of degree below
//! `n_theta` and no `cot θ` factor is ever evaluated at a pole.
//!
//! Quadrature uses Fejér's first rule in `cos θ` times the trapezoid rule in
//! `φ`; it integrates band-limited functions up to degree `n_theta - 1` exactly.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Differentiation is exact on spherical harmonics of degree `< n_theta`;
/// for smooth non-band-limited data the error decays faster than any power
/// of the mesh width. Refinement studies assert at least this algebraic rate.
pub const MIN_CONVERGENCE_ORDER: u32 = 2;

pub struct SphericalGrid {
    n_theta: usize,
    n_phi: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
    weights: Vec<f64>,
    antipode: Vec<usize>,
    /// Largest longitudinal wavenumber kept in `∂_φ` on each ring.
    ring_cutoff: Vec<usize>,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
    /// `(sin φ_j, cos φ_j)`, exactly negated between `j` and `j + n_phi/2`.
    sincos_phi: Vec<(f64, f64)>,
    ring_fwd: Arc<dyn Fft<f64>>,
    ring_inv: Arc<dyn Fft<f64>>,
    circle_fwd: Arc<dyn Fft<f64>>,
    circle_inv: Arc<dyn Fft<f64>>,
    /// Meridian differentiation matrices `[parity][order - 1]` acting on a
    /// single longitudinal Fourier mode; parity 0 is even wavenumber.
    meridian: [[DMatrix<f64>; 2]; 2],
}

impl fmt::Debug for SphericalGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphericalGrid")
            .field("n_theta", &self.n_theta)
            .field("n_phi", &self.n_phi)
            .finish()
    }
}

/// Fejér's first rule on `[-1, 1]` at the nodes `cos((i + ½)π / n)`.
fn fejer_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let th = (i as f64 + 0.5) * PI / n as f64;
            let tail: f64 = (1..=n / 2)
                .map(|j| {
                    let j = j as f64;
                    (2.0 * j * th).cos() / (4.0 * j * j - 1.0)
                })
                .sum();
            2.0 / n as f64 * (1.0 - 2.0 * tail)
        })
        .collect()
}

fn wavenumber(m: usize, len: usize) -> f64 {
    if m <= len / 2 {
        m as f64
    } else {
        m as f64 - len as f64
    }
}

impl SphericalGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Arc<Self>> {
        if n_theta < 4 {
            return Err(Error::InvalidGrid(format!("n_theta = {n_theta} must be at least 4")));
        }
        if n_phi < 4 || !n_phi.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_phi = {n_phi} must be even and at least 4"
            )));
        }
        let theta: Vec<f64> = (0..n_theta).map(|i| (i as f64 + 0.5) * PI / n_theta as f64).collect();
        let phi: Vec<f64> = (0..n_phi).map(|j| 2.0 * PI * j as f64 / n_phi as f64).collect();
        let dphi = 2.0 * PI / n_phi as f64;
        let fejer = fejer_weights(n_theta);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let mut antipode = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            for j in 0..n_phi {
                weights.push(fejer[i] * dphi);
                antipode.push((n_theta - 1 - i) * n_phi + (j + n_phi / 2) % n_phi);
            }
        }
        // Evaluate sin/cos through the half-range so that antipodal colatitudes
        // get bit-identical sines and exactly negated cosines.
        let sin_theta: Vec<f64> = (0..n_theta).map(|i| theta[i.min(n_theta - 1 - i)].sin()).collect();
        let cos_theta: Vec<f64> = (0..n_theta)
            .map(|i| {
                let c = theta[i.min(n_theta - 1 - i)].cos();
                if i < n_theta - 1 - i {
                    c
                } else if i == n_theta - 1 - i {
                    0.0
                } else {
                    -c
                }
            })
            .collect();

        let half = n_phi / 2;
        let sincos_phi = (0..n_phi)
            .map(|j| {
                let (sp, cp) = phi[j % half].sin_cos();
                if j < half {
                    (sp, cp)
                } else {
                    (-sp, -cp)
                }
            })
            .collect();

        // A degree-L harmonic carries wavenumber m on a ring of colatitude θ
        // only up to the turning point m ≈ L sin θ; beyond it the content decays
        // like a Bessel tail. Dropping those wavenumbers near the poles keeps
        // FFT roundoff from being amplified by 1/sin²θ.
        let l_max = (n_theta - 1) as f64;
        let ring_cutoff = sin_theta
            .iter()
            .map(|&st| {
                let x = l_max * st;
                ((x + 10.0 + 6.0 * x.cbrt()).ceil() as usize).min(n_phi / 2)
            })
            .collect();

        let mut planner = FftPlanner::new();
        let mut grid = SphericalGrid {
            n_theta,
            n_phi,
            theta,
            phi,
            weights,
            antipode,
            ring_cutoff,
            sin_theta,
            cos_theta,
            sincos_phi,
            ring_fwd: planner.plan_fft_forward(n_phi),
            ring_inv: planner.plan_fft_inverse(n_phi),
            circle_fwd: planner.plan_fft_forward(2 * n_theta),
            circle_inv: planner.plan_fft_inverse(2 * n_theta),
            meridian: Default::default(),
        };
        grid.meridian = [grid.meridian_matrices(1.0), grid.meridian_matrices(-1.0)];
        Ok(Arc::new(grid))
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_phi + j
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn sin_theta(&self) -> &[f64] {
        &self.sin_theta
    }

    pub fn cos_theta(&self) -> &[f64] {
        &self.cos_theta
    }

    /// `(θ, φ)` of a node.
    pub fn node(&self, idx: usize) -> (f64, f64) {
        (self.theta[idx / self.n_phi], self.phi[idx % self.n_phi])
    }

    /// Unit vector in `R^3` of a node.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let i = idx / self.n_phi;
        let (sp, cp) = self.sincos_phi[idx % self.n_phi];
        let st = self.sin_theta[i];
        [st * cp, st * sp, self.cos_theta[i]]
    }

    /// Orthonormal frame `(e_θ, e_φ)` at a node, as vectors in `R^3`.
    pub fn frame(&self, idx: usize) -> ([f64; 3], [f64; 3]) {
        let i = idx / self.n_phi;
        let (sp, cp) = self.sincos_phi[idx % self.n_phi];
        let (st, ct) = (self.sin_theta[i], self.cos_theta[i]);
        ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn antipode_index(&self) -> &[usize] {
        &self.antipode
    }

    pub(crate) fn ring_cutoff(&self, ring: usize) -> usize {
        self.ring_cutoff[ring]
    }

    /// Meridian differentiation matrix for a longitudinal mode of the given
    /// wavenumber parity.
    pub(crate) fn meridian_matrix(&self, wavenumber: i64, order: usize) -> &DMatrix<f64> {
        &self.meridian[(wavenumber.rem_euclid(2)) as usize][order - 1]
    }

    fn meridian_matrices(&self, parity: f64) -> [DMatrix<f64>; 2] {
        let n = self.n_theta;
        let mut d1 = DMatrix::zeros(n, n);
        let mut d2 = DMatrix::zeros(n, n);
        let mut buf = vec![Complex64::default(); 2 * n];
        let mut out1 = vec![Complex64::default(); 2 * n];
        let mut out2 = vec![Complex64::default(); 2 * n];
        for k in 0..n {
            buf.iter_mut().for_each(|c| *c = Complex64::default());
            buf[k] = Complex64::new(1.0, 0.0);
            buf[2 * n - 1 - k] = Complex64::new(parity, 0.0);
            self.circle_derivatives(&mut buf, &mut out1, &mut out2);
            for i in 0..n {
                d1[(i, k)] = out1[i].re;
                d2[(i, k)] = out2[i].re;
            }
        }
        [d1, d2]
    }

    /// Differentiates one great-circle signal. `buf` holds the samples on entry
    /// and is clobbered.
    fn circle_derivatives(&self, buf: &mut [Complex64], d1: &mut [Complex64], d2: &mut [Complex64]) {
        let len = buf.len();
        self.circle_fwd.process(buf);
        let scale = 1.0 / len as f64;
        for m in 0..len {
            let k = wavenumber(m, len);
            let c = buf[m] * scale;
            d1[m] = if m == len / 2 {
                Complex64::default()
            } else {
                c * Complex64::new(0.0, k)
            };
            d2[m] = c * (-k * k);
        }
        self.circle_inv.process(d1);
        self.circle_inv.process(d2);
    }

    /// Meridional derivatives `(∂_θ u, ∂²_θ u)` of a genuine function on the sphere.
    fn theta_derivatives(&self, u: &[f64], want_second: bool) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n_theta, self.n_phi);
        let half = m / 2;
        let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..half)
            .into_par_iter()
            .map(|j| {
                let mut buf = vec![Complex64::default(); 2 * n];
                for i in 0..n {
                    buf[i] = Complex64::new(u[i * m + j], 0.0);
                    buf[n + i] = Complex64::new(u[(n - 1 - i) * m + j + half], 0.0);
                }
                let mut d1 = vec![Complex64::default(); 2 * n];
                let mut d2 = vec![Complex64::default(); 2 * n];
                self.circle_derivatives(&mut buf, &mut d1, &mut d2);
                (
                    d1.iter().map(|c| c.re).collect(),
                    if want_second {
                        d2.iter().map(|c| c.re).collect()
                    } else {
                        Vec::new()
                    },
                )
            })
            .collect();
        let mut first = vec![0.0; n * m];
        let mut second = if want_second { vec![0.0; n * m] } else { Vec::new() };
        for (j, (c1, c2)) in cols.iter().enumerate() {
            for i in 0..n {
                first[i * m + j] = c1[i];
                // dθ/dψ = -1 on the far meridian
                first[(n - 1 - i) * m + j + half] = -c1[n + i];
                if want_second {
                    second[i * m + j] = c2[i];
                    second[(n - 1 - i) * m + j + half] = c2[n + i];
                }
            }
        }
        (first, second)
    }

    /// Longitudinal derivatives `(∂_φ u, ∂²_φ u)`.
    fn phi_derivatives(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.n_phi;
        let mut first = vec![0.0; u.len()];
        let mut second = vec![0.0; u.len()];
        first
            .par_chunks_mut(m)
            .zip(second.par_chunks_mut(m))
            .zip(u.par_chunks(m))
            .zip(self.ring_cutoff.par_iter())
            .for_each(|(((f1, f2), ring), &cutoff)| {
                // The ring mean does not affect φ-derivatives; removing it keeps
                // transform roundoff proportional to the variation around the ring.
                let mean = ring.iter().sum::<f64>() / m as f64;
                let mut buf: Vec<Complex64> = ring.iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
                self.ring_fwd.process(&mut buf);
                let scale = 1.0 / m as f64;
                let mut d1 = vec![Complex64::default(); m];
                let mut d2 = vec![Complex64::default(); m];
                for k in 0..m {
                    let w = wavenumber(k, m);
                    if w.abs() > cutoff as f64 {
                        continue;
                    }
                    let c = buf[k] * scale;
                    d1[k] = if k == m / 2 {
                        Complex64::default()
                    } else {
                        c * Complex64::new(0.0, w)
                    };
                    d2[k] = c * (-w * w);
                }
                self.ring_inv.process(&mut d1);
                self.ring_inv.process(&mut d2);
                for k in 0..m {
                    f1[k] = d1[k].re;
                    f2[k] = d2[k].re;
                }
            });
        (first, second)
    }

    /// Forward ring transform of every colatitude ring (unnormalized).
    pub(crate) fn ring_transform(&self, u: &[f64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        out.par_chunks_mut(self.n_phi)
            .for_each(|ring| self.ring_fwd.process(ring));
        out
    }

    /// Inverse of [`Self::ring_transform`], returning the real part.
    pub(crate) fn ring_inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let scale = 1.0 / self.n_phi as f64;
        spec.par_chunks_mut(self.n_phi)
            .for_each(|ring| self.ring_inv.process(ring));
        spec.iter().map(|c| c.re * scale).collect()
    }

    /// All first and second coordinate derivatives needed for the covariant
    /// calculus.
    pub(crate) fn partials(&self, u: &[f64]) -> Partials {
        let (u_p, u_pp) = self.phi_derivatives(u);
        let (u_t, u_tt) = self.theta_derivatives(u, true);
        // ∂_φ u is itself a smooth function on the sphere, so it can be
        // differentiated along the glued meridian without a sign flip.
        let (u_tp, _) = self.theta_derivatives(&u_p, false);
        Partials {
            u_t,
            u_tt,
            u_p,
            u_pp,
            u_tp,
        }
    }

    pub(crate) fn hessian_components(&self, d: &Partials, idx: usize) -> [f64; 3] {
        let i = idx / self.n_phi;
        let st = self.sin_theta[i];
        let cot = self.cos_theta[i] / st;
        [
            d.u_tt[idx],
            (d.u_tp[idx] - cot * d.u_p[idx]) / st,
            d.u_pp[idx] / (st * st) + cot * d.u_t[idx],
        ]
    }
}

pub(crate) struct Partials {
    pub u_t: Vec<f64>,
    pub u_tt: Vec<f64>,
    pub u_p: Vec<f64>,
    pub u_pp: Vec<f64>,
    pub u_tp: Vec<f64>,
}

fn check_len(grid: &SphericalGrid, got: usize) -> Result<()> {
    if got != grid.len() {
        return Err(Error::FieldMismatch {
            expected: grid.len(),
            got,
        });
    }
    Ok(())
}

/// A real function sampled at the grid nodes.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<SphericalGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<SphericalGrid>, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Arc<SphericalGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<SphericalGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at the unit vector of every node.
    pub fn from_fn(grid: Arc<SphericalGrid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.point(idx))).collect();
        Self { grid, values }
    }

    /// Samples `f(θ, φ)` at every node.
    pub fn from_angles(grid: Arc<SphericalGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (t, p) = grid.node(idx);
                f(t, p)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.len() == other.len());
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Quadrature mean over the sphere.
    pub fn mean(&self) -> f64 {
        integrate(self) / (4.0 * PI)
    }

    /// `‖u - u∘(-id)‖_∞` on the grid.
    pub fn evenness_defect(&self) -> f64 {
        let anti = self.grid.antipode_index();
        self.values
            .iter()
            .enumerate()
            .fold(0.0, |m, (i, &x)| m.max((x - self.values[anti[i]]).abs()))
    }
}

/// Tangent vectors in the frame `e_1 = ∂_θ`, `e_2 = (sin θ)^{-1} ∂_φ`.
#[derive(Clone, Debug)]
pub struct TangentField {
    grid: Arc<SphericalGrid>,
    components: Vec<[f64; 2]>,
}

impl TangentField {
    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn components(&self) -> &[[f64; 2]] {
        &self.components
    }

    /// Lifts the frame components at a node to a vector in `R^3`.
    pub fn ambient(&self, idx: usize) -> [f64; 3] {
        let (e1, e2) = self.grid.frame(idx);
        let [a, b] = self.components[idx];
        [a * e1[0] + b * e2[0], a * e1[1] + b * e2[1], a * e1[2] + b * e2[2]]
    }
}

/// Symmetric 2-tensors stored as `(T_11, T_12, T_22)` in the orthonormal frame.
#[derive(Clone, Debug)]
pub struct SymTensorField {
    grid: Arc<SphericalGrid>,
    components: Vec<[f64; 3]>,
}

impl SymTensorField {
    pub fn new(grid: Arc<SphericalGrid>, components: Vec<[f64; 3]>) -> Result<Self> {
        check_len(&grid, components.len())?;
        if let Some(node) = components.iter().position(|c| c.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { grid, components })
    }

    pub(crate) fn from_vec_unchecked(grid: Arc<SphericalGrid>, components: Vec<[f64; 3]>) -> Self {
        Self { grid, components }
    }

    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn components(&self) -> &[[f64; 3]] {
        &self.components
    }

    pub fn trace(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid.clone(), self.components.iter().map(|c| c[0] + c[2]).collect())
    }

    /// Adds `w(x) · g` nodewise.
    pub fn add_metric(&self, w: &ScalarField) -> Self {
        Self {
            grid: self.grid.clone(),
            components: self
                .components
                .iter()
                .zip(w.values())
                .map(|(c, &x)| [c[0] + x, c[1], c[2] + x])
                .collect(),
        }
    }
}

pub fn covariant_gradient(u: &ScalarField) -> TangentField {
    let grid = u.grid();
    let (u_p, _) = grid.phi_derivatives(u.values());
    let (u_t, _) = grid.theta_derivatives(u.values(), false);
    let components = (0..grid.len())
        .map(|idx| [u_t[idx], u_p[idx] / grid.sin_theta[idx / grid.n_phi]])
        .collect();
    TangentField {
        grid: grid.clone(),
        components,
    }
}

/// Covariant Hessian `∇²u` in the orthonormal frame.
pub fn covariant_hessian(u: &ScalarField) -> SymTensorField {
    let grid = u.grid();
    let d = grid.partials(u.values());
    let components = (0..grid.len()).map(|idx| grid.hessian_components(&d, idx)).collect();
    SymTensorField::from_vec_unchecked(grid.clone(), components)
}

/// Laplace–Beltrami operator, the trace of [`covariant_hessian`].
pub fn laplacian(u: &ScalarField) -> ScalarField {
    covariant_hessian(u).trace()
}

/// `(u(x) + u(-x)) / 2`; the result is exactly even on the grid.
pub fn symmetrize_even(u: &ScalarField) -> ScalarField {
    let anti = u.grid().antipode_index();
    let vals = u.values();
    let values = (0..vals.len()).map(|i| 0.5 * (vals[i] + vals[anti[i]])).collect();
    ScalarField::from_vec_unchecked(u.grid().clone(), values)
}

/// Removes ring wavenumbers above the resolvable band of each colatitude, the
/// same band the φ-derivatives retain.
pub fn filter_poles(u: &ScalarField) -> ScalarField {
    let grid = u.grid();
    let m = grid.n_phi();
    let mut spec = grid.ring_transform(u.values());
    spec.par_chunks_mut(m).enumerate().for_each(|(i, ring)| {
        let cutoff = grid.ring_cutoff(i) as f64;
        for (k, c) in ring.iter_mut().enumerate() {
            if wavenumber(k, m).abs() > cutoff {
                *c = Complex64::default();
            }
        }
    });
    symmetrize_even(&ScalarField::from_vec_unchecked(grid.clone(), grid.ring_inverse(spec)))
}

pub fn integrate(u: &ScalarField) -> f64 {
    u.values().iter().zip(u.grid().weights()).map(|(a, w)| a * w).sum()
}
