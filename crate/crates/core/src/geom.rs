//! Support-function geometry: `τ[s] = ∇²s + s g`, principal radii, elementary
//! symmetric functions and the curvature quotient `F = (C(n,k) σ_n/σ_{n-k})^{1/k}`.
//!
//! `F` is normalized so that `F(I) = 1`; [`raw_quotient`] returns the plain
//! `σ_n/σ_{n-k}` used by the target equation.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{covariant_gradient, covariant_hessian, ScalarField, SphericalGrid, SymTensorField};

/// Dimension of the discretized sphere.
pub const DIM: usize = 2;

/// Relative eigenvalue gap below which the divided difference in the
/// derivative of `F` is replaced by its limit.
const UMBILIC_GAP: f64 = 1e-10;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `σ_m(λ)`, the sum over `m`-subsets of products; `σ_0 = 1`.
pub fn elementary_symmetric(lambda: &[f64], m: usize) -> Result<f64> {
    let n = lambda.len();
    if m > n {
        return Err(Error::DegreeOutOfRange { m, n });
    }
    // e[j] accumulates σ_j of the prefix processed so far.
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    for &x in lambda {
        for j in (1..=m).rev() {
            e[j] += x * e[j - 1];
        }
    }
    Ok(e[m])
}

/// `σ_m(λ | i)`: `σ_m` of `λ` with the `i`-th entry removed.
fn sigma_without(lambda: &[f64], m: usize, i: usize) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let rest: Vec<f64> = lambda
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, &x)| x)
        .collect();
    elementary_symmetric(&rest, m).unwrap_or(0.0)
}

/// Sorted eigenvalues of a symmetric 2×2 matrix `(T_11, T_12, T_22)`.
pub fn eigen_sym2(t: [f64; 3]) -> [f64; 2] {
    let mean = 0.5 * (t[0] + t[2]);
    let rad = (0.5 * (t[0] - t[2])).hypot(t[1]);
    let hi = mean + rad;
    let lo = mean - rad;
    // recover the small root from the determinant when it is cancellation-prone
    if mean > 0.0 && hi > 0.0 && lo.abs() < 0.5 * hi {
        let det = t[0] * t[2] - t[1] * t[1];
        [det / hi, hi]
    } else {
        [lo, hi]
    }
}

/// Principal radii of curvature: sorted eigenvalues per node.
#[derive(Clone, Debug)]
pub struct RadiiField {
    grid: Arc<SphericalGrid>,
    lambda: Vec<[f64; 2]>,
}

impl RadiiField {
    pub fn grid(&self) -> &Arc<SphericalGrid> {
        &self.grid
    }

    pub fn lambda(&self) -> &[[f64; 2]] {
        &self.lambda
    }

    pub fn min_radius(&self) -> f64 {
        self.lambda.iter().fold(f64::INFINITY, |m, l| m.min(l[0]))
    }

    pub fn max_radius(&self) -> f64 {
        self.lambda.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l[1]))
    }
}

pub fn principal_radii(t: &SymTensorField) -> RadiiField {
    RadiiField {
        grid: t.grid().clone(),
        lambda: t.components().iter().map(|&c| eigen_sym2(c)).collect(),
    }
}

/// `τ[s] = ∇²s + s g`.
pub fn tau_field(s: &ScalarField) -> SymTensorField {
    covariant_hessian(s).add_metric(s)
}

/// Normalized quotient and its derivative at one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeQuotient {
    /// `F`, normalized to `F(I) = 1`.
    pub value: f64,
    /// `σ_n/σ_{n-k}`.
    pub raw: f64,
    /// `∂F/∂T` in the frame, `(F^11, F^12, F^22)`.
    pub derivative: [f64; 3],
    pub lambda: [f64; 2],
    /// `(σ_1, σ_2)`.
    pub sigma: [f64; 2],
}

fn check_order(k: usize) -> Result<()> {
    if k == 0 || k >= DIM {
        return Err(Error::InvalidProblem(format!(
            "curvature order k = {k} must satisfy 1 <= k < n = {DIM}"
        )));
    }
    Ok(())
}

/// Evaluates `F` and `∂F/∂T` at a single symmetric tensor. The tensor must be
/// positive definite; `node` is only used for error reporting.
pub fn quotient_at(t: [f64; 3], k: usize, node: usize) -> Result<NodeQuotient> {
    check_order(k)?;
    let n = DIM;
    let lambda = eigen_sym2(t);
    if !(lambda[0] > 0.0) {
        return Err(Error::NotInCone {
            node,
            lambda_min: lambda[0],
        });
    }
    let sn = elementary_symmetric(&lambda, n)?;
    let snk = elementary_symmetric(&lambda, n - k)?;
    let raw = sn / snk;
    let kf = k as f64;
    let value = (binomial(n, k) * raw).powf(1.0 / kf);
    // ∂F/∂λ_i = (F/k) (σ_{n-1}(λ|i)/σ_n - σ_{n-k-1}(λ|i)/σ_{n-k})
    let grad =
        |i: usize| value / kf * (sigma_without(&lambda, n - 1, i) / sn - sigma_without(&lambda, n - k - 1, i) / snk);
    let (f1, f2) = (grad(0), grad(1));
    let a = 0.5 * (f1 + f2);
    let gap = lambda[1] - lambda[0];
    let b = if gap > UMBILIC_GAP * lambda[1] {
        (f1 - f2) / (lambda[0] - lambda[1])
    } else {
        umbilic_limit(k, lambda)
    };
    // Q diag(f) Qᵀ = a I + b (T - tr(T)/2 I)
    let half_diff = 0.5 * (t[0] - t[2]);
    Ok(NodeQuotient {
        value,
        raw,
        derivative: [a + b * half_diff, b * t[1], a - b * half_diff],
        lambda,
        sigma: [lambda[0] + lambda[1], sn],
    })
}

/// `lim (∂_1F - ∂_2F)/(λ_1 - λ_2)` at coinciding radii.
fn umbilic_limit(k: usize, lambda: [f64; 2]) -> f64 {
    match k {
        // F = 2λ₁λ₂/(λ₁+λ₂): the difference quotient is -2/(λ₁+λ₂) exactly
        1 => -2.0 / (lambda[0] + lambda[1]),
        _ => unreachable!("order checked by caller"),
    }
}

/// `F`, `F^{ij}` and `σ` over a tensor field.
#[derive(Clone, Debug)]
pub struct CurvatureEval {
    pub f_value: ScalarField,
    pub f_matrix: SymTensorField,
    pub sigma: Vec<[f64; 2]>,
}

pub fn curvature_quotient(t: &SymTensorField, k: usize) -> Result<CurvatureEval> {
    let nodes = t
        .components()
        .iter()
        .enumerate()
        .map(|(i, &c)| quotient_at(c, k, i))
        .collect::<Result<Vec<_>>>()?;
    let grid = t.grid().clone();
    Ok(CurvatureEval {
        f_value: ScalarField::from_vec_unchecked(grid.clone(), nodes.iter().map(|q| q.value).collect()),
        f_matrix: SymTensorField::from_vec_unchecked(grid, nodes.iter().map(|q| q.derivative).collect()),
        sigma: nodes.iter().map(|q| q.sigma).collect(),
    })
}

/// The unnormalized `σ_n/σ_{n-k}` per node.
pub fn raw_quotient(t: &SymTensorField, k: usize) -> Result<ScalarField> {
    let values = t
        .components()
        .iter()
        .enumerate()
        .map(|(i, &c)| quotient_at(c, k, i).map(|q| q.raw))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarField::from_vec_unchecked(t.grid().clone(), values))
}

/// Sharp constant `c` in `(σ_n/σ_{n-k})^{1/k} ≤ c σ_n^{1/n}` for the raw
/// quotient; equality holds at umbilic points.
pub fn newton_maclaurin_constant(n: usize, k: usize) -> f64 {
    binomial(n, k).powf(-1.0 / k as f64)
}

/// Points `s(x) x + ∇s(x)` of the hypersurface with support function `s`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub points: Vec<[f64; 3]>,
    /// Whether `τ[s]` was positive definite at every node.
    pub convex: bool,
}

pub fn embed(s: &ScalarField) -> Embedding {
    let margin = convexity_margin(s);
    let convex = margin > 0.0;
    if !convex {
        warn!("embedding a support function that is not strictly convex (margin {margin:e})");
    }
    let grid = s.grid();
    let grad = covariant_gradient(s);
    let points = (0..grid.len())
        .map(|idx| {
            let x = grid.point(idx);
            let g = grad.ambient(idx);
            let h = s.values()[idx];
            [h * x[0] + g[0], h * x[1] + g[1], h * x[2] + g[2]]
        })
        .collect();
    Embedding { points, convex }
}

/// `min λ_1(τ[s])` over the grid; positive iff discretely strictly convex.
pub fn convexity_margin(s: &ScalarField) -> f64 {
    principal_radii(&tau_field(s)).min_radius()
}

/// Centred ellipsoid `Σ y_i²/a_i² = 1`, used as a closed-form oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub axes: [f64; 3],
}

impl Ellipsoid {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ![a, b, c].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "ellipsoid axes must be positive, got ({a}, {b}, {c})"
            )));
        }
        Ok(Self { axes: [a, b, c] })
    }

    fn a2(&self) -> [f64; 3] {
        self.axes.map(|a| a * a)
    }

    pub fn support(&self, x: [f64; 3]) -> f64 {
        let a2 = self.a2();
        (a2[0] * x[0] * x[0] + a2[1] * x[1] * x[1] + a2[2] * x[2] * x[2]).sqrt()
    }

    /// Boundary point with outer normal `x`.
    pub fn point(&self, x: [f64; 3]) -> [f64; 3] {
        let h = self.support(x);
        let a2 = self.a2();
        [a2[0] * x[0] / h, a2[1] * x[1] / h, a2[2] * x[2] / h]
    }

    /// `Σ y_i²/a_i² - 1`.
    pub fn quadric(&self, y: [f64; 3]) -> f64 {
        let a2 = self.a2();
        y[0] * y[0] / a2[0] + y[1] * y[1] / a2[1] + y[2] * y[2] / a2[2] - 1.0
    }

    /// `τ[h]` in the frame `(e_1, e_2)`: the ambient Hessian of the
    /// 1-homogeneous extension `sqrt(yᵀAy)` restricted to the tangent plane.
    pub fn tau(&self, x: [f64; 3], e1: [f64; 3], e2: [f64; 3]) -> [f64; 3] {
        let h = self.support(x);
        let a2 = self.a2();
        let ax = [a2[0] * x[0], a2[1] * x[1], a2[2] * x[2]];
        let form = |u: [f64; 3], v: [f64; 3]| {
            let uav = a2[0] * u[0] * v[0] + a2[1] * u[1] * v[1] + a2[2] * u[2] * v[2];
            let ua = ax[0] * u[0] + ax[1] * u[1] + ax[2] * u[2];
            let va = ax[0] * v[0] + ax[1] * v[1] + ax[2] * v[2];
            uav / h - ua * va / (h * h * h)
        };
        [form(e1, e1), form(e1, e2), form(e2, e2)]
    }

    /// `(σ_1, σ_2)` of the principal radii at normal `x`.
    pub fn sigma(&self, x: [f64; 3]) -> [f64; 2] {
        let h = self.support(x);
        let a2 = self.a2();
        let tr: f64 = a2.iter().sum();
        let ax2: f64 = (0..3).map(|i| (a2[i] * x[i]).powi(2)).sum();
        let s1 = (tr - h * h) / h - ax2 / (h * h * h) + h;
        let s2 = a2[0] * a2[1] * a2[2] / h.powi(4);
        [s1, s2]
    }

    /// Density `f` for which this ellipsoid solves `σ_2/σ_1(τ[s]) = s^{p-1} f`.
    pub fn density(&self, p: f64, x: [f64; 3]) -> f64 {
        let [s1, s2] = self.sigma(x);
        s2 / s1 / self.support(x).powf(p - 1.0)
    }

    pub fn support_field(&self, grid: Arc<SphericalGrid>) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.support(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::real_harmonic;

    fn grid() -> Arc<SphericalGrid> {
        SphericalGrid::new(24, 48).unwrap()
    }

    fn brute_sigma(lambda: &[f64], m: usize) -> f64 {
        let n = lambda.len();
        (0u32..(1 << n))
            .filter(|mask| mask.count_ones() as usize == m)
            .map(|mask| {
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| lambda[i])
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn elementary_symmetric_examples() {
        assert_eq!(elementary_symmetric(&[2.0, 3.0], 1).unwrap(), 5.0);
        assert_eq!(elementary_symmetric(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0);
        assert_eq!(brute_sigma(&[1.0, 2.0, 3.0], 2), 11.0);
        assert_eq!(elementary_symmetric(&[1.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(elementary_symmetric(&[4.0, 7.0], 0).unwrap(), 1.0);
        assert!(matches!(
            elementary_symmetric(&[1.0, 2.0], 3),
            Err(Error::DegreeOutOfRange { m: 3, n: 2 })
        ));
        let l = [0.3, -1.2, 2.5, 0.7, 1.1];
        for m in 0..=5 {
            assert!((elementary_symmetric(&l, m).unwrap() - brute_sigma(&l, m)).abs() < 1e-12);
        }
    }

    #[test]
    fn radii_examples() {
        assert_eq!(eigen_sym2([2.0, 0.0, 5.0]), [2.0, 5.0]);
        let l = eigen_sym2([2.0, 1.0, 2.0]);
        assert!((l[0] - 1.0).abs() < 1e-15 && (l[1] - 3.0).abs() < 1e-15);
        assert_eq!(eigen_sym2([5.0, 0.0, 2.0]), [2.0, 5.0]);
    }

    #[test]
    fn tau_of_spheres_and_balls() {
        let g = grid();
        let t = tau_field(&ScalarField::constant(g.clone(), 3.0));
        for c in t.components() {
            assert!((c[0] - 3.0).abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2] - 3.0).abs() < 1e-12);
        }
        let v = [0.2, -0.4, 0.5];
        let ball = ScalarField::from_fn(g.clone(), |x| 1.5 + x[0] * v[0] + x[1] * v[1] + x[2] * v[2]);
        for c in tau_field(&ball).components() {
            assert!((c[0] - 1.5).abs() < 1e-10 && c[1].abs() < 1e-10 && (c[2] - 1.5).abs() < 1e-10);
        }
    }

    #[test]
    fn tau_of_ellipsoid_matches_closed_form() {
        let g = SphericalGrid::new(48, 96).unwrap();
        let e = Ellipsoid::new(1.3, 1.0, 0.8).unwrap();
        let t = tau_field(&e.support_field(g.clone()));
        for idx in 0..g.len() {
            let (e1, e2) = g.frame(idx);
            let want = e.tau(g.point(idx), e1, e2);
            for c in 0..3 {
                assert!((t.components()[idx][c] - want[c]).abs() < 1e-9, "node {idx}");
            }
            let [s1, s2] = e.sigma(g.point(idx));
            let l = eigen_sym2(want);
            assert!((l[0] + l[1] - s1).abs() < 1e-12);
            assert!((l[0] * l[1] - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn quotient_examples() {
        let q = quotient_at([1.0, 0.0, 1.0], 1, 0).unwrap();
        assert!((q.value - 1.0).abs() < 1e-15);
        assert!((q.derivative[0] - 0.5).abs() < 1e-15 && q.derivative[1] == 0.0);
        let q = quotient_at([2.5, 0.0, 2.5], 1, 0).unwrap();
        assert!((q.value - 2.5).abs() < 1e-15);
        let q = quotient_at([1.0, 0.0, 2.0], 1, 0).unwrap();
        assert!((q.raw - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.value - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            quotient_at([1.0, 2.0, 1.0], 1, 7),
            Err(Error::NotInCone { node: 7, .. })
        ));
        assert!(quotient_at([1.0, 0.0, 1.0], 2, 0).is_err());
        assert!(quotient_at([1.0, 0.0, 1.0], 0, 0).is_err());
    }

    #[test]
    fn quotient_field_rejects_nonconvex() {
        let g = grid();
        let t = tau_field(&ScalarField::constant(g.clone(), -1.0));
        assert!(matches!(curvature_quotient(&t, 1), Err(Error::NotInCone { .. })));
        let ok = curvature_quotient(&tau_field(&ScalarField::constant(g, 2.0)), 1).unwrap();
        assert!(ok.f_value.values().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(ok
            .sigma
            .iter()
            .all(|s| (s[0] - 4.0).abs() < 1e-12 && (s[1] - 4.0).abs() < 1e-11));
    }

    #[test]
    fn embedding_examples() {
        let g = grid();
        let emb = embed(&ScalarField::constant(g.clone(), 2.0));
        assert!(emb.convex);
        for (idx, p) in emb.points.iter().enumerate() {
            let x = g.point(idx);
            for c in 0..3 {
                assert!((p[c] - 2.0 * x[c]).abs() < 1e-13);
            }
        }
        let v = [0.3, 0.1, -0.2];
        let ball = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] * v[0] + x[1] * v[1] + x[2] * v[2]);
        for (idx, p) in embed(&ball).points.iter().enumerate() {
            let x = g.point(idx);
            for c in 0..3 {
                assert!((p[c] - x[c] - v[c]).abs() < 1e-13);
            }
        }
        let g = SphericalGrid::new(48, 96).unwrap();
        let e = Ellipsoid::new(1.3, 1.0, 0.8).unwrap();
        for (idx, p) in embed(&e.support_field(g.clone())).points.iter().enumerate() {
            assert!(e.quadric(*p).abs() < 1e-10);
            let want = e.point(g.point(idx));
            for c in 0..3 {
                assert!((p[c] - want[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn embedding_recovers_support() {
        let g = SphericalGrid::new(32, 64).unwrap();
        let e = Ellipsoid::new(1.3, 1.0, 0.8).unwrap();
        let s = e.support_field(g.clone());
        let pts = embed(&s).points;
        for idx in 0..g.len() {
            let x = g.point(idx);
            let h = pts
                .iter()
                .map(|y| y[0] * x[0] + y[1] * x[1] + y[2] * x[2])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((h - s.values()[idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn convexity_margin_examples() {
        let g = grid();
        assert!((convexity_margin(&ScalarField::constant(g.clone(), 1.7)) - 1.7).abs() < 1e-12);
        let shifted = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.9 * x[2]);
        assert!((convexity_margin(&shifted) - 1.0).abs() < 1e-12);
        let bumpy = ScalarField::from_angles(g, |t, p| 1.0 + 0.5 * real_harmonic(4, 0, t, p));
        assert!(convexity_margin(&bumpy) < 0.0);
    }
}
