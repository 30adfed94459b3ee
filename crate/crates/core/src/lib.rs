//! Numerical solver for the even `L_p` prescribed curvature problem
//!
//! ```text
//! σ_n/σ_{n-k}(∇²s + s g) = s^{p-1} f   on S^n,
//! ```
//!
//! for the support function `s` of a strictly convex, origin-symmetric body,
//! together with numerical checks of the a-priori estimates that govern it.
//! Only surfaces in `R^3` (`n = 2`, hence `k = 1`) are discretized.
//!
//! Layout:
//! - [`grid`]: collocation grid, spectral covariant calculus, quadrature.
//! - [`geom`]: support-function geometry and the curvature quotient.
//! - [`pde`]: residuals, linearization and the Newton solver of the
//!   auxiliary equation.
//! - [`homotopy`]: the outer fixed-point map and the continuation to the
//!   target equation.
//! - [`validators`]: a-priori estimate and lemma checkers.
//! - [`io`]: problem/solution files, mesh and table export.

pub mod error;
pub mod geom;
pub mod grid;
pub mod harmonics;
pub mod homotopy;
pub mod io;
mod linalg;
pub mod pde;
pub mod validators;

pub use error::{Error, Result};
pub use grid::{ScalarField, SphericalGrid, SymTensorField, TangentField};
