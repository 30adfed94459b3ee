//! Problem and solution files, mesh and table export.
//!
//! Files are JSON. Floats are written in shortest round-trip form, so a
//! solution read back from disk is bit-identical to the one written.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{embed, principal_radii, tau_field, Ellipsoid};
use crate::grid::{ScalarField, SphericalGrid};
use crate::harmonics::real_harmonic;
use crate::homotopy::{HomotopyConfig, Solution, SpectrumReport};
use crate::pde::{main_residual, relative_main_residual, ProblemSpec};
use crate::validators::{report_for_field, EstimateReport};

pub const FORMAT_VERSION: &str = "1.0";
const FORMAT_MAJOR: u32 = 1;

/// Largest relative target-equation residual accepted by [`verify`].
pub const RESIDUAL_TOL: f64 = 1e-8;

pub const CSV_HEADER: [&str; 6] = ["theta", "phi", "s", "lambda1", "lambda2", "residual"];

/// Grid resolution written as `NTxNP`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<SphericalGrid>> {
        SphericalGrid::new(self.n_theta, self.n_phi)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Parse(format!("grid `{s}` is not of the form NTxNP")))?;
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("grid `{s}`: {e}")))
        };
        Ok(Self {
            n_theta: num(a)?,
            n_phi: num(b)?,
        })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_theta, self.n_phi)
    }
}

/// `a Y_ℓm` with `ℓ` even.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicTerm {
    pub ell: usize,
    pub m: i64,
    pub coeff: f64,
}

/// Description of the prescribed function `f`.
///
/// - `preset:one`: `f ≡ 1`.
/// - `harmonics:[(ℓ,m,a),…]`: `1 + Σ a Y_ℓm`; a `(0,0,a)` term replaces the
///   leading `1`.
/// - `manufactured:ellipsoid(a,b,c)`: the `f` solved by that ellipsoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FSpec {
    One,
    Harmonics(Vec<HarmonicTerm>),
    Ellipsoid([f64; 3]),
}

fn parse_numbers(body: &str, what: &str) -> Result<Vec<f64>> {
    body.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{what}: `{}`: {e}", t.trim())))
        })
        .collect()
}

fn parse_harmonics(list: &str) -> Result<Vec<HarmonicTerm>> {
    let inner = list
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| Error::Parse(format!("harmonic list `{list}` must be bracketed")))?;
    let mut terms = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let open = rest
            .strip_prefix('(')
            .ok_or_else(|| Error::Parse(format!("expected `(` in harmonic list at `{rest}`")))?;
        let (tuple, tail) = open
            .split_once(')')
            .ok_or_else(|| Error::Parse(format!("unclosed tuple in harmonic list at `{rest}`")))?;
        let parts: Vec<&str> = tuple.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("harmonic term `({tuple})` needs (l, m, a)")));
        }
        let ell: usize = parts[0]
            .parse()
            .map_err(|e| Error::Parse(format!("degree `{}`: {e}", parts[0])))?;
        let m: i64 = parts[1]
            .parse()
            .map_err(|e| Error::Parse(format!("order `{}`: {e}", parts[1])))?;
        let coeff: f64 = parts[2]
            .parse()
            .map_err(|e| Error::Parse(format!("coefficient `{}`: {e}", parts[2])))?;
        if ell % 2 == 1 {
            return Err(Error::Parse(format!("odd degree l = {ell} gives a non-even f")));
        }
        if m.unsigned_abs() as usize > ell {
            return Err(Error::Parse(format!("order m = {m} exceeds degree l = {ell}")));
        }
        if !coeff.is_finite() {
            return Err(Error::Parse(format!("coefficient of ({ell},{m}) is not finite")));
        }
        terms.push(HarmonicTerm { ell, m, coeff });
        rest = tail.trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        }
    }
    Ok(terms)
}

impl FromStr for FSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("f spec `{s}` has no `kind:` prefix")))?;
        match kind.trim() {
            "preset" => match body.trim() {
                "one" => Ok(FSpec::One),
                other => Err(Error::Parse(format!("unknown preset `{other}`"))),
            },
            "harmonics" => parse_harmonics(body).map(FSpec::Harmonics),
            "manufactured" => {
                let args = body
                    .trim()
                    .strip_prefix("ellipsoid(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Parse(format!("unknown manufactured body `{body}`")))?;
                let v = parse_numbers(args, "ellipsoid axes")?;
                match v[..] {
                    [a, b, c] => {
                        Ellipsoid::new(a, b, c).map_err(|e| Error::Parse(e.to_string()))?;
                        Ok(FSpec::Ellipsoid([a, b, c]))
                    }
                    _ => Err(Error::Parse(format!("ellipsoid needs three axes, got {}", v.len()))),
                }
            }
            other => Err(Error::Parse(format!("unknown f kind `{other}`"))),
        }
    }
}

impl fmt::Display for FSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FSpec::One => write!(f, "preset:one"),
            FSpec::Harmonics(terms) => {
                let items: Vec<String> = terms
                    .iter()
                    .map(|t| format!("({},{},{:?})", t.ell, t.m, t.coeff))
                    .collect();
                write!(f, "harmonics:[{}]", items.join(","))
            }
            FSpec::Ellipsoid([a, b, c]) => write!(f, "manufactured:ellipsoid({a:?},{b:?},{c:?})"),
        }
    }
}

impl TryFrom<String> for FSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FSpec> for String {
    fn from(f: FSpec) -> String {
        f.to_string()
    }
}

impl FSpec {
    /// Samples `f` on `grid`; `p` is needed by manufactured bodies.
    pub fn field(&self, grid: &Arc<SphericalGrid>, p: f64) -> Result<ScalarField> {
        let f = match self {
            FSpec::One => ScalarField::constant(grid.clone(), 1.0),
            FSpec::Harmonics(terms) => {
                let base = if terms.iter().any(|t| t.ell == 0) { 0.0 } else { 1.0 };
                ScalarField::from_angles(grid.clone(), |th, ph| {
                    base + terms
                        .iter()
                        .map(|t| t.coeff * real_harmonic(t.ell, t.m, th, ph))
                        .sum::<f64>()
                })
            }
            FSpec::Ellipsoid([a, b, c]) => {
                let e = Ellipsoid::new(*a, *b, *c)?;
                ScalarField::from_fn(grid.clone(), |x| e.density(p, x))
            }
        };
        let min = f.min();
        if !(min > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "f = {self} is not positive on the grid (min {min:e})"
            )));
        }
        Ok(f)
    }

    /// Closed-form support function, when the data was manufactured from one.
    pub fn exact_support(&self, grid: &Arc<SphericalGrid>, p: f64, k: usize) -> Option<ScalarField> {
        match self {
            // s^k / C(n,k) = s^{p-1} on constants
            FSpec::One => {
                let exponent = 1.0 / (k as f64 + 1.0 - p);
                exponent.is_finite().then(|| {
                    let c = crate::geom::binomial(crate::geom::DIM, k);
                    ScalarField::constant(grid.clone(), c.powf(exponent))
                })
            }
            FSpec::Ellipsoid([a, b, c]) => Ellipsoid::new(*a, *b, *c).ok().map(|e| e.support_field(grid.clone())),
            FSpec::Harmonics(_) => None,
        }
    }
}

/// A problem as read from disk or assembled from command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub f: FSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: HomotopyConfig,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("problem file: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let grid = self.grid.build()?;
        self.spec_on(&grid)
    }

    pub fn spec_on(&self, grid: &Arc<SphericalGrid>) -> Result<ProblemSpec> {
        ProblemSpec::new(self.n, self.k, self.p, self.f.field(grid, self.p)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterSummary {
    pub t: f64,
    pub iterations: usize,
    pub newton_krylov: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub outer: Vec<OuterSummary>,
    pub inner_newton_iterations: usize,
    pub linear_iterations: usize,
    pub polish_residuals: Vec<f64>,
}

impl TraceSummary {
    pub fn of(sol: &Solution) -> Self {
        Self {
            outer: sol
                .outer
                .iter()
                .map(|o| OuterSummary {
                    t: o.t,
                    iterations: o.fixed_point_residuals.len(),
                    newton_krylov: o.newton_krylov,
                    converged: o.converged,
                })
                .collect(),
            inner_newton_iterations: sol.trace.total_newton_iterations(),
            linear_iterations: sol.trace.steps.iter().map(|s| s.linear_iterations).sum(),
            polish_residuals: sol.polish_residuals.clone(),
        }
    }
}

/// A computed support function with the data that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format_version: String,
    pub problem: ProblemFile,
    pub grid: GridSpec,
    /// Node values in ring-major order.
    pub s: Vec<f64>,
    pub residual_sup: f64,
    pub relative_residual: f64,
    pub report: EstimateReport,
    pub trace: TraceSummary,
}

fn check_version(found: &str) -> Result<()> {
    let major = found
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Parse(format!("malformed format version `{found}`")))?;
    if major != FORMAT_MAJOR {
        return Err(Error::UnsupportedVersion {
            found: found.to_string(),
            supported: FORMAT_MAJOR,
        });
    }
    Ok(())
}

impl SolutionFile {
    pub fn new(problem: &ProblemFile, sol: &Solution) -> Result<Self> {
        let grid = sol.s.grid();
        Ok(Self {
            format_version: FORMAT_VERSION.to_string(),
            problem: problem.clone(),
            grid: GridSpec {
                n_theta: grid.n_theta(),
                n_phi: grid.n_phi(),
            },
            s: sol.s.values().to_vec(),
            residual_sup: main_residual(&sol.s, &sol.spec)?.sup_norm(),
            relative_residual: sol.relative_residual,
            report: sol.diagnostics.clone(),
            trace: TraceSummary::of(sol),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and checks the version and the node count.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("solution file: {e}")))?;
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Parse("solution file has no format_version".into()))?;
        check_version(version)?;
        let file: SolutionFile =
            serde_json::from_value(raw).map_err(|e| Error::Parse(format!("solution file: {e}")))?;
        let want = file.grid.n_theta * file.grid.n_phi;
        if file.s.len() != want {
            return Err(Error::Parse(format!(
                "solution has {} values for a {} grid",
                file.s.len(),
                file.grid
            )));
        }
        Ok(file)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// The stored field together with the problem data on its grid.
    pub fn field(&self) -> Result<(ScalarField, ProblemSpec)> {
        let grid = self.grid.build()?;
        let spec = self.problem.spec_on(&grid)?;
        let s = ScalarField::new(grid, self.s.clone())?;
        Ok((s, spec))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub relative_residual: f64,
    pub residual_ok: bool,
    pub lemmas_ok: bool,
    pub report: EstimateReport,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.residual_ok && self.lemmas_ok
    }
}

/// Recomputes the residual and every check from the stored field.
pub fn verify(file: &SolutionFile) -> Result<Verification> {
    let (s, spec) = file.field()?;
    let report = report_for_field(&s, &spec);
    let relative_residual = relative_main_residual(&s, &spec).unwrap_or(f64::INFINITY);
    Ok(Verification {
        relative_residual,
        residual_ok: relative_residual <= RESIDUAL_TOL,
        lemmas_ok: report.lemmas_ok(),
        report,
    })
}

/// Triangle mesh of the embedded surface.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based, counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// One vertex per node; each grid cell is split into two triangles and
    /// the polar rings are closed by fans.
    pub fn from_support(s: &ScalarField) -> Self {
        let grid = s.grid();
        let (n, m) = (grid.n_theta(), grid.n_phi());
        let vertices = embed(s).points;
        let id = |i: usize, j: usize| i * m + (j % m);
        let mut faces = Vec::with_capacity(2 * n * m);
        for i in 0..n - 1 {
            for j in 0..m {
                let (a, b, c, d) = (id(i, j), id(i, j + 1), id(i + 1, j + 1), id(i + 1, j));
                faces.push([a, d, c]);
                faces.push([a, c, b]);
            }
        }
        for j in 1..m - 1 {
            faces.push([id(0, 0), id(0, j), id(0, j + 1)]);
            faces.push([id(n - 1, 0), id(n - 1, j + 1), id(n - 1, j)]);
        }
        Self { vertices, faces }
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# support-function surface, {} vertices", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "v {:?} {:?} {:?}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

/// Per-node table `(θ, φ, s, λ_1, λ_2, residual)`.
pub fn write_csv<W: Write>(s: &ScalarField, spec: &ProblemSpec, w: W) -> Result<()> {
    let grid = s.grid();
    let radii = principal_radii(&tau_field(s));
    let residual = main_residual(s, spec).ok();
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for idx in 0..grid.len() {
        let (th, ph) = grid.node(idx);
        let l = radii.lambda()[idx];
        let r = residual.as_ref().map_or(f64::NAN, |r| r.values()[idx]);
        out.write_record([th, ph, s.values()[idx], l[0], l[1], r].map(|x| format!("{x:?}")))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Plain-text eigenvalue table.
pub fn spectrum_table(rep: &SpectrumReport) -> String {
    let mut out = format!(
        "# q = {}, grid {}x{}, eigenvalues above 1: {}\n{:>4} {:>22} {:>22} {:>12} {:>6}\n",
        rep.q, rep.n_theta, rep.n_phi, rep.above_one, "ell", "computed", "analytic", "error", ">1"
    );
    for row in &rep.rows {
        out.push_str(&format!(
            "{:>4} {:>22.16} {:>22.16} {:>12.3e} {:>6}\n",
            row.ell,
            row.computed,
            row.analytic,
            (row.computed - row.analytic).abs(),
            if row.analytic > 1.0 { "yes" } else { "no" }
        ));
    }
    out
}
