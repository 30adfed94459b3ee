use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use lpcurv::homotopy::{model_spectrum_check, solve_main, HomotopyConfig};
use lpcurv::io::{spectrum_table, verify, write_csv, FSpec, GridSpec, ProblemFile, SolutionFile, TriMesh};
use lpcurv::Error;

const EXIT_PARSE: u8 = 2;
const EXIT_SOLVE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "lpcurv", version, about = "Even L_p curvature problem on the 2-sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem given by a file or by flags and write the solution.
    Solve(SolveArgs),
    /// Recompute the residual and all checks of a stored solution.
    Verify {
        file: PathBuf,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the embedded surface as OBJ or a per-node CSV table.
    Export {
        file: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the fixed-point linearization at t = 0 against the model eigenvalues.
    Spectrum {
        #[arg(long, default_value_t = 1.5)]
        q: f64,
        #[arg(long, default_value = "32x64")]
        grid: GridSpec,
        #[arg(long, default_value_t = 4)]
        ell_max: usize,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Obj,
    Csv,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Problem file; flags given alongside override its fields.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// `preset:one`, `harmonics:[(l,m,a),...]` or `manufactured:ellipsoid(a,b,c)`.
    #[arg(long)]
    f: Option<FSpec>,
    #[arg(long)]
    grid: Option<GridSpec>,
    /// Solve even when p lies outside the existence range.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    category: &'static str,
    message: String,
}

impl Failure {
    fn parse(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PARSE,
            category: "parse",
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            category: "validation",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, category) = match e {
            Error::Parse(_)
            | Error::UnsupportedVersion { .. }
            | Error::Json(_)
            | Error::Io(_)
            | Error::InvalidGrid(_)
            | Error::InvalidProblem(_)
            | Error::OutsideGuaranteeRegime { .. }
            | Error::NotEven { .. }
            | Error::FieldMismatch { .. }
            | Error::GammaOutOfRange { .. }
            | Error::DegreeOutOfRange { .. } => (EXIT_PARSE, "parse"),
            Error::LemmaViolated(_) | Error::NotConvex { .. } => (EXIT_VALIDATION, "validation"),
            _ => (EXIT_SOLVE, "solve"),
        };
        Self {
            code,
            category,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_failure(e: io::Error) -> Failure {
    Failure::parse(e.to_string())
}

fn problem_from(args: &SolveArgs) -> Result<ProblemFile, Failure> {
    let mut pf = match &args.problem {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_failure)?;
            ProblemFile::from_json(&text)?
        }
        None => ProblemFile {
            n: 2,
            k: 1,
            p: args
                .p
                .ok_or_else(|| Failure::parse("either --problem or --p is required"))?,
            f: FSpec::One,
            grid: GridSpec { n_theta: 32, n_phi: 64 },
            solver: HomotopyConfig::default(),
        },
    };
    if let Some(n) = args.n {
        pf.n = n;
    }
    if let Some(k) = args.k {
        pf.k = k;
    }
    if let Some(p) = args.p {
        pf.p = p;
    }
    if let Some(f) = &args.f {
        pf.f = f.clone();
    }
    if let Some(g) = args.grid {
        pf.grid = g;
    }
    pf.solver.force |= args.force;
    Ok(pf)
}

fn solve(args: SolveArgs) -> Outcome {
    let pf = problem_from(&args)?;
    let spec = pf.spec()?;
    let sol = solve_main(&spec, &pf.solver)?;
    let file = SolutionFile::new(&pf, &sol)?;
    let mut out = output(args.out.as_deref()).map_err(io_failure)?;
    out.write_all(file.to_json()?.as_bytes()).map_err(io_failure)?;
    out.flush().map_err(io_failure)?;
    info!(
        "solved on {}: relative residual {:e}, s in [{}, {}]",
        file.grid, file.relative_residual, file.report.r, file.report.big_r
    );
    if !sol.diagnostics.lemmas_ok() {
        return Err(Failure::validation(format!(
            "solution written but a lemma check failed: {}",
            sol.diagnostics.lemma_violation.as_deref().unwrap_or("geometry check")
        )));
    }
    Ok(())
}

fn read_solution(path: &Path) -> Result<SolutionFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(io_failure)?;
    Ok(SolutionFile::from_json(&text)?)
}

fn verify_cmd(path: &Path, json: bool) -> Outcome {
    let file = read_solution(path)?;
    let v = verify(&file)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&v).map_err(|e| Failure::parse(e.to_string()))?
        );
    } else {
        println!(
            "relative residual {:e} ({})",
            v.relative_residual,
            if v.residual_ok { "ok" } else { "FAIL" }
        );
        println!("lemma checks {}", if v.lemmas_ok { "ok" } else { "FAIL" });
        println!(
            "bounds: c0 {} / gradient {}",
            v.report.c0_bounds.upper_ok && v.report.c0_bounds.lower_ok,
            v.report.beta_measured.iter().all(|b| b.beta.is_finite())
        );
    }
    if v.passed() {
        Ok(())
    } else {
        Err(Failure::validation(format!(
            "verification failed: residual {:e}, lemmas {}",
            v.relative_residual, v.lemmas_ok
        )))
    }
}

fn export(path: &Path, format: ExportFormat, out: Option<&Path>) -> Outcome {
    let file = read_solution(path)?;
    let (s, spec) = file.field()?;
    let w = output(out).map_err(io_failure)?;
    match format {
        ExportFormat::Obj => TriMesh::from_support(&s).write_obj(w)?,
        ExportFormat::Csv => write_csv(&s, &spec, w)?,
    }
    Ok(())
}

fn spectrum(q: f64, grid: GridSpec, ell_max: usize, json: bool, out: Option<&Path>) -> Outcome {
    let rep = model_spectrum_check(&grid.build()?, q, ell_max)?;
    let text = if json {
        serde_json::to_string_pretty(&rep).map_err(|e| Failure::parse(e.to_string()))? + "\n"
    } else {
        spectrum_table(&rep)
    };
    let mut w = output(out).map_err(io_failure)?;
    w.write_all(text.as_bytes()).map_err(io_failure)?;
    w.flush().map_err(io_failure)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LPCURV_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_PARSE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Verify { file, json } => verify_cmd(&file, json),
        Command::Export { file, format, out } => export(&file, format, out.as_deref()),
        Command::Spectrum {
            q,
            grid,
            ell_max,
            json,
            out,
        } => spectrum(q, grid, ell_max, json, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": f.category, "exit_code": f.code, "message": f.message })
            );
            ExitCode::from(f.code)
        }
    }
}
