//! Command-line front end. Every subcommand produces one report (JSON or
//! CSV) that depends only on its flags, never on the thread count.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::decompose::{divfree_approx, hamiltonian_approx, DecomposeReport};
use crate::energy::{EnergyKind, EnergySpec, PenaltyKind};
use crate::error::{Error, Result};
use crate::field::{image_geometry, multiplicity_density, Boundary, Grid, GridField, MapSpec};
use crate::limits::kappa_sweep;
use crate::matrix::{Matrix, MAX_DIM};
use crate::nearness::{
    project, verify_sl_sandwich, verify_symplectic_det_bound, verify_weighted_det_bound, BoundReport,
    ProjectionResult, Target,
};
use crate::rearrange::{measure_preserving_approx, RearrangeOptions, RearrangeReport};
use crate::sampling::{matrix_with_det, par_samples, random_symplectic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "volpres", version, about = "Volume-preserving approximation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed for all sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Nearest point of a matrix set or algebra.
    Project(ProjectArgs),
    /// Monte-Carlo check of an inequality with its explicit constant.
    Verify(VerifyArgs),
    /// Divergence-free or Hamiltonian approximation of a field.
    Decompose(DecomposeArgs),
    /// Measure-preserving rearrangement by discrete optimal transport.
    Rearrange(RearrangeArgs),
    /// Incompressible-limit sweep over the bulk modulus.
    Sweep(SweepArgs),
    /// Qualitative facts about the radial, fold and cavity maps.
    Gallery(GalleryArgs),
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// SL, sl, SO, so or sp_lie.
    #[arg(long)]
    pub target: String,
    /// Row-major list ("4,0,0,0.0625"), identity shorthand ("I3") or
    /// "@file.json" holding a list of rows.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundName {
    SlSandwich,
    SpDet,
    WeightedDet,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub bound: BoundName,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Matrix size.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
    /// Lower determinant bound of the samples.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Upper determinant bound of the samples.
    #[arg(long = "Lambda")]
    pub big_lambda: Option<f64>,
    /// Draw exactly symplectic samples (sp-det only).
    #[arg(long)]
    pub symplectic: bool,
    /// Omit per-sample reports.
    #[arg(long)]
    pub summary_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Divfree,
    Hamiltonian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Derivative,
    Field,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Auto,
    Periodic,
    Clamped,
}

#[derive(Args, Debug, Clone)]
pub struct FieldSource {
    /// Map family, e.g. "hamiltonian:sinsin" or "compress:0.3".
    #[arg(long)]
    pub map: Option<String>,
    /// Field file in the JSON grid format.
    #[arg(long, conflicts_with = "map")]
    pub field: Option<PathBuf>,
    /// Nodes per axis when sampling a map.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Periodic when the family has a torus lift, clamped otherwise.
    #[arg(long, value_enum, default_value_t = BoundaryArg::Auto)]
    pub boundary: BoundaryArg,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub source: FieldSource,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Residual norm; p = 1 only supports the field norm.
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    /// Also write the corrected field (JSON grid format).
    #[arg(long)]
    pub field_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RearrangeArgs {
    #[arg(long)]
    pub map: String,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Number of nodes; must be a perfect power of the dimension.
    #[arg(long = "N", default_value_t = 1024)]
    pub n_points: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Auto)]
    pub boundary: BoundaryArg,
    /// Entropic speed fallback instead of the exact assignment.
    #[arg(long)]
    pub entropic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnergyArg {
    Hookean,
    NeoHookean,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Volume-preserving boundary map, e.g. "twist" or "twist:1.5".
    #[arg(long)]
    pub boundary: String,
    /// Ascending comma-separated list.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kappas: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = EnergyArg::NeoHookean)]
    pub energy: EnergyArg,
    #[arg(long, default_value_t = 1.0)]
    pub c3: f64,
    /// Plot data `(log10 κ, log10 proj_err)` as CSV.
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GalleryArgs {
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
}

/// Parses `args` (including the program name), runs, writes the report and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let outcome = pool.install(|| execute(&cli)).and_then(|text| emit(&cli.common, &text));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_) => EXIT_USAGE,
        Error::Domain(_) | Error::Precondition(_) | Error::SizeLimit(_) => EXIT_DOMAIN,
        Error::NonConvergence { .. } | Error::LineSearch { .. } => EXIT_SOLVER,
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Runs the parsed command and renders its report.
pub fn execute(cli: &Cli) -> Result<String> {
    let format = cli.common.format;
    match &cli.command {
        Command::Project(a) => render(&cmd_project(a)?, format),
        Command::Verify(a) => {
            let report = cmd_verify(a, cli.common.seed)?;
            match format {
                Format::Json => to_json(&report),
                Format::Csv => verify_csv(&report),
            }
        }
        Command::Decompose(a) => render(&cmd_decompose(a)?, format),
        Command::Rearrange(a) => render(&cmd_rearrange(a, cli.common.seed)?, format),
        Command::Sweep(a) => {
            let report = cmd_sweep(a)?;
            match format {
                Format::Json => to_json(&report),
                Format::Csv => {
                    let mut buf = Vec::new();
                    report.write_csv(&mut buf)?;
                    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
                }
            }
        }
        Command::Gallery(a) => render(&cmd_gallery(a)?, format),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn render<T: Serialize>(value: &T, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(value),
        Format::Csv => flat_csv(&serde_json::to_value(value)?),
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Two-column `key,value` CSV with dotted paths for nested entries.
fn flat_csv(value: &Value) -> Result<String> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, v)| walk(&key(k), v, out)),
            Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| walk(&key(&i.to_string()), v, out)),
            Value::Null => out.push((prefix.to_string(), String::new())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["key", "value"]).map_err(csv_error)?;
    for (k, v) in rows {
        w.write_record([k, v]).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------
// Matrix input

/// Parses a matrix from the inline, shorthand or file forms.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let trimmed = text.trim();
    if let Some(path) = trimmed.strip_prefix('@') {
        let body = std::fs::read_to_string(path)?;
        let rows: Vec<Vec<f64>> = serde_json::from_str(&body)
            .map_err(|e| Error::Parse { position: e.column(), message: format!("{path}: {e}") })?;
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse { position: 0, message: format!("{path}: rows must form a square matrix") });
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        return Matrix::from_row_major(n, &flat);
    }
    if let Some(size) = trimmed.strip_prefix('I') {
        let n: usize = size.parse().map_err(|_| Error::Parse {
            position: 1,
            message: format!("expected a size after 'I' in {trimmed:?}"),
        })?;
        if n == 0 || n > MAX_DIM {
            return Err(Error::Parse { position: 1, message: format!("size {n} not in 1..={MAX_DIM}") });
        }
        return Ok(Matrix::identity(n));
    }
    let mut values = Vec::new();
    let mut offset = 0;
    for token in text.split(',') {
        let start = offset + (token.len() - token.trim_start().len());
        let t = token.trim();
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            position: start,
            message: format!("{t:?} is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse { position: start, message: format!("{t:?} is not finite") });
        }
        values.push(v);
        offset += token.len() + 1;
    }
    let n = (values.len() as f64).sqrt().round() as usize;
    if n * n != values.len() || n == 0 || n > MAX_DIM {
        return Err(Error::Parse {
            position: text.len(),
            message: format!("{} entries do not form an n×n matrix with n ≤ {MAX_DIM}", values.len()),
        });
    }
    Matrix::from_row_major(n, &values)
}

// ---------------------------------------------------------------------------
// project

#[derive(Serialize)]
pub struct ProjectReport {
    pub input: Matrix,
    #[serde(flatten)]
    pub result: ProjectionResult,
}

pub fn cmd_project(a: &ProjectArgs) -> Result<ProjectReport> {
    let target = Target::parse(&a.target)?;
    let input = parse_matrix(&a.matrix)?;
    Ok(ProjectReport {
        input,
        result: project(&input, target)?,
    })
}

// ---------------------------------------------------------------------------
// verify

#[derive(Serialize)]
pub struct VerifySummary {
    pub count: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub bound: String,
    pub n: usize,
    pub seed: u64,
    pub det_range: (f64, f64),
    pub constant: f64,
    pub summary: VerifySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<BoundReport>>,
}

pub fn cmd_verify(a: &VerifyArgs, seed: u64) -> Result<VerifyReport> {
    if a.n == 0 || a.n > MAX_DIM {
        return Err(Error::InvalidInput(format!("n = {} not in 1..={MAX_DIM}", a.n)));
    }
    if a.symplectic && a.bound != BoundName::SpDet {
        return Err(Error::InvalidInput("--symplectic applies to sp-det only".into()));
    }
    let (name, lo, hi) = match a.bound {
        BoundName::SlSandwich => ("sl-sandwich", a.lambda.unwrap_or(a.theta), a.big_lambda.unwrap_or(10.0)),
        BoundName::SpDet => ("sp-det", a.lambda.unwrap_or(0.5), a.big_lambda.unwrap_or(1.5)),
        BoundName::WeightedDet => ("weighted-det", a.lambda.unwrap_or(0.5), a.big_lambda.unwrap_or(1.5)),
    };
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("determinant range [{lo}, {hi}] is not valid")));
    }
    if a.bound == BoundName::SpDet && a.n % 2 != 0 {
        return Err(Error::InvalidInput("sp-det needs an even matrix size".into()));
    }
    let reports: Vec<Result<BoundReport>> = par_samples(seed, a.samples, |_, rng| {
        let m = if a.symplectic {
            random_symplectic(a.n, 1.0, rng)
        } else {
            matrix_with_det(a.n, lo, hi, rng)
        };
        match a.bound {
            BoundName::SlSandwich => verify_sl_sandwich(&m, a.theta),
            BoundName::SpDet => verify_symplectic_det_bound(&m, hi),
            BoundName::WeightedDet => verify_weighted_det_bound(&m, lo, hi),
        }
    });
    let reports: Vec<BoundReport> = reports.into_iter().collect::<Result<_>>()?;
    let constant = reports.first().map_or(0.0, |r| r.constant);
    let summary = VerifySummary {
        count: reports.len(),
        violations: reports.iter().filter(|r| !r.satisfied).count(),
        max_ratio: reports.iter().map(|r| r.ratio).fold(0.0, f64::max),
    };
    Ok(VerifyReport {
        bound: name.into(),
        n: a.n,
        seed,
        det_range: (lo, hi),
        constant,
        summary,
        reports: (!a.summary_only).then_some(reports),
    })
}

fn verify_csv(report: &VerifyReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["index", "lhs", "rhs", "ratio", "satisfied", "inputs_digest"]).map_err(csv_error)?;
    for (i, r) in report.reports.iter().flatten().enumerate() {
        w.write_record([
            i.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.ratio.to_string(),
            r.satisfied.to_string(),
            r.inputs_digest.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.write_record([
        "summary".to_string(),
        String::new(),
        String::new(),
        report.summary.max_ratio.to_string(),
        (report.summary.violations == 0).to_string(),
        format!("violations={} count={}", report.summary.violations, report.summary.count),
    ])
    .map_err(csv_error)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------
// field inputs

fn grid_for(spec: &MapSpec, n: usize, dim: usize, boundary: BoundaryArg) -> Result<Grid> {
    let periodic = match boundary {
        BoundaryArg::Auto => spec.lift(dim).is_some(),
        BoundaryArg::Periodic => true,
        BoundaryArg::Clamped => false,
    };
    if periodic {
        Grid::unit(dim, n, Boundary::Periodic)
    } else {
        let (lo, hi) = spec.default_domain();
        Grid::cube(dim, n, lo, hi, Boundary::Clamped)
    }
}

fn load_field(source: &FieldSource) -> Result<(Option<MapSpec>, GridField)> {
    match (&source.map, &source.field) {
        (Some(text), _) => {
            let spec = MapSpec::parse(text)?;
            let grid = grid_for(&spec, source.grid, source.dim, source.boundary)?;
            let u = spec.sample(&grid)?;
            Ok((Some(spec), u))
        }
        (None, Some(path)) => Ok((None, GridField::from_json(&std::fs::read_to_string(path)?)?)),
        (None, None) => Err(Error::InvalidInput("pass --map or --field".into())),
    }
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Serialize)]
pub struct DecomposeOutput {
    pub map: Option<String>,
    pub shape: Vec<usize>,
    pub boundary: Boundary,
    #[serde(flatten)]
    pub report: DecomposeReport,
    /// `‖div v‖_{L²}` of the divergence-free output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_divergence_l2: Option<f64>,
}

pub fn cmd_decompose(a: &DecomposeArgs) -> Result<DecomposeOutput> {
    let norm = match (a.norm, a.p == 1.0) {
        (Some(NormArg::Derivative), true) => {
            return Err(Error::InvalidInput(
                "p = 1 is not available in the derivative norm; use --norm field".into(),
            ))
        }
        (Some(NormArg::Field), false) => {
            return Err(Error::InvalidInput("the field norm is reported for p = 1 only".into()))
        }
        (Some(n), _) => n,
        (None, true) => NormArg::Field,
        (None, false) => NormArg::Derivative,
    };
    debug_assert!(matches!((norm, a.p == 1.0), (NormArg::Field, true) | (NormArg::Derivative, false)));
    let (spec, u) = load_field(&a.source)?;
    let result = match a.mode {
        ModeArg::Divfree => divfree_approx(&u, a.p)?,
        ModeArg::Hamiltonian => hamiltonian_approx(&u, a.p)?,
    };
    if let Some(path) = &a.field_out {
        std::fs::write(path, result.corrected_field.to_json()? + "\n")?;
    }
    let output_divergence_l2 = match a.mode {
        ModeArg::Divfree => Some(u.grid.lp_norm(&result.corrected_field.divergence()?, 2.0)?),
        ModeArg::Hamiltonian => None,
    };
    Ok(DecomposeOutput {
        map: spec.map(|_| a.source.map.clone().unwrap_or_default()),
        shape: u.grid.shape.clone(),
        boundary: u.grid.boundary,
        report: result.report(),
        output_divergence_l2,
    })
}

// ---------------------------------------------------------------------------
// rearrange

#[derive(Serialize)]
pub struct RearrangeOutput {
    pub map: String,
    pub shape: Vec<usize>,
    pub boundary: Boundary,
    pub seed: u64,
    #[serde(flatten)]
    pub report: RearrangeReport,
}

pub fn cmd_rearrange(a: &RearrangeArgs, seed: u64) -> Result<RearrangeOutput> {
    let spec = MapSpec::parse(&a.map)?;
    if !(1..=2).contains(&a.dim) {
        return Err(Error::InvalidInput("rearrangement runs in 1-D or 2-D".into()));
    }
    let side = (a.n_points as f64).powf(1.0 / a.dim as f64).round() as usize;
    if side.pow(a.dim as u32) != a.n_points {
        return Err(Error::InvalidInput(format!(
            "N = {} is not a perfect power of dimension {}",
            a.n_points, a.dim
        )));
    }
    let grid = grid_for(&spec, side, a.dim, a.boundary)?;
    let u = spec.sample(&grid)?;
    let options = RearrangeOptions {
        seed,
        entropic: a.entropic,
        ..RearrangeOptions::default()
    };
    let result = measure_preserving_approx(&u, Some(&spec), a.p, &options)?;
    Ok(RearrangeOutput {
        map: a.map.clone(),
        shape: grid.shape.clone(),
        boundary: grid.boundary,
        seed,
        report: result.report(),
    })
}

// ---------------------------------------------------------------------------
// sweep

pub fn cmd_sweep(a: &SweepArgs) -> Result<crate::limits::SweepReport> {
    let boundary = MapSpec::parse(&a.boundary)?;
    let (lo, hi) = boundary.default_domain();
    let grid = Grid::cube(2, a.grid, lo, hi, Boundary::Clamped)?;
    let spec = EnergySpec {
        kind: match a.energy {
            EnergyArg::Hookean => EnergyKind::Hookean,
            EnergyArg::NeoHookean => EnergyKind::NeoHookean,
        },
        penalty_kind: PenaltyKind::Quadratic,
        c3: a.c3,
        ..EnergySpec::default()
    };
    let report = kappa_sweep(&boundary, &spec, &a.kappas, &grid)?;
    if let Some(path) = &a.plot_out {
        let mut buf = Vec::new();
        report.write_plot_data(&mut buf)?;
        std::fs::write(path, buf)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// gallery

#[derive(Serialize)]
pub struct GalleryEntry {
    pub map: String,
    pub det_min: f64,
    pub det_max: f64,
    /// `∫ det Du`.
    pub det_integral: f64,
    pub image_volume: f64,
    pub holes: usize,
    pub injective: bool,
    pub flag: String,
    pub flag_holds: bool,
}

#[derive(Serialize)]
pub struct GalleryReport {
    pub shape: Vec<usize>,
    pub entries: Vec<GalleryEntry>,
}

pub fn cmd_gallery(a: &GalleryArgs) -> Result<GalleryReport> {
    let grid = Grid::cube(2, a.grid, -1.0, 1.0, Boundary::Clamped)?;
    let mut entries = Vec::new();
    for (name, spec) in [
        ("radial_polar", MapSpec::RadialPolar),
        ("fold", MapSpec::Fold { scale: 0.5 }),
        ("cavity", MapSpec::Cavity),
    ] {
        let u = spec.sample(&grid)?;
        let jac = u.jacobian()?;
        let (det_min, det_max) = jac.det_bounds();
        let det_integral = grid.integrate(&jac.det);
        let geometry = image_geometry(&u)?;
        let holes = geometry.mask.hole_count();
        let nodes = grid.nodes();
        let near_one = nodes
            .iter()
            .filter(|x| spec.jacobian(x).is_ok_and(|m| (m.det() - 1.0).abs() < 1e-6))
            .count() as f64
            / nodes.len() as f64;
        let (flag, flag_holds) = match name {
            // Jacobian one, yet the image covers only half the mass: two sheets
            "radial_polar" => (
                "jacobian_one_not_measure_preserving",
                near_one >= 0.99 && geometry.volume < 0.75 * det_integral,
            ),
            // every image point has the same preimage mass
            "fold" => {
                let hist = multiplicity_density(&u, 8)?;
                // edge bins also collect cells straddling the fold lines
                let b = hist.bins;
                let inner: Vec<f64> = (0..b * b)
                    .filter(|k| (1..b - 1).contains(&(k / b)) && (1..b - 1).contains(&(k % b)))
                    .map(|k| hist.density[k])
                    .collect();
                let lo = inner.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = inner.iter().copied().fold(0.0, f64::max);
                ("constant_pushforward_density", !inner.is_empty() && hi <= 1.1 * lo)
            }
            // cells touching the origin map to chords across the cavity
            _ => (
                "measure_preserving_with_hole",
                near_one >= 0.99 && holes >= 1,
            ),
        };
        entries.push(GalleryEntry {
            map: name.into(),
            det_min,
            det_max,
            det_integral,
            image_volume: geometry.volume,
            holes,
            injective: spec.injective(),
            flag: flag.into(),
            flag_holds,
        });
    }
    Ok(GalleryReport {
        shape: grid.shape.clone(),
        entries,
    })
}
