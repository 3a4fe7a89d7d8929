//! Command-line front end: spec ingestion, subcommand dispatch, and CSV/JSON
//! emission for external plotting.
//!
//! Exit codes: 0 on success, 1 on validation problems (bad flags, unreadable
//! or inconsistent spec files, out-of-range options), 2 when a computation
//! gives up (enumeration budget, Newton non-convergence, a propagator
//! denominator that is exactly zero, a classification contradiction).
//!
//! Output is deterministic: identical invocations produce byte-identical
//! payloads regardless of `--threads`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use respond_core::analysis::{
    default_angles, default_radii, fit_bound, scan_eps0_of_b, scan_rays,
};
use respond_core::divisors::{divisor_profile, verify_divisor_floor, FloorSampling};
use respond_core::problem::{
    ForcingSpectrum, FrequencyVector, Mode, NonlinearityTaylor, ProblemSpec,
};
use respond_core::series::{
    assemble, coeff_via_recursion, residual, tables_via_trees, tail_mass, CoefficientTable,
};
use respond_core::trees::{count_trees, enumerate_trees};
use respond_core::{Error, Result};

#[derive(Parser)]
#[command(name = "respond", version, about = "Response-solution series toolkit")]
struct Cli {
    /// Worker threads for parallel scans (0 = library default). Results do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dyadic small-divisor minima and Bryuno-type partial sums.
    Divisors(DivisorsArgs),
    /// Propagator floor constant on the parabolic domain, verified by sampling.
    VerifyFloor(FloorArgs),
    /// Enumerate the labelled trees of one order and root momentum.
    Trees(TreesArgs),
    /// Series coefficients by both computation paths.
    Series(SeriesArgs),
    /// ODE residual of the truncated solution plus the oracle tail mass.
    Residual(ResidualArgs),
    /// Ratio-test scans of the complex eps domain.
    Scan(ScanArgs),
    /// Log-linear fit of coefficient growth in order and |eps|.
    FitBound(FitBoundArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanMode {
    /// Largest passing radius per direction: CSV `arg,radius`.
    Rays,
    /// Largest passing radial cutoff per parabola steepness: CSV `B,eps0`.
    Domain,
}

#[derive(Args)]
struct DivisorsArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Deepest dyadic scale n; rows cover 0..=n.
    #[arg(long, default_value_t = 8)]
    order: u32,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FloorArgs {
    /// Recentred linear coefficient g'(c0).
    #[arg(long)]
    a: f64,
    /// Parabola steepness of the domain.
    #[arg(long = "B")]
    b: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct TreesArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Tree order (number of nodes).
    #[arg(long)]
    order: usize,
    /// Root-line momentum, comma-separated integers "n1,...,nd".
    #[arg(long)]
    momentum: String,
    /// Print only how many trees there are.
    #[arg(long)]
    count_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeriesArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    eps_re: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_im: f64,
    /// Truncation order K.
    #[arg(long)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ResidualArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    eps_re: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_im: f64,
    /// Truncation order K; the tail mass covers K+1..=K+3.
    #[arg(long, default_value_t = 5)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ScanArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: ScanMode,
    /// Truncation order behind every ratio test.
    #[arg(long, default_value_t = 6)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FitBoundArgs {
    /// Problem spec JSON (omitted: the built-in 1-d cosine example).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Truncation order of the fitted tables.
    #[arg(long, default_value_t = 6)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Real eps magnitudes behind `fit-bound`: one octave apart so the |eps|
/// direction of the fit is well conditioned while every table stays deep in
/// the perturbative range.
const FIT_EPS_MAGNITUDES: [f64; 5] = [1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2];

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let informational = matches!(
                err.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            );
            let _ = err.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::BudgetExceeded { .. }
        | Error::NoConvergence { .. }
        | Error::SingularPropagator { .. }
        | Error::ClassificationContradiction { .. } => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Divisors(args) => run_divisors(args),
        Command::VerifyFloor(args) => run_verify_floor(args),
        Command::Trees(args) => run_trees(args),
        Command::Series(args) => run_series(args),
        Command::Residual(args) => run_residual(args),
        Command::Scan(args) => run_scan(args),
        Command::FitBound(args) => run_fit_bound(args),
    }
}

/// The 1-d worked example: omega = 1, f = cos t, g(x) = x + x^2.
fn default_spec() -> ProblemSpec {
    let half = Complex64::new(0.5, 0.0);
    ProblemSpec::new(
        FrequencyVector::new(vec![1.0]).expect("static frequency"),
        ForcingSpectrum::new(
            1,
            vec![
                (Mode::new(vec![1]), half),
                (Mode::new(vec![-1]), half),
            ],
            0.0,
            1.0,
        )
        .expect("static forcing"),
        NonlinearityTaylor::new(0.0, vec![0.0, 1.0, 1.0]).expect("static nonlinearity"),
    )
    .expect("static spec")
}

fn load_spec(path: &Option<PathBuf>) -> Result<ProblemSpec> {
    match path {
        Some(path) => ProblemSpec::from_file(path),
        None => Ok(default_spec()),
    }
}

fn parse_momentum(text: &str, dim: usize) -> Result<Mode> {
    let components: std::result::Result<Vec<i32>, _> =
        text.split(',').map(|part| part.trim().parse::<i32>()).collect();
    let components = components
        .map_err(|_| Error::InvalidSpec(format!("momentum {text:?} is not a comma-separated integer vector")))?;
    if components.len() != dim {
        return Err(Error::InvalidSpec(format!(
            "momentum {text:?} has {} components; the spec is {dim}-dimensional",
            components.len()
        )));
    }
    Ok(Mode::new(components))
}

fn emit(out: &Option<PathBuf>, payload: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, payload).map_err(Error::from),
        None => {
            print!("{payload}");
            Ok(())
        }
    }
}

fn csv_payload<F>(write: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    write(&mut writer)?;
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn json_payload<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn record(writer: &mut csv::Writer<Vec<u8>>, fields: &[String]) -> Result<()> {
    writer
        .write_record(fields)
        .map_err(|e| Error::Io(e.to_string()))
}

fn require_format(actual: Format, supported: Format, subcommand: &str) -> Result<()> {
    if actual != supported {
        let name = match supported {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        return Err(Error::InvalidSpec(format!(
            "{subcommand} only emits {name}"
        )));
    }
    Ok(())
}

fn run_divisors(args: DivisorsArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let profile = divisor_profile(&spec.frequency, &spec.forcing, args.order)?;
    let payload = match args.format {
        Format::Csv => csv_payload(|w| {
            record(w, &["n", "alpha_n", "beta_n", "eps_n", "bruno_partial"].map(String::from))?;
            for row in &profile.rows {
                record(
                    w,
                    &[
                        row.n.to_string(),
                        row.alpha.to_string(),
                        row.beta.to_string(),
                        row.eps_n.to_string(),
                        row.bruno_partial.to_string(),
                    ],
                )?;
            }
            Ok(())
        })?,
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                n: u32,
                alpha_n: f64,
                beta_n: f64,
                beta_flagged: bool,
                eps_n: f64,
                bruno_partial: f64,
            }
            let rows: Vec<Row> = profile
                .rows
                .iter()
                .map(|r| Row {
                    n: r.n,
                    alpha_n: r.alpha,
                    beta_n: r.beta,
                    beta_flagged: r.beta_flagged,
                    eps_n: r.eps_n,
                    bruno_partial: r.bruno_partial,
                })
                .collect();
            json_payload(&rows)?
        }
    };
    emit(&args.out, &payload)
}

fn run_verify_floor(args: FloorArgs) -> Result<()> {
    require_format(args.format, Format::Json, "verify-floor")?;
    let report = verify_divisor_floor(args.a, args.b, &FloorSampling::default())?;
    #[derive(Serialize)]
    struct Report {
        violations: u64,
        min_ratio: f64,
        kappa0: f64,
        eps1: f64,
    }
    let payload = json_payload(&Report {
        violations: report.violations,
        min_ratio: report.min_ratio,
        kappa0: report.kappa0,
        eps1: report.eps1,
    })?;
    emit(&args.out, &payload)
}

fn run_trees(args: TreesArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let nu = parse_momentum(&args.momentum, spec.dim())?;
    let branchings = spec.branchings();
    let payload = if args.count_only {
        format!("{}\n", count_trees(&spec.forcing, &branchings, args.order, &nu)?)
    } else {
        let mut lines = String::new();
        for tree in enumerate_trees(&spec.forcing, &branchings, args.order, &nu)? {
            lines.push_str(&tree.encode());
            lines.push('\n');
        }
        lines
    };
    emit(&args.out, &payload)
}

fn coefficient_rows(
    writer: &mut csv::Writer<Vec<u8>>,
    table: &CoefficientTable,
    method: &str,
) -> Result<()> {
    for k in 1..=table.max_order() {
        if let Some(slice) = table.order_slice(k) {
            for (nu, value) in slice {
                record(
                    writer,
                    &[
                        k.to_string(),
                        nu.to_string(),
                        value.re.to_string(),
                        value.im.to_string(),
                        method.to_string(),
                    ],
                )?;
            }
        }
    }
    Ok(())
}

fn run_series(args: SeriesArgs) -> Result<()> {
    require_format(args.format, Format::Csv, "series")?;
    let spec = load_spec(&args.spec)?;
    let eps = Complex64::new(args.eps_re, args.eps_im);
    let by_recursion = coeff_via_recursion(&spec, eps, args.order)?;
    let by_trees = tables_via_trees(&spec, &[eps], args.order)?.remove(0);
    let payload = csv_payload(|w| {
        record(w, &["k", "nu", "re", "im", "method"].map(String::from))?;
        coefficient_rows(w, &by_recursion, "recursion")?;
        coefficient_rows(w, &by_trees, "trees")
    })?;
    emit(&args.out, &payload)
}

fn run_residual(args: ResidualArgs) -> Result<()> {
    require_format(args.format, Format::Json, "residual")?;
    let spec = load_spec(&args.spec)?;
    let eps = Complex64::new(args.eps_re, args.eps_im);
    let table = coeff_via_recursion(&spec, eps, args.order + 3)?;
    let solution = assemble(&spec, &table, args.order)?;
    #[derive(Serialize)]
    struct Report {
        residual_l1: f64,
        tail_mass: f64,
    }
    let payload = json_payload(&Report {
        residual_l1: residual(&solution, &spec),
        tail_mass: tail_mass(&table, args.order + 1, args.order + 3)?,
    })?;
    emit(&args.out, &payload)
}

fn run_scan(args: ScanArgs) -> Result<()> {
    require_format(args.format, Format::Csv, "scan")?;
    let spec = load_spec(&args.spec)?;
    let radii = default_radii();
    let payload = match args.mode {
        ScanMode::Rays => {
            let scan = scan_rays(&spec, args.order, &default_angles(), &radii)?;
            csv_payload(|w| {
                record(w, &["arg", "radius"].map(String::from))?;
                for (arg, radius) in &scan.rays {
                    record(w, &[arg.to_string(), radius.to_string()])?;
                }
                Ok(())
            })?
        }
        ScanMode::Domain => {
            let b_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
            let scan = scan_eps0_of_b(&spec, &b_grid, args.order, &radii)?;
            if let Some(alpha) = scan.alpha_hat {
                match scan.alpha_stderr {
                    Some(se) => eprintln!("alpha_hat = {alpha} (stderr {se})"),
                    None => eprintln!("alpha_hat = {alpha}"),
                }
            }
            csv_payload(|w| {
                record(w, &["B", "eps0"].map(String::from))?;
                for (b, eps0) in &scan.b_grid {
                    record(w, &[b.to_string(), eps0.to_string()])?;
                }
                Ok(())
            })?
        }
    };
    emit(&args.out, &payload)
}

fn run_fit_bound(args: FitBoundArgs) -> Result<()> {
    require_format(args.format, Format::Json, "fit-bound")?;
    let spec = load_spec(&args.spec)?;
    let tables: Result<Vec<CoefficientTable>> = FIT_EPS_MAGNITUDES
        .iter()
        .map(|&m| coeff_via_recursion(&spec, Complex64::new(m, 0.0), args.order))
        .collect();
    let fit = fit_bound(&tables?, spec.forcing.decay_xi())?;
    #[derive(Serialize)]
    struct Report {
        #[serde(rename = "A1")]
        a1: f64,
        eps_exponent: f64,
        residuals: Vec<f64>,
    }
    let payload = json_payload(&Report {
        a1: fit.a1,
        eps_exponent: fit.eps_exponent,
        residuals: fit.residuals,
    })?;
    emit(&args.out, &payload)
}
