use clap::{Parser, Subcommand, ValueEnum};
use mixcorr::io::{cmd_fit, cmd_simulate, parse_pairs, FitRequest, OrdinalColumn, OutputFormat};
use mixcorr::{CovarianceVariant, LegendreOrder, Method, SystemMode};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_INPUT: u8 = 1;
const EXIT_NO_CONVERGENCE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mixcorr",
    version,
    about = "Mixed correlation matrices by iterative GMM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the correlation matrix of a CSV file.
    Fit(FitArgs),
    /// Run a Monte Carlo study described by a JSON design.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    OneStep,
    TwoStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Plain,
    Corrected,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Continuous columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
    /// Ordinal columns as name:categories or name:infer, comma separated.
    #[arg(long, value_delimiter = ',')]
    ordinal: Vec<String>,
    #[arg(long, value_enum, default_value = "two-step")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "max")]
    system: SystemArg,
    /// Restrict estimation to these pairs, e.g. "Y1:X2,X1:X2".
    #[arg(long)]
    pairs: Option<String>,
    /// Order of the bivariate normal quadrature (2 or 3).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=3))]
    legendre: u8,
    #[arg(long, value_enum, default_value = "corrected")]
    cov: CovArg,
    /// Maximum number of weight-matrix updates.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Directory for the JSON report and the text table.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long, env = "MIXCORR_THREADS")]
    threads: Option<usize>,
    /// Overrides the seed in the design.
    #[arg(long)]
    seed: Option<u64>,
}

fn request(args: FitArgs) -> mixcorr::Result<FitRequest> {
    let mut req = FitRequest::new(args.data);
    req.continuous = args
        .continuous
        .into_iter()
        .filter(|s| !s.trim().is_empty())
        .collect();
    req.ordinal = args
        .ordinal
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| OrdinalColumn::parse(s))
        .collect::<mixcorr::Result<_>>()?;
    req.method = match args.method {
        MethodArg::OneStep => Method::OneStep,
        MethodArg::TwoStep => Method::TwoStep,
    };
    req.system = match args.system {
        SystemArg::Max => SystemMode::Max,
        SystemArg::Min => SystemMode::Min,
    };
    req.pairs = args.pairs.as_deref().map(parse_pairs).transpose()?;
    req.legendre = LegendreOrder::from_number(args.legendre).unwrap_or_default();
    req.covariance = match args.cov {
        CovArg::Plain => CovarianceVariant::Plain,
        CovArg::Corrected => CovarianceVariant::Corrected,
    };
    req.max_outer_iter = args.max_iter as usize;
    req.out = args.out;
    req.format = match args.format {
        FormatArg::Json => OutputFormat::Json,
        FormatArg::Csv => OutputFormat::Csv,
    };
    Ok(req)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit(args) => match request(args).and_then(|r| cmd_fit(&r)) {
            Ok(report) if report.converged() => ExitCode::SUCCESS,
            Ok(report) => {
                eprintln!(
                    "error: no convergence after {} iterations (last change {:e})",
                    report.diagnostics.outer_iterations, report.diagnostics.final_diff
                );
                ExitCode::from(EXIT_NO_CONVERGENCE)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Simulate(args) => {
            match cmd_simulate(&args.design, &args.out, args.threads, args.seed) {
                Ok(report) => {
                    eprintln!(
                        "{} replications, {} failed, {:.2}s",
                        report.replications, report.failures, report.wall_time_secs
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_INPUT)
                }
            }
        }
    }
}
