use std::path::PathBuf;
use std::process::ExitCode;

use cartan_core::ChartPoint;
use cartanlab::{parse_manifest, run_tensor, run_verify, validate, Resolved, RunOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cartanlab",
    version,
    about = "Numerical geometry of Cartan spaces and their cotangent bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of the suite on the manifest's sampled points.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        tol_scale: Option<f64>,
    },
    /// Dump named objects at one point.
    Tensor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        structure: String,
        #[arg(long)]
        params: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        objects: Vec<String>,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_MANIFEST: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn load(path: &PathBuf) -> Result<Resolved, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read manifest {}: {e}", path.display());
        ExitCode::from(EXIT_MANIFEST)
    })?;
    parse_manifest(&text).and_then(validate).map_err(|e| {
        eprintln!("manifest error: {e}");
        ExitCode::from(EXIT_MANIFEST)
    })
}

fn emit(common: &Common, body: &str) -> Result<(), ExitCode> {
    let Format::Json = common.format;
    match &common.out {
        Some(path) => std::fs::write(path, body).map_err(|e| {
            eprintln!("cannot write {}: {e}", path.display());
            ExitCode::from(EXIT_INTERNAL)
        }),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Command::Verify {
            common,
            seed,
            points,
            tol_scale,
        } => {
            if tol_scale.is_some_and(|k| !(k > 0.0 && k.is_finite())) {
                eprintln!("--tol-scale must be positive");
                return Err(ExitCode::from(EXIT_MANIFEST));
            }
            let resolved = load(&common.manifest)?;
            let report = run_verify(
                &resolved,
                &RunOptions {
                    seed,
                    points,
                    tol_scale,
                },
            );
            emit(&common, &report.to_json())?;
            let s = &report.summary;
            eprintln!(
                "{} checks: {} passed, {} failed ({} evaluation errors)",
                s.total, s.passed, s.failed, s.errors
            );
            Ok(if s.errors > 0 {
                ExitCode::from(EXIT_INTERNAL)
            } else if s.failed > 0 {
                ExitCode::from(EXIT_FAIL)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Tensor {
            common,
            structure,
            params,
            x,
            p,
            objects,
        } => {
            let resolved = load(&common.manifest)?;
            let at = ChartPoint::new(x, p).map_err(|e| {
                eprintln!("inadmissible point: {e}");
                ExitCode::from(EXIT_MANIFEST)
            })?;
            let report =
                run_tensor(&resolved, &structure, &params, &at, &objects).map_err(|e| {
                    eprintln!("{e}");
                    match e {
                        cartanlab::tensor::TensorError::Engine(_) => ExitCode::from(EXIT_INTERNAL),
                        _ => ExitCode::from(EXIT_MANIFEST),
                    }
                })?;
            emit(
                &common,
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) | Err(c) => c,
    }
}
