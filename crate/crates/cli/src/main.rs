//! `conic`: command-line driver for the conic-core analyses.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "conic", version, about = "Functional inequalities and toric data on conical spaces")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Output directory; the report goes to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for sampled scans.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Relative tolerance override (heat refinement, Green solver).
    #[arg(long = "tol-rel", global = true)]
    pub tol_rel: Option<f64>,
    /// Vertex cap for exact subset enumeration.
    #[arg(long = "enum-cap", global = true, default_value_t = conic_core::graph::DEFAULT_ENUMERATION_CAP)]
    pub enum_cap: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cheeger constant, spectral gap and isoperimetric constants of a graph.
    Graph(commands::GraphArgs),
    /// Good-covering validation, associated graph and patching constants.
    Cover(commands::CoverArgs),
    /// Cone geometry: doubling and Poincaré scans, radius field, indicial roots.
    Cone(commands::ConeArgs),
    /// Heat kernel on a cone with a two-sided Gaussian fit.
    Heat(commands::HeatArgs),
    /// Green's function on a cone of dimension at least 3.
    Green(commands::GreenArgs),
    /// Toric pipeline from a fan description.
    Toric(commands::ToricArgs),
    /// Brieskorn–Pham admissibility table and hypersurface link checks.
    Bp(commands::BpArgs),
    /// Runs a batch of analyses from a job file.
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(w) = cli.global.workers {
        if w == 0 {
            return Err(Failure::Input("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    if let Some(t) = cli.global.tol_rel {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Input(format!("--tol-rel must be positive, got {t}")));
        }
    }
    let out = execute(&cli)?;
    for w in &out.warnings {
        eprintln!("WARNING: {w}");
    }
    commands::emit(&out, cli.global.out.as_deref())
}

fn execute(cli: &Cli) -> Result<commands::Output, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Graph(a) => commands::run_graph(a, g),
        Command::Cover(a) => commands::run_cover(a, g),
        Command::Cone(a) => commands::run_cone(a, g),
        Command::Heat(a) => commands::run_heat(a, g),
        Command::Green(a) => commands::run_green(a, g),
        Command::Toric(a) => commands::run_toric(a, g),
        Command::Bp(a) => commands::run_bp(a, g),
        Command::Report(a) => commands::run_report(a, g, |argv| {
            let job = Cli::try_parse_from(argv).map_err(|e| Failure::Input(e.to_string()))?;
            execute(&job)
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(1),
    }
}
