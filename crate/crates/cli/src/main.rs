use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vrfb_cli::commands::{self, DesignSource, OutputOptions};
use vrfb_cli::config_file;
use vrfb_cli::vtk::Encoding;
use vrfb_cli::{CliError, CliResult};
use vrfb_core::CaseConfig;

/// Flow-field topology optimization and evaluation for the negative
/// half-cell of a vanadium redox flow battery.
///
/// Configuration keys can be overridden with VRFB_<KEY> environment
/// variables (e.g. VRFB_EPSILON=0.68). VRFB_LOG sets the log filter.
#[derive(Parser, Debug)]
#[command(name = "vrfb", version)]
struct Cli {
    /// Solver threads; 1 gives bit-reproducible serial runs.
    #[arg(long, global = true, default_value_t = 1, env = "VRFB_THREADS")]
    threads: usize,

    /// Write VTK files as ASCII instead of big-endian binary.
    #[arg(long, global = true)]
    ascii: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Case file (key = value); defaults are used for omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Point {
    /// Inlet flow rate (m³/s); without it the configured pressure drop is applied.
    #[arg(long)]
    flowrate: Option<f64>,
    /// Applied current (A).
    #[arg(long)]
    current: Option<f64>,
    /// Electrode porosity.
    #[arg(long)]
    porosity: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the density-based optimization.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in this run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Density snapshot interval in iterations (0 disables snapshots).
        #[arg(long, default_value_t = 1)]
        snapshot_every: usize,
    },
    /// Evaluate one design at one operating point.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// parallel | interdigitated | optimized | file:<path>
        #[arg(long)]
        design: String,
        #[command(flatten)]
        point: Point,
        /// Optimize run directory holding the design for `optimized`.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate designs over flow rates, currents and porosities.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "parallel,interdigitated")]
        designs: Vec<String>,
        /// Flow rates (m³/s).
        #[arg(long, value_delimiter = ',', default_value = "1e-6,5e-6,1e-5,1.5e-5")]
        flowrates: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "4,10")]
        currents: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.929,0.68")]
        porosities: Vec<f64>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare adjoint sensitivities with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random design variables.
        #[arg(long, default_value_t = 10)]
        vars: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Pass threshold on the maximum relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> CliResult<CaseConfig> {
    let mut cfg = match &common.config {
        Some(p) => config_file::parse_config(p)?,
        None => CaseConfig::default(),
    };
    let applied = config_file::apply_env_overrides(&mut cfg, std::env::vars())?;
    if !applied.is_empty() {
        log::info!("environment overrides: {}", applied.join(", "));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    vrfb_core::set_threads(cli.threads);
    let mut opts = OutputOptions::default();
    if cli.ascii {
        opts.encoding = Encoding::Ascii;
    }
    match cli.command {
        Command::Optimize {
            common,
            out,
            resume,
            snapshot_every,
        } => {
            let cfg = load_config(&common)?;
            opts.snapshot_every = snapshot_every;
            let s = commands::optimize(&cfg, &out, resume.as_deref(), opts)?;
            println!(
                "{} after {} iterations: F {:.6} -> {:.6} mol/m3; manifest {}",
                if s.converged {
                    "converged"
                } else {
                    "stopped at the iteration cap"
                },
                s.iterations,
                s.initial_objective,
                s.final_objective,
                s.manifest.display()
            );
        }
        Command::Evaluate {
            common,
            design,
            point,
            run,
            out,
        } => {
            let cfg = load_config(&common)?;
            let source: DesignSource = design.parse()?;
            let op = commands::operating_point(&cfg, point.flowrate, point.current, point.porosity);
            let run_dir = run.as_deref().or(out.as_deref());
            let (_, csv) = commands::evaluate(&cfg, &source, &op, run_dir, out.as_deref(), opts)?;
            print!("{csv}");
        }
        Command::Sweep {
            common,
            designs,
            flowrates,
            currents,
            porosities,
            run,
            out,
        } => {
            let cfg = load_config(&common)?;
            let sources = designs
                .iter()
                .map(|d| d.parse())
                .collect::<CliResult<Vec<DesignSource>>>()?;
            let csv =
                commands::sweep_designs(&cfg, &sources, &flowrates, &currents, &porosities, run.as_deref(), &out)?;
            print!("{csv}");
        }
        Command::Gradcheck {
            common,
            vars,
            step,
            seed,
            tolerance,
            out,
        } => {
            let cfg = load_config(&common)?;
            let (entries, max) = commands::gradcheck(&cfg, vars, step, seed, out.as_deref())?;
            for e in &entries {
                println!(
                    "variable {:6}  adjoint {:+.8e}  fd {:+.8e}  rel {:.3e}",
                    e.variable, e.adjoint, e.finite_difference, e.relative_error
                );
            }
            println!("max relative error {max:.3e}");
            if max.is_nan() || max >= tolerance {
                return Err(CliError::GradientCheck(max));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VRFB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
