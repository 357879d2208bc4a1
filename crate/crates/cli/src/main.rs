use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strain_gmsfem::experiment::{
    field_data, run_sweep, solve_fine, ExperimentConfig, FieldData, FieldKind, Problem, RunSettings,
};
use strain_gmsfem::reporting::{
    write_coefficients, write_displacement, write_nodal_scalar, write_picard_trace, write_reports, write_table,
};
use strain_gmsfem::Error;

/// Fine and multiscale solves of strain-limiting elasticity on the unit square.
#[derive(Debug, Parser)]
#[command(name = "strain-gmsfem", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sweep cells run concurrently (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Write zero wall times so reruns produce identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fine Picard solve; writes the displacement and the iteration history.
    SolveFine,
    /// Multiscale runs over every (Nb, delta) cell of the config.
    Sweep,
    /// One field as a CSV point cloud: `u`, `kappa`, `pou:<i>` or `pou-sum`.
    ExportField { field: String },
}

enum Failure {
    Invalid(Error),
    NotConverged(String),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::UnknownField(_)
            | Error::InvalidCoefficient(_)
            | Error::InvalidMesh(_)
            | Error::NonNesting { .. }
            | Error::Raster { .. } => Failure::Invalid(e),
            e => Failure::Other(e),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(Error::Config(format!("{}: {e}", path.display()))))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref())?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Failure::Other(e.into()))?;
    let file = |suffix: &str| out.join(format!("{}_{suffix}", cfg.name));
    let settings = RunSettings {
        workers: cli.workers,
        deterministic: cli.deterministic,
    };

    match &cli.command {
        Command::SolveFine => {
            let problem = Problem::new(&cfg)?;
            let fine = solve_fine(&cfg, &problem)?;
            write_displacement(&problem.mesh, &fine.u, &file("fine_u.csv"))?;
            write_picard_trace(&fine.trace, &file("fine_trace.csv"))?;
            eprintln!(
                "fine solve: {} Picard iterations, converged {}",
                fine.trace.iterations(),
                fine.trace.converged
            );
            if !fine.trace.converged {
                return Err(Failure::NotConverged("fine Picard iteration".into()));
            }
        }
        Command::Sweep => {
            let outcome = run_sweep(&cfg, settings)?;
            write_table(&outcome.rows, &file("table.csv"))?;
            write_reports(&outcome.reports, &file("reports.json"))?;
            for r in &outcome.rows {
                eprintln!(
                    "Nb {:>5} delta {:>6}: e_L2 {:.3e} e_H1 {:.3e} ({} iterations, {} builds)",
                    r.nb, r.delta, r.errors.e_l2, r.errors.e_h1, r.picard_iters, r.basis_updates
                );
            }
            if !outcome.all_converged() {
                return Err(Failure::NotConverged("at least one Picard iteration".into()));
            }
        }
        Command::ExportField { field } => {
            let which: FieldKind = field.parse()?;
            let problem = Problem::new(&cfg)?;
            let (data, trace) = field_data(&cfg, &problem, which)?;
            let path = file(&format!("{}.csv", which.file_stem()));
            match data {
                FieldData::Displacement(u) => write_displacement(&problem.mesh, &u, &path)?,
                FieldData::Coefficients { kappa } => write_coefficients(&problem.mesh, &kappa, &problem.beta, &path)?,
                FieldData::Nodal(v) => write_nodal_scalar(&problem.mesh, &v, &path)?,
            }
            if !trace.converged {
                return Err(Failure::NotConverged("fine Picard iteration".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(what)) => {
            eprintln!("error: {what} did not converge");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
