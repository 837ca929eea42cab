//! Configuration-driven experiment runner: parse a run config, execute
//! solver/checker jobs, persist reports and plot data.

mod config;
mod runner;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgx::expr::Compiled;
use qgx::gexp::GeneratorSpec;
use qgx::grid::TimeGrid;
use qgx::paths::PathEnsemble;
use qgx::solver::{self, SolveParams, TerminalCondition};
use qgx::theorems;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "qgx",
    about = "Quadratic nonlinear-expectation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the jobs of a run configuration.
    Run {
        /// Path to the JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir; default "out").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker count for job-level parallelism.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        /// Replace every job seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Multiply all checker tolerances.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
    /// Print a checker's asserted relation and default tolerance; with no
    /// id, list all checkers.
    Describe { id: Option<String> },
    /// One-off surface solve straight to CSV.
    Solve {
        /// Generator spec as JSON, e.g. '{"name":"entropic","gamma":1.0}'.
        #[arg(long)]
        generator: String,
        /// Terminal expression over x, e.g. "tanh(x)".
        #[arg(long)]
        terminal: String,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a Brownian ensemble as CSV (path_id, step, increment).
    Paths {
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        n_steps: usize,
        #[arg(long)]
        n_paths: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, qgx::Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
            tol_scale,
        } => {
            let bytes = fs::read(&config)?;
            let parsed: RunConfig = match serde_json::from_slice(&bytes) {
                Ok(cfg) => cfg,
                Err(err) => {
                    eprintln!(
                        "parse error at line {} column {}: {err}",
                        err.line(),
                        err.column()
                    );
                    return Ok(ExitCode::from(2));
                }
            };
            let out_dir = out
                .or_else(|| parsed.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let summary = runner::run_config(&parsed, &bytes, jobs, seed_override, tol_scale)?;
            runner::write_artifacts(&summary, &out_dir)?;
            for o in &summary.outcomes {
                println!(
                    "{:<28} {:<20} {}",
                    o.id,
                    o.kind,
                    if o.pass { "pass" } else { "FAIL" }
                );
            }
            let failing = summary.failing_ids();
            if failing.is_empty() {
                println!("all {} jobs passed", summary.outcomes.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("failing jobs: {}", failing.join(", "));
                Ok(ExitCode::from(1))
            }
        }

        Command::Describe { id } => {
            match id.as_deref() {
                None | Some("") => {
                    for info in theorems::checkers() {
                        println!("{:<22} {}", info.id, info.relation);
                    }
                }
                Some(id) => match theorems::checker_info(id) {
                    Some(info) => {
                        println!("{}", info.id);
                        println!("  relation: {}", info.relation);
                        println!("  default tolerance: {}", info.default_tolerance);
                    }
                    None => {
                        eprintln!("unknown checker '{id}'");
                        return Ok(ExitCode::from(2));
                    }
                },
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Solve {
            generator,
            terminal,
            horizon,
            n_steps,
            n_points,
            out,
        } => {
            let spec: GeneratorSpec = serde_json::from_str(&generator)
                .map_err(|e| qgx::Error::invalid(format!("generator spec: {e}")))?;
            let gen = spec.build()?;
            let compiled = Compiled::parse(&terminal, &["x"])?;
            let term = TerminalCondition::from_scan(move |x| compiled.eval(&[x]))?;
            let tgrid = TimeGrid::new(
                0.0,
                horizon,
                n_steps.unwrap_or_else(|| solver::default_n_steps(horizon)),
            )?;
            let base = solver::default_space_grid(&term, horizon)?;
            let xgrid =
                qgx::grid::SpaceGrid::new(base.x_min(), base.x_max(), n_points.unwrap_or(801))?;
            let surf = solver::solve(&gen, &term, &tgrid, &xgrid, None, &SolveParams::default())?;
            let mut buf = Vec::new();
            surf.export_csv(&mut buf)?;
            fs::write(&out, buf)?;
            println!(
                "wrote {} ({} x {} nodes, value at origin {})",
                out.display(),
                tgrid.n_nodes(),
                xgrid.n_points(),
                surf.value(0.0, 0.0)
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Paths {
            horizon,
            n_steps,
            n_paths,
            seed,
            out,
        } => {
            let grid = TimeGrid::new(0.0, horizon, n_steps)?;
            let ens = PathEnsemble::simulate(grid, n_paths, seed)?;
            let mut buf = Vec::new();
            ens.export_csv(&mut buf)?;
            fs::write(&out, buf)?;
            println!("wrote {} ({n_paths} paths, {n_steps} steps)", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
