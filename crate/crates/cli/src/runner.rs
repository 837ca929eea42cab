//! Job execution: build each task from its spec, run it, and persist the
//! per-job reports, the summary CSV and plot-data files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use qgx::expr::Compiled;
use qgx::generators::Generator;
use qgx::gexp::{GExpectationOperator, MartingaleClass};
use qgx::grid::{SpaceGrid, TimeGrid};
use qgx::paths::{FiniteStoppingTime, PathEnsemble};
use qgx::solver::{self, DriverV, SolveParams, TerminalCondition};
use qgx::theorems::{self, digest_bytes};
use qgx::Error;

use crate::config::{DriverSpec, JobSpec, RunConfig, StopSpec, TaskSpec};

pub struct JobOutcome {
    pub id: String,
    pub kind: &'static str,
    pub pass: bool,
    pub margin: f64,
    pub tolerance: f64,
    pub note: String,
    pub report: Value,
    /// Extra artifact files: (suffix, bytes).
    pub artifacts: Vec<(String, Vec<u8>)>,
}

pub struct RunSummary {
    pub outcomes: Vec<JobOutcome>,
    pub config_digest: String,
    pub summary_csv: String,
}

impl RunSummary {
    pub fn failing_ids(&self) -> Vec<&str> {
        self.outcomes
            .iter()
            .filter(|o| !o.pass)
            .map(|o| o.id.as_str())
            .collect()
    }
}

fn terminal_from_expr(expr: &str) -> Result<TerminalCondition, Error> {
    let compiled = Compiled::parse(expr, &["x"])?;
    TerminalCondition::from_scan(move |x| compiled.eval(&[x]))
}

fn driver_from_spec(spec: &DriverSpec, horizon: f64) -> Result<DriverV, Error> {
    let compiled = Compiled::parse(&spec.density, &["t"])?;
    DriverV::new(
        Arc::new(move |t| compiled.eval(&[t])),
        spec.jumps.clone(),
        horizon,
    )
}

fn convex_from_name(name: &str) -> Result<theorems::ConvexFn, Error> {
    if let Some(rest) = name.strip_prefix("softplus:") {
        let a: f64 = rest
            .parse()
            .map_err(|_| Error::invalid(format!("bad softplus scale '{rest}'")))?;
        return Ok(theorems::ConvexFn::scaled_softplus(a));
    }
    match name {
        "abs" => Ok(theorems::ConvexFn::abs()),
        "relu" => Ok(theorems::ConvexFn::relu()),
        "identity" => Ok(theorems::ConvexFn::identity()),
        other => Err(Error::invalid(format!(
            "unknown convex function '{other}' (abs, relu, identity, softplus:<a>)"
        ))),
    }
}

fn stopping_from_spec(
    spec: &StopSpec,
    ensemble: &PathEnsemble,
) -> Result<FiniteStoppingTime, Error> {
    match spec {
        StopSpec::Deterministic { node } => FiniteStoppingTime::deterministic(ensemble, *node),
        StopSpec::Hit { level, cap } => FiniteStoppingTime::first_abs_hit(ensemble, *level, *cap),
        StopSpec::TwoValued {
            node_a,
            level,
            node_b,
        } => {
            let l = *level;
            FiniteStoppingTime::two_valued(
                ensemble,
                *node_a,
                Arc::new(move |x: f64| x.abs() >= l),
                *node_b,
            )
        }
    }
}

/// Operator for a (generator, terminal) pair at the requested resolution.
fn build_operator(
    gen: Generator,
    terminal_expr: &str,
    horizon: f64,
    n_steps: Option<usize>,
    n_points: Option<usize>,
) -> Result<GExpectationOperator, Error> {
    let terminal = terminal_from_expr(terminal_expr)?;
    GExpectationOperator::with_resolution(
        gen,
        terminal,
        horizon,
        n_steps.unwrap_or_else(|| solver::default_n_steps(horizon)),
        n_points.unwrap_or(801),
        SolveParams::default(),
    )
}

fn run_job(job: &JobSpec, tol_scale_flag: f64) -> Result<JobOutcome, Error> {
    let scale = job.tol_scale * tol_scale_flag;
    let kind = job.task.kind();
    let mut artifacts: Vec<(String, Vec<u8>)> = Vec::new();

    let (report, pass, margin, tolerance, note): (Value, bool, f64, f64, String) = match &job.task {
        TaskSpec::Solve {
            generator,
            terminal,
            horizon,
            n_steps,
            n_points,
            driver,
            export_binary,
        } => {
            let gen = generator.build()?;
            let term = terminal_from_expr(terminal)?;
            let tgrid = TimeGrid::new(
                0.0,
                *horizon,
                n_steps.unwrap_or_else(|| solver::default_n_steps(*horizon)),
            )?;
            let base = solver::default_space_grid(&term, *horizon)?;
            let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), n_points.unwrap_or(801))?;
            let drv = driver
                .as_ref()
                .map(|d| driver_from_spec(d, *horizon))
                .transpose()?;
            let surf = solver::solve(
                &gen,
                &term,
                &tgrid,
                &xgrid,
                drv.as_ref(),
                &SolveParams::default(),
            )?;
            let mut csv = Vec::new();
            surf.export_csv(&mut csv)?;
            artifacts.push(("surface.csv".into(), csv));
            if *export_binary {
                let mut bin = Vec::new();
                surf.write_binary(&mut bin)?;
                artifacts.push(("surface.qgxs".into(), bin));
            }
            let margin = surf.meta.a_priori_bound * 1.05 - surf.meta.sup_norm;
            let report = json!({
                "meta": surf.meta,
                "value_at_origin": surf.value(0.0, 0.0),
                "grid": {"n_steps": tgrid.n_steps(), "n_points": xgrid.n_points()},
            });
            (report, surf.meta.certified, margin, 0.0, String::new())
        }

        TaskSpec::Paths {
            horizon,
            n_steps,
            n_paths,
        } => {
            let grid = TimeGrid::new(0.0, *horizon, *n_steps)?;
            let ens = PathEnsemble::simulate(grid, *n_paths, job.seed)?;
            let mut csv = Vec::new();
            ens.export_csv(&mut csv)?;
            artifacts.push(("paths.csv".into(), csv));
            let mean = ens.mean_terminal();
            let cap = 5.0 * (*horizon / *n_paths as f64).sqrt();
            let report = json!({
                "mean_terminal": mean,
                "n_paths": n_paths,
                "seed": job.seed,
            });
            (
                report,
                mean.abs() <= cap,
                cap - mean.abs(),
                0.0,
                String::new(),
            )
        }

        TaskSpec::Axioms {
            generator,
            n_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let cfg = theorems::AxiomsConfig {
                n_steps: n_steps.unwrap_or(400),
                n_points: n_points.unwrap_or(401),
                ..theorems::AxiomsConfig::default()
            };
            let rep = theorems::check_axioms(&gen, &cfg)?;
            pack(rep)
        }

        TaskSpec::Comparison {
            generator,
            n_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let cfg = theorems::ComparisonConfig {
                n_steps: n_steps.unwrap_or(2000),
                n_points: n_points.unwrap_or(801),
                ..theorems::ComparisonConfig::default()
            };
            let rep = theorems::check_strict_comparison(&gen, &cfg)?;
            pack(rep)
        }

        TaskSpec::Bmo {
            generator,
            terminal,
            n_steps,
            n_points,
            ensemble_steps,
            n_paths,
            n_sub,
        } => {
            let gen = generator.build()?;
            let term = terminal_from_expr(terminal)?;
            let cfg = theorems::BmoConfig {
                n_steps: n_steps.unwrap_or(2000),
                n_points: n_points.unwrap_or(801),
                ensemble_steps: ensemble_steps.unwrap_or(16),
                n_paths: n_paths.unwrap_or(128),
                n_sub: n_sub.unwrap_or(10_000),
                seed: job.seed,
                ..theorems::BmoConfig::default()
            };
            let rep = theorems::check_bmo_bound(&gen, &term, &cfg)?;
            pack(rep)
        }

        TaskSpec::Representation {
            generator,
            t,
            y,
            z,
            delta,
            eps_ladder,
            tolerance,
            n_steps,
            points_per_radius,
        } => {
            let gen = generator.build()?;
            let mut cfg = theorems::RepresentationConfig::new(
                *t,
                *y,
                *z,
                *delta,
                eps_ladder.clone(),
                tolerance * scale,
            );
            if let Some(n) = n_steps {
                cfg.n_steps = *n;
            }
            if let Some(p) = points_per_radius {
                cfg.points_per_radius = *p;
            }
            let rep = theorems::check_representation(&gen, &cfg)?;
            // Quotient ladder as plot data.
            let mut plot = String::from("eps,quotient,error\n");
            let qs = rep.observed["quotients"]
                .as_array()
                .cloned()
                .unwrap_or_default();
            let es = rep.observed["errors"]
                .as_array()
                .cloned()
                .unwrap_or_default();
            for ((eps, q), e) in eps_ladder.iter().zip(qs.iter()).zip(es.iter()) {
                plot.push_str(&format!(
                    "{},{},{}\n",
                    eps,
                    q.as_f64().unwrap_or(f64::NAN),
                    e.as_f64().unwrap_or(f64::NAN)
                ));
            }
            artifacts.push(("quotients.csv".into(), plot.into_bytes()));
            pack(rep)
        }

        TaskSpec::ConverseComparison {
            gen1,
            gen2,
            n_steps,
            n_points,
            n_random_terminals,
        } => {
            let g1 = gen1.build()?;
            let g2 = gen2.build()?;
            let cfg = theorems::ConverseConfig {
                n_steps: n_steps.unwrap_or(400),
                n_points: n_points.unwrap_or(401),
                n_random_terminals: n_random_terminals.unwrap_or(20),
                seed: job.seed,
                ..theorems::ConverseConfig::default()
            };
            let rep = theorems::check_converse_comparison(&g1, &g2, &cfg)?;
            pack(rep)
        }

        TaskSpec::Translation {
            generator,
            constants,
            n_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let cfg = theorems::TranslationConfig {
                constants: constants.clone(),
                n_steps: n_steps.unwrap_or(400),
                n_points: n_points.unwrap_or(401),
                tolerance: 1e-6 * scale,
                ..theorems::TranslationConfig::default()
            };
            let rep = theorems::check_translation_characterization(&gen, &cfg)?;
            pack(rep)
        }

        TaskSpec::Jensen {
            generator,
            convex,
            n_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let f = convex_from_name(convex)?;
            let cfg = theorems::JensenConfig {
                n_steps: n_steps.unwrap_or(400),
                n_points: n_points.unwrap_or(401),
                tolerance: 1e-6 * scale,
                ..theorems::JensenConfig::default()
            };
            let rep = theorems::check_jensen(&gen, &f, &cfg)?;
            pack(rep)
        }

        TaskSpec::DoobMeyer {
            generator,
            terminal,
            drift,
            n_intervals,
            sub_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let n_int = n_intervals.unwrap_or(16);
            let sub = sub_steps.unwrap_or(125);
            let op = build_operator(gen.clone(), terminal, 1.0, Some(n_int * sub), *n_points)?;
            let surf = op.surface();
            let c = *drift;
            let cfg = theorems::DoobMeyerConfig {
                n_intervals: n_int,
                sub_steps: sub,
                n_points: surf.xgrid().n_points(),
                xgrid: Some(*surf.xgrid()),
                ..theorems::DoobMeyerConfig::default()
            };
            let bound = surf.sup_norm() + c.abs();
            let dec = theorems::doob_meyer_decompose(
                &gen,
                &|t, x| surf.value(t, x) + c * t,
                bound,
                &cfg,
            )?;
            pack(dec.report)
        }

        TaskSpec::OptionalSampling {
            generator,
            terminal,
            drift,
            sigma,
            tau,
            ensemble_steps,
            n_paths,
            n_steps,
            n_points,
            tolerance,
        } => {
            let gen = generator.build()?;
            let op = build_operator(gen, terminal, 1.0, *n_steps, *n_points)?;
            let egrid = TimeGrid::new(0.0, 1.0, *ensemble_steps)?;
            let ens = PathEnsemble::simulate(egrid, *n_paths, job.seed)?;
            let sg = stopping_from_spec(sigma, &ens)?;
            let tu = stopping_from_spec(tau, &ens)?;
            let c = *drift;
            let class = if c > 0.0 {
                MartingaleClass::Submartingale
            } else if c < 0.0 {
                MartingaleClass::Supermartingale
            } else {
                MartingaleClass::Martingale
            };
            let surf = op.surface();
            let cfg = theorems::SamplingConfig {
                tolerance: tolerance.unwrap_or(5e-3) * scale,
            };
            let rep = theorems::check_optional_sampling(
                &op,
                &|t, x| surf.value(t, x) + c * t,
                class,
                &sg,
                &tu,
                &ens,
                &cfg,
            )?;
            // Per-path stopped evaluations as CSV.
            let values =
                op.evaluate_at_stopping_times(&sg, &tu, &|t, x| surf.value(t, x) + c * t, &ens)?;
            let mut csv = String::from("path_id,sigma_node,tau_node,value\n");
            for (p, v) in values.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    p,
                    sg.stop_node(p),
                    tu.stop_node(p),
                    v
                ));
            }
            artifacts.push(("values.csv".into(), csv.into_bytes()));
            pack(rep)
        }

        TaskSpec::Upcrossing {
            generator,
            terminal,
            drift,
            a,
            b,
            partition,
            ensemble_steps,
            n_paths,
            sub_steps,
            n_points,
        } => {
            let gen = generator.build()?;
            let op = build_operator(gen.clone(), terminal, 1.0, None, *n_points)?;
            let surf = op.surface();
            let c = *drift;
            let cfg = theorems::UpcrossingConfig {
                a: *a,
                b: *b,
                partition: *partition,
                ensemble_steps: *ensemble_steps,
                n_paths: *n_paths,
                seed: job.seed,
                sub_steps: sub_steps.unwrap_or(125),
                n_points: n_points.unwrap_or(401),
                ..theorems::UpcrossingConfig::default()
            };
            let bound = surf.sup_norm() + c.abs();
            let out =
                theorems::check_upcrossing(&gen, &|t, x| surf.value(t, x) + c * t, bound, &cfg)?;
            // Histogram of counts as plot data.
            let mut plot = String::from("count,paths\n");
            if let Some(hist) = out.report.observed["histogram"].as_array() {
                for (i, v) in hist.iter().enumerate() {
                    plot.push_str(&format!("{},{}\n", i, v.as_u64().unwrap_or(0)));
                }
            }
            artifacts.push(("histogram.csv".into(), plot.into_bytes()));
            pack(out.report)
        }

        TaskSpec::Stability {
            gamma,
            ladder,
            terminal,
            n_steps,
            n_points,
            tolerance,
        } => {
            let term = terminal_from_expr(terminal)?;
            let rungs: Vec<(Generator, TerminalCondition)> = ladder
                .iter()
                .map(|&n| (Generator::mollified_entropic(*gamma, n), term.clone()))
                .collect();
            let cfg = theorems::StabilityConfig {
                n_steps: n_steps.unwrap_or(500),
                n_points: n_points.unwrap_or(401),
                tolerance: tolerance.unwrap_or(1e-3) * scale,
                ..theorems::StabilityConfig::default()
            };
            let rep = theorems::check_stability(&Generator::entropic(*gamma), &term, &rungs, &cfg)?;
            // Error ladder as plot data.
            let mut plot = String::from("rung,sup_error\n");
            if let Some(errs) = rep.observed["sup_errors"].as_array() {
                for (i, v) in errs.iter().enumerate() {
                    plot.push_str(&format!("{},{}\n", i, v.as_f64().unwrap_or(f64::NAN)));
                }
            }
            artifacts.push(("ladder.csv".into(), plot.into_bytes()));
            pack(rep)
        }
    };

    Ok(JobOutcome {
        id: job.id.clone(),
        kind,
        pass,
        margin,
        tolerance,
        note,
        report,
        artifacts,
    })
}

fn pack(rep: theorems::CheckReport) -> (Value, bool, f64, f64, String) {
    let pass = rep.pass;
    let margin = rep.margin;
    let tolerance = rep.tolerance;
    let note = rep.note.clone().unwrap_or_default();
    let value = serde_json::to_value(&rep).expect("reports serialize");
    (value, pass, margin, tolerance, note)
}

/// Execute every job (in parallel up to `n_workers`) and assemble the
/// summary; artifacts are written by [`write_artifacts`].
pub fn run_config(
    config: &RunConfig,
    config_bytes: &[u8],
    n_workers: usize,
    seed_override: Option<u64>,
    tol_scale: f64,
) -> Result<RunSummary, Error> {
    let digest = digest_bytes(config_bytes);
    let mut jobs = config.jobs.clone();
    if let Some(seed) = seed_override {
        for j in &mut jobs {
            j.seed = seed;
        }
    }
    {
        let mut ids: Vec<&str> = jobs.iter().map(|j| j.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != jobs.len() {
            return Err(Error::invalid("job ids must be unique"));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<JobOutcome, Error>> =
        pool.install(|| jobs.par_iter().map(|j| run_job(j, tol_scale)).collect());

    let mut outcomes = Vec::with_capacity(results.len());
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(outcome) => outcomes.push(outcome),
            Err(err) => outcomes.push(JobOutcome {
                id: job.id.clone(),
                kind: job.task.kind(),
                pass: false,
                margin: f64::NEG_INFINITY,
                tolerance: 0.0,
                note: format!("error: {err}"),
                report: json!({"error": err.to_string()}),
                artifacts: Vec::new(),
            }),
        }
    }

    let mut csv = String::from("id,kind,pass,margin,tolerance,note,config_digest\n");
    for o in &outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.id,
            o.kind,
            o.pass,
            o.margin,
            o.tolerance,
            o.note.replace(',', ";"),
            digest
        ));
    }

    Ok(RunSummary {
        outcomes,
        config_digest: digest,
        summary_csv: csv,
    })
}

/// Persist per-job reports, artifacts and the summary CSV under `out_dir`.
pub fn write_artifacts(summary: &RunSummary, out_dir: &Path) -> Result<Vec<PathBuf>, Error> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for o in &summary.outcomes {
        let report_path = out_dir.join(format!("{}.json", o.id));
        let wrapped = json!({
            "schema_version": 1,
            "config_digest": summary.config_digest,
            "job": o.id,
            "kind": o.kind,
            "report": o.report,
        });
        let pretty = serde_json::to_string_pretty(&wrapped)
            .map_err(|e| Error::Numeric(format!("report serialization: {e}")))?;
        fs::write(&report_path, pretty.as_bytes())?;
        written.push(report_path);
        for (suffix, bytes) in &o.artifacts {
            let path = out_dir.join(format!("{}_{suffix}", o.id));
            // Every artifact embeds the config digest: a leading comment
            // line for CSV, a trailer for the binary layout.
            if suffix.ends_with(".csv") {
                let mut framed =
                    format!("# config_digest={}\n", summary.config_digest).into_bytes();
                framed.extend_from_slice(bytes);
                fs::write(&path, framed)?;
            } else {
                let mut framed = bytes.clone();
                framed.extend_from_slice(b"QGXD");
                framed.extend_from_slice(summary.config_digest.as_bytes());
                fs::write(&path, framed)?;
            }
            written.push(path);
        }
    }
    let summary_path = out_dir.join("summary.csv");
    fs::write(&summary_path, summary.summary_csv.as_bytes())?;
    written.push(summary_path);
    Ok(written)
}
