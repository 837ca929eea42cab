//! The gradient field of a bounded quadratic solve is a BMO process: the
//! finite-family estimate of its squared norm must sit under
//! (1 + T) exp(8 k sup|Y|).

use serde_json::json;

use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::paths::{bmo_estimate, default_bmo_family, PathEnsemble};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct BmoConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    /// Ensemble resolution for the stopping family (deterministic grid
    /// times plus |B|-hitting levels).
    pub ensemble_steps: usize,
    pub n_paths: usize,
    pub n_sub: usize,
    pub hit_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for BmoConfig {
    fn default() -> Self {
        BmoConfig {
            horizon: 1.0,
            n_steps: 2000,
            n_points: 801,
            ensemble_steps: 16,
            n_paths: 128,
            n_sub: 10_000,
            hit_levels: vec![0.5, 1.0, 1.5],
            seed: 7,
        }
    }
}

/// Solve the terminal claim, estimate the squared BMO norm of its gradient
/// field over the finite stopping family, and compare against the
/// exponential bound. The estimate is a lower bound for the true norm, so
/// the check reports the (expectedly large) slack rather than a norm value.
pub fn check_bmo_bound(
    gen: &Generator,
    terminal: &TerminalCondition,
    cfg: &BmoConfig,
) -> Result<CheckReport> {
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;
    let base = solver::default_space_grid(terminal, cfg.horizon)?;
    let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
    let surf = solver::solve(gen, terminal, &tgrid, &xgrid, None, &SolveParams::default())?;

    let egrid = TimeGrid::new(0.0, cfg.horizon, cfg.ensemble_steps)?;
    let ensemble = PathEnsemble::simulate(egrid, cfg.n_paths, cfg.seed)?;
    let family = default_bmo_family(&ensemble, &cfg.hit_levels)?;
    let estimate = bmo_estimate(&|t, x| surf.z_value(t, x), &ensemble, &family, cfg.n_sub)?;

    let sup_y = surf.sup_norm();
    let bound = (1.0 + cfg.horizon) * (8.0 * gen.k() * sup_y).exp();

    let mut b = ReportBuilder::new(
        "bmo",
        "the squared BMO norm of the solve's gradient field is at most \
         (1 + T) exp(8 k sup|Y|); the finite-family estimate is a lower bound",
        0.0,
        json!({
            "generator": gen.name(),
            "k": gen.k(),
            "family_size": family.len(),
            "n_sub": cfg.n_sub,
        }),
    );
    b.observe("estimate", estimate)
        .observe("bound", bound)
        .observe("sup_y", sup_y)
        .observe("slack", bound - estimate)
        .seed(cfg.seed)
        .grid(json!({
            "n_steps": cfg.n_steps,
            "n_points": cfg.n_points,
            "ensemble_steps": cfg.ensemble_steps,
            "n_paths": cfg.n_paths,
        }));
    Ok(b.finish(bound - estimate))
}
