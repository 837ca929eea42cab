//! Stability of the evaluation under generator/terminal approximation:
//! solutions of a ladder converging locally uniformly (with shared growth
//! constants) converge uniformly to the limit solution.

use serde_json::json;

use crate::error::Error;
use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct StabilityConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    /// Final sup error target.
    pub tolerance: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            horizon: 1.0,
            n_steps: 500,
            n_points: 401,
            tolerance: 1e-3,
        }
    }
}

/// Solve every ladder entry and the limit on shared grids; the sup errors
/// must decrease (weakly) along the ladder and end under the tolerance.
/// Ladder entries must carry the same growth metadata as the limit.
pub fn check_stability(
    limit_gen: &Generator,
    limit_terminal: &TerminalCondition,
    ladder: &[(Generator, TerminalCondition)],
    cfg: &StabilityConfig,
) -> Result<CheckReport> {
    if ladder.len() < 3 {
        return Err(Error::invalid("stability ladder needs at least 3 entries"));
    }
    for (g, _) in ladder {
        if (g.k() - limit_gen.k()).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "ladder entry '{}' has k = {} but the limit has k = {}",
                g.name(),
                g.k(),
                limit_gen.k()
            )));
        }
        for r in [0.0, 1.0, 2.0, 5.0, 10.0] {
            if (g.ell(r) - limit_gen.ell(r)).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "ladder entry '{}' does not share ell with the limit at r = {r}",
                    g.name()
                )));
            }
        }
    }

    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;
    let base = solver::default_space_grid(limit_terminal, cfg.horizon)?;
    let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
    let params = SolveParams::default();

    let u_limit = solver::solve(limit_gen, limit_terminal, &tgrid, &xgrid, None, &params)?;
    let mut errors = Vec::with_capacity(ladder.len());
    for (g, xi) in ladder {
        let u = solver::solve(g, xi, &tgrid, &xgrid, None, &params)?;
        errors.push(u.sup_distance(&u_limit));
    }

    let monotone = errors
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
    let last = *errors.last().expect("non-empty ladder");

    let mut b = ReportBuilder::new(
        "stability",
        "if the generators converge locally uniformly with shared growth constants and \
         the terminals converge, the solutions converge uniformly",
        cfg.tolerance,
        json!({
            "limit": limit_gen.name(),
            "ladder": ladder.iter().map(|(g, _)| g.name().to_string()).collect::<Vec<_>>(),
        }),
    );
    b.observe("sup_errors", &errors)
        .observe("monotone", monotone)
        .grid(json!({"n_steps": cfg.n_steps, "n_points": cfg.n_points}));
    let margin = if monotone {
        cfg.tolerance - last
    } else {
        // A non-monotone ladder fails regardless of the final error.
        -cfg.tolerance - 1.0
    };
    Ok(b.finish(margin))
}
