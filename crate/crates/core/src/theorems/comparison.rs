//! Strict comparison: ordering of terminals propagates to the whole
//! surface, and a strict gap on a set of positive mass stays strict at
//! every interior state at time zero.

use serde_json::json;

use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    /// Global one-sided tolerance for the ordering.
    pub order_tolerance: f64,
    /// Strictness is asserted for |x| <= strict_window with at least this
    /// margin; further out the gap decays below Gaussian tail mass.
    pub strict_window: f64,
    pub strict_margin: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            horizon: 1.0,
            n_steps: 2000,
            n_points: 801,
            order_tolerance: 1e-9,
            strict_window: 3.5,
            strict_margin: 1e-4,
        }
    }
}

/// Compact bump supported on (-1, 1), equal to 1 at the origin.
pub fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// phi1 = tanh, phi2 = tanh - 0.1 bump: the solve must preserve the order
/// everywhere and keep a strict gap on the window at time zero.
pub fn check_strict_comparison(gen: &Generator, cfg: &ComparisonConfig) -> Result<CheckReport> {
    let phi1 = TerminalCondition::new(|x: f64| x.tanh(), 1.0)?;
    let phi2 = TerminalCondition::new(|x: f64| x.tanh() - 0.1 * bump(x), 1.1)?;
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;
    let base = solver::default_space_grid(&phi1, cfg.horizon)?;
    let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
    let params = SolveParams::default();

    let u1 = solver::solve(gen, &phi1, &tgrid, &xgrid, None, &params)?;
    let u2 = solver::solve(gen, &phi2, &tgrid, &xgrid, None, &params)?;

    let mut worst_order = f64::INFINITY;
    for i in 0..=cfg.n_steps {
        for j in 0..cfg.n_points {
            worst_order = worst_order.min(u1.u_at(i, j) - u2.u_at(i, j));
        }
    }
    let mut strict_min = f64::INFINITY;
    for (j, x) in xgrid.nodes().enumerate() {
        if x.abs() <= cfg.strict_window {
            strict_min = strict_min.min(u1.u_at(0, j) - u2.u_at(0, j));
        }
    }

    let mut b = ReportBuilder::new(
        "comparison",
        "phi1 >= phi2 implies the evaluations are ordered everywhere; a strict gap on a \
         set of positive mass forces strict ordering at interior states at time 0",
        cfg.order_tolerance,
        json!({"generator": gen.name(), "window": cfg.strict_window}),
    );
    b.observe("worst_order_violation", worst_order)
        .observe("strict_gap_min", strict_min)
        .observe("strict_margin_required", cfg.strict_margin)
        .grid(json!({"n_steps": cfg.n_steps, "n_points": cfg.n_points}));
    // Combined margin: ordering within tolerance AND strict part above its
    // own floor.
    let margin = worst_order.min(strict_min - cfg.strict_margin - cfg.order_tolerance);
    Ok(b.finish(margin))
}
