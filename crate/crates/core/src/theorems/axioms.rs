//! The evaluation-family axioms, run as one falsification suite per
//! generator over the 12-terminal family: monotonicity, constant
//! preservation, the interval-event masking law, translation invariance
//! and time-consistency (with a refinement probe).

use rayon::prelude::*;
use serde_json::json;

use crate::error::Error;
use crate::generators::Generator;
use crate::gexp::GExpectationOperator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::comparison::bump;
use crate::theorems::families;
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct AxiomsConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    pub monotonicity_tol: f64,
    pub constant_tol: f64,
    pub translation_tol: f64,
    pub compose_tol: f64,
    pub zero_one_on_tol: f64,
    pub zero_one_off_tol: f64,
    /// Re-run the composition at doubled resolution and require the gap
    /// not to grow.
    pub check_refinement: bool,
}

impl Default for AxiomsConfig {
    fn default() -> Self {
        AxiomsConfig {
            horizon: 1.0,
            n_steps: 400,
            n_points: 401,
            monotonicity_tol: 1e-9,
            constant_tol: 1e-12,
            translation_tol: 1e-9,
            compose_tol: 5e-3,
            zero_one_on_tol: 5e-3,
            zero_one_off_tol: 1e-8,
            check_refinement: true,
        }
    }
}

struct TerminalOutcome {
    monotonicity: f64,
    translation: f64,
    compose: f64,
}

fn compose_gap(op: &GExpectationOperator, xi: &TerminalCondition, horizon: f64) -> Result<f64> {
    let (two_stage, direct) = op.compose(0.0, horizon / 2.0, horizon, xi)?;
    let mut gap = 0.0f64;
    let mut x = -3.0;
    while x <= 3.0 {
        gap = gap.max((two_stage.value(0.0, x) - direct.value(0.0, x)).abs());
        x += 0.15;
    }
    Ok(gap)
}

/// Runs the axiom suite for one generator and reports the worst margin per
/// axiom. The report's margin is the minimum of the per-axiom margins
/// relative to their tolerances, so a single failing axiom fails the run.
pub fn check_axioms(gen: &Generator, cfg: &AxiomsConfig) -> Result<CheckReport> {
    if !gen.flags().satisfies_g0 {
        return Err(Error::invalid(
            "the axiom suite requires the constant-preserving form g(., ., 0) = 0",
        ));
    }
    let params = SolveParams::default();
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;
    let family = families::core_family();

    let op = GExpectationOperator::with_resolution(
        gen.clone(),
        TerminalCondition::new(|x: f64| x.tanh(), 1.0)?,
        cfg.horizon,
        cfg.n_steps,
        cfg.n_points,
        params,
    )?;

    // Per-terminal sweeps, parallel across the family.
    let outcomes: Vec<TerminalOutcome> = family
        .par_iter()
        .map(|(_, xi)| -> Result<TerminalOutcome> {
            let base = solver::default_space_grid(xi, cfg.horizon)?;
            let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
            let u = solver::solve(gen, xi, &tgrid, &xgrid, None, &params)?;

            // Monotonicity: xi dominates xi - 0.05 bump.
            let lower = {
                let f = xi.clone();
                TerminalCondition::new(move |x| f.eval(x) - 0.05 * bump(x), xi.bound() + 0.05)?
            };
            let u_lower = solver::solve(gen, &lower, &tgrid, &xgrid, None, &params)?;
            let mut mono = 0.0f64;
            for i in 0..=cfg.n_steps {
                for j in 0..cfg.n_points {
                    mono = mono.max(u_lower.u_at(i, j) - u.u_at(i, j));
                }
            }

            // Translation invariance for constants (y-independent case).
            let eta = 0.7;
            let shifted = {
                let f = xi.clone();
                TerminalCondition::new(move |x| f.eval(x) + eta, xi.bound() + eta)?
            };
            let u_shift = solver::solve(gen, &shifted, &tgrid, &xgrid, None, &params)?;
            let mut trans = 0.0f64;
            if gen.flags().y_independent {
                for i in 0..=cfg.n_steps {
                    for j in 0..cfg.n_points {
                        trans = trans.max((u_shift.u_at(i, j) - u.u_at(i, j) - eta).abs());
                    }
                }
            }

            let compose = compose_gap(&op, xi, cfg.horizon)?;
            Ok(TerminalOutcome {
                monotonicity: mono,
                translation: trans,
                compose,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let worst_mono = outcomes.iter().fold(0.0f64, |a, o| a.max(o.monotonicity));
    let worst_trans = outcomes.iter().fold(0.0f64, |a, o| a.max(o.translation));
    let mut worst_compose = outcomes.iter().fold(0.0f64, |a, o| a.max(o.compose));
    let worst_compose_idx = (0..outcomes.len())
        .max_by(|&a, &b| outcomes[a].compose.total_cmp(&outcomes[b].compose))
        .unwrap_or(0);

    // Scheme-limited assertions are tightened by refinement before a FAIL
    // is reported: a failure that melts away under grid doubling is
    // discretization error, not an axiom violation.
    let fine_op = |scale: usize| -> Result<GExpectationOperator> {
        GExpectationOperator::with_resolution(
            gen.clone(),
            TerminalCondition::new(|x: f64| x.tanh(), 1.0)?,
            cfg.horizon,
            cfg.n_steps * scale,
            scale * (cfg.n_points - 1) + 1,
            params,
        )
    };
    let mut compose_rescued = false;
    if worst_compose > cfg.compose_tol {
        for scale in [2usize, 4] {
            let fine = fine_op(scale)?;
            let refined = compose_gap(&fine, &family[worst_compose_idx].1, cfg.horizon)?;
            worst_compose = refined;
            if refined <= cfg.compose_tol {
                compose_rescued = true;
                break;
            }
        }
    }

    // Constant preservation.
    let mut worst_const = 0.0f64;
    for c in [-1.0f64, 0.3] {
        let term = TerminalCondition::new(move |_| c, c.abs())?;
        let xgrid = SpaceGrid::symmetric(8.0, cfg.n_points)?;
        let u = solver::solve(gen, &term, &tgrid, &xgrid, None, &params)?;
        for i in 0..=cfg.n_steps {
            for j in 0..cfg.n_points {
                worst_const = worst_const.max((u.u_at(i, j) - c).abs());
            }
        }
    }

    // Interval-event masking on three representative terminals, with the
    // same refine-before-fail treatment for the scheme-limited on-event
    // branch.
    let mut worst_zero_one_on = 0.0f64;
    let mut worst_zero_one_off = 0.0f64;
    let mut zero_one_worst_case = (0usize, (-0.5, 0.5));
    for idx in [0usize, 4, 8] {
        let (_, xi) = &family[idx];
        for interval in [(-0.5, 0.5), (0.2, 1.0)] {
            let (on_a, off_a) = op.zero_one_probe(cfg.horizon / 2.0, cfg.horizon, xi, interval)?;
            if on_a > worst_zero_one_on {
                worst_zero_one_on = on_a;
                zero_one_worst_case = (idx, interval);
            }
            worst_zero_one_off = worst_zero_one_off.max(off_a);
        }
    }
    let mut zero_one_rescued = false;
    if worst_zero_one_on > cfg.zero_one_on_tol {
        let (idx, interval) = zero_one_worst_case;
        for scale in [2usize, 4] {
            let fine = fine_op(scale)?;
            let (on_a, _) =
                fine.zero_one_probe(cfg.horizon / 2.0, cfg.horizon, &family[idx].1, interval)?;
            worst_zero_one_on = on_a;
            if on_a <= cfg.zero_one_on_tol {
                zero_one_rescued = true;
                break;
            }
        }
    }

    // Refinement probe for time-consistency on the first terminal.
    let mut refinement_ok = true;
    let mut refined_gap = f64::NAN;
    if cfg.check_refinement {
        let fine = GExpectationOperator::with_resolution(
            gen.clone(),
            TerminalCondition::new(|x: f64| x.tanh(), 1.0)?,
            cfg.horizon,
            cfg.n_steps * 2,
            cfg.n_points * 2 - 1,
            params,
        )?;
        let coarse_gap = compose_gap(&op, &family[0].1, cfg.horizon)?;
        refined_gap = compose_gap(&fine, &family[0].1, cfg.horizon)?;
        refinement_ok = refined_gap <= coarse_gap * 1.05 + 1e-9;
    }

    let margins = [
        (cfg.monotonicity_tol - worst_mono) / cfg.monotonicity_tol,
        (cfg.constant_tol - worst_const) / cfg.constant_tol,
        (cfg.translation_tol - worst_trans) / cfg.translation_tol,
        (cfg.compose_tol - worst_compose) / cfg.compose_tol,
        (cfg.zero_one_on_tol - worst_zero_one_on) / cfg.zero_one_on_tol,
        (cfg.zero_one_off_tol - worst_zero_one_off) / cfg.zero_one_off_tol,
        if refinement_ok { 1.0 } else { -1.0 },
    ];
    let margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut b = ReportBuilder::new(
        "axioms",
        "monotonicity, constant preservation, interval-event masking, translation \
         invariance and time-consistency of the evaluation family over the 12-terminal \
         family",
        0.0,
        json!({"generator": gen.name(), "family_size": family.len()}),
    );
    b.observe("worst_monotonicity_violation", worst_mono)
        .observe("worst_constant_error", worst_const)
        .observe("worst_translation_error", worst_trans)
        .observe("worst_compose_gap", worst_compose)
        .observe("worst_zero_one_on_event", worst_zero_one_on)
        .observe("worst_zero_one_off_event", worst_zero_one_off)
        .observe("refined_compose_gap", refined_gap)
        .observe("refinement_ok", refinement_ok)
        .observe("compose_rescued_by_refinement", compose_rescued)
        .observe("zero_one_rescued_by_refinement", zero_one_rescued)
        .observe("relative_margins", margins.to_vec())
        .grid(json!({"n_steps": cfg.n_steps, "n_points": cfg.n_points}));
    Ok(b.finish(margin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axioms_hold_for_the_zero_generator() {
        let cfg = AxiomsConfig {
            n_steps: 160,
            n_points: 201,
            check_refinement: false,
            ..AxiomsConfig::default()
        };
        let rep = check_axioms(&Generator::zero(), &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn axioms_hold_for_entropic() {
        let cfg = AxiomsConfig {
            n_steps: 160,
            n_points: 201,
            check_refinement: false,
            ..AxiomsConfig::default()
        };
        let rep = check_axioms(&Generator::entropic(1.0), &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn scheme_limited_failures_are_rescued_by_refinement() {
        // At 16 x 41 the composition gap sits above the 5e-3 tolerance for
        // discretization reasons alone; the retry at doubled resolution
        // clears it, so the suite must pass and record the rescue.
        let cfg = AxiomsConfig {
            n_steps: 16,
            n_points: 41,
            check_refinement: false,
            ..AxiomsConfig::default()
        };
        let rep = check_axioms(&Generator::entropic(1.0), &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
        let rescued = rep.observed["compose_rescued_by_refinement"]
            .as_bool()
            .unwrap()
            || rep.observed["zero_one_rescued_by_refinement"]
                .as_bool()
                .unwrap();
        assert!(rescued, "{rep:?}");
    }

    #[test]
    fn non_g0_generators_are_rejected() {
        let cfg = AxiomsConfig::default();
        assert!(check_axioms(&Generator::mollified_entropic(1.0, 4), &cfg).is_err());
    }
}
