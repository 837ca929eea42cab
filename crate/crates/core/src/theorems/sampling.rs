//! Optional sampling at finite-valued stopping times: the stopped
//! evaluation of a g-(sub/super)martingale respects its classification.

use serde_json::json;

use crate::gexp::{GExpectationOperator, MartingaleClass};
use crate::paths::{FiniteStoppingTime, PathEnsemble};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct SamplingConfig {
    /// Path-level tolerance for the equality/inequality.
    pub tolerance: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { tolerance: 5e-3 }
    }
}

/// Evaluate X over [sigma, tau] by the stopping-time recursion and compare
/// with X at sigma per path: equality for martingales, one-sided bounds
/// otherwise.
pub fn check_optional_sampling(
    op: &GExpectationOperator,
    x_process: &(dyn Fn(f64, f64) -> f64 + Sync),
    class: MartingaleClass,
    sigma: &FiniteStoppingTime,
    tau: &FiniteStoppingTime,
    ensemble: &PathEnsemble,
    cfg: &SamplingConfig,
) -> Result<CheckReport> {
    let lhs = op.evaluate_at_stopping_times(sigma, tau, x_process, ensemble)?;

    let mut states = vec![0.0f64; ensemble.grid().n_nodes()];
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::NEG_INFINITY;
    let mut worst_path = 0usize;
    for p in 0..ensemble.n_paths() {
        ensemble.fill_states(p, &mut states);
        let node = sigma.stop_node(p);
        let rhs = x_process(ensemble.grid().node(node), states[node]);
        let diff = lhs[p] - rhs;
        if diff < worst_low {
            worst_low = diff;
            worst_path = p;
        }
        worst_high = worst_high.max(diff);
    }

    // Signed margin per classification: the report passes iff it sits
    // above -tolerance.
    let margin = match class {
        MartingaleClass::Martingale => -worst_low.abs().max(worst_high.abs()),
        MartingaleClass::Submartingale => worst_low,
        MartingaleClass::Supermartingale => -worst_high,
        MartingaleClass::Neither => {
            return Err(crate::Error::invalid(
                "optional sampling needs a classified process",
            ))
        }
    };

    let mut b = ReportBuilder::new(
        "optional_sampling",
        "the stopped evaluation of X over [sigma, tau] is >= / <= / = X at sigma \
         according to its sub/super/martingale classification",
        cfg.tolerance,
        json!({
            "class": format!("{class:?}"),
            "n_paths": ensemble.n_paths(),
            "sigma_values": sigma.value_nodes(),
            "tau_values": tau.value_nodes(),
        }),
    );
    b.observe("worst_low", worst_low)
        .observe("worst_high", worst_high)
        .observe("worst_path", worst_path)
        .seed(ensemble.seed())
        .grid(json!({
            "ensemble_steps": ensemble.grid().n_steps(),
        }));
    Ok(b.finish(margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::Generator;
    use crate::grid::TimeGrid;
    use crate::solver::{SolveParams, TerminalCondition};
    use std::sync::Arc;

    fn martingale_op() -> GExpectationOperator {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        GExpectationOperator::with_resolution(
            Generator::entropic(1.0),
            term,
            1.0,
            256,
            201,
            SolveParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_sigma_equals_tau_is_exact() {
        let o = martingale_op();
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let ens = PathEnsemble::simulate(grid, 32, 3).unwrap();
        let tau = FiniteStoppingTime::deterministic(&ens, 5).unwrap();
        let surf = o.surface();
        let rep = check_optional_sampling(
            &o,
            &|t, x| surf.value(t, x),
            MartingaleClass::Martingale,
            &tau,
            &tau,
            &ens,
            &SamplingConfig::default(),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.observed["worst_high"].as_f64().unwrap().abs() < 1e-12);
    }

    #[test]
    fn martingale_equality_with_two_valued_times() {
        let o = martingale_op();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let ens = PathEnsemble::simulate(grid, 256, 21).unwrap();
        let pred: Arc<dyn Fn(f64) -> bool + Send + Sync> = Arc::new(|x: f64| x.abs() >= 0.3);
        let sigma = FiniteStoppingTime::two_valued(&ens, 4, pred.clone(), 8).unwrap();
        let pred2: Arc<dyn Fn(f64) -> bool + Send + Sync> = Arc::new(|x: f64| x.abs() >= 0.8);
        let tau = FiniteStoppingTime::two_valued(&ens, 8, pred2, 12).unwrap();
        let surf = o.surface();
        let rep = check_optional_sampling(
            &o,
            &|t, x| surf.value(t, x),
            MartingaleClass::Martingale,
            &sigma,
            &tau,
            &ens,
            &SamplingConfig::default(),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn submartingale_keeps_one_sided_margin() {
        let o = martingale_op();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let ens = PathEnsemble::simulate(grid, 256, 22).unwrap();
        let sigma = FiniteStoppingTime::deterministic(&ens, 0).unwrap();
        let tau = FiniteStoppingTime::first_abs_hit(&ens, 1.0, 16).unwrap();
        let surf = o.surface();
        let c = 0.5;
        let rep = check_optional_sampling(
            &o,
            &|t, x| surf.value(t, x) + c * t,
            MartingaleClass::Submartingale,
            &sigma,
            &tau,
            &ens,
            &SamplingConfig::default(),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        // Strictly positive drift should show up as a strictly positive
        // worst_high.
        assert!(rep.observed["worst_high"].as_f64().unwrap() > 0.0);
    }
}
