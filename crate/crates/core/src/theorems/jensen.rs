//! Conditional Jensen inequality for convex transforms under convex,
//! y-independent generators, with the one-sided-derivative selector that
//! gates where the inequality is asserted.

use std::sync::Arc;

use serde_json::json;

use crate::error::Error;
use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::families;
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

/// A convex real function together with its one-sided derivatives.
#[derive(Clone)]
pub struct ConvexFn {
    pub name: String,
    pub eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d_minus: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d_plus: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ConvexFn {
    pub fn abs() -> Self {
        ConvexFn {
            name: "abs".into(),
            eval: Arc::new(|x: f64| x.abs()),
            d_minus: Arc::new(|x: f64| if x > 0.0 { 1.0 } else { -1.0 }),
            d_plus: Arc::new(|x: f64| if x >= 0.0 { 1.0 } else { -1.0 }),
        }
    }

    pub fn relu() -> Self {
        ConvexFn {
            name: "max(x,0)".into(),
            eval: Arc::new(|x: f64| x.max(0.0)),
            d_minus: Arc::new(|x: f64| if x > 0.0 { 1.0 } else { 0.0 }),
            d_plus: Arc::new(|x: f64| if x >= 0.0 { 1.0 } else { 0.0 }),
        }
    }

    pub fn identity() -> Self {
        ConvexFn {
            name: "x".into(),
            eval: Arc::new(|x| x),
            d_minus: Arc::new(|_| 1.0),
            d_plus: Arc::new(|_| 1.0),
        }
    }

    /// a * ln(1 + e^x): smooth convex with derivative in (0, a); for
    /// a < 1 the subdifferential never leaves (0, 1), so the gate must
    /// reject every state.
    pub fn scaled_softplus(a: f64) -> Self {
        ConvexFn {
            name: format!("{a}*softplus"),
            eval: Arc::new(move |x: f64| a * (1.0 + x.exp()).ln()),
            d_minus: Arc::new(move |x: f64| a / (1.0 + (-x).exp())),
            d_plus: Arc::new(move |x: f64| a / (1.0 + (-x).exp())),
        }
    }

    /// The non-decreasing selector picking the left derivative when it is
    /// <= 0 and the right one otherwise.
    pub fn selector(&self, x: f64) -> f64 {
        let dm = (self.d_minus)(x);
        if dm <= 0.0 {
            dm
        } else {
            (self.d_plus)(x)
        }
    }

    /// The subdifferential meets the complement of (0, 1) iff the selector
    /// lands outside (0, 1).
    pub fn gate_open(&self, x: f64) -> bool {
        let b = self.selector(x);
        b <= 0.0 || b >= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct JensenConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    pub tolerance: f64,
    /// Dyadic time levels probed (i / 8 of the horizon, i in 1..8).
    pub dyadic_levels: usize,
}

impl Default for JensenConfig {
    fn default() -> Self {
        JensenConfig {
            horizon: 1.0,
            n_steps: 400,
            n_points: 401,
            tolerance: 1e-6,
            dyadic_levels: 8,
        }
    }
}

/// For each family terminal, solve both routes (transform of the
/// evaluation vs evaluation of the transform) and assert the inequality
/// at every probed state where the subdifferential gate is open.
pub fn check_jensen(gen: &Generator, f: &ConvexFn, cfg: &JensenConfig) -> Result<CheckReport> {
    let flags = gen.flags();
    if !flags.convex_in_z || !flags.y_independent || !flags.satisfies_g0 {
        return Err(Error::invalid(format!(
            "generator '{}' must be convex in z, independent of y and vanish at z = 0",
            gen.name()
        )));
    }
    let params = SolveParams::default();
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;

    let mut worst = f64::INFINITY;
    let mut worst_at = String::new();
    let mut n_checked = 0usize;
    let mut n_gated_off = 0usize;

    for (name, xi) in families::core_family() {
        let base = solver::default_space_grid(&xi, cfg.horizon)?;
        let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
        let u = solver::solve(gen, &xi, &tgrid, &xgrid, None, &params)?;
        let fx = {
            let xi2 = xi.clone();
            let fe = f.eval.clone();
            let fb = (f.eval)(xi.bound()).abs().max((f.eval)(-xi.bound()).abs());
            TerminalCondition::new(move |x| fe(xi2.eval(x)), fb)?
        };
        let uf = solver::solve(gen, &fx, &tgrid, &xgrid, None, &params)?;

        for lvl in 0..cfg.dyadic_levels {
            let ti = cfg.n_steps * lvl / cfg.dyadic_levels;
            for jj in 0..xgrid.n_points() {
                let v = u.u_at(ti, jj);
                if !f.gate_open(v) {
                    n_gated_off += 1;
                    continue;
                }
                n_checked += 1;
                let margin = uf.u_at(ti, jj) - (f.eval)(v);
                if margin < worst {
                    worst = margin;
                    worst_at = format!("{name} at (t_idx={ti}, x={})", xgrid.node(jj));
                }
            }
        }
    }

    let mut b = ReportBuilder::new(
        "jensen",
        "F(evaluation of xi) <= evaluation of F(xi) for convex F, at every state where \
         the subdifferential of F at the evaluation meets the complement of (0, 1)",
        cfg.tolerance,
        json!({"generator": gen.name(), "convex_fn": f.name}),
    );
    b.observe("worst_margin", if worst.is_finite() { worst } else { 0.0 })
        .observe("worst_at", worst_at)
        .observe("n_checked", n_checked)
        .observe("n_gated_off", n_gated_off)
        .grid(json!({"n_steps": cfg.n_steps, "n_points": cfg.n_points}));
    if n_checked == 0 {
        b.note("condition-not-met");
        // Nothing asserted anywhere: informational pass.
        return Ok(b.finish(0.0));
    }
    Ok(b.finish(worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> JensenConfig {
        JensenConfig {
            n_steps: 200,
            n_points: 201,
            dyadic_levels: 4,
            ..JensenConfig::default()
        }
    }

    #[test]
    fn abs_under_entropic_holds() {
        let rep = check_jensen(&Generator::entropic(1.0), &ConvexFn::abs(), &quick_cfg()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.observed["n_checked"].as_u64().unwrap() > 0);
    }

    #[test]
    fn identity_gives_equality() {
        let rep = check_jensen(
            &Generator::entropic(1.0),
            &ConvexFn::identity(),
            &quick_cfg(),
        )
        .unwrap();
        assert!(rep.pass);
        let worst = rep.observed["worst_margin"].as_f64().unwrap();
        assert!(worst.abs() < 1e-9, "worst {worst}");
    }

    #[test]
    fn softplus_gate_closes_everywhere() {
        let rep = check_jensen(
            &Generator::entropic(1.0),
            &ConvexFn::scaled_softplus(0.5),
            &quick_cfg(),
        )
        .unwrap();
        assert_eq!(rep.note.as_deref(), Some("condition-not-met"));
        assert_eq!(rep.observed["n_checked"].as_u64().unwrap(), 0);
        assert!(rep.observed["n_gated_off"].as_u64().unwrap() > 0);
    }

    #[test]
    fn selector_matches_definition() {
        let f = ConvexFn::abs();
        assert_eq!(f.selector(-0.5), -1.0);
        assert_eq!(f.selector(0.0), -1.0);
        assert_eq!(f.selector(0.5), 1.0);
        assert!(f.gate_open(0.3));
        let g = ConvexFn::scaled_softplus(0.5);
        assert!(!g.gate_open(0.0));
    }

    #[test]
    fn non_convex_generator_is_rejected() {
        let gen = Generator::entropic(1.0).reflect();
        assert!(check_jensen(&gen, &ConvexFn::abs(), &quick_cfg()).is_err());
    }
}
