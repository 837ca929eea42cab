//! Translation-invariance characterization: the evaluation commutes with
//! adding constants exactly when the generator does not depend on y.

use serde_json::json;

use crate::error::Error;
use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::families;
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct TranslationConfig {
    pub horizon: f64,
    pub constants: Vec<f64>,
    pub n_steps: usize,
    pub n_points: usize,
    pub tolerance: f64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig {
            horizon: 1.0,
            constants: vec![0.7, -0.4, 1.5],
            n_steps: 400,
            n_points: 401,
            tolerance: 1e-6,
        }
    }
}

/// Max over the family and constants of |val(xi + c) - val(xi) - c| at
/// time 0, cross-tabulated against the y-independence flag: flagged
/// generators must sit under the tolerance, unflagged ones must produce a
/// deviation at least 10x above it for some probe.
pub fn check_translation_characterization(
    gen: &Generator,
    cfg: &TranslationConfig,
) -> Result<CheckReport> {
    if cfg.constants.is_empty() {
        return Err(Error::invalid("need at least one shift constant"));
    }
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.n_steps)?;
    let params = SolveParams::default();

    let mut family = families::core_family();
    // Constants expose y-dependence through the plain value ODE.
    family.push(("const(0)".into(), TerminalCondition::new(|_| 0.0, 0.0)?));
    family.push(("const(0.5)".into(), TerminalCondition::new(|_| 0.5, 0.5)?));

    let mut worst = 0.0f64;
    let mut witness = String::new();
    for (name, xi) in &family {
        let base = solver::default_space_grid(xi, cfg.horizon)?;
        let xgrid = SpaceGrid::new(base.x_min(), base.x_max(), cfg.n_points)?;
        let u = solver::solve(gen, xi, &tgrid, &xgrid, None, &params)?;
        for &c in &cfg.constants {
            let xi2 = {
                let f = xi.clone();
                TerminalCondition::new(move |x| f.eval(x) + c, xi.bound() + c.abs())?
            };
            let u2 = solver::solve(gen, &xi2, &tgrid, &xgrid, None, &params)?;
            let jc = xgrid.n_points() / 2;
            let dev = (u2.u_at(0, jc) - u.u_at(0, jc) - c).abs();
            if dev > worst {
                worst = dev;
                witness = format!("{name} with c = {c}");
            }
        }
    }

    let flag = gen.flags().y_independent;
    // Signed margin: flagged generators pass small deviations, unflagged
    // ones pass large deviations.
    let margin = if flag {
        cfg.tolerance - worst
    } else {
        worst - 10.0 * cfg.tolerance
    };

    let mut b = ReportBuilder::new(
        "translation",
        "the generator is independent of y iff evaluating xi + c equals \
         evaluating xi plus c for every bounded xi and constant c",
        cfg.tolerance,
        json!({
            "generator": gen.name(),
            "constants": cfg.constants,
            "y_independent_flag": flag,
        }),
    );
    b.observe("worst_deviation", worst)
        .observe("witness", witness)
        .observe(
            "direction",
            if flag { "must-commute" } else { "must-deviate" },
        )
        .grid(json!({"n_steps": cfg.n_steps, "n_points": cfg.n_points}));
    Ok(b.finish(margin))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TranslationConfig {
        TranslationConfig {
            n_steps: 200,
            n_points: 201,
            constants: vec![0.7],
            ..TranslationConfig::default()
        }
    }

    #[test]
    fn entropic_commutes_with_shifts() {
        let rep =
            check_translation_characterization(&Generator::entropic(1.0), &quick_cfg()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.observed["worst_deviation"].as_f64().unwrap() < 1e-6);
    }

    #[test]
    fn zero_shift_deviation_vanishes() {
        let mut cfg = quick_cfg();
        cfg.constants = vec![0.0];
        let rep = check_translation_characterization(&Generator::abs_drift(0.5), &cfg).unwrap();
        assert!(rep.observed["worst_deviation"].as_f64().unwrap() < 1e-12);
    }

    #[test]
    fn y_dependent_generator_deviates() {
        // g(y, z) = -y + z^2/2 satisfies the standing assumptions but not
        // translation invariance; for xi = 0 the shift decays like e^{-T}.
        let gen = Generator::custom("0.5*z*z - y", 2.0, 1.0).unwrap();
        assert!(!gen.flags().y_independent);
        let rep = check_translation_characterization(&gen, &quick_cfg()).unwrap();
        assert!(rep.pass, "{rep:?}");
        let dev = rep.observed["worst_deviation"].as_f64().unwrap();
        assert!(dev > 0.2, "deviation {dev}");
    }
}
