//! Generator representation: g(t, y, z) is the small-time limit of the
//! difference quotients of stopped evaluations of affine claims, the
//! stopping being the exit from a ball of radius delta / (1 + |z|).

use serde_json::json;

use crate::error::Error;
use crate::generators::{validate, Generator, Lattice};
use crate::grid::TimeGrid;
use crate::solver::{solve_stopped, SolveParams};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct RepresentationConfig {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    /// Neighborhood size of the hypothesis; the ball radius is
    /// delta / (1 + |z|).
    pub delta: f64,
    /// Strictly decreasing positive horizon ladder.
    pub eps_ladder: Vec<f64>,
    /// Time steps per rung.
    pub n_steps: usize,
    /// Spatial points per radius at the largest rung; finer rungs scale
    /// their spacing with sqrt(eps) so the quotient's scheme error stays
    /// level across the ladder.
    pub points_per_radius: usize,
    /// |extrapolated limit - g(t, y, z)| must stay under this.
    pub tolerance: f64,
    /// Per-step fixed-point tolerance; the quotient divides the
    /// accumulated Picard residue by eps, so this runs much tighter than
    /// the solver default.
    pub picard_tol: f64,
}

impl RepresentationConfig {
    pub fn new(t: f64, y: f64, z: f64, delta: f64, eps_ladder: Vec<f64>, tolerance: f64) -> Self {
        RepresentationConfig {
            t,
            y,
            z,
            delta,
            eps_ladder,
            n_steps: 256,
            points_per_radius: 96,
            tolerance,
            picard_tol: 1e-14,
        }
    }
}

/// Quotients, their extrapolated limit, and the margin against the
/// generator value itself.
pub fn check_representation(gen: &Generator, cfg: &RepresentationConfig) -> Result<CheckReport> {
    if cfg.eps_ladder.is_empty() {
        return Err(Error::invalid("empty eps ladder"));
    }
    for w in cfg.eps_ladder.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::invalid("eps ladder must be strictly decreasing"));
        }
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let report = validate(
        gen,
        &Lattice::default_for_horizon(cfg.t + cfg.eps_ladder[0]),
    );
    if !report.representation_hypotheses_ok() {
        return Err(Error::invalid(format!(
            "generator '{}' fails the representation hypotheses on the lattice",
            gen.name()
        )));
    }

    let eps_max = cfg.eps_ladder[0];
    let radius = cfg.delta / (1.0 + cfg.z.abs());
    let target = gen.eval(cfg.t, cfg.y, cfg.z);

    let mut params = SolveParams {
        picard_tol: cfg.picard_tol,
        ..SolveParams::default()
    };
    params.max_picard = 80;

    let (quotients, errors): (Vec<f64>, Vec<f64>) = {
        let mut qs = Vec::with_capacity(cfg.eps_ladder.len());
        let mut es = Vec::with_capacity(cfg.eps_ladder.len());
        for &eps in &cfg.eps_ladder {
            let tgrid = TimeGrid::new(cfg.t, cfg.t + eps, cfg.n_steps)?;
            // dx ~ sqrt(eps) keeps dx^2/eps, hence the quotient-level
            // spatial error, constant along the ladder.
            let scale = (eps / eps_max).sqrt();
            let half_points = ((cfg.points_per_radius as f64 / scale).ceil() as usize).max(8);
            let n_points = 2 * half_points + 1;
            let surf = solve_stopped(gen, &tgrid, 0.0, radius, cfg.y, cfg.z, n_points, &params)?;
            let q = (surf.value(cfg.t, 0.0) - cfg.y) / eps;
            qs.push(q);
            es.push((q - target).abs());
        }
        (qs, es)
    };

    let ladder_monotone = errors
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
    // Extrapolate from the last pair when the ladder behaves, else take
    // the finest rung.
    let n = quotients.len();
    let limit = if n >= 2 && ladder_monotone {
        let d_last = quotients[n - 1] - quotients[n - 2];
        let ratio = if n >= 3 {
            let d_prev = quotients[n - 2] - quotients[n - 3];
            if d_prev.abs() > 1e-15 {
                (d_last / d_prev).clamp(-0.9, 0.9)
            } else {
                0.0
            }
        } else {
            0.5
        };
        quotients[n - 1] + d_last * ratio / (1.0 - ratio)
    } else {
        quotients[n - 1]
    };

    let mut b = ReportBuilder::new(
        "representation",
        "g(t,y,z) = lim_{eps->0} (1/eps) (stopped evaluation of y + z (B - B_t) over \
         [t, t+eps] - y), stopping at exit from the ball of radius delta/(1+|z|)",
        cfg.tolerance,
        json!({
            "generator": gen.name(),
            "t": cfg.t, "y": cfg.y, "z": cfg.z,
            "delta": cfg.delta,
            "eps_ladder": cfg.eps_ladder,
        }),
    );
    b.observe("quotients", &quotients)
        .observe("errors", &errors)
        .observe("ladder_monotone", ladder_monotone)
        .observe("extrapolated_limit", limit)
        .observe("generator_value", target)
        .grid(json!({
            "n_steps": cfg.n_steps,
            "points_per_radius": cfg.points_per_radius,
            "radius": radius,
            "picard_tol": cfg.picard_tol,
        }));
    Ok(b.finish(cfg.tolerance - (limit - target).abs()))
}
