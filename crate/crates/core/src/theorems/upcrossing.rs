//! Weighted upcrossing inequality for g-submartingales: the upcrossing
//! count of the drift-adjusted process over a finite partition, weighted
//! by the stochastic exponential of the quotient process assembled from
//! the per-interval solves, stays under an explicit bound.

use rayon::prelude::*;
use serde_json::json;

use crate::error::Error;
use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::paths::PathEnsemble;
use crate::quadrature::gauss_legendre_01;
use crate::solver::{self, SolveParams, TerminalCondition};
use crate::theorems::report::{CheckReport, ReportBuilder};
use crate::Result;

#[derive(Debug, Clone)]
pub struct UpcrossingConfig {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    /// Number of partition intervals (the partition has this many + 1
    /// nodes, all on the ensemble grid).
    pub partition: usize,
    /// Fine walk resolution for the stochastic integral; must be a
    /// multiple of `partition`.
    pub ensemble_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Solver resolution per partition interval.
    pub sub_steps: usize,
    pub n_points: usize,
    /// Nodes of the quotient quadrature in lambda.
    pub lambda_nodes: usize,
}

impl Default for UpcrossingConfig {
    fn default() -> Self {
        UpcrossingConfig {
            horizon: 1.0,
            a: -0.2,
            b: 0.2,
            partition: 8,
            ensemble_steps: 64,
            n_paths: 100_000,
            seed: 17,
            sub_steps: 125,
            n_points: 401,
            lambda_nodes: 8,
        }
    }
}

/// Everything one run produces: per-path counts and weights plus the
/// aggregated bound comparison.
pub struct UpcrossOutcome {
    pub counts: Vec<u32>,
    pub weights: Vec<f64>,
    pub beta_energies: Vec<f64>,
    pub weighted_mean: f64,
    pub weighted_se: f64,
    pub bound: f64,
    pub weight_mean: f64,
    pub weight_se: f64,
    pub beta_energy_mean: f64,
    pub beta_energy_cap: f64,
    pub classical_mean: f64,
    pub classical_se: f64,
    pub classical_doob_bound: f64,
    pub report: CheckReport,
}

/// Count complete passages from <= a to >= b.
pub fn upcross_count(values: &[f64], a: f64, b: f64) -> u32 {
    let mut count = 0;
    let mut below = false;
    for &v in values {
        if !below {
            if v <= a {
                below = true;
            }
        } else if v >= b {
            count += 1;
            below = false;
        }
    }
    count
}

pub fn check_upcrossing(
    gen: &Generator,
    x_process: &(dyn Fn(f64, f64) -> f64 + Sync),
    x_bound: f64,
    cfg: &UpcrossingConfig,
) -> Result<UpcrossOutcome> {
    if !(cfg.b > cfg.a) {
        return Err(Error::invalid(format!(
            "need a < b, got [{}, {}]",
            cfg.a, cfg.b
        )));
    }
    if cfg.ensemble_steps % cfg.partition != 0 {
        return Err(Error::invalid(
            "ensemble_steps must be a multiple of the partition size",
        ));
    }
    let t_end = cfg.horizon;
    let k = gen.k();
    let j_const = (x_bound + k * t_end) * (k * t_end).exp();
    let drift = k * (j_const + 1.0);
    let bound = (x_bound + drift * t_end + cfg.a.abs()) / (cfg.b - cfg.a);

    // Per-interval solves with terminal X at the right node.
    let partition = TimeGrid::new(0.0, t_end, cfg.partition)?;
    let half = 6.0 * t_end.sqrt() + 10.0;
    let xgrid = SpaceGrid::symmetric(half, cfg.n_points)?;
    let params = SolveParams::default();
    let mut surfaces = Vec::with_capacity(cfg.partition);
    for jj in 0..cfg.partition {
        let t_hi = partition.node(jj + 1);
        let vals: Vec<f64> = xgrid.nodes().map(|x| x_process(t_hi, x)).collect();
        let term = TerminalCondition::from_values(xgrid, vals)?;
        let sub = TimeGrid::new(partition.node(jj), t_hi, cfg.sub_steps)?;
        surfaces.push(solver::solve(gen, &term, &sub, &xgrid, None, &params)?);
    }

    let egrid = TimeGrid::new(0.0, t_end, cfg.ensemble_steps)?;
    let ensemble = PathEnsemble::simulate(egrid, cfg.n_paths, cfg.seed)?;
    let stride = cfg.ensemble_steps / cfg.partition;
    let dt = egrid.dt();
    let (lam_nodes, lam_weights) = gauss_legendre_01(cfg.lambda_nodes)?;

    struct PathStats {
        count: u32,
        weight: f64,
        energy: f64,
        x_tilde_end: f64,
    }

    let per_path: Vec<PathStats> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut states = vec![0.0f64; egrid.n_nodes()];
            ensemble.fill_states(p, &mut states);
            let mut m_acc = 0.0f64;
            let mut qv = 0.0f64;
            let mut x_tilde = Vec::with_capacity(cfg.partition + 1);
            for (i, &x) in states.iter().enumerate().take(cfg.ensemble_steps) {
                if i % stride == 0 {
                    let t = egrid.node(i);
                    x_tilde.push(x_process(t, x) + drift * t);
                }
                let t = egrid.node(i);
                let surf = &surfaces[i / stride];
                let y = surf.value(t, x);
                let zv = surf.z_value(t, x);
                // One-dimensional specialization of the per-coordinate
                // telescoping quotient: the lambda integral of dg/dz along
                // the segment to z.
                let mut beta = 0.0;
                for (ln, lw) in lam_nodes.iter().zip(lam_weights.iter()) {
                    beta += lw * gen.dz(t, y, ln * zv);
                }
                m_acc += beta * (states[i + 1] - states[i]);
                qv += beta * beta * dt;
            }
            let t_last = egrid.node(cfg.ensemble_steps);
            x_tilde.push(x_process(t_last, states[cfg.ensemble_steps]) + drift * t_last);
            PathStats {
                count: upcross_count(&x_tilde, cfg.a, cfg.b),
                weight: (m_acc - 0.5 * qv).exp(),
                energy: qv,
                x_tilde_end: x_tilde[cfg.partition],
            }
        })
        .collect();

    let n = cfg.n_paths as f64;
    let mean = |f: &dyn Fn(&PathStats) -> f64| per_path.iter().map(&f).sum::<f64>() / n;
    let se = |f: &dyn Fn(&PathStats) -> f64, m: f64| {
        (per_path.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (n * (n - 1.0))).sqrt()
    };

    let wu = |s: &PathStats| s.weight * s.count as f64;
    let weighted_mean = mean(&wu);
    let weighted_se = se(&wu, weighted_mean);
    let wf = |s: &PathStats| s.weight;
    let weight_mean = mean(&wf);
    let weight_se = se(&wf, weight_mean);
    let ef = |s: &PathStats| s.energy;
    let beta_energy_mean = mean(&ef);
    let cf = |s: &PathStats| s.count as f64;
    let classical_mean = mean(&cf);
    let classical_se = se(&cf, classical_mean);
    let df = |s: &PathStats| (s.x_tilde_end - cfg.a).max(0.0) / (cfg.b - cfg.a);
    let classical_doob_bound = mean(&df);

    // Explicit energy cap from the growth constants ell(J), k and the
    // exponential-transform estimate.
    let ell_j = gen.ell(j_const);
    let k_tilde = 0.5f64.max(k * (j_const + 1.0)).max(ell_j);
    let beta_energy_cap = 2.0
        * ell_j
        * ell_j
        * (t_end
            + (4.0 * k_tilde * j_const).exp()
                * ((4.0 * k_tilde * x_bound).exp() - (-4.0 * k_tilde * x_bound).exp())
            + (8.0 * k_tilde * j_const).exp() * t_end);

    // Histogram of counts for plot data.
    let max_count = per_path.iter().map(|s| s.count).max().unwrap_or(0);
    let mut histogram = vec![0u64; (max_count + 1) as usize];
    for s in &per_path {
        histogram[s.count as usize] += 1;
    }

    let bound_margin = bound + 3.0 * weighted_se - weighted_mean;
    let weight_margin = 3.0 * weight_se - (weight_mean - 1.0).abs();
    let energy_margin = beta_energy_cap - beta_energy_mean;

    let mut b = ReportBuilder::new(
        "upcrossing",
        "the expected upcrossing count of the drift-adjusted submartingale over the \
         partition, weighted by the exponential of the assembled quotient process, is at \
         most (sup|X| + k(J+1)T + |a|) / (b - a); the weight is a unit-mean exponential \
         with bounded energy",
        0.0,
        json!({
            "generator": gen.name(),
            "a": cfg.a, "b": cfg.b,
            "partition": cfg.partition,
            "n_paths": cfg.n_paths,
            "x_bound": x_bound,
        }),
    );
    b.observe("weighted_mean", weighted_mean)
        .observe("weighted_se", weighted_se)
        .observe("bound", bound)
        .observe("weight_mean", weight_mean)
        .observe("weight_se", weight_se)
        .observe("beta_energy_mean", beta_energy_mean)
        .observe("beta_energy_cap", beta_energy_cap)
        .observe("classical_mean", classical_mean)
        .observe("classical_se", classical_se)
        .observe("classical_doob_bound", classical_doob_bound)
        .observe("histogram", &histogram)
        .observe("drift", drift)
        .observe("j_const", j_const)
        .seed(cfg.seed)
        .grid(json!({
            "ensemble_steps": cfg.ensemble_steps,
            "sub_steps": cfg.sub_steps,
            "n_points": cfg.n_points,
        }));
    let report = b.finish(bound_margin.min(weight_margin).min(energy_margin));

    let (counts, weights, beta_energies) = per_path.iter().fold(
        (
            Vec::with_capacity(cfg.n_paths),
            Vec::with_capacity(cfg.n_paths),
            Vec::with_capacity(cfg.n_paths),
        ),
        |(mut c, mut w, mut e), s| {
            c.push(s.count);
            w.push(s.weight);
            e.push(s.energy);
            (c, w, e)
        },
    );

    Ok(UpcrossOutcome {
        counts,
        weights,
        beta_energies,
        weighted_mean,
        weighted_se,
        bound,
        weight_mean,
        weight_se,
        beta_energy_mean,
        beta_energy_cap,
        classical_mean,
        classical_se,
        classical_doob_bound,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gexp::GExpectationOperator;

    #[test]
    fn counting_matches_hand_examples() {
        assert_eq!(upcross_count(&[0.0, -0.3, 0.3, -0.3, 0.5], -0.2, 0.2), 2);
        assert_eq!(upcross_count(&[0.3, 0.5, 0.7], -0.2, 0.2), 0);
        assert_eq!(upcross_count(&[-0.3, 0.1, 0.19], -0.2, 0.2), 0);
        assert_eq!(upcross_count(&[-0.3, 0.2], -0.2, 0.2), 1);
    }

    #[test]
    fn band_above_the_range_gives_zero_counts() {
        let cfg = UpcrossingConfig {
            a: 50.0,
            b: 51.0,
            partition: 4,
            ensemble_steps: 16,
            n_paths: 500,
            sub_steps: 25,
            n_points: 201,
            ..UpcrossingConfig::default()
        };
        let out = check_upcrossing(&Generator::zero(), &|_, x| x.tanh(), 1.0, &cfg).unwrap();
        assert!(out.counts.iter().all(|&c| c == 0));
        assert!(out.report.pass);
    }

    #[test]
    fn zero_generator_reduces_to_the_classical_inequality() {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let o = GExpectationOperator::with_resolution(
            Generator::zero(),
            term,
            1.0,
            256,
            201,
            SolveParams::default(),
        )
        .unwrap();
        let surf = o.surface();
        let c = 0.3;
        let cfg = UpcrossingConfig {
            partition: 8,
            ensemble_steps: 32,
            n_paths: 20_000,
            sub_steps: 32,
            n_points: 201,
            ..UpcrossingConfig::default()
        };
        let out = check_upcrossing(
            &Generator::zero(),
            &|t, x| surf.value(t, x) + c * t,
            1.3,
            &cfg,
        )
        .unwrap();
        // Beta vanishes, so all weights are exactly one.
        assert!(out.weights.iter().all(|&w| w == 1.0));
        assert_eq!(out.beta_energy_mean, 0.0);
        // Classical sharp form: E[U] <= E[(X~ - a)^+] / (b - a) within MC
        // noise.
        assert!(
            out.classical_mean <= out.classical_doob_bound + 3.0 * out.classical_se,
            "{} vs {}",
            out.classical_mean,
            out.classical_doob_bound
        );
        assert!(out.report.pass, "{:?}", out.report);
    }

    #[test]
    fn entropic_pipeline_satisfies_the_weighted_bound() {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let o = GExpectationOperator::with_resolution(
            Generator::entropic(1.0),
            term,
            1.0,
            256,
            201,
            SolveParams::default(),
        )
        .unwrap();
        let surf = o.surface();
        let c = 0.5;
        let x_bound = surf.sup_norm() + c;
        let cfg = UpcrossingConfig {
            partition: 8,
            ensemble_steps: 32,
            n_paths: 20_000,
            sub_steps: 32,
            n_points: 201,
            ..UpcrossingConfig::default()
        };
        let out = check_upcrossing(
            &Generator::entropic(1.0),
            &|t, x| surf.value(t, x) + c * t,
            x_bound,
            &cfg,
        )
        .unwrap();
        assert!(out.report.pass, "{:?}", out.report);
        assert!((out.weight_mean - 1.0).abs() < 3.0 * out.weight_se + 1e-3);
        assert!(out.beta_energy_mean > 0.0);
        assert!(out.beta_energy_mean < out.beta_energy_cap);
    }

    #[test]
    fn rejects_empty_band() {
        let cfg = UpcrossingConfig {
            a: 0.2,
            b: 0.2,
            ..UpcrossingConfig::default()
        };
        assert!(check_upcrossing(&Generator::zero(), &|_, x| x, 1.0, &cfg).is_err());
    }
}
