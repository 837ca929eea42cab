//! The operator calculus: conditional evaluations, composition, evaluation
//! at finite-valued stopping times, and martingale classification, all on
//! top of cached value surfaces.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::expr::Compiled;
use crate::generators::Generator;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::paths::{FiniteStoppingTime, PathEnsemble, StoppingRule};
use crate::solver::{self, default_space_grid, SolveParams, TerminalCondition, ValueSurface};
use crate::Result;

/// Buildable description of a generator (the CLI config form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Zero,
    Linear { a: f64 },
    Entropic { gamma: f64 },
    AbsDrift { mu: f64 },
    Custom { expr: String, k: f64, ell: f64 },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generator> {
        Ok(match self {
            GeneratorSpec::Zero => Generator::zero(),
            GeneratorSpec::Linear { a } => Generator::linear(*a),
            GeneratorSpec::Entropic { gamma } => {
                if !(*gamma > 0.0) {
                    return Err(Error::invalid("entropic gamma must be > 0"));
                }
                Generator::entropic(*gamma)
            }
            GeneratorSpec::AbsDrift { mu } => {
                if *mu < 0.0 {
                    return Err(Error::invalid("abs_drift mu must be >= 0"));
                }
                Generator::abs_drift(*mu)
            }
            GeneratorSpec::Custom { expr, k, ell } => Generator::custom(expr, *k, *ell)?,
        })
    }
}

/// Serializable operator description: generator, terminal expression over
/// x, grid resolution and a seed for any Monte Carlo readouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub generator: GeneratorSpec,
    /// Expression over the variable x, e.g. "tanh(x)".
    pub terminal: String,
    pub horizon: f64,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl OperatorSpec {
    pub fn terminal_condition(&self) -> Result<TerminalCondition> {
        let compiled = Compiled::parse(&self.terminal, &["x"])?;
        TerminalCondition::from_scan(move |x| compiled.eval(&[x]))
    }

    pub fn build(&self) -> Result<GExpectationOperator> {
        let gen = self.generator.build()?;
        let terminal = self.terminal_condition()?;
        let n_steps = self
            .n_steps
            .unwrap_or_else(|| solver::default_n_steps(self.horizon));
        let n_points = self.n_points.unwrap_or(801);
        GExpectationOperator::with_resolution(
            gen,
            terminal,
            self.horizon,
            n_steps,
            n_points,
            SolveParams::default(),
        )
    }
}

/// Conditional evaluation operator for one generator and one terminal,
/// caching the full solve on [0, T].
pub struct GExpectationOperator {
    gen: Generator,
    terminal: TerminalCondition,
    horizon: f64,
    n_points: usize,
    steps_per_unit: f64,
    params: SolveParams,
    surface: ValueSurface,
}

impl GExpectationOperator {
    pub fn new(gen: Generator, terminal: TerminalCondition, horizon: f64) -> Result<Self> {
        let n_steps = solver::default_n_steps(horizon);
        Self::with_resolution(gen, terminal, horizon, n_steps, 801, SolveParams::default())
    }

    pub fn with_resolution(
        gen: Generator,
        terminal: TerminalCondition,
        horizon: f64,
        n_steps: usize,
        n_points: usize,
        params: SolveParams,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let tgrid = TimeGrid::new(0.0, horizon, n_steps)?;
        let xgrid = {
            let base = default_space_grid(&terminal, horizon)?;
            SpaceGrid::new(base.x_min(), base.x_max(), n_points)?
        };
        let surface = solver::solve(&gen, &terminal, &tgrid, &xgrid, None, &params)?;
        Ok(GExpectationOperator {
            gen,
            terminal,
            horizon,
            n_points,
            steps_per_unit: n_steps as f64 / horizon,
            params,
            surface,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn terminal(&self) -> &TerminalCondition {
        &self.terminal
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn params(&self) -> &SolveParams {
        &self.params
    }

    /// The cached solve of the operator's own terminal on [0, T].
    pub fn surface(&self) -> &ValueSurface {
        &self.surface
    }

    /// Conditional g-expectation of the operator's own terminal at (t, x).
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.surface.value(t, x)
    }

    fn sub_steps(&self, span: f64) -> usize {
        ((span * self.steps_per_unit).round() as usize).max(2)
    }

    /// The evaluation over [s, t] of the claim xi: the full sub-solve
    /// surface, whose time-s slice is the state-indexed value.
    pub fn evaluate(&self, s: f64, t: f64, xi: &TerminalCondition) -> Result<ValueSurface> {
        if !(0.0 <= s && s < t && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "need 0 <= s < t <= T, got s = {s}, t = {t}, T = {}",
                self.horizon
            )));
        }
        let tgrid = TimeGrid::new(s, t, self.sub_steps(t - s))?;
        let xgrid = {
            let base = default_space_grid(xi, t - s)?;
            SpaceGrid::new(base.x_min(), base.x_max(), self.n_points)?
        };
        solver::solve(&self.gen, xi, &tgrid, &xgrid, None, &self.params)
    }

    /// State-indexed values at time s; handles the degenerate s = t case by
    /// returning the claim itself.
    pub fn evaluate_slice(
        &self,
        s: f64,
        t: f64,
        xi: &TerminalCondition,
    ) -> Result<(SpaceGrid, Vec<f64>)> {
        if s > t {
            return Err(Error::invalid(format!("need s <= t, got {s} > {t}")));
        }
        if (t - s).abs() <= 1e-14 {
            let xgrid = default_space_grid(xi, 1.0)?;
            let values = xgrid.nodes().map(|x| xi.eval(x)).collect();
            return Ok((xgrid, values));
        }
        let surf = self.evaluate(s, t, xi)?;
        Ok((*surf.xgrid(), surf.u_slice(0).to_vec()))
    }

    /// Two-stage evaluation over r <= s <= t: the outer stage restarts the
    /// solver from the interpolated time-s slice of the inner stage.
    /// Returns (two-stage surface on [r, s], direct surface on [r, t]).
    pub fn compose(
        &self,
        r: f64,
        s: f64,
        t: f64,
        xi: &TerminalCondition,
    ) -> Result<(ValueSurface, ValueSurface)> {
        if !(r <= s && s <= t) {
            return Err(Error::invalid(format!(
                "need r <= s <= t, got {r}, {s}, {t}"
            )));
        }
        let direct = self.evaluate(r, t, xi)?;
        if (s - r).abs() <= 1e-14 {
            return Ok((direct.clone(), direct));
        }
        let inner = if (t - s).abs() <= 1e-14 {
            None
        } else {
            Some(self.evaluate(s, t, xi)?)
        };
        let staged_terminal = match &inner {
            Some(surf) => TerminalCondition::from_values(*surf.xgrid(), surf.u_slice(0).to_vec())?,
            None => xi.clone(),
        };
        let outer = self.evaluate(r, s, &staged_terminal)?;
        Ok((outer, direct))
    }

    /// Evaluation between finite-valued stopping times by backward
    /// recursion over tau's value set: at each grid interval, paths already
    /// stopped pass their claim through unchanged, unstopped paths take the
    /// one-interval surface evaluation.
    ///
    /// The claim is the state function xi(t, x) read at the stopping value;
    /// per-path claim values are derived from it, which is the class of
    /// claims a Markovian engine can evaluate.
    pub fn evaluate_at_stopping_times(
        &self,
        sigma: &FiniteStoppingTime,
        tau: &FiniteStoppingTime,
        xi: &(dyn Fn(f64, f64) -> f64 + Sync),
        ensemble: &PathEnsemble,
    ) -> Result<Vec<f64>> {
        let egrid = *ensemble.grid();
        if egrid != *sigma.grid() || egrid != *tau.grid() {
            return Err(Error::invalid(
                "stopping times must live on the ensemble grid",
            ));
        }
        if egrid.t_end() > self.horizon * (1.0 + 1e-12) {
            return Err(Error::invalid("ensemble horizon exceeds the operator's"));
        }
        if matches!(tau.rule(), StoppingRule::Custom { .. }) {
            return Err(Error::invalid(
                "tau must be a state-rule stopping time (deterministic or first-hit)",
            ));
        }
        for p in 0..ensemble.n_paths() {
            if sigma.stop_node(p) > tau.stop_node(p) {
                return Err(Error::invalid(format!(
                    "sigma > tau on path {p}: node {} > {}",
                    sigma.stop_node(p),
                    tau.stop_node(p)
                )));
            }
        }

        let value_nodes = tau.value_nodes();
        let v_max = *value_nodes.last().expect("non-empty value set");
        let xgrid = *self.surface.xgrid();
        let nx = xgrid.n_points();

        // Decision predicate per node; forced nodes stop unconditionally.
        let mut pred_at: Vec<Option<Arc<dyn Fn(f64) -> bool + Send + Sync>>> =
            vec![None; v_max + 1];
        let mut forced_at = vec![false; v_max + 1];
        match tau.rule() {
            StoppingRule::Deterministic { node } => forced_at[*node] = true,
            StoppingRule::FirstHit {
                decisions,
                cap_node,
            } => {
                for (node, pred) in decisions {
                    if *node <= v_max {
                        pred_at[*node] = Some(pred.clone());
                    }
                }
                forced_at[*cap_node] = true;
            }
            StoppingRule::Custom { .. } => unreachable!(),
        }

        // Paths grouped by their sigma node for the readout pass.
        let mut by_sigma: Vec<Vec<usize>> = vec![Vec::new(); v_max + 1];
        for p in 0..ensemble.n_paths() {
            by_sigma[sigma.stop_node(p)].push(p);
        }

        let mut out = vec![0.0f64; ensemble.n_paths()];
        let mut states = vec![0.0f64; egrid.n_nodes()];

        // Value on {tau >= t_j} given the state, as nodal values; at the
        // top node every remaining path stops.
        let t_top = egrid.node(v_max);
        let mut w_at: Vec<f64> = xgrid.nodes().map(|x| xi(t_top, x)).collect();

        for &p in &by_sigma[v_max] {
            ensemble.fill_states(p, &mut states);
            out[p] = xi(t_top, states[v_max]);
        }

        for j in (0..v_max).rev() {
            let t_lo = egrid.node(j);
            let t_hi = egrid.node(j + 1);
            let tgrid = TimeGrid::new(t_lo, t_hi, self.sub_steps(t_hi - t_lo))?;
            let term = TerminalCondition::from_values(xgrid, w_at.clone())?;
            let surf = solver::solve(&self.gen, &term, &tgrid, &xgrid, None, &self.params)?;
            let cont: Vec<f64> = surf.u_slice(0).to_vec();

            for &p in &by_sigma[j] {
                ensemble.fill_states(p, &mut states);
                let x = states[j];
                out[p] = if tau.stop_node(p) == j {
                    xi(t_lo, x)
                } else {
                    cubic_on(&xgrid, &cont, x)
                };
            }

            // Fold the stop-versus-continue decision at node j into the
            // unstopped-value function.
            w_at = (0..nx)
                .map(|jj| {
                    let x = xgrid.node(jj);
                    if forced_at[j] {
                        xi(t_lo, x)
                    } else if let Some(pred) = &pred_at[j] {
                        if pred(x) {
                            xi(t_lo, x)
                        } else {
                            cont[jj]
                        }
                    } else {
                        cont[jj]
                    }
                })
                .collect();
        }
        Ok(out)
    }

    /// Classify the process X(t, x) by sweeping the test pairs: evaluates
    /// the one-interval operator against the time-s slice on every grid
    /// state. Tolerance is 1e-6 scaled by the process bound.
    pub fn classify(
        &self,
        x_process: &(dyn Fn(f64, f64) -> f64 + Sync),
        test_pairs: &[(f64, f64)],
    ) -> Result<GMartingaleVerdict> {
        if test_pairs.is_empty() {
            return Err(Error::invalid("classify needs at least one (s, t) pair"));
        }
        let xgrid = *self.surface.xgrid();
        let mut bound = 0.0f64;
        for &(_, t) in test_pairs {
            for x in xgrid.nodes() {
                bound = bound.max(x_process(t, x).abs());
            }
        }
        if !bound.is_finite() {
            return Err(Error::invalid("process is not bounded on the grid"));
        }
        let tol = 1e-6 * bound.max(1.0);

        let mut worst_neg = f64::INFINITY;
        let mut worst_pos = f64::NEG_INFINITY;
        let mut neg_at = test_pairs[0];
        let mut pos_at = test_pairs[0];
        for &(s, t) in test_pairs {
            if !(0.0 <= s && s < t && t <= self.horizon * (1.0 + 1e-12)) {
                return Err(Error::invalid(format!("bad test pair ({s}, {t})")));
            }
            let terminal_values: Vec<f64> = xgrid.nodes().map(|x| x_process(t, x)).collect();
            let term = TerminalCondition::from_values(xgrid, terminal_values)?;
            let tgrid = TimeGrid::new(s, t, self.sub_steps(t - s))?;
            let surf = solver::solve(&self.gen, &term, &tgrid, &xgrid, None, &self.params)?;
            for (jj, x) in xgrid.nodes().enumerate() {
                let diff = surf.u_at(0, jj) - x_process(s, x);
                if diff < worst_neg {
                    worst_neg = diff;
                    neg_at = (s, t);
                }
                if diff > worst_pos {
                    worst_pos = diff;
                    pos_at = (s, t);
                }
            }
        }

        let sub_ok = worst_neg >= -tol;
        let super_ok = worst_pos <= tol;
        let class = match (sub_ok, super_ok) {
            (true, true) => MartingaleClass::Martingale,
            (true, false) => MartingaleClass::Submartingale,
            (false, true) => MartingaleClass::Supermartingale,
            (false, false) => MartingaleClass::Neither,
        };
        Ok(GMartingaleVerdict {
            class,
            worst_negative: worst_neg,
            worst_negative_at: neg_at,
            worst_positive: worst_pos,
            worst_positive_at: pos_at,
            tolerance: tol,
        })
    }

    /// The dyadic test pairs {(i T/8, j T/8) : i < j}.
    pub fn dyadic_pairs(&self) -> Vec<(f64, f64)> {
        let mut pairs = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..=8 {
                pairs.push((self.horizon * i as f64 / 8.0, self.horizon * j as f64 / 8.0));
            }
        }
        pairs
    }

    /// Interval-event surrogate of the masking law at time s: on
    /// A = {B_s in I} the masked-claim evaluation must coincide with the
    /// plain one (checked through an independent re-solve at the default
    /// resolution), and off A the masked claim reduces to the zero
    /// terminal, which under g(., ., 0) = 0 must evaluate to zero.
    ///
    /// Returns (worst deviation on A, worst |value| off A).
    pub fn zero_one_probe(
        &self,
        s: f64,
        t: f64,
        xi: &TerminalCondition,
        interval: (f64, f64),
    ) -> Result<(f64, f64)> {
        if !(interval.0 < interval.1) {
            return Err(Error::invalid("empty interval event"));
        }
        // Route 1: aligned evaluation on the operator's own grid.
        let xgrid = *self.surface.xgrid();
        let vals: Vec<f64> = xgrid.nodes().map(|x| xi.eval(x)).collect();
        let term = TerminalCondition::from_values(xgrid, vals)?;
        let tgrid = TimeGrid::new(s, t, self.sub_steps(t - s))?;
        let aligned = solver::solve(&self.gen, &term, &tgrid, &xgrid, None, &self.params)?;

        // Route 2: independent re-solve at the claim's own default grid.
        let fresh = self.evaluate(s, t, xi)?;

        // Off the event the masked claim is identically zero.
        let zero_term = TerminalCondition::new(|_| 0.0, 0.0)?;
        let zero = solver::solve(&self.gen, &zero_term, &tgrid, &xgrid, None, &self.params)?;

        let mut on_a = 0.0f64;
        let mut off_a = 0.0f64;
        for (jj, x) in xgrid.nodes().enumerate() {
            if x >= interval.0 && x <= interval.1 {
                on_a = on_a.max((aligned.u_at(0, jj) - fresh.value(s, x)).abs());
            } else {
                off_a = off_a.max(zero.u_at(0, jj).abs());
            }
        }
        Ok((on_a, off_a))
    }

    /// Spread of the evaluation of phi(. - x0) read at (s, x0) across
    /// offsets; a deterministic generator must make this state-independent.
    ///
    /// All offsets are solved on one shared grid and snapped to its nodes,
    /// so the discrete problems are exact translations of each other and
    /// the spread isolates genuine state dependence.
    pub fn determinism_probe<F>(&self, s: f64, t: f64, phi: F, offsets: &[f64]) -> Result<f64>
    where
        F: Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    {
        let base = TerminalCondition::from_scan(phi.clone())?;
        let max_off = offsets.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let span = t - s;
        let half = 6.0 * span.sqrt() + base.variation_width(1e-8) + max_off;
        let n_half = (self.n_points - 1) / 2;
        let xgrid = SpaceGrid::symmetric(half.max(1.0), 2 * n_half + 1)?;
        let dx = xgrid.dx();
        let tgrid = TimeGrid::new(s, t, self.sub_steps(span))?;

        let mut values = Vec::with_capacity(offsets.len());
        for &x0 in offsets {
            let snapped = (x0 / dx).round() * dx;
            let f = phi.clone();
            let w = TerminalCondition::new(move |x| f(x - snapped), base.bound())?;
            let surf = solver::solve(&self.gen, &w, &tgrid, &xgrid, None, &self.params)?;
            values.push(surf.value(s, snapped));
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(hi - lo)
    }
}

fn cubic_on(grid: &SpaceGrid, vals: &[f64], x: f64) -> f64 {
    let n = grid.n_points();
    if x <= grid.x_min() {
        return vals[0];
    }
    if x >= grid.x_max() {
        return vals[n - 1];
    }
    let s = (x - grid.x_min()) / grid.dx();
    let j = (s.floor() as usize).min(n - 2);
    let w = s - j as f64;
    let p0 = vals[j.saturating_sub(1)];
    let p1 = vals[j];
    let p2 = vals[j + 1];
    let p3 = vals[(j + 2).min(n - 1)];
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = -0.5 * p0 + 0.5 * p2;
    ((a * w + b) * w + c) * w + p1
}

/// Classification of a process against the evaluation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleClass {
    Martingale,
    Submartingale,
    Supermartingale,
    Neither,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GMartingaleVerdict {
    pub class: MartingaleClass,
    /// min over pairs and states of the evaluation minus X_s.
    pub worst_negative: f64,
    pub worst_negative_at: (f64, f64),
    /// max over pairs and states of the evaluation minus X_s.
    pub worst_positive: f64,
    pub worst_positive_at: (f64, f64),
    pub tolerance: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_expectation;

    fn op(gen: Generator) -> GExpectationOperator {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        // 400 steps keep the dyadic pairs (i/8, j/8) on grid nodes.
        GExpectationOperator::with_resolution(gen, term, 1.0, 400, 401, SolveParams::default())
            .unwrap()
    }

    fn op_fine(gen: Generator) -> GExpectationOperator {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        GExpectationOperator::with_resolution(gen, term, 1.0, 1000, 801, SolveParams::default())
            .unwrap()
    }

    #[test]
    fn rebuilding_reproduces_the_cache_bit_identically() {
        let a = op(Generator::entropic(1.0));
        let b = op(Generator::entropic(1.0));
        assert_eq!(a.surface().sup_distance(b.surface()), 0.0);
    }

    #[test]
    fn degenerate_interval_returns_the_claim() {
        let o = op(Generator::entropic(1.0));
        let xi = TerminalCondition::new(|x: f64| (2.0 * x).tanh(), 1.0).unwrap();
        let (grid, vals) = o.evaluate_slice(0.5, 0.5, &xi).unwrap();
        for (j, x) in grid.nodes().enumerate() {
            assert_eq!(vals[j], (2.0 * x).tanh());
        }
    }

    #[test]
    fn zero_generator_is_classical_conditional_expectation() {
        let o = op_fine(Generator::zero());
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let surf = o.evaluate(0.0, 1.0, &xi).unwrap();
        let oracle = gauss_expectation(|g| (0.3 + g).tanh(), 1.0, 64).unwrap();
        assert!((surf.value(0.0, 0.3) - oracle).abs() < 1e-4);
    }

    #[test]
    fn constants_pass_through() {
        let o = op(Generator::abs_drift(0.5));
        let xi = TerminalCondition::new(|_| -0.4, 0.4).unwrap();
        let surf = o.evaluate(0.25, 0.75, &xi).unwrap();
        for j in 0..surf.xgrid().n_points() {
            assert!((surf.u_at(0, j) + 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_interval_is_rejected() {
        let o = op(Generator::zero());
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        assert!(o.evaluate(0.8, 0.2, &xi).is_err());
    }

    #[test]
    fn tower_property_for_the_zero_generator() {
        let o = op_fine(Generator::zero());
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let (two_stage, direct) = o.compose(0.0, 0.5, 1.0, &xi).unwrap();
        // The two routes discretize on independently sized grids, so the
        // residual is the difference of their dx^2 errors.
        for x in [-1.0, -0.3, 0.0, 0.4, 1.2] {
            assert!(
                (two_stage.value(0.0, x) - direct.value(0.0, x)).abs() < 1e-5,
                "mismatch at {x}"
            );
        }
    }

    #[test]
    fn composition_error_shrinks_under_refinement_for_entropic() {
        let term = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let mut errs = Vec::new();
        for (nt, nx) in [(250usize, 201usize), (500, 401)] {
            let o = GExpectationOperator::with_resolution(
                Generator::entropic(1.0),
                term.clone(),
                1.0,
                nt,
                nx,
                SolveParams::default(),
            )
            .unwrap();
            let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
            let (two_stage, direct) = o.compose(0.0, 0.5, 1.0, &xi).unwrap();
            let mut err = 0.0f64;
            for x in crate::generators::linspace(-3.0, 3.0, 41) {
                err = err.max((two_stage.value(0.0, x) - direct.value(0.0, x)).abs());
            }
            errs.push(err);
        }
        assert!(errs[1] < 5e-3, "{errs:?}");
        assert!(errs[1] <= errs[0], "{errs:?}");
    }

    #[test]
    fn degenerate_first_stage_reduces_to_direct_evaluation() {
        let o = op(Generator::entropic(1.0));
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let (two_stage, direct) = o.compose(0.5, 0.5, 1.0, &xi).unwrap();
        assert_eq!(two_stage.sup_distance(&direct), 0.0);
    }

    #[test]
    fn martingale_surface_classifies_as_martingale() {
        let o = op(Generator::entropic(1.0));
        let surf = o.surface();
        let verdict = o
            .classify(&|t, x| surf.value(t, x), &o.dyadic_pairs())
            .unwrap();
        assert_eq!(verdict.class, MartingaleClass::Martingale, "{verdict:?}");
    }

    #[test]
    fn drifted_martingale_is_a_submartingale() {
        let o = op(Generator::entropic(1.0));
        let surf = o.surface();
        let c = 0.4;
        let verdict = o
            .classify(&|t, x| surf.value(t, x) + c * t, &o.dyadic_pairs())
            .unwrap();
        assert_eq!(verdict.class, MartingaleClass::Submartingale, "{verdict:?}");
        let down = o
            .classify(&|t, x| surf.value(t, x) - c * t, &o.dyadic_pairs())
            .unwrap();
        assert_eq!(down.class, MartingaleClass::Supermartingale);
    }

    #[test]
    fn skewed_process_is_neither() {
        let o = op(Generator::zero());
        let verdict = o
            .classify(&|t, x| (x - 0.5 * t).tanh() * (1.0 + t), &o.dyadic_pairs())
            .unwrap();
        assert_eq!(verdict.class, MartingaleClass::Neither);
    }

    #[test]
    fn stopping_time_evaluation_matches_deterministic_case() {
        let o = op(Generator::entropic(1.0));
        let egrid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let ens = PathEnsemble::simulate(egrid, 64, 5).unwrap();
        let sigma = FiniteStoppingTime::deterministic(&ens, 4).unwrap();
        let tau = FiniteStoppingTime::deterministic(&ens, 12).unwrap();
        // Claim = the operator's own surface: a martingale for the family,
        // so the stopped evaluation reproduces the surface at sigma.
        let surf = o.surface();
        let out = o
            .evaluate_at_stopping_times(&sigma, &tau, &|t, x| surf.value(t, x), &ens)
            .unwrap();
        let mut states = vec![0.0; 17];
        for p in 0..64 {
            ens.fill_states(p, &mut states);
            let expect = surf.value(egrid.node(4), states[4]);
            assert!(
                (out[p] - expect).abs() < 5e-3,
                "path {p}: {} vs {expect}",
                out[p]
            );
        }
    }

    #[test]
    fn pass_through_when_already_stopped() {
        let o = op(Generator::entropic(1.0));
        let egrid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let ens = PathEnsemble::simulate(egrid, 16, 9).unwrap();
        let tau = FiniteStoppingTime::deterministic(&ens, 3).unwrap();
        let sigma = FiniteStoppingTime::deterministic(&ens, 3).unwrap();
        let out = o
            .evaluate_at_stopping_times(&sigma, &tau, &|_, x| x.tanh(), &ens)
            .unwrap();
        let mut states = vec![0.0; 9];
        for p in 0..16 {
            ens.fill_states(p, &mut states);
            assert_eq!(out[p], states[3].tanh());
        }
    }

    #[test]
    fn sigma_after_tau_is_rejected_with_path_id() {
        let o = op(Generator::zero());
        let egrid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let ens = PathEnsemble::simulate(egrid, 4, 9).unwrap();
        let sigma = FiniteStoppingTime::deterministic(&ens, 6).unwrap();
        let tau = FiniteStoppingTime::deterministic(&ens, 2).unwrap();
        let err = o
            .evaluate_at_stopping_times(&sigma, &tau, &|_, x| x, &ens)
            .unwrap_err();
        assert!(err.to_string().contains("path 0"), "{err}");
    }

    #[test]
    fn zero_one_probe_is_tight_for_g0_generators() {
        let o = op(Generator::entropic(1.0));
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let (on_a, off_a) = o.zero_one_probe(0.5, 1.0, &xi, (-0.5, 0.5)).unwrap();
        assert!(on_a < 5e-3, "on-event deviation {on_a}");
        assert!(off_a < 1e-8, "off-event residue {off_a}");
    }

    #[test]
    fn translation_invariance_for_y_independent_generators() {
        let o = op(Generator::entropic(1.0));
        let xi = TerminalCondition::new(|x: f64| x.tanh(), 1.0).unwrap();
        let eta = 0.7;
        let shifted = TerminalCondition::new(move |x: f64| x.tanh() + eta, 1.0 + eta).unwrap();
        let a = solver::solve(
            o.generator(),
            &xi,
            o.surface().tgrid(),
            o.surface().xgrid(),
            None,
            o.params(),
        )
        .unwrap();
        let b = solver::solve(
            o.generator(),
            &shifted,
            o.surface().tgrid(),
            o.surface().xgrid(),
            None,
            o.params(),
        )
        .unwrap();
        for i in [0usize, 200, 400] {
            for j in 0..401 {
                assert!((b.u_at(i, j) - a.u_at(i, j) - eta).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_generator_gives_state_independent_evaluations() {
        let o = op(Generator::entropic(1.0));
        let spread = o
            .determinism_probe(0.25, 0.75, |x: f64| x.tanh(), &[-1.0, 0.0, 1.0])
            .unwrap();
        assert!(spread < 1e-6, "spread {spread}");
    }

    #[test]
    fn generator_spec_rejects_bad_parameters() {
        assert!(GeneratorSpec::Entropic { gamma: 0.0 }.build().is_err());
        assert!(GeneratorSpec::AbsDrift { mu: -1.0 }.build().is_err());
        assert!(GeneratorSpec::Custom {
            expr: "sin(z)".into(),
            k: 1.0,
            ell: 1.0
        }
        .build()
        .is_err());
    }

    #[test]
    fn operator_spec_round_trips_through_json() {
        let spec = OperatorSpec {
            generator: GeneratorSpec::Entropic { gamma: 1.0 },
            terminal: "tanh(x)".into(),
            horizon: 1.0,
            n_steps: Some(64),
            n_points: Some(101),
            seed: 7,
        };
        let text = serde_json::to_string(&spec).unwrap();
        let back: OperatorSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.generator, spec.generator);
        let o = back.build().unwrap();
        // Terminal nodes carry the claim exactly.
        let xg = *o.surface().xgrid();
        let j = xg.cell_of(0.5);
        let x = xg.node(j);
        assert_eq!(o.surface().u_at(64, j).to_bits(), x.tanh().to_bits());
    }
}
