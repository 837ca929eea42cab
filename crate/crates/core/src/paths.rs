//! Brownian path ensembles, stochastic exponentials, finite-valued stopping
//! times and BMO-norm estimation.
//!
//! Increments are never stored: they are pure functions of
//! (seed, path index, step index) through the counter-based generator, so an
//! ensemble is a small value object, regeneration is bit-identical, and
//! memory stays flat no matter how many paths a check uses.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Error;
use crate::grid::TimeGrid;
use crate::rng;
use crate::Result;

/// An ensemble of Brownian paths on a uniform time grid.
#[derive(Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    sqrt_dt: f64,
}

impl PathEnsemble {
    pub fn simulate(grid: TimeGrid, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::invalid("ensemble needs at least one path"));
        }
        Ok(PathEnsemble {
            grid,
            n_paths,
            seed,
            sqrt_dt: grid.dt().sqrt(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Gaussian increment of path `p` over step `i`, variance dt.
    #[inline]
    pub fn increment(&self, p: usize, i: usize) -> f64 {
        debug_assert!(p < self.n_paths && i < self.grid.n_steps());
        self.sqrt_dt * rng::standard_normal(self.seed, p as u64, i as u64)
    }

    /// Fill `buf` (length n_nodes) with the path values B_{t_0..t_n}.
    pub fn fill_states(&self, p: usize, buf: &mut [f64]) {
        assert_eq!(buf.len(), self.grid.n_nodes());
        buf[0] = 0.0;
        let mut acc = 0.0;
        for i in 0..self.grid.n_steps() {
            acc += self.increment(p, i);
            buf[i + 1] = acc;
        }
    }

    /// Path value at a single node (O(node) work).
    pub fn state_at(&self, p: usize, node: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..node {
            acc += self.increment(p, i);
        }
        acc
    }

    /// Sample mean of B_T across the ensemble. Terminal values are
    /// computed in parallel but summed in path order, so the result is
    /// independent of the worker schedule.
    pub fn mean_terminal(&self) -> f64 {
        let terminals: Vec<f64> = (0..self.n_paths)
            .into_par_iter()
            .map(|p| self.state_at(p, self.grid.n_steps()))
            .collect();
        terminals.iter().sum::<f64>() / self.n_paths as f64
    }

    /// CSV export with columns path_id, step, increment.
    pub fn export_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "path_id,step,increment")?;
        for p in 0..self.n_paths {
            for i in 0..self.grid.n_steps() {
                writeln!(out, "{},{},{}", p, i, self.increment(p, i))?;
            }
        }
        Ok(())
    }
}

/// Per-path integrand for a stochastic integral against the ensemble.
///
/// `states` is the whole path; an adapted process must only read
/// `states[..=step]`. Adaptedness is spot-checked by perturbing the suffix.
pub type StepProcess<'a> = dyn Fn(usize, usize, &[f64]) -> f64 + Sync + 'a;

/// Discrete Doleans-Dade exponential of M = integral of beta dB, per path.
#[derive(Debug)]
pub struct StochasticExponentialPath {
    /// M at every node, path-major, (n_steps + 1) values per path.
    pub base: Vec<f64>,
    /// Quadratic variation accumulator at every node.
    pub quadratic_variation: Vec<f64>,
    /// exp(M - QV/2) at every node.
    pub exponential: Vec<f64>,
    /// Sample mean of the terminal exponential (unit-mean diagnostic).
    pub terminal_mean: f64,
    n_nodes: usize,
}

impl StochasticExponentialPath {
    pub fn terminal(&self, p: usize) -> f64 {
        self.exponential[p * self.n_nodes + self.n_nodes - 1]
    }

    pub fn at(&self, p: usize, node: usize) -> f64 {
        self.exponential[p * self.n_nodes + node]
    }
}

/// Left-endpoint (Ito) exponential of beta against the ensemble's paths.
///
/// Spot-checks that `beta` is adapted by regenerating the increments after a
/// probe step and re-evaluating; a dependence on the future is reported as a
/// contract violation.
pub fn stochastic_exponential(
    ensemble: &PathEnsemble,
    beta: &StepProcess,
) -> Result<StochasticExponentialPath> {
    verify_step_process_adapted(ensemble, beta)?;

    let n_nodes = ensemble.grid().n_nodes();
    let n_steps = ensemble.grid().n_steps();
    let dt = ensemble.grid().dt();
    let n_paths = ensemble.n_paths();

    let mut base = vec![0.0; n_paths * n_nodes];
    let mut qv = vec![0.0; n_paths * n_nodes];
    let mut expo = vec![0.0; n_paths * n_nodes];

    base.par_chunks_mut(n_nodes)
        .zip(qv.par_chunks_mut(n_nodes))
        .zip(expo.par_chunks_mut(n_nodes))
        .enumerate()
        .for_each(|(p, ((m_row, q_row), e_row))| {
            let mut states = vec![0.0; n_nodes];
            ensemble.fill_states(p, &mut states);
            m_row[0] = 0.0;
            q_row[0] = 0.0;
            e_row[0] = 1.0;
            for i in 0..n_steps {
                let b = beta(p, i, &states);
                let db = states[i + 1] - states[i];
                m_row[i + 1] = m_row[i] + b * db;
                q_row[i + 1] = q_row[i] + b * b * dt;
                e_row[i + 1] = (m_row[i + 1] - 0.5 * q_row[i + 1]).exp();
            }
        });

    let terminal_mean = (0..n_paths)
        .map(|p| expo[p * n_nodes + n_nodes - 1])
        .sum::<f64>()
        / n_paths as f64;

    Ok(StochasticExponentialPath {
        base,
        quadratic_variation: qv,
        exponential: expo,
        terminal_mean,
        n_nodes,
    })
}

/// Perturbation probe: beta at step i must not change when increments
/// strictly after t_i are replaced.
fn verify_step_process_adapted(ensemble: &PathEnsemble, beta: &StepProcess) -> Result<()> {
    let n_nodes = ensemble.grid().n_nodes();
    let n_steps = ensemble.grid().n_steps();
    let probe_paths = ensemble.n_paths().min(3);
    let alt_seed = rng::derive_seed(ensemble.seed(), 0x0bad_cafe);
    let mut states = vec![0.0; n_nodes];
    let mut perturbed = vec![0.0; n_nodes];
    for p in 0..probe_paths {
        ensemble.fill_states(p, &mut states);
        for &i in &[0, n_steps / 2, n_steps - 1] {
            let original = beta(p, i, &states);
            perturbed.copy_from_slice(&states);
            let mut acc = states[i];
            for j in i..n_steps {
                acc += ensemble.sqrt_dt * rng::standard_normal(alt_seed, p as u64, j as u64);
                perturbed[j + 1] = acc;
            }
            let replayed = beta(p, i, &perturbed);
            if replayed != original {
                return Err(Error::ContractViolation(format!(
                    "process is not adapted: value at (path {p}, step {i}) depends on \
                     increments after t_{i} ({original} vs {replayed})"
                )));
            }
        }
    }
    Ok(())
}

/// How a finite-valued stopping time decides to stop, in terms of the
/// current state only (the Markovian class the engine can evaluate).
#[derive(Clone)]
pub enum StoppingRule {
    /// Always stop at one grid node.
    Deterministic { node: usize },
    /// Stop at the first decision node whose predicate holds for the state
    /// there; forced at `cap_node` otherwise.
    FirstHit {
        decisions: Vec<(usize, Arc<dyn Fn(f64) -> bool + Send + Sync>)>,
        cap_node: usize,
    },
    /// Arbitrary decision from the whole path. Exists for testing the
    /// adaptedness probe; the operator calculus rejects it.
    Custom {
        decide: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
        value_nodes: Vec<usize>,
    },
}

impl StoppingRule {
    fn apply(&self, states: &[f64]) -> usize {
        match self {
            StoppingRule::Deterministic { node } => *node,
            StoppingRule::FirstHit {
                decisions,
                cap_node,
            } => {
                for (node, pred) in decisions {
                    if pred(states[*node]) {
                        return *node;
                    }
                }
                *cap_node
            }
            StoppingRule::Custom { decide, .. } => decide(states),
        }
    }

    fn value_nodes(&self) -> Vec<usize> {
        let mut nodes = match self {
            StoppingRule::Deterministic { node } => vec![*node],
            StoppingRule::FirstHit {
                decisions,
                cap_node,
            } => {
                let mut v: Vec<usize> = decisions.iter().map(|(n, _)| *n).collect();
                v.push(*cap_node);
                v
            }
            StoppingRule::Custom { value_nodes, .. } => value_nodes.clone(),
        };
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

/// A stopping time taking finitely many values on the grid, with its
/// per-path assignment and the rule that produced it.
#[derive(Clone)]
pub struct FiniteStoppingTime {
    grid: TimeGrid,
    stop_node: Vec<usize>,
    rule: StoppingRule,
}

impl FiniteStoppingTime {
    pub fn from_rule(ensemble: &PathEnsemble, rule: StoppingRule) -> Result<Self> {
        let n_nodes = ensemble.grid().n_nodes();
        for node in rule.value_nodes() {
            if node >= n_nodes {
                return Err(Error::invalid(format!(
                    "stopping value node {node} outside grid of {n_nodes} nodes"
                )));
            }
        }
        let stop_node: Vec<usize> = (0..ensemble.n_paths())
            .into_par_iter()
            .map(|p| {
                let mut states = vec![0.0; n_nodes];
                ensemble.fill_states(p, &mut states);
                rule.apply(&states)
            })
            .collect();
        Ok(FiniteStoppingTime {
            grid: *ensemble.grid(),
            stop_node,
            rule,
        })
    }

    pub fn deterministic(ensemble: &PathEnsemble, node: usize) -> Result<Self> {
        Self::from_rule(ensemble, StoppingRule::Deterministic { node })
    }

    /// First grid node (from node 1 up to `cap_node`) where |B| reaches
    /// `level`, capped at `cap_node`.
    pub fn first_abs_hit(ensemble: &PathEnsemble, level: f64, cap_node: usize) -> Result<Self> {
        let decisions = (1..cap_node)
            .map(|node| {
                let pred: Arc<dyn Fn(f64) -> bool + Send + Sync> =
                    Arc::new(move |x: f64| x.abs() >= level);
                (node, pred)
            })
            .collect();
        Self::from_rule(
            ensemble,
            StoppingRule::FirstHit {
                decisions,
                cap_node,
            },
        )
    }

    /// Stop at `node_a` when `pred` holds for the state there, else `node_b`.
    pub fn two_valued(
        ensemble: &PathEnsemble,
        node_a: usize,
        pred: Arc<dyn Fn(f64) -> bool + Send + Sync>,
        node_b: usize,
    ) -> Result<Self> {
        if node_a >= node_b {
            return Err(Error::invalid("two_valued needs node_a < node_b"));
        }
        Self::from_rule(
            ensemble,
            StoppingRule::FirstHit {
                decisions: vec![(node_a, pred)],
                cap_node: node_b,
            },
        )
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn rule(&self) -> &StoppingRule {
        &self.rule
    }

    /// Sorted distinct grid nodes the time can take.
    pub fn value_nodes(&self) -> Vec<usize> {
        self.rule.value_nodes()
    }

    pub fn stop_node(&self, p: usize) -> usize {
        self.stop_node[p]
    }

    pub fn stop_time(&self, p: usize) -> f64 {
        self.grid.node(self.stop_node[p])
    }

    pub fn n_paths(&self) -> usize {
        self.stop_node.len()
    }

    /// True when the rule never looks past its own stopping node: perturb
    /// the increments strictly after the assigned node and re-apply.
    pub fn verify_adapted(&self, ensemble: &PathEnsemble) -> Result<()> {
        let n_nodes = ensemble.grid().n_nodes();
        let n_steps = ensemble.grid().n_steps();
        let alt_seed = rng::derive_seed(ensemble.seed(), 0x5701_1e57);
        let probe = ensemble.n_paths().min(64);
        let mut states = vec![0.0; n_nodes];
        for p in 0..probe {
            ensemble.fill_states(p, &mut states);
            let assigned = self.stop_node[p];
            let mut perturbed = states.clone();
            let mut acc = states[assigned];
            for j in assigned..n_steps {
                acc += ensemble.sqrt_dt * rng::standard_normal(alt_seed, p as u64, j as u64);
                perturbed[j + 1] = acc;
            }
            let replayed = self.rule.apply(&perturbed);
            if replayed != assigned {
                return Err(Error::ContractViolation(format!(
                    "stopping rule is not adapted on path {p}: node {assigned} became {replayed} \
                     after perturbing increments past it"
                )));
            }
        }
        Ok(())
    }
}

/// Lower estimate of the squared BMO norm of the process Z_t = z(t, B_t).
///
/// For each stopping time in the family the conditional expectation
/// E[int_tau^T |Z|^2 ds | F_tau] is estimated by re-simulation from the
/// stopped state (`n_sub` sub-paths on the remaining grid), the essential
/// supremum by the maximum over paths, and the norm by the maximum over the
/// family. Restricting to a finite family makes this a lower bound.
pub fn bmo_estimate(
    z_field: &(dyn Fn(f64, f64) -> f64 + Sync),
    ensemble: &PathEnsemble,
    stop_family: &[FiniteStoppingTime],
    n_sub: usize,
) -> Result<f64> {
    if stop_family.is_empty() {
        return Err(Error::invalid("bmo_estimate needs a non-empty family"));
    }
    if n_sub == 0 {
        return Err(Error::invalid("bmo_estimate needs n_sub >= 1"));
    }
    let grid = ensemble.grid();
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut worst: f64 = 0.0;
    for (k, tau) in stop_family.iter().enumerate() {
        if tau.n_paths() != ensemble.n_paths() {
            return Err(Error::invalid(
                "stopping time and ensemble have different path counts",
            ));
        }
        let sub_seed = rng::derive_seed(ensemble.seed(), 0xb30_0000 + k as u64);
        let family_worst = (0..ensemble.n_paths())
            .into_par_iter()
            .map(|p| -> Result<f64> {
                let s = tau.stop_node(p);
                let x0 = ensemble.state_at(p, s);
                if s == n_steps {
                    return Ok(0.0);
                }
                let path_seed = rng::derive_seed(sub_seed, p as u64);
                let mut acc = 0.0;
                for sub in 0..n_sub {
                    let mut x = x0;
                    for i in s..n_steps {
                        let z = z_field(grid.node(i), x);
                        if !z.is_finite() {
                            return Err(Error::Numeric(format!(
                                "z field not finite at (t={}, x={x})",
                                grid.node(i)
                            )));
                        }
                        acc += z * z * dt;
                        x += sqrt_dt * rng::standard_normal(path_seed, sub as u64, i as u64);
                    }
                }
                Ok(acc / n_sub as f64)
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        worst = worst.max(family_worst);
    }
    Ok(worst)
}

/// Default stopping family for BMO estimation: every deterministic grid
/// time plus |B|-hitting times at the given levels (capped at T).
pub fn default_bmo_family(
    ensemble: &PathEnsemble,
    levels: &[f64],
) -> Result<Vec<FiniteStoppingTime>> {
    let n = ensemble.grid().n_steps();
    let mut family = Vec::with_capacity(n + 1 + levels.len());
    for node in 0..=n {
        family.push(FiniteStoppingTime::deterministic(ensemble, node)?);
    }
    for &level in levels {
        family.push(FiniteStoppingTime::first_abs_hit(ensemble, level, n)?);
    }
    Ok(family)
}
