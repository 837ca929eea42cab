//! Run configuration: a list of jobs, each naming a checker or a one-off
//! operation, with explicit seeds and artifact options.

use serde::{Deserialize, Serialize};

use qgx::gexp::GeneratorSpec;

fn default_tol_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub jobs: Vec<JobSpec>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub id: String,
    /// Explicit seed; wall-clock defaults would break reproducibility.
    pub seed: u64,
    #[serde(default = "default_tol_scale")]
    pub tol_scale: f64,
    pub task: TaskSpec,
}

/// Driver description: a density expression over t plus jumps at grid
/// times.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub density: String,
    #[serde(default)]
    pub jumps: Vec<(f64, f64)>,
}

/// Finite-valued stopping time descriptions for sampling jobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopSpec {
    Deterministic {
        node: usize,
    },
    /// First grid node where |B| reaches `level`, capped at `cap`.
    Hit {
        level: f64,
        cap: usize,
    },
    /// Stop at node_a when |B| >= level there, else at node_b.
    TwoValued {
        node_a: usize,
        level: f64,
        node_b: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// One-off surface solve; exports CSV and optionally the binary layout.
    Solve {
        generator: GeneratorSpec,
        terminal: String,
        horizon: f64,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        driver: Option<DriverSpec>,
        #[serde(default)]
        export_binary: bool,
    },
    /// Ensemble export (path_id, step, increment).
    Paths {
        horizon: f64,
        n_steps: usize,
        n_paths: usize,
    },
    Axioms {
        generator: GeneratorSpec,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    Comparison {
        generator: GeneratorSpec,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    Bmo {
        generator: GeneratorSpec,
        terminal: String,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        ensemble_steps: Option<usize>,
        #[serde(default)]
        n_paths: Option<usize>,
        #[serde(default)]
        n_sub: Option<usize>,
    },
    Representation {
        generator: GeneratorSpec,
        t: f64,
        y: f64,
        z: f64,
        delta: f64,
        eps_ladder: Vec<f64>,
        tolerance: f64,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        points_per_radius: Option<usize>,
    },
    ConverseComparison {
        gen1: GeneratorSpec,
        gen2: GeneratorSpec,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        n_random_terminals: Option<usize>,
    },
    Translation {
        generator: GeneratorSpec,
        constants: Vec<f64>,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    Jensen {
        generator: GeneratorSpec,
        /// One of "abs", "relu", "identity", or `softplus:<scale>`.
        convex: String,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    /// Decompose X = evaluation surface of `terminal` plus `drift` * t.
    DoobMeyer {
        generator: GeneratorSpec,
        terminal: String,
        drift: f64,
        #[serde(default)]
        n_intervals: Option<usize>,
        #[serde(default)]
        sub_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    OptionalSampling {
        generator: GeneratorSpec,
        terminal: String,
        drift: f64,
        sigma: StopSpec,
        tau: StopSpec,
        ensemble_steps: usize,
        n_paths: usize,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Upcrossing {
        generator: GeneratorSpec,
        terminal: String,
        drift: f64,
        a: f64,
        b: f64,
        partition: usize,
        ensemble_steps: usize,
        n_paths: usize,
        #[serde(default)]
        sub_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
    },
    /// Mollified-entropic generator ladder against the sharp limit.
    Stability {
        gamma: f64,
        ladder: Vec<usize>,
        terminal: String,
        #[serde(default)]
        n_steps: Option<usize>,
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Solve { .. } => "solve",
            TaskSpec::Paths { .. } => "paths",
            TaskSpec::Axioms { .. } => "axioms",
            TaskSpec::Comparison { .. } => "comparison",
            TaskSpec::Bmo { .. } => "bmo",
            TaskSpec::Representation { .. } => "representation",
            TaskSpec::ConverseComparison { .. } => "converse_comparison",
            TaskSpec::Translation { .. } => "translation",
            TaskSpec::Jensen { .. } => "jensen",
            TaskSpec::DoobMeyer { .. } => "doob_meyer",
            TaskSpec::OptionalSampling { .. } => "optional_sampling",
            TaskSpec::Upcrossing { .. } => "upcrossing",
            TaskSpec::Stability { .. } => "stability",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let text = r#"{
            "jobs": [
                {"id": "heat", "seed": 1,
                 "task": {"kind": "solve", "generator": {"name": "zero"},
                          "terminal": "tanh(x)", "horizon": 1.0,
                          "n_steps": 64, "n_points": 101}},
                {"id": "rep", "seed": 2, "tol_scale": 2.0,
                 "task": {"kind": "representation",
                          "generator": {"name": "entropic", "gamma": 1.0},
                          "t": 0.0, "y": 0.0, "z": 1.0, "delta": 1.0,
                          "eps_ladder": [0.1, 0.05], "tolerance": 0.025}}
            ]
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let back = serde_json::to_string(&cfg).unwrap();
        let cfg2: RunConfig = serde_json::from_str(&back).unwrap();
        assert_eq!(cfg2.jobs.len(), 2);
        assert_eq!(cfg2.jobs[0].task.kind(), "solve");
        assert_eq!(cfg2.jobs[1].tol_scale, 2.0);
    }

    #[test]
    fn unknown_checker_is_a_parse_error() {
        let text = r#"{"jobs": [{"id": "x", "seed": 1, "task": {"kind": "foo"}}]}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }
}
