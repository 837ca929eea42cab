//! One runnable checker per structural result, each emitting a
//! self-contained [`CheckReport`].

pub mod axioms;
pub mod bmo;
pub mod comparison;
pub mod converse;
pub mod doob_meyer;
pub mod families;
pub mod jensen;
pub mod report;
pub mod representation;
pub mod sampling;
pub mod stability;
pub mod translation;
pub mod upcrossing;

pub use axioms::{check_axioms, AxiomsConfig};
pub use bmo::{check_bmo_bound, BmoConfig};
pub use comparison::{check_strict_comparison, ComparisonConfig};
pub use converse::{check_converse_comparison, ConverseConfig};
pub use doob_meyer::{doob_meyer_decompose, Decomposition, DoobMeyerConfig};
pub use jensen::{check_jensen, ConvexFn, JensenConfig};
pub use report::{digest_bytes, digest_json, CheckReport, ReportBuilder};
pub use representation::{check_representation, RepresentationConfig};
pub use sampling::{check_optional_sampling, SamplingConfig};
pub use stability::{check_stability, StabilityConfig};
pub use translation::{check_translation_characterization, TranslationConfig};
pub use upcrossing::{check_upcrossing, upcross_count, UpcrossOutcome, UpcrossingConfig};

/// Description of a checker for discovery and the CLI describe command.
#[derive(Debug, Clone, Copy)]
pub struct CheckerInfo {
    pub id: &'static str,
    pub relation: &'static str,
    pub default_tolerance: f64,
}

/// The checker registry, keyed by the ids the CLI accepts.
pub fn checkers() -> &'static [CheckerInfo] {
    &[
        CheckerInfo {
            id: "axioms",
            relation: "monotonicity, constant preservation, interval-event masking, \
                       translation invariance and time-consistency of the evaluation family",
            default_tolerance: 0.0,
        },
        CheckerInfo {
            id: "comparison",
            relation: "ordered terminals give ordered evaluations everywhere, strictly at \
                       interior states when the gap has positive mass",
            default_tolerance: 1e-9,
        },
        CheckerInfo {
            id: "bmo",
            relation: "the squared BMO norm of the solve's gradient field is at most \
                       (1 + T) exp(8 k sup|Y|)",
            default_tolerance: 0.0,
        },
        CheckerInfo {
            id: "representation",
            relation: "the generator is the small-time limit of difference quotients of \
                       stopped evaluations of affine claims",
            default_tolerance: 0.05,
        },
        CheckerInfo {
            id: "converse_comparison",
            relation: "domination of evaluations for every bounded claim forces pointwise \
                       ordering of the generators",
            default_tolerance: 1e-5,
        },
        CheckerInfo {
            id: "translation",
            relation: "the evaluation commutes with adding constants iff the generator is \
                       independent of y",
            default_tolerance: 1e-6,
        },
        CheckerInfo {
            id: "jensen",
            relation: "convex transforms pass through the evaluation wherever the \
                       subdifferential meets the complement of (0, 1)",
            default_tolerance: 1e-6,
        },
        CheckerInfo {
            id: "doob_meyer",
            relation: "submartingales split into an evaluation-martingale and an \
                       increasing compensator, recoverable as a driver",
            default_tolerance: 5e-3,
        },
        CheckerInfo {
            id: "optional_sampling",
            relation: "stopped evaluations at finite-valued stopping times respect the \
                       process classification",
            default_tolerance: 5e-3,
        },
        CheckerInfo {
            id: "upcrossing",
            relation: "the weighted expected upcrossing count of the drift-adjusted \
                       submartingale stays under (sup|X| + k(J+1)T + |a|)/(b - a)",
            default_tolerance: 0.0,
        },
        CheckerInfo {
            id: "stability",
            relation: "solutions follow locally uniform generator/terminal convergence \
                       with shared growth constants",
            default_tolerance: 1e-3,
        },
    ]
}

pub fn checker_info(id: &str) -> Option<&'static CheckerInfo> {
    checkers().iter().find(|c| c.id == id)
}
