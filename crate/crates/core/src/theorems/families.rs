//! Terminal families used for universally-quantified hypotheses.
//!
//! "For all bounded xi" is tested on a fixed, documented family of 12
//! bounded terminals plus seeded random smooth mixtures; the family is part
//! of each report so a run can be reproduced.

use crate::rng;
use crate::solver::TerminalCondition;

/// The 12 bounded core terminals: scaled/shifted tanh, clipped affine
/// claims, smoothed indicators, bumps and kinks.
pub fn core_family() -> Vec<(String, TerminalCondition)> {
    let entries: Vec<(&str, Box<dyn Fn(f64) -> f64 + Send + Sync>)> = vec![
        ("tanh(x)", Box::new(|x: f64| x.tanh())),
        ("tanh(2x)", Box::new(|x: f64| (2.0 * x).tanh())),
        ("tanh(x-1)", Box::new(|x: f64| (x - 1.0).tanh())),
        (
            "0.5*tanh(3x+1)",
            Box::new(|x: f64| 0.5 * (3.0 * x + 1.0).tanh()),
        ),
        ("clip(x,-1,1)", Box::new(|x: f64| x.clamp(-1.0, 1.0))),
        (
            "clip(0.5x+0.2,-2,2)",
            Box::new(|x: f64| (0.5 * x + 0.2).clamp(-2.0, 2.0)),
        ),
        (
            "clip(2x-1,-1.5,1.5)",
            Box::new(|x: f64| (2.0 * x - 1.0).clamp(-1.5, 1.5)),
        ),
        (
            "sigmoid(4x)",
            Box::new(|x: f64| 1.0 / (1.0 + (-4.0 * x).exp())),
        ),
        (
            "sigmoid(8(x-0.5))",
            Box::new(|x: f64| 1.0 / (1.0 + (-8.0 * (x - 0.5)).exp())),
        ),
        ("gauss_bump", Box::new(|x: f64| (-0.5 * x * x).exp())),
        ("abs_tanh", Box::new(|x: f64| x.tanh().abs())),
        ("x*exp(-x^2/2)", Box::new(|x: f64| x * (-0.5 * x * x).exp())),
    ];
    entries
        .into_iter()
        .map(|(name, f)| {
            let term = TerminalCondition::from_scan(f).expect("core terminals are bounded");
            (name.to_string(), term)
        })
        .collect()
}

/// Seeded random smooth bounded terminals: normalized mixtures of four
/// tanh ridges with coefficients drawn from the counter generator.
pub fn random_smooth_family(seed: u64, n: usize) -> Vec<(String, TerminalCondition)> {
    (0..n)
        .map(|i| {
            let stream = rng::derive_seed(seed, 0xfa71 + i as u64);
            let mut coef = [[0.0f64; 3]; 4];
            for (k, c) in coef.iter_mut().enumerate() {
                let a = 2.0 * rng::uniform(stream, 0, k as u64) - 1.0;
                let b = 0.3 + 1.7 * rng::uniform(stream, 1, k as u64);
                let d = 4.0 * rng::uniform(stream, 2, k as u64) - 2.0;
                *c = [a, b, d];
            }
            let f = move |x: f64| {
                coef.iter()
                    .map(|[a, b, d]| 0.25 * a * (b * x + d).tanh())
                    .sum::<f64>()
            };
            let term = TerminalCondition::from_scan(f).expect("mixtures are bounded");
            (format!("random[{seed}/{i}]"), term)
        })
        .collect()
}
