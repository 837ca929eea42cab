//! BSDE generators g(t, y, z) with growth metadata, structural flags,
//! built-in families, transforms, and lattice-based assumption validation.
//!
//! Generators are deterministic functions of (t, y, z); the validator can
//! only refute the universally quantified growth assumptions, never prove
//! them, so it sweeps a finite sample lattice and reports the worst point.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::Compiled;
use crate::solver::DriverV;

type ScalarFn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type ScalarFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type ScalarFn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Structural properties a generator is declared (and spot-checked) to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorFlags {
    pub y_independent: bool,
    pub convex_in_z: bool,
    pub deterministic: bool,
    /// g(t, y, 0) = 0 for all (t, y): the constant-preserving condition.
    pub satisfies_g0: bool,
}

/// A driver g(t, y, z) with its z-derivative, an upper bound for the
/// y-derivative, the growth constant k and growth modulus ell.
#[derive(Clone)]
pub struct Generator {
    name: String,
    eval: ScalarFn3,
    dz: ScalarFn3,
    dz_exact: bool,
    /// (t, eps) -> h_eps(t), the upper envelope for dg/dy.
    dy_upper: ScalarFn2,
    k: f64,
    ell: ScalarFn1,
    flags: GeneratorFlags,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("flags", &self.flags)
            .finish()
    }
}

impl Generator {
    /// Fully explicit constructor; the built-ins below cover common cases.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: impl Into<String>,
        eval: ScalarFn3,
        dz: ScalarFn3,
        dz_exact: bool,
        dy_upper: ScalarFn2,
        k: f64,
        ell: ScalarFn1,
        flags: GeneratorFlags,
    ) -> Self {
        Generator {
            name: name.into(),
            eval,
            dz,
            dz_exact,
            dy_upper,
            k,
            ell,
            flags,
        }
    }

    /// g = 0.
    pub fn zero() -> Self {
        Generator::from_parts(
            "zero",
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _, _| 0.0),
            true,
            Arc::new(|_, _| 0.0),
            0.5,
            Arc::new(|_| 0.0),
            GeneratorFlags {
                y_independent: true,
                convex_in_z: true,
                deterministic: true,
                satisfies_g0: true,
            },
        )
    }

    /// g = a z.
    pub fn linear(a: f64) -> Self {
        assert!(a.is_finite(), "linear coefficient must be finite");
        let abs_a = a.abs();
        Generator::from_parts(
            format!("linear({a})"),
            Arc::new(move |_, _, z| a * z),
            Arc::new(move |_, _, _| a),
            true,
            Arc::new(|_, _| 0.0),
            (abs_a / 4.0).max(0.5),
            Arc::new(move |_| abs_a),
            GeneratorFlags {
                y_independent: true,
                convex_in_z: true,
                deterministic: true,
                satisfies_g0: true,
            },
        )
    }

    /// g = (gamma / 2) z^2, the entropic driver.
    pub fn entropic(gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma.is_finite(), "gamma must be positive");
        Generator::from_parts(
            format!("entropic({gamma})"),
            Arc::new(move |_, _, z| 0.5 * gamma * z * z),
            Arc::new(move |_, _, z| gamma * z),
            true,
            Arc::new(|_, _| 0.0),
            (0.5 * gamma).max(0.5),
            Arc::new(move |_| gamma),
            GeneratorFlags {
                y_independent: true,
                convex_in_z: true,
                deterministic: true,
                satisfies_g0: true,
            },
        )
    }

    /// g = mu |z|, with dg/dz = 0 at z = 0 (symmetric subgradient choice;
    /// the representation checker probes near z = 0 and must see no
    /// directional bias).
    pub fn abs_drift(mu: f64) -> Self {
        assert!(mu >= 0.0 && mu.is_finite(), "mu must be >= 0");
        Generator::from_parts(
            format!("abs_drift({mu})"),
            Arc::new(move |_, _, z| mu * z.abs()),
            Arc::new(move |_, _, z: f64| mu * if z == 0.0 { 0.0 } else { z.signum() }),
            true,
            Arc::new(|_, _| 0.0),
            (mu / 4.0).max(0.5),
            Arc::new(move |_| mu),
            GeneratorFlags {
                y_independent: true,
                convex_in_z: true,
                deterministic: true,
                satisfies_g0: true,
            },
        )
    }

    /// Entropic driver smoothed in z at scale 1/n (Gaussian mollification
    /// of z^2 has the closed form z^2 + 1/n^2); the stability ladder.
    /// Carries the same (k, ell) metadata as the plain entropic driver so
    /// ladders share their growth constants.
    pub fn mollified_entropic(gamma: f64, n: usize) -> Self {
        assert!(n >= 1);
        let shift = 1.0 / (n as f64 * n as f64);
        Generator::from_parts(
            format!("entropic({gamma})~mollified(1/{n})"),
            Arc::new(move |_, _, z| 0.5 * gamma * (z * z + shift)),
            Arc::new(move |_, _, z| gamma * z),
            true,
            Arc::new(|_, _| 0.0),
            (0.5 * gamma).max(0.5),
            Arc::new(move |_| gamma),
            GeneratorFlags {
                y_independent: true,
                convex_in_z: true,
                deterministic: true,
                // g(t, y, 0) = gamma shift / 2 != 0.
                satisfies_g0: false,
            },
        )
    }

    /// Generator from an expression over (t, y, z); the z-derivative comes
    /// from forward-mode differentiation of the parsed tree. Structural
    /// flags are inferred on a sample lattice; `k` and a constant `ell`
    /// must be supplied (no attempt is made to infer minimal constants).
    pub fn custom(expr: &str, k: f64, ell: f64) -> crate::Result<Self> {
        let compiled = Compiled::parse(expr, &["t", "y", "z"])?;
        let c_eval = compiled.clone();
        let c_dz = compiled.clone();
        let eval: ScalarFn3 = Arc::new(move |t, y, z| c_eval.eval(&[t, y, z]));
        let dz: ScalarFn3 = Arc::new(move |t, y, z| c_dz.eval_d(&[t, y, z], 2).1);

        let lat = Lattice::flags_probe();
        let y_independent = lat.all(|t, y, z| ((eval)(t, y, z) - (eval)(t, 0.0, z)).abs() <= 1e-12);
        let satisfies_g0 = lat.all_ty(|t, y| (eval)(t, y, 0.0).abs() <= 1e-12);
        let convex_in_z = infer_convex_in_z(&*eval);

        let dy_upper: ScalarFn2 = if y_independent {
            Arc::new(|_, _| 0.0)
        } else {
            // Sampled envelope: max over the probe lattice of dg/dy.
            let e2 = eval.clone();
            let mut h_max = 0.0f64;
            for t in lat.ts.iter() {
                for y in lat.ys.iter() {
                    for z in lat.zs.iter() {
                        let h = 1e-5 * (1.0 + y.abs());
                        let d = ((e2)(*t, y + h, *z) - (e2)(*t, y - h, *z)) / (2.0 * h);
                        if d.is_finite() {
                            h_max = h_max.max(d);
                        }
                    }
                }
            }
            Arc::new(move |_, _| h_max)
        };

        Ok(Generator::from_parts(
            format!("custom({expr})"),
            eval,
            dz,
            true,
            dy_upper,
            k,
            Arc::new(move |_| ell),
            GeneratorFlags {
                y_independent,
                convex_in_z,
                deterministic: true,
                satisfies_g0,
            },
        ))
    }

    #[inline]
    pub fn eval(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.eval)(t, y, z)
    }

    #[inline]
    pub fn dz(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.dz)(t, y, z)
    }

    pub fn dz_exact(&self) -> bool {
        self.dz_exact
    }

    pub fn dy_upper(&self, t: f64, eps: f64) -> f64 {
        (self.dy_upper)(t, eps)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn ell(&self, r: f64) -> f64 {
        (self.ell)(r)
    }

    pub fn flags(&self) -> GeneratorFlags {
        self.flags
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// g~(t, y, z) = g(t, y - V_t, z); the driver-shifted generator.
    pub fn shift_by_driver(&self, v: &DriverV) -> crate::Result<Self> {
        let sup = v.sup_norm();
        if !sup.is_finite() {
            return Err(crate::Error::invalid("driver V is unbounded"));
        }
        let base = self.eval.clone();
        let base_dz = self.dz.clone();
        let vv = v.clone();
        let vv2 = v.clone();
        let k = self.k * (1.0 + sup);
        let ell = self.ell.clone();
        Ok(Generator {
            name: format!("{}<<driver", self.name),
            eval: Arc::new(move |t, y, z| (base)(t, y - vv.value(t), z)),
            dz: Arc::new(move |t, y, z| (base_dz)(t, y - vv2.value(t), z)),
            dz_exact: self.dz_exact,
            dy_upper: self.dy_upper.clone(),
            k,
            ell: Arc::new(move |r| (ell)(r + sup)),
            flags: self.flags,
        })
    }

    /// The reflected generator -g(t, -y, -z).
    pub fn reflect(&self) -> Self {
        let base = self.eval.clone();
        let base_dz = self.dz.clone();
        let eval: ScalarFn3 = Arc::new(move |t, y, z| -(base)(t, -y, -z));
        let convex_in_z = infer_convex_in_z(&*eval);
        Generator {
            name: format!("reflect({})", self.name),
            eval,
            dz: Arc::new(move |t, y, z| (base_dz)(t, -y, -z)),
            dz_exact: self.dz_exact,
            dy_upper: self.dy_upper.clone(),
            k: self.k,
            ell: self.ell.clone(),
            flags: GeneratorFlags {
                convex_in_z,
                ..self.flags
            },
        }
    }

    /// g^c(t, y, z) = g(t, y - c, z).
    pub fn y_shift(&self, c: f64) -> Self {
        let base = self.eval.clone();
        let base_dz = self.dz.clone();
        let ell = self.ell.clone();
        let ca = c.abs();
        Generator {
            name: format!("{}>>y{c}", self.name),
            eval: Arc::new(move |t, y, z| (base)(t, y - c, z)),
            dz: Arc::new(move |t, y, z| (base_dz)(t, y - c, z)),
            dz_exact: self.dz_exact,
            dy_upper: self.dy_upper.clone(),
            k: self.k * (1.0 + ca),
            ell: Arc::new(move |r| (ell)(r + ca)),
            flags: self.flags,
        }
    }
}

/// Midpoint-convexity probe in z over a coarse sample set.
fn infer_convex_in_z(eval: &(dyn Fn(f64, f64, f64) -> f64 + Send + Sync)) -> bool {
    let zs: Vec<f64> = (0..17).map(|i| -8.0 + i as f64).collect();
    for t in [0.0, 0.5, 1.0] {
        for y in [-2.0, 0.0, 2.0] {
            for i in 0..zs.len() {
                for j in (i + 1)..zs.len() {
                    let mid = 0.5 * (zs[i] + zs[j]);
                    let lhs = eval(t, y, mid);
                    let rhs = 0.5 * (eval(t, y, zs[i]) + eval(t, y, zs[j]));
                    if lhs > rhs + 1e-9 * (1.0 + rhs.abs()) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Sample lattice over [0, T] x [-Y, Y] x [-Z, Z] for assumption sweeps.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub ts: Vec<f64>,
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
}

impl Lattice {
    pub fn new(ts: Vec<f64>, ys: Vec<f64>, zs: Vec<f64>) -> crate::Result<Self> {
        if ts.is_empty() || ys.is_empty() || zs.is_empty() {
            return Err(crate::Error::invalid("lattice must be non-empty"));
        }
        Ok(Lattice { ts, ys, zs })
    }

    /// 21 x 21 x 41 points over [0, T] x [-5, 5] x [-10, 10].
    pub fn default_for_horizon(t_end: f64) -> Self {
        Lattice {
            ts: linspace(0.0, t_end, 21),
            ys: linspace(-5.0, 5.0, 21),
            zs: linspace(-10.0, 10.0, 41),
        }
    }

    /// Smaller probe used for inferring flags of custom generators.
    fn flags_probe() -> Self {
        Lattice {
            ts: linspace(0.0, 1.0, 5),
            ys: linspace(-3.0, 3.0, 7),
            zs: linspace(-6.0, 6.0, 13),
        }
    }

    pub fn len(&self) -> usize {
        self.ts.len() * self.ys.len() * self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all<F: Fn(f64, f64, f64) -> bool>(&self, pred: F) -> bool {
        self.ts.iter().all(|&t| {
            self.ys
                .iter()
                .all(|&y| self.zs.iter().all(|&z| pred(t, y, z)))
        })
    }

    fn all_ty<F: Fn(f64, f64) -> bool>(&self, pred: F) -> bool {
        self.ts.iter().all(|&t| self.ys.iter().all(|&y| pred(t, y)))
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| {
            let w = i as f64 / (n - 1) as f64;
            a * (1.0 - w) + b * w
        })
        .collect()
}

/// Outcome of one assumption on the lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionStatus {
    pub pass: bool,
    /// Most negative margin (bound minus observed); >= 0 when satisfied.
    pub worst_margin: f64,
    pub worst_point: Option<(f64, f64, f64)>,
    pub detail: String,
}

impl AssumptionStatus {
    fn passing(detail: impl Into<String>) -> Self {
        AssumptionStatus {
            pass: true,
            worst_margin: f64::INFINITY,
            worst_point: None,
            detail: detail.into(),
        }
    }
}

/// Pointwise status of the standing assumptions and their weak variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub h1: AssumptionStatus,
    pub h2: AssumptionStatus,
    pub h3: AssumptionStatus,
    pub h4: AssumptionStatus,
    pub a1: AssumptionStatus,
    pub a2: AssumptionStatus,
    pub a3: AssumptionStatus,
    /// Sampled lower bound for dg/dy; finite when the representation
    /// theorem's lower-envelope hypothesis is plausible on the lattice.
    pub dy_lower_bound: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.h1.pass && self.h2.pass && self.h3.pass && self.h4.pass
    }

    /// Hypotheses used by the representation checker: continuity plus a
    /// finite lower envelope for dg/dy near the probe.
    pub fn representation_hypotheses_ok(&self) -> bool {
        self.h1.pass && self.dy_lower_bound.is_finite()
    }
}

/// Sweep the lattice and report each assumption's worst margin.
///
/// Violations are report content, not errors.
pub fn validate(gen: &Generator, lattice: &Lattice) -> AssumptionReport {
    let mut h1 = AssumptionStatus::passing("finite values, bounded oscillation between neighbors");
    let mut h2 = AssumptionStatus::passing("|g| <= k + k|y| + ell(|y|) z^2");
    let mut h3 = AssumptionStatus::passing("|dg/dz| <= ell(|y|)(1 + |z|)");
    let mut h4 = AssumptionStatus::passing("dg/dy <= h_eps(t) + eps z^2 for eps in {0.1, 1}");
    let mut dy_min = f64::INFINITY;

    let tol = 1e-9;
    let record = |status: &mut AssumptionStatus, margin: f64, point: (f64, f64, f64)| {
        if margin < status.worst_margin {
            status.worst_margin = margin;
            status.worst_point = Some(point);
        }
        if margin < -tol {
            status.pass = false;
        }
    };

    // H1 oscillation scale: compare neighbors in z at fixed (t, y).
    for &t in &lattice.ts {
        for &y in &lattice.ys {
            let mut prev: Option<(f64, f64)> = None;
            for &z in &lattice.zs {
                let g = gen.eval(t, y, z);
                if !g.is_finite() {
                    h1.pass = false;
                    h1.worst_point = Some((t, y, z));
                    h1.worst_margin = f64::NEG_INFINITY;
                    h1.detail = format!("non-finite value at ({t}, {y}, {z})");
                    continue;
                }
                if let Some((zp, gp)) = prev {
                    let dz_step = (z - zp).abs().max(1e-12);
                    let lip = (g - gp).abs() / dz_step;
                    // A continuous driver under H3 cannot jump faster than
                    // ell(|y|)(1 + max|z|) between neighbors.
                    let cap = 10.0 * (1.0 + gen.ell(y.abs())) * (1.0 + z.abs().max(zp.abs()));
                    record(&mut h1, cap - lip, (t, y, z));
                }
                prev = Some((z, g));

                // H2 combined growth bound.
                let bound = gen.k() * (1.0 + y.abs()) + gen.ell(y.abs()) * z * z;
                record(&mut h2, bound - g.abs(), (t, y, z));

                // H3 z-derivative bound.
                let d = gen.dz(t, y, z);
                let dbound = gen.ell(y.abs()) * (1.0 + z.abs());
                record(&mut h3, dbound - d.abs(), (t, y, z));

                // H4 one-sided y-derivative bound, central difference.
                let h = 1e-5 * (1.0 + y.abs());
                let dy = (gen.eval(t, y + h, z) - gen.eval(t, y - h, z)) / (2.0 * h);
                if dy.is_finite() {
                    dy_min = dy_min.min(dy);
                    for eps in [0.1, 1.0] {
                        let m = gen.dy_upper(t, eps) + eps * z * z - dy;
                        record(&mut h4, m, (t, y, z));
                    }
                } else {
                    h4.pass = false;
                    h4.worst_point = Some((t, y, z));
                }
            }
        }
    }

    // Weak variants: A1 is the same continuity content as H1; A2 asks for
    // locally integrable bounds on the y-window actually swept, which the
    // H2/H3 constants deliver with M = max |y|.
    let a1 = h1.clone();
    let m = lattice.ys.iter().fold(0.0f64, |acc, y| acc.max(y.abs()));
    let mut a2 = AssumptionStatus::passing(format!(
        "|g| <= ell_t + C z^2 and |dg/dz| <= k_t + C |z| on |y| <= {m}"
    ));
    let c_const = gen.ell(m) + gen.k();
    let ell_t = gen.k() * (1.0 + m);
    for &t in &lattice.ts {
        for &y in &lattice.ys {
            for &z in &lattice.zs {
                let g = gen.eval(t, y, z).abs();
                record(&mut a2, ell_t + c_const * z * z - g, (t, y, z));
                let d = gen.dz(t, y, z).abs();
                record(&mut a2, gen.ell(m) + c_const * z.abs() - d, (t, y, z));
            }
        }
    }
    let a3 = h4.clone();

    AssumptionReport {
        h1,
        h2,
        h3,
        h4,
        a1,
        a2,
        a3,
        dy_lower_bound: if dy_min.is_finite() {
            dy_min
        } else {
            f64::NEG_INFINITY
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_values() {
        assert_eq!(Generator::zero().eval(0.3, -1.0, 2.0), 0.0);
        assert_eq!(Generator::entropic(1.0).eval(0.0, 0.0, 2.0), 2.0);
        assert_eq!(Generator::abs_drift(0.5).eval(0.0, 0.0, -2.0), 1.0);
        assert_eq!(Generator::linear(0.3).eval(0.7, 5.0, -2.0), -0.6);
    }

    #[test]
    fn builtin_flags() {
        let z = Generator::zero();
        assert!(z.flags().y_independent && z.flags().convex_in_z && z.flags().satisfies_g0);
        let e = Generator::entropic(2.0);
        assert!(e.flags().convex_in_z && e.flags().satisfies_g0);
        assert!(!Generator::mollified_entropic(1.0, 4).flags().satisfies_g0);
    }

    #[test]
    fn abs_drift_subgradient_at_zero_is_symmetric() {
        let g = Generator::abs_drift(0.5);
        assert_eq!(g.dz(0.0, 0.0, 0.0), 0.0);
        assert_eq!(g.dz(0.0, 0.0, 1e-9), 0.5);
        assert_eq!(g.dz(0.0, 0.0, -1e-9), -0.5);
    }

    #[test]
    fn entropic_passes_standing_assumptions() {
        let gen = Generator::entropic(1.0);
        let lat = Lattice::default_for_horizon(1.0);
        let rep = validate(&gen, &lat);
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.a2.pass && rep.a1.pass && rep.a3.pass);
        assert_eq!(gen.k(), 0.5);
    }

    #[test]
    fn linear_h3_needs_ell_at_least_a() {
        let gen = Generator::linear(0.7);
        let lat = Lattice::default_for_horizon(1.0);
        let rep = validate(&gen, &lat);
        assert!(rep.h3.pass);
        assert!(gen.ell(0.0) >= 0.7);
    }

    #[test]
    fn quartic_violates_h2_at_large_z() {
        let gen = Generator::custom("z*z*z*z", 0.5, 1.0).unwrap();
        let lat = Lattice::default_for_horizon(1.0);
        let rep = validate(&gen, &lat);
        assert!(!rep.h2.pass);
        let (_, _, z) = rep.h2.worst_point.unwrap();
        assert_eq!(z.abs(), 10.0, "worst point should sit at the z edge");
    }

    #[test]
    fn passing_h2_means_finite_everywhere() {
        let lat = Lattice::default_for_horizon(1.0);
        for gen in [
            Generator::zero(),
            Generator::linear(0.3),
            Generator::entropic(1.0),
            Generator::abs_drift(0.5),
        ] {
            let rep = validate(&gen, &lat);
            assert!(rep.h2.pass);
            for &t in &lat.ts {
                for &y in &lat.ys {
                    for &z in &lat.zs {
                        assert!(gen.eval(t, y, z).is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn reflect_of_entropic_flips_sign() {
        let g = Generator::entropic(2.0).reflect();
        assert_eq!(g.eval(0.0, 0.0, 3.0), -9.0);
        assert!(!g.flags().convex_in_z);
    }

    #[test]
    fn reflect_fixes_odd_generators() {
        let g = Generator::linear(0.4);
        let r = g.reflect();
        for z in [-2.0, 0.0, 1.5] {
            assert!((r.eval(0.3, 1.0, z) - g.eval(0.3, 1.0, z)).abs() < 1e-15);
        }
        let ydep = Generator::custom("y", 2.0, 1.0).unwrap();
        let yr = ydep.reflect();
        assert!((yr.eval(0.0, 2.0, 0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn y_shift_examples() {
        let g = Generator::custom("y*y", 30.0, 1.0).unwrap();
        let shifted = g.y_shift(1.0);
        assert!((shifted.eval(0.0, 2.0, 0.0) - 1.0).abs() < 1e-15);
        // y-independent generators are fixed points of the shift.
        let e = Generator::entropic(1.0);
        let es = e.y_shift(3.0);
        for z in [-1.0, 0.5, 2.0] {
            assert_eq!(es.eval(0.0, 0.0, z), e.eval(0.0, 0.0, z));
        }
    }

    #[test]
    fn shift_by_zero_driver_is_identity() {
        let g = Generator::custom("y + 0.5*z*z", 2.0, 1.0).unwrap();
        let v = DriverV::zero(1.0);
        let shifted = g.shift_by_driver(&v).unwrap();
        for t in [0.0, 0.5, 1.0] {
            for y in [-1.0, 0.0, 2.0] {
                assert!((shifted.eval(t, y, 1.0) - g.eval(t, y, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_by_linear_driver_substitutes() {
        // g(y, z) = y, V_t = t: the shifted generator is y - t.
        let g = Generator::custom("y", 2.0, 1.0).unwrap();
        let v = DriverV::new(Arc::new(|_| 1.0), vec![], 2.0).unwrap();
        let shifted = g.shift_by_driver(&v).unwrap();
        assert!((shifted.eval(1.0, 1.0, 0.3)).abs() < 1e-9);
    }

    #[test]
    fn convexity_scaling_inequality_on_lattice() {
        // For convex g with g(0) read off the lattice: g(l z) <= l g(z) +
        // (1-l) g(0) inside [0,1] and the reverse outside.
        for gen in [
            Generator::entropic(1.0),
            Generator::abs_drift(0.5),
            Generator::linear(0.3),
        ] {
            assert!(gen.flags().convex_in_z);
            for z in linspace(-6.0, 6.0, 13) {
                let g0 = gen.eval(0.2, 0.0, 0.0);
                let gz = gen.eval(0.2, 0.0, z);
                for l in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let lhs = gen.eval(0.2, 0.0, l * z);
                    assert!(lhs <= l * gz + (1.0 - l) * g0 + 1e-12);
                }
                for l in [-1.0, 1.5, 2.0] {
                    let lhs = gen.eval(0.2, 0.0, l * z);
                    assert!(lhs >= l * gz + (1.0 - l) * g0 - 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn reflect_is_an_involution(a in -2.0f64..2.0, gamma in 0.1f64..3.0) {
            let lat = Lattice::default_for_horizon(1.0);
            for gen in [Generator::linear(a), Generator::entropic(gamma)] {
                let rr = gen.reflect().reflect();
                for &t in &lat.ts {
                    for &y in lat.ys.iter().step_by(4) {
                        for &z in lat.zs.iter().step_by(4) {
                            prop_assert!((rr.eval(t, y, z) - gen.eval(t, y, z)).abs() <= 1e-14);
                        }
                    }
                }
            }
        }

        #[test]
        fn y_shift_round_trip(c in -3.0f64..3.0) {
            let gen = Generator::custom("y*y + 0.1*z*z", 30.0, 1.0).unwrap();
            let round = gen.y_shift(c).y_shift(-c);
            for y in [-2.0, 0.0, 1.5] {
                for z in [-1.0, 2.0] {
                    prop_assert!((round.eval(0.3, y, z) - gen.eval(0.3, y, z)).abs() <= 1e-14);
                }
            }
        }

        #[test]
        fn g0_flag_means_zero_at_z0(yv in -5.0f64..5.0, tv in 0.0f64..1.0) {
            for gen in [Generator::zero(), Generator::linear(0.3),
                        Generator::entropic(1.0), Generator::abs_drift(0.5)] {
                prop_assert!(gen.flags().satisfies_g0);
                prop_assert!(gen.eval(tv, yv, 0.0).abs() <= 1e-14);
            }
        }
    }
}
