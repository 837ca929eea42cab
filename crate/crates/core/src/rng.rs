//! Counter-based random numbers.
//!
//! Every draw is a pure function of a (seed, stream, counter) triple, so
//! simulation output is independent of evaluation order and parallel
//! schedule, and any sub-stream can be re-derived on demand.

/// SplitMix64 finalizer; a bijective 64-bit mix with good avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Combine key material into a single well-mixed 64-bit word.
#[inline]
fn mix3(seed: u64, stream: u64, counter: u64) -> u64 {
    let mut h = mix64(seed);
    h = mix64(h ^ stream.wrapping_mul(0xD1B54A32D192ED03));
    mix64(h ^ counter.wrapping_mul(0x8CB92BA72F3D8DD7))
}

/// Uniform in (0, 1), derived from one 64-bit word (53-bit mantissa, offset
/// by half a unit so the endpoints are excluded).
#[inline]
fn to_unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw for the given (seed, stream, counter) key, via
/// Box-Muller on two derived uniforms.
#[inline]
pub fn standard_normal(seed: u64, stream: u64, counter: u64) -> f64 {
    let h1 = mix3(seed, stream, counter.wrapping_mul(2));
    let h2 = mix3(seed, stream, counter.wrapping_mul(2).wrapping_add(1));
    let u1 = to_unit_open(h1);
    let u2 = to_unit_open(h2);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform in (0, 1) for the given key.
#[inline]
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    to_unit_open(mix3(seed, stream, counter))
}

/// Derive a child seed, e.g. for per-job or per-stopping-time sub-streams.
#[inline]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix3(seed, 0xA5A5_A5A5_5A5A_5A5A, tag)
}
