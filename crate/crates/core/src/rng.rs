//! Deterministic random number generation for problem synthesis.
//!
//! All seeded randomness in this crate flows through [`SplitMix64`], a
//! counter-based 64-bit generator with a public specification, so that the
//! exact byte streams can be reproduced in any language:
//!
//! * state update: `s ← s + 0x9E3779B97F4A7C15` (wrapping),
//! * output: `z = s; z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!   z *= 0x94D049BB133111EB; z ^= z >> 31`.
//!
//! Uniform doubles are drawn on the half-open interval `(0, 1]` as
//! `((u >> 11) + 1) · 2⁻⁵³`, and standard normal deviates come from the
//! Box–Muller transform applied to consecutive uniform pairs `(u₁, u₂)`:
//! `z₀ = √(−2 ln u₁) cos(2π u₂)`, `z₁ = √(−2 ln u₁) sin(2π u₂)`,
//! consumed in that order.

/// SplitMix64 generator. See the module docs for the exact stream definition.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    cached_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output mix, usable on its own for deriving sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed, cached_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform double in `(0, 1]`.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate via Box–Muller; pairs are generated together
    /// and the second member is cached for the next call.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..bound` via modulo reduction. The modulo bias is
    /// below 2⁻⁴⁰ for the bounds used here and the reduction is trivially
    /// portable across languages.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        self.next_u64() % bound
    }
}
