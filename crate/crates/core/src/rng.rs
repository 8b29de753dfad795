//! Seedable generator used for every random instance in the crate.
//!
//! The generator is SplitMix64 (Steele, Lea and Flood), chosen because it is
//! a few lines in any language, so instances can be regenerated bit-for-bit
//! elsewhere:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15            (wrapping)
//! z      = state
//! z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! Derived draws:
//!
//! * `uniform()` = ((output >> 11) + 0.5) · 2⁻⁵³, strictly inside (0, 1).
//! * `exponential()` = −ln(uniform()), strictly positive.
//! * `simplex(n)` = n exponentials divided by their sum (flat Dirichlet).

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.next_u64() % span) as usize
    }

    pub fn exponential(&mut self) -> f64 {
        -self.uniform().ln()
    }

    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        let mut row: Vec<f64> = (0..n).map(|_| self.exponential()).collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        row
    }
}

/// Mixes a base seed with a stream index so that per-instance seeds of a
/// batch are decorrelated but reproducible.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut g = SplitMix64::new(base ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    g.next_u64()
}
