//! Counter-based randomness for noise simulation.
//!
//! Every table look-up draws from a stream keyed by `(seed, row, step, slot)`,
//! so results do not depend on evaluation order or thread count.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a key into a running hash.
#[inline]
pub fn mix64(h: u64, key: u64) -> u64 {
    splitmix64(h ^ splitmix64(key))
}

/// Short-lived generator for one keyed draw site.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    state: u64,
}

impl KeyedStream {
    pub fn new(seed: u64, keys: &[u64]) -> Self {
        let state = keys.iter().fold(splitmix64(seed), |h, &k| mix64(h, k));
        Self { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
