//! Deterministic counter-based RNG for reproducible rollouts.
//!
//! The generator is SplitMix64: the i-th output is `mix64(seed + i*GOLDEN)`,
//! a pure function of the seed and a counter, so streams can be split by
//! key without sharing state. Substreams are derived by folding integer keys
//! into the seed with the same mix function (`derive_seed`), which is how
//! the trainer keys rollout streams by `(seed, update, prompt_slot)` and the
//! comparison runner keys cells by `(objective, seed)`. Results are therefore
//! independent of evaluation order.
//!
//! Not cryptographically secure; statistical quality is plenty for toy
//! simulation work.

/// Weyl-sequence increment used by SplitMix64.
const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// SplitMix64 finalizer: bijective 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a list of stream keys.
///
/// Each key is absorbed as one SplitMix64 step, so
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])` and from
/// any other key path. This is the documented substream derivation used
/// throughout the workspace.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    let mut state = mix64(master.wrapping_add(GOLDEN));
    for &k in keys {
        state = mix64(state.wrapping_add(GOLDEN).wrapping_add(mix64(k)));
    }
    state
}

/// Deterministic SplitMix64 stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    /// Stream seeded directly.
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for the substream identified by `keys` under `master`.
    pub fn from_key(master: u64, keys: &[u64]) -> Self {
        Self::new(derive_seed(master, keys))
    }

    /// Next raw 64-bit output.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle with this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
