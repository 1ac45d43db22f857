//! Seeded pseudo-random numbers shared by every stochastic stage.
//!
//! The generator is splitmix64, and every derived draw is defined here so that
//! balancing, splitting, capping and augmentation are bit-reproducible from a
//! 64-bit seed in any language:
//!
//! * `below(n)` = high 64 bits of `next_u64() * n` (128-bit product).
//! * `unit_f64()` = `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `normal()` = Box–Muller over two `unit_f64()` draws, cosine branch only.

use std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below(0)");
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64(); // (0, 1]
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Fisher–Yates prefix shuffle: after the call, `items[..k]` is a uniform
    /// random `k`-subset in random order.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], k: usize) {
        let n = items.len();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            items.swap(i, j);
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        self.partial_shuffle(items, n);
    }
}

/// Picks `k` of `0..n` uniformly and returns them ascending.
pub fn sample_sorted(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k >= n {
        return idx;
    }
    SplitMix64::new(seed).partial_shuffle(&mut idx, k);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
