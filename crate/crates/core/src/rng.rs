//! Counter-based random numbers.
//!
//! Values are pure functions of `(seed, stream, counter)`, so noise for a given
//! iteration and pixel can be regenerated in any order or partition.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn bits(&self, stream: u64, counter: u64) -> u64 {
        let a = mix64(self.seed.wrapping_add(GOLDEN));
        let b = mix64(a ^ stream.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
        mix64(b ^ counter.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(GOLDEN))
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, stream: u64, counter: u64) -> f64 {
        (self.bits(stream, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller over two consecutive sub-counters.
    #[inline]
    pub fn normal(&self, stream: u64, counter: u64) -> f64 {
        let u1 = self.uniform(stream, counter.wrapping_mul(2));
        let u2 = self.uniform(stream, counter.wrapping_mul(2).wrapping_add(1));
        // 1 - u1 lies in (0, 1], keeping ln finite.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_vec(&self, stream: u64, len: usize) -> Vec<f64> {
        (0..len).map(|i| self.normal(stream, i as u64)).collect()
    }
}
