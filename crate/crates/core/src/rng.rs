//! Counter-based random numbers.
//!
//! Every variate is a pure function of `(seed, stream, counter, lane)`, so
//! a flow's randomness never depends on how many draws other flows made,
//! on thread scheduling, or on how many draws this flow made earlier.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    // SplitMix64 finaliser.
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub(crate) fn new(seed: u64) -> Self {
        CounterRng {
            key: mix(seed.wrapping_add(GOLDEN)),
        }
    }

    #[inline]
    pub(crate) fn bits(&self, stream: u64, counter: u64, lane: u64) -> u64 {
        let a = mix(self.key ^ stream.wrapping_mul(GOLDEN));
        let b = mix(a ^ counter.wrapping_mul(0xd6e8_feb8_6659_fd93));
        mix(b ^ lane
            .wrapping_mul(0xa076_1d64_78bd_642f)
            .wrapping_add(GOLDEN))
    }

    /// Uniform variate in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub(crate) fn uniform(&self, stream: u64, counter: u64, lane: u64) -> f64 {
        (self.bits(stream, counter, lane) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
