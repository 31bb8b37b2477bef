//! Deterministic seeded RNG (splitmix64) with counter-based stream splitting.
//!
//! Every random draw in the pipeline comes from one root seed expanded
//! through [`Rng::split`]; there is no global RNG state, so any stage can be
//! re-run in isolation and reproduce its draws bit for bit.

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            state: mix(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// Derive an independent stream from this RNG's seed and a counter.
    /// Does not advance `self`.
    pub fn split(&self, stream: u64) -> Rng {
        Rng {
            state: mix(self.state ^ mix(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
