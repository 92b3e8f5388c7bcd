//! Deterministic 64-bit generators.
//!
//! Everything here is built on the SplitMix64 output function
//! (Steele, Lea & Flood 2014), so any language with wrapping 64-bit integer
//! arithmetic can reproduce the streams bit for bit:
//!
//! ```text
//! GAMMA = 0x9E3779B97F4A7C15
//! mix(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//! ```
//!
//! [`SplitMix64`] is the sequential generator (`state += GAMMA; mix(state)`).
//! [`CounterRng`] is the counter-based form used for per-coordinate draws:
//! `value(i) = mix(key + (i + 1) * GAMMA)` where
//! `key = mix(seed ^ mix((stream + 1) * STREAM_MUL))`.

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
const MUL2: u64 = 0x94D0_49BB_1331_11EB;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(MUL2);
    z ^ (z >> 31)
}

/// Maps 64 random bits to a double in `[0, 1)` using the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform integer in `[0, n)` via the high half of a 128-bit product.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Random access generator: the i-th draw of a stream is a pure function of
/// `(seed, stream, i)`.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed ^ mix64(stream.wrapping_add(1).wrapping_mul(STREAM_MUL)));
        Self { key }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GAMMA)),
        )
    }

    #[inline]
    pub fn unit(&self, counter: u64) -> f64 {
        unit_f64(self.bits(counter))
    }
}
