//! Counter-based random streams.
//!
//! Every random draw in a sample path is a pure function of
//! `(seed, stream, a, b, c)`, so any slot of any link can be regenerated
//! without replaying the others and two simulations keyed by the same seed
//! see bit-identical arrivals and connectivity.

/// Probability in 53-bit fixed point, `threshold / 2^53`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prob53(u64);

const ONE53: u64 = 1 << 53;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

impl Prob53 {
    pub fn from_f64(p: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p));
        let scaled = libm::round(p * ONE53 as f64) as u64;
        Prob53(scaled.min(ONE53))
    }

    pub fn threshold(self) -> u64 {
        self.0
    }

    /// Scalar draw: `true` with probability `self`.
    #[inline]
    pub fn sample(self, word: u64) -> bool {
        (word >> 11) < self.0
    }

    /// Bit-sliced Bernoulli: each set bit of `lanes` becomes 1 with
    /// probability `self`, independently. `word(d)` must return the d-th
    /// independent random word for this block.
    #[inline]
    pub fn sample_lanes(self, lanes: u64, mut word: impl FnMut(u32) -> u64) -> u64 {
        if self.0 >= ONE53 {
            return lanes;
        }
        let mut hit = 0u64;
        let mut open = lanes;
        for d in 0..53u32 {
            let rest = self.0 & ((1u64 << (53 - d)) - 1);
            if open == 0 || rest == 0 {
                break;
            }
            let r = word(d);
            if (self.0 >> (52 - d)) & 1 == 1 {
                hit |= open & !r;
                open &= r;
            } else {
                open &= !r;
            }
        }
        hit
    }
}

/// Stream tags so arrival and channel draws never share a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ArrivalInit = 1,
    ArrivalStep = 2,
    ChannelInit = 3,
    ChannelStep = 4,
    ChannelStepOff = 5,
    Instance = 6,
}

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, x: u64) -> u64 {
    mix(h.wrapping_add(GOLDEN) ^ x.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Key for a stream position; `word` derives further draws cheaply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Key(u64);

impl Key {
    pub fn new(seed: u64, stream: Stream, a: u64, b: u64) -> Self {
        let h = absorb(mix(seed ^ GOLDEN), stream as u64);
        Key(absorb(absorb(h, a), b))
    }

    #[inline]
    pub fn word(self, idx: u64) -> u64 {
        absorb(self.0, idx)
    }

    #[inline]
    pub fn unit(self, idx: u64) -> f64 {
        (self.word(idx) >> 11) as f64 * (1.0 / ONE53 as f64)
    }
}

/// Small sequential generator for test and fuzz instances.
#[derive(Debug, Clone)]
pub struct SeqRng {
    key: Key,
    counter: u64,
}

impl SeqRng {
    pub fn new(seed: u64) -> Self {
        SeqRng { key: Key::new(seed, Stream::Instance, 0, 0), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.key.word(self.counter)
    }

    /// Uniform in `[0, bound)`; `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / ONE53 as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities() {
        let one = Prob53::from_f64(1.0);
        let zero = Prob53::from_f64(0.0);
        assert_eq!(one.sample_lanes(u64::MAX, |_| 0x1234), u64::MAX);
        assert_eq!(zero.sample_lanes(u64::MAX, |_| 0x1234), 0);
        assert!(one.sample(u64::MAX));
        assert!(!zero.sample(0));
    }

    #[test]
    fn dyadic_probability_uses_few_words() {
        let p = Prob53::from_f64(0.75);
        let mut calls = 0;
        let _ = p.sample_lanes(u64::MAX, |d| {
            calls += 1;
            Key::new(1, Stream::Instance, 0, 0).word(d as u64)
        });
        assert!(calls <= 2);
    }

    #[test]
    fn lane_frequency_matches_probability() {
        for &p in &[0.1, 0.25, 0.5, 0.75, 0.9, 1.0 / 3.0] {
            let prob = Prob53::from_f64(p);
            let mut ones = 0u64;
            let blocks = 20_000u64;
            for b in 0..blocks {
                let key = Key::new(7, Stream::Instance, b, 0);
                ones += prob.sample_lanes(u64::MAX, |d| key.word(d as u64)).count_ones() as u64;
            }
            let total = (blocks * 64) as f64;
            let freq = ones as f64 / total;
            let sigma = (p * (1.0 - p) / total).sqrt();
            assert!((freq - p).abs() < 5.0 * sigma, "p={p} freq={freq}");
        }
    }

    #[test]
    fn keys_are_position_sensitive() {
        let a = Key::new(1, Stream::ChannelStep, 2, 3).word(0);
        assert_ne!(a, Key::new(1, Stream::ChannelStep, 3, 2).word(0));
        assert_ne!(a, Key::new(1, Stream::ArrivalStep, 2, 3).word(0));
        assert_ne!(a, Key::new(2, Stream::ChannelStep, 2, 3).word(0));
        assert_eq!(a, Key::new(1, Stream::ChannelStep, 2, 3).word(0));
    }
}
