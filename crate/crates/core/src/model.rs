//! Stochastic primitives: packets, arrival and channel processes, and
//! reproducible sample paths.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Key, Prob53, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} = {value} is not a probability")]
    InvalidProbability { what: &'static str, value: f64 },
    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("transition matrix never leaves its initial state")]
    Degenerate,
    #[error("{0} must be at least 1")]
    Zero(&'static str),
}

/// A packet, identified by when and where it arrived.
///
/// `queue` is zero-based; `index` is the packet's 1-based position among the
/// same-slot arrivals to its queue. The derived ordering ranks packets
/// oldest first: earlier arrival slot, then smaller queue index, then
/// smaller arrival index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Packet {
    pub arrival_slot: u64,
    pub queue: u32,
    pub index: u32,
}

impl Packet {
    pub fn new(arrival_slot: u64, queue: usize, index: u32) -> Self {
        Packet { arrival_slot, queue: queue as u32, index }
    }

    /// Waiting time at the beginning of `slot`.
    #[inline]
    pub fn delay(&self, slot: u64) -> u64 {
        debug_assert!(self.arrival_slot <= slot);
        slot - self.arrival_slot
    }

    /// Strict "older than" under the packet total order.
    ///
    /// Larger delay wins; equal delays fall back to the smaller queue index,
    /// then the earlier within-slot arrival.
    pub fn precedes(&self, other: &Packet, slot: u64) -> bool {
        debug_assert!(self.arrival_slot <= slot && other.arrival_slot <= slot);
        let by_delay = other.delay(slot).cmp(&self.delay(slot));
        by_delay
            .then(self.queue.cmp(&other.queue))
            .then(self.index.cmp(&other.index))
            == Ordering::Less
    }

    /// The fractional weight `delay + (n+1-q)/(n+1) + (L+1-x)/((L+1)(n+1))`
    /// scaled by `(L+1)(n+1)` so it is an exact integer. `q` is 1-based.
    pub fn scaled_weight(&self, slot: u64, n: usize, bound: u32) -> u128 {
        let n1 = n as u128 + 1;
        let l1 = bound as u128 + 1;
        let q = self.queue as u128 + 1;
        let x = self.index as u128;
        debug_assert!(q <= n as u128 && x >= 1 && x <= bound as u128);
        self.delay(slot) as u128 * n1 * l1 + (n1 - q) * l1 + (l1 - x)
    }
}

/// `p1` is strictly older than `p2` at `slot`.
pub fn packet_precedes(p1: &Packet, p2: &Packet, slot: u64) -> bool {
    p1.precedes(p2, slot)
}

/// Row-stochastic 2x2 matrix. State 0 is the active state (arrival burst or
/// channel ON); row `r` holds the transition probabilities out of state `r`.
pub type Transition = [[f64; 2]; 2];

fn check_prob(what: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::InvalidProbability { what, value })
    }
}

fn check_transition(m: &Transition) -> Result<(), ModelError> {
    for (row, r) in m.iter().enumerate() {
        check_prob("transition entry", r[0])?;
        check_prob("transition entry", r[1])?;
        let sum = r[0] + r[1];
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::NotStochastic { row, sum });
        }
    }
    if m[0][1] + m[1][0] == 0.0 {
        return Err(ModelError::Degenerate);
    }
    Ok(())
}

/// Long-run probability of the active state.
pub fn stationary_active(m: &Transition) -> f64 {
    m[1][0] / (m[0][1] + m[1][0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalSpec {
    /// `burst` packets with probability `alpha`, none otherwise.
    IidBernoulli { alpha: f64, burst: u32 },
    /// `burst` packets per slot while the chain is in state 0.
    Markov { transition: Transition, burst: u32 },
}

impl ArrivalSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ArrivalSpec::IidBernoulli { alpha, burst } => {
                check_prob("alpha", *alpha)?;
                if *burst == 0 {
                    return Err(ModelError::Zero("burst"));
                }
            }
            ArrivalSpec::Markov { transition, burst } => {
                check_transition(transition)?;
                if *burst == 0 {
                    return Err(ModelError::Zero("burst"));
                }
            }
        }
        Ok(())
    }

    /// Largest per-slot arrival count (the bound `L`).
    pub fn max_burst(&self) -> u32 {
        match self {
            ArrivalSpec::IidBernoulli { burst, .. } | ArrivalSpec::Markov { burst, .. } => *burst,
        }
    }

    /// Mean arrivals per queue per slot.
    pub fn mean_rate(&self) -> f64 {
        match self {
            ArrivalSpec::IidBernoulli { alpha, burst } => alpha * *burst as f64,
            ArrivalSpec::Markov { transition, burst } => {
                stationary_active(transition) * *burst as f64
            }
        }
    }

    /// Bursty two-state arrivals used in the homogeneous and heterogeneous
    /// simulation studies.
    pub fn bursty_default() -> Self {
        ArrivalSpec::Markov { transition: [[0.5, 0.5], [0.1, 0.9]], burst: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    IidOnOff { q: f64 },
    /// Per-link ON/OFF chains; even zero-based queue indices (odd 1-based
    /// users) are near users, the rest far users.
    Markov { near: Transition, far: Transition },
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ChannelSpec::IidOnOff { q } => check_prob("q", *q),
            ChannelSpec::Markov { near, far } => {
                check_transition(near)?;
                check_transition(far)
            }
        }
    }

    pub fn heterogeneous_default() -> Self {
        ChannelSpec::Markov { near: [[0.833, 0.167], [0.5, 0.5]], far: [[0.5, 0.5], [0.167, 0.833]] }
    }
}

#[inline]
pub fn is_near_user(queue: usize) -> bool {
    queue.is_multiple_of(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub horizon: u64,
    pub arrivals: ArrivalSpec,
    pub channels: ChannelSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::Zero("n"));
        }
        if self.horizon == 0 {
            return Err(ModelError::Zero("horizon"));
        }
        self.arrivals.validate()?;
        self.channels.validate()
    }
}

/// Queue-by-server connectivity for one slot, stored row-major as bitsets
/// (row = queue, bit = server).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl ConnMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        ConnMatrix { n, words, bits: vec![0; n * words] }
    }

    pub fn all_on(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn from_fn(n: usize, mut on: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                if on(i, j) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    /// Build from rows of 0/1 (rows = queues, columns = servers).
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| rows[i][j] != 0)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_on(&self, queue: usize, server: usize) -> bool {
        (self.bits[queue * self.words + server / 64] >> (server % 64)) & 1 == 1
    }

    pub fn set(&mut self, queue: usize, server: usize, on: bool) {
        let w = &mut self.bits[queue * self.words + server / 64];
        let mask = 1u64 << (server % 64);
        if on {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    /// Server bitset of one queue.
    #[inline]
    pub fn row(&self, queue: usize) -> &[u64] {
        &self.bits[queue * self.words..(queue + 1) * self.words]
    }

    fn row_mut(&mut self, queue: usize) -> &mut [u64] {
        &mut self.bits[queue * self.words..(queue + 1) * self.words]
    }

    /// Valid-lane mask for word `w` of a row.
    #[inline]
    pub fn lane_mask(&self, w: usize) -> u64 {
        let rem = self.n - w * 64;
        if rem >= 64 {
            u64::MAX
        } else {
            (1u64 << rem) - 1
        }
    }

    pub fn count_on(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn row_degree(&self, queue: usize) -> u32 {
        self.row(queue).iter().map(|w| w.count_ones()).sum()
    }
}

/// Arrivals and connectivity of one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotData {
    pub slot: u64,
    pub arrivals: Vec<u32>,
    pub conn: ConnMatrix,
}

/// A reproducible realization of the arrival and channel processes.
///
/// The path is never stored; [`SamplePath::stream`] replays it slot by slot
/// from `(config, seed)`, and [`SamplePath::materialize`] collects it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    config: ModelConfig,
    seed: u64,
}

/// Build a sample path after validating its configuration.
pub fn generate_sample_path(config: &ModelConfig, seed: u64) -> Result<SamplePath, ModelError> {
    config.validate()?;
    Ok(SamplePath { config: config.clone(), seed })
}

impl SamplePath {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn horizon(&self) -> u64 {
        self.config.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> SlotStream {
        SlotStream::new(&self.config, self.seed)
    }

    pub fn materialize(&self) -> Vec<SlotData> {
        let mut s = self.stream();
        let mut out = Vec::with_capacity(self.config.horizon as usize);
        while let Some(d) = s.next_slot() {
            out.push(d.clone());
        }
        out
    }
}

enum ArrivalGen {
    Iid { prob: Prob53, burst: u32 },
    Markov { leave: [Prob53; 2], burst: u32, active: Vec<bool> },
}

enum ChannelGen {
    Iid { prob: Prob53 },
    Markov { stay_on: [Prob53; 2], turn_on: [Prob53; 2] },
}

/// Sequential replay of a sample path; holds the Markov chain states.
pub struct SlotStream {
    n: usize,
    horizon: u64,
    seed: u64,
    slot: u64,
    arrivals: ArrivalGen,
    channels: ChannelGen,
    current: SlotData,
}

impl SlotStream {
    fn new(config: &ModelConfig, seed: u64) -> Self {
        let n = config.n;
        let arrivals = match &config.arrivals {
            ArrivalSpec::IidBernoulli { alpha, burst } => {
                ArrivalGen::Iid { prob: Prob53::from_f64(*alpha), burst: *burst }
            }
            ArrivalSpec::Markov { transition, burst } => {
                let init = Prob53::from_f64(stationary_active(transition));
                let active = (0..n)
                    .map(|i| init.sample(Key::new(seed, Stream::ArrivalInit, i as u64, 0).word(0)))
                    .collect();
                ArrivalGen::Markov {
                    leave: [Prob53::from_f64(transition[0][1]), Prob53::from_f64(transition[1][0])],
                    burst: *burst,
                    active,
                }
            }
        };
        let channels = match &config.channels {
            ChannelSpec::IidOnOff { q } => ChannelGen::Iid { prob: Prob53::from_f64(*q) },
            ChannelSpec::Markov { near, far } => ChannelGen::Markov {
                stay_on: [Prob53::from_f64(near[0][0]), Prob53::from_f64(far[0][0])],
                turn_on: [Prob53::from_f64(near[1][0]), Prob53::from_f64(far[1][0])],
            },
        };
        let mut current = SlotData { slot: 0, arrivals: vec![0; n], conn: ConnMatrix::new(n) };
        if let (ChannelGen::Markov { .. }, ChannelSpec::Markov { near, far }) =
            (&channels, &config.channels)
        {
            let init = [
                Prob53::from_f64(stationary_active(near)),
                Prob53::from_f64(stationary_active(far)),
            ];
            for i in 0..n {
                let class = usize::from(!is_near_user(i));
                for w in 0..current.conn.words {
                    let key = Key::new(seed, Stream::ChannelInit, i as u64, w as u64);
                    let mask = current.conn.lane_mask(w);
                    current.conn.row_mut(i)[w] = init[class].sample_lanes(mask, |d| key.word(d as u64));
                }
            }
        }
        SlotStream { n, horizon: config.horizon, seed, slot: 0, arrivals, channels, current }
    }

    /// Advance to the next slot; `None` once the horizon is exhausted.
    pub fn next_slot(&mut self) -> Option<&SlotData> {
        if self.slot >= self.horizon {
            return None;
        }
        let t = self.slot;
        self.fill_arrivals(t);
        self.fill_channels(t);
        self.current.slot = t;
        self.slot += 1;
        Some(&self.current)
    }

    fn fill_arrivals(&mut self, t: u64) {
        let seed = self.seed;
        match &mut self.arrivals {
            ArrivalGen::Iid { prob, burst } => {
                for (i, a) in self.current.arrivals.iter_mut().enumerate() {
                    let w = Key::new(seed, Stream::ArrivalStep, i as u64, t).word(0);
                    *a = if prob.sample(w) { *burst } else { 0 };
                }
            }
            ArrivalGen::Markov { leave, burst, active } => {
                for (i, a) in self.current.arrivals.iter_mut().enumerate() {
                    *a = if active[i] { *burst } else { 0 };
                    // transition at the end of the slot
                    let w = Key::new(seed, Stream::ArrivalStep, i as u64, t).word(0);
                    let state = usize::from(!active[i]);
                    if leave[state].sample(w) {
                        active[i] = !active[i];
                    }
                }
            }
        }
    }

    fn fill_channels(&mut self, t: u64) {
        let seed = self.seed;
        let n = self.n;
        let conn = &mut self.current.conn;
        match &self.channels {
            ChannelGen::Iid { prob } => {
                for i in 0..n {
                    for w in 0..conn.words {
                        let key = Key::new(seed, Stream::ChannelStep, i as u64, t);
                        let mask = conn.lane_mask(w);
                        let sub = (w as u64) << 8;
                        conn.row_mut(i)[w] = prob.sample_lanes(mask, |d| key.word(sub | d as u64));
                    }
                }
            }
            ChannelGen::Markov { stay_on, turn_on } => {
                if t == 0 {
                    return;
                }
                for i in 0..n {
                    let class = usize::from(!is_near_user(i));
                    let key_on = Key::new(seed, Stream::ChannelStep, i as u64, t);
                    let key_off = Key::new(seed, Stream::ChannelStepOff, i as u64, t);
                    for w in 0..conn.words {
                        let mask = conn.lane_mask(w);
                        let sub = (w as u64) << 8;
                        let cur = conn.row(i)[w];
                        let keep = stay_on[class].sample_lanes(cur, |d| key_on.word(sub | d as u64));
                        let wake = turn_on[class]
                            .sample_lanes(!cur & mask, |d| key_off.word(sub | d as u64));
                        conn.row_mut(i)[w] = keep | wake;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid(n: usize, horizon: u64, q: f64, alpha: f64, burst: u32) -> ModelConfig {
        ModelConfig {
            n,
            horizon,
            arrivals: ArrivalSpec::IidBernoulli { alpha, burst },
            channels: ChannelSpec::IidOnOff { q },
        }
    }

    #[test]
    fn degenerate_probabilities_force_outcome() {
        let path = generate_sample_path(&iid(1, 1, 1.0, 1.0, 1), 12345).unwrap();
        let slots = path.materialize();
        assert_eq!(slots.len(), 1);
        assert!(slots[0].conn.is_on(0, 0));
        assert_eq!(slots[0].arrivals, vec![1]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(
            generate_sample_path(&iid(2, 10, 1.5, 0.5, 1), 0),
            Err(ModelError::InvalidProbability { .. })
        ));
        let mut cfg = iid(2, 10, 0.5, 0.5, 1);
        cfg.arrivals = ArrivalSpec::Markov { transition: [[0.5, 0.6], [0.1, 0.9]], burst: 5 };
        assert!(matches!(generate_sample_path(&cfg, 0), Err(ModelError::NotStochastic { row: 0, .. })));
        assert!(matches!(generate_sample_path(&iid(0, 10, 0.5, 0.5, 1), 0), Err(ModelError::Zero("n"))));
        assert!(matches!(generate_sample_path(&iid(3, 10, 0.5, 0.5, 0), 0), Err(ModelError::Zero("burst"))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut cfg = iid(70, 50, 0.3, 0.4, 2);
        cfg.channels = ChannelSpec::heterogeneous_default();
        cfg.arrivals = ArrivalSpec::bursty_default();
        let p = generate_sample_path(&cfg, 99).unwrap();
        assert_eq!(p.materialize(), p.materialize());
        let other = generate_sample_path(&cfg, 100).unwrap();
        assert_ne!(p.materialize(), other.materialize());
    }

    #[test]
    fn bits_beyond_n_stay_clear() {
        let p = generate_sample_path(&iid(70, 20, 1.0, 0.5, 1), 3).unwrap();
        for s in p.materialize() {
            assert_eq!(s.conn.count_on(), 70 * 70);
        }
        let mut cfg = iid(70, 20, 0.5, 0.5, 1);
        cfg.channels = ChannelSpec::Markov { near: [[1.0, 0.0], [1.0, 0.0]], far: [[1.0, 0.0], [1.0, 0.0]] };
        let p = generate_sample_path(&cfg, 3).unwrap();
        for s in p.materialize() {
            assert_eq!(s.conn.count_on(), 70 * 70);
        }
    }

    #[test]
    fn markov_arrivals_hit_stationary_fraction() {
        let cfg = ModelConfig {
            n: 50,
            horizon: 20_000,
            arrivals: ArrivalSpec::bursty_default(),
            channels: ChannelSpec::IidOnOff { q: 0.5 },
        };
        let path = generate_sample_path(&cfg, 42).unwrap();
        let mut s = path.stream();
        let (mut bursts, mut total) = (0u64, 0u64);
        while let Some(d) = s.next_slot() {
            for &a in &d.arrivals {
                assert!(a == 0 || a == 5);
                bursts += u64::from(a == 5);
                total += 1;
            }
        }
        let frac = bursts as f64 / total as f64;
        assert!((frac - 1.0 / 6.0).abs() < 0.01, "burst fraction {frac}");
    }

    #[test]
    fn heterogeneous_channels_split_by_parity() {
        let cfg = ModelConfig {
            n: 40,
            horizon: 5_000,
            arrivals: ArrivalSpec::IidBernoulli { alpha: 0.1, burst: 1 },
            channels: ChannelSpec::heterogeneous_default(),
        };
        let path = generate_sample_path(&cfg, 5).unwrap();
        let mut s = path.stream();
        let (mut near, mut far) = (0u64, 0u64);
        let mut slots = 0u64;
        while let Some(d) = s.next_slot() {
            for i in 0..40 {
                let deg = d.conn.row_degree(i) as u64;
                if is_near_user(i) {
                    near += deg;
                } else {
                    far += deg;
                }
            }
            slots += 1;
        }
        let per = (slots * 20 * 40) as f64;
        let pn = 0.5 / (0.167 + 0.5);
        let pf = 0.167 / (0.5 + 0.167);
        assert!((near as f64 / per - pn).abs() < 0.01);
        assert!((far as f64 / per - pf).abs() < 0.01);
    }

    #[test]
    fn precedes_examples() {
        let t = 5;
        assert!(packet_precedes(&Packet::new(0, 0, 1), &Packet::new(2, 0, 1), t));
        assert!(packet_precedes(&Packet::new(3, 1, 1), &Packet::new(3, 4, 1), t));
        assert!(packet_precedes(&Packet::new(3, 1, 1), &Packet::new(3, 1, 2), t));
        assert!(!packet_precedes(&Packet::new(3, 1, 1), &Packet::new(3, 1, 1), t));
        // same two examples through the scaled fractional weight, n = 8, L = 5
        let w = |p: Packet| p.scaled_weight(t, 8, 5);
        assert!(w(Packet::new(3, 1, 1)) > w(Packet::new(3, 4, 1)));
        assert!(w(Packet::new(3, 1, 1)) > w(Packet::new(3, 1, 2)));
    }
}
