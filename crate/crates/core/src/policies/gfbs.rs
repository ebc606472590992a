//! Greedy frame-based scheduling.
//!
//! Arriving packets are packed FCFS into frames. Each slot the head frame
//! and the leftover frame form the S-frame, padded with dummy packets to
//! `n` entries; D-SSG restricted to the S-frame decides the slot. A slot is
//! a success when at least `n0` entries are scheduled and the `f` oldest are
//! among them; otherwise nothing is served.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use super::Policy;
use crate::engine::{Schedule, SystemState};
use crate::model::{ConnMatrix, Packet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GfbsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("leftover capacity {leftover} must be below n/2 for n = {n}")]
    Infeasible { n: usize, leftover: usize },
    #[error("frame {frame} breaks a packing rule: {rule}")]
    FrameRule { frame: usize, rule: &'static str },
    #[error("leftover frame holds {len} packets, capacity {cap}")]
    LeftoverOverflow { len: usize, cap: usize },
    #[error("queue {queue} has {count} S-frame entries, cap {cap}")]
    SFrameQueueCap { queue: usize, count: u32, cap: u32 },
    #[error("slot {slot}: frame recursion predicts F={want_f}, R={want_r}; state has F={f}, R={r}")]
    Recursion { slot: u64, want_f: u64, want_r: u64, f: u64, r: u64 },
    #[error("slot {slot}: frame contents disagree with queue {queue}")]
    Desync { slot: u64, queue: usize },
}

/// Frame parameters. `cap_h = L·h` bounds one queue's packets in a frame,
/// `leftover = ⌈H√n⌉` bounds the leftover frame, `n0 = n − leftover` is the
/// frame capacity and `f` the number of oldest S-frame entries a success
/// must schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GfbsParams {
    pub n: usize,
    pub h: u64,
    pub burst: u32,
    pub cap_h: u32,
    pub leftover: usize,
    pub n0: usize,
    pub f: usize,
}

fn ceil_sqrt_mul(h: u64, n: usize) -> usize {
    // smallest m with m^2 >= h^2 n
    let target = (h as u128) * (h as u128) * n as u128;
    let mut m = libm::sqrt(target as f64) as u128;
    while m * m < target {
        m += 1;
    }
    while m > 0 && (m - 1) * (m - 1) >= target {
        m -= 1;
    }
    m as usize
}

impl GfbsParams {
    /// Parameters with `leftover = ⌈L·h·√n⌉`, which must stay below `n/2`.
    pub fn new(n: usize, h: u64, burst: u32) -> Result<Self, GfbsError> {
        Self::check(n, h, burst)?;
        let leftover = ceil_sqrt_mul(h * burst as u64, n);
        if 2 * leftover >= n {
            return Err(GfbsError::Infeasible { n, leftover });
        }
        Ok(Self::with_leftover(n, h, burst, leftover))
    }

    /// As [`GfbsParams::new`] but with the leftover capacity clamped to
    /// `⌈n/2⌉ − 1`, so small systems remain usable.
    pub fn clamped(n: usize, h: u64, burst: u32) -> Result<Self, GfbsError> {
        Self::check(n, h, burst)?;
        let leftover = ceil_sqrt_mul(h * burst as u64, n).min(n.div_ceil(2) - 1);
        Ok(Self::with_leftover(n, h, burst, leftover))
    }

    fn check(n: usize, h: u64, burst: u32) -> Result<(), GfbsError> {
        match (n, h, burst) {
            (0, _, _) => Err(GfbsError::InvalidParams("n must be positive")),
            (_, 0, _) => Err(GfbsError::InvalidParams("h must be positive")),
            (_, _, 0) => Err(GfbsError::InvalidParams("arrival bound must be positive")),
            _ => Ok(()),
        }
    }

    fn with_leftover(n: usize, h: u64, burst: u32, leftover: usize) -> Self {
        let root = libm::ceil(libm::pow(n as f64, 0.75)) as usize;
        let f = root.max(leftover).min(n.div_ceil(2) - 1);
        GfbsParams { n, h, burst, cap_h: (h * burst as u64) as u32, leftover, n0: n - leftover, f }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub first_slot: u64,
    pub packets: Vec<Packet>,
}

/// Per-slot bookkeeping: unserved frames `f`, space `r` left in the open
/// end-of-line frame, success indicator `x_f`, leftover size `m` and head
/// frame size `p` at the start of the slot, real packets served `d`, and
/// arrivals `a`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounters {
    pub f: u64,
    pub r: u64,
    pub x_f: bool,
    pub m: u64,
    pub p: u64,
    pub d: u64,
    pub a: u64,
}

/// Persistent G-FBS state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameState {
    pub frames: VecDeque<Frame>,
    pub l_frame: Vec<Packet>,
    pub counters: FrameCounters,
    /// Whether the last frame still accepts packets.
    tail_open: bool,
    tail_counts: Vec<u32>,
    /// Set when a frame was closed by the per-queue or span rule this slot.
    rule_closure: bool,
    prev: FrameCounters,
}

impl FrameState {
    fn new(n: usize) -> Self {
        FrameState {
            frames: VecDeque::new(),
            l_frame: Vec::new(),
            counters: FrameCounters::default(),
            tail_open: false,
            tail_counts: vec![0; n],
            rule_closure: false,
            prev: FrameCounters::default(),
        }
    }
}

/// An S-frame: per queue, its real packets (oldest first) and dummy count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SFrame {
    pub real: Vec<Vec<Packet>>,
    pub dummies: Vec<u32>,
}

/// Result of D-SSG restricted to an S-frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SFrameOutcome {
    /// Queue served by each server.
    pub servers: Vec<Option<usize>>,
    pub real_taken: Vec<u32>,
    pub dummy_taken: Vec<u32>,
}

impl SFrameOutcome {
    pub fn scheduled(&self) -> usize {
        self.real_taken.iter().chain(&self.dummy_taken).map(|&k| k as usize).sum()
    }
}

impl SFrame {
    /// Pad real packets with dummies, round-robin over queues below `cap`
    /// entries, until there are `n` entries.
    pub fn pad(real: Vec<Vec<Packet>>, cap: u32) -> Self {
        let n = real.len();
        let mut dummies = vec![0u32; n];
        let mut total: usize = real.iter().map(Vec::len).sum();
        let mut i = 0;
        let mut stalled = 0;
        while total < n && stalled < n {
            if (real[i].len() as u32 + dummies[i]) < cap {
                dummies[i] += 1;
                total += 1;
                stalled = 0;
            } else {
                stalled += 1;
            }
            i = (i + 1) % n;
        }
        SFrame { real, dummies }
    }

    pub fn real_len(&self) -> usize {
        self.real.iter().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.real_len() + self.dummies.iter().map(|&d| d as usize).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// D-SSG over the S-frame entries. Real packets rank by delay; dummies
    /// rank below every real packet and among themselves by queue index.
    pub fn schedule(&self, conn: &ConnMatrix, slot: u64) -> SFrameOutcome {
        let n = self.real.len();
        let mut out = SFrameOutcome { servers: vec![None; n], real_taken: vec![0; n], dummy_taken: vec![0; n] };
        let key = |out: &SFrameOutcome, i: usize| -> Option<u64> {
            let k = out.real_taken[i] as usize;
            if let Some(p) = self.real[i].get(k) {
                Some(p.delay(slot) + 1)
            } else if out.dummy_taken[i] < self.dummies[i] {
                Some(0)
            } else {
                None
            }
        };
        for s in 0..n {
            let mut best: Option<(usize, u64)> = None;
            for i in 0..n {
                if !conn.is_on(i, s) {
                    continue;
                }
                if let Some(w) = key(&out, i) {
                    if super::better(w, best) {
                        best = Some((i, w));
                    }
                }
            }
            if let Some((i, w)) = best {
                out.servers[s] = Some(i);
                if w > 0 {
                    out.real_taken[i] += 1;
                } else {
                    out.dummy_taken[i] += 1;
                }
            }
        }
        out
    }

    /// Success: at least `n0` entries scheduled, including the `f` oldest.
    pub fn is_success(&self, outcome: &SFrameOutcome, n0: usize, f: usize) -> bool {
        if outcome.scheduled() < n0 {
            return false;
        }
        let mut real: Vec<Packet> = self.real.iter().flatten().copied().collect();
        real.sort_unstable();
        let mut need = vec![0u32; self.real.len()];
        for p in real.iter().take(f) {
            need[p.queue as usize] += 1;
        }
        if need.iter().zip(&outcome.real_taken).any(|(w, g)| w > g) {
            return false;
        }
        let mut rest = f.saturating_sub(real.len());
        for (i, &d) in self.dummies.iter().enumerate() {
            let want = (d as usize).min(rest);
            if (outcome.dummy_taken[i] as usize) < want {
                return false;
            }
            rest -= want;
        }
        true
    }
}

/// The G-FBS policy. Arrivals must be fed through
/// [`Policy::observe_arrivals`] each slot before scheduling.
#[derive(Debug, Clone)]
pub struct Gfbs {
    params: GfbsParams,
    state: FrameState,
    recursion_error: Option<GfbsError>,
    recursion_checks: u64,
}

fn ceil_div(a: i64, b: i64) -> i64 {
    let q = a.div_euclid(b);
    if a.rem_euclid(b) == 0 {
        q
    } else {
        q + 1
    }
}

impl Gfbs {
    pub fn new(params: GfbsParams) -> Self {
        Gfbs { params, state: FrameState::new(params.n), recursion_error: None, recursion_checks: 0 }
    }

    pub fn params(&self) -> &GfbsParams {
        &self.params
    }

    pub fn frame_state(&self) -> &FrameState {
        &self.state
    }

    /// Slots on which the frame recursion was checked; slots where a frame
    /// closed on the per-queue or span rule are skipped.
    pub fn recursion_checks(&self) -> u64 {
        self.recursion_checks
    }

    fn push(&mut self, p: Packet) {
        let GfbsParams { n0, cap_h, h, .. } = self.params;
        let q = p.queue as usize;
        let st = &mut self.state;
        if st.tail_open {
            let tail = st.frames.back().expect("open tail exists");
            let full = tail.packets.len() >= n0;
            let rule = st.tail_counts[q] >= cap_h || p.arrival_slot - tail.first_slot >= h;
            if full || rule {
                st.tail_open = false;
                st.rule_closure |= !full;
            }
        }
        if !st.tail_open {
            st.frames.push_back(Frame { first_slot: p.arrival_slot, packets: Vec::new() });
            st.tail_counts.iter_mut().for_each(|c| *c = 0);
            st.tail_open = true;
        }
        st.frames.back_mut().expect("tail").packets.push(p);
        st.tail_counts[q] += 1;
    }

    fn space_left(&self) -> u64 {
        match (self.state.tail_open, self.state.frames.back()) {
            (true, Some(t)) => (self.params.n0 - t.packets.len()) as u64,
            _ => 0,
        }
    }

    /// Check the frame packing rules and capacities, and report any frame
    /// recursion mismatch seen so far.
    pub fn check_invariants(&self) -> Result<(), GfbsError> {
        let p = &self.params;
        for (k, fr) in self.state.frames.iter().enumerate() {
            if fr.packets.len() > p.n0 {
                return Err(GfbsError::FrameRule { frame: k, rule: "capacity" });
            }
            if fr.packets.iter().any(|q| q.arrival_slot - fr.first_slot >= p.h) {
                return Err(GfbsError::FrameRule { frame: k, rule: "span" });
            }
            let mut counts = vec![0u32; p.n];
            for q in &fr.packets {
                counts[q.queue as usize] += 1;
            }
            if counts.iter().any(|&c| c > p.cap_h) {
                return Err(GfbsError::FrameRule { frame: k, rule: "per-queue" });
            }
        }
        if self.state.l_frame.len() > p.leftover {
            return Err(GfbsError::LeftoverOverflow { len: self.state.l_frame.len(), cap: p.leftover });
        }
        let mut counts = vec![0u32; p.n];
        for q in self.state.l_frame.iter().chain(self.state.frames.front().into_iter().flat_map(|f| &f.packets)) {
            counts[q.queue as usize] += 1;
        }
        if let Some((queue, &count)) = counts.iter().enumerate().find(|(_, &c)| c > 2 * p.cap_h) {
            return Err(GfbsError::SFrameQueueCap { queue, count, cap: 2 * p.cap_h });
        }
        match &self.recursion_error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn build_sframe(&self, state: &SystemState) -> Result<SFrame, GfbsError> {
        let n = self.params.n;
        let mut real: Vec<Vec<Packet>> = vec![Vec::new(); n];
        for p in self.state.l_frame.iter().chain(self.state.frames.front().into_iter().flat_map(|f| &f.packets)) {
            real[p.queue as usize].push(*p);
        }
        for (i, ps) in real.iter_mut().enumerate() {
            ps.sort_unstable();
            if !ps.iter().zip(state.queue(i)).all(|(a, b)| a == b) || ps.len() > state.len(i) {
                return Err(GfbsError::Desync { slot: state.slot(), queue: i });
            }
        }
        Ok(SFrame::pad(real, 2 * self.params.cap_h))
    }

    fn finish_slot(&mut self, slot: u64, success: bool, served: u64, m: u64, p: u64) {
        let f = self.state.frames.len() as u64;
        let r = if f > 0 { self.space_left() } else { 0 };
        let prev = self.state.prev;
        let a = self.state.counters.a;
        self.state.counters = FrameCounters { f, r, x_f: success, m, p, d: served, a };
        if !self.state.rule_closure && self.recursion_error.is_none() {
            self.recursion_checks += 1;
            let n0 = self.params.n0 as i64;
            let want_f = (prev.f as i64 + ceil_div(a as i64 - prev.r as i64, n0) - success as i64).max(0) as u64;
            let want_r = if want_f > 0 { (prev.r as i64 - a as i64).rem_euclid(n0) as u64 } else { 0 };
            if want_f != f || want_r != r {
                self.recursion_error = Some(GfbsError::Recursion { slot, want_f, want_r, f, r });
            }
        }
        self.state.prev = self.state.counters;
        self.state.rule_closure = false;
        self.state.counters.a = 0;
    }
}

impl Policy for Gfbs {
    fn name(&self) -> &'static str {
        "gfbs"
    }

    fn observe_arrivals(&mut self, _slot: u64, arrivals: &[Packet]) {
        for &p in arrivals {
            self.push(p);
        }
        self.state.counters.a += arrivals.len() as u64;
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        let slot = state.slot();
        let m = self.state.l_frame.len() as u64;
        let p = self.state.frames.front().map_or(0, |f| f.packets.len()) as u64;
        let sframe = match self.build_sframe(state) {
            Ok(s) => s,
            Err(e) => {
                self.recursion_error.get_or_insert(e);
                self.finish_slot(slot, false, 0, m, p);
                return;
            }
        };
        let outcome = sframe.schedule(conn, slot);
        out.ops = (2 * state.n() * state.n()) as u64;
        let success = sframe.real_len() > 0 && sframe.is_success(&outcome, self.params.n0, self.params.f);
        let mut served = 0u64;
        if success {
            let mut left = outcome.real_taken.clone();
            for (s, q) in outcome.servers.iter().enumerate() {
                if let Some(i) = *q {
                    if left[i] > 0 {
                        left[i] -= 1;
                        let ok = out.assign_next(state, s, i);
                        debug_assert!(ok);
                        served += 1;
                    }
                }
            }
            let mut l_frame = Vec::new();
            for (i, ps) in sframe.real.iter().enumerate() {
                l_frame.extend_from_slice(&ps[outcome.real_taken[i] as usize..]);
            }
            l_frame.sort_unstable();
            self.state.l_frame = l_frame;
            if self.state.frames.pop_front().is_some() && self.state.frames.is_empty() {
                self.state.tail_open = false;
            }
        }
        self.finish_slot(slot, success, served, m, p);
    }
}
