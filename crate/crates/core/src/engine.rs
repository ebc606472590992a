//! Discrete-time slot loop: arrivals at the start of a slot, one schedule
//! per slot, departures at the end.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{ConnMatrix, Packet, SamplePath, SlotData};
use crate::policies::Policy;

/// Packets in system above which a run is declared unstable.
pub const DEFAULT_PACKET_CAP: usize = 10_000_000;

/// Largest HOL delay tracked individually; larger values share one bucket.
pub const DELAY_BUCKETS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("warmup {warmup} leaves no measured slots in a horizon of {horizon}")]
    NoSamples { warmup: u64, horizon: u64 },
    #[error("instability: {packets} packets in system at slot {slot}")]
    Unstable { slot: u64, packets: usize },
    #[error("invalid schedule at slot {slot}: {violation}")]
    InvalidSchedule { slot: u64, violation: ScheduleViolation },
    #[error("slot data is for slot {got}, engine is at slot {expected}")]
    OutOfOrder { expected: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleViolation {
    #[error("schedule covers {got} servers, system has {expected}")]
    WrongWidth { expected: usize, got: usize },
    #[error("server {server} assigned to disconnected queue {queue}")]
    Disconnected { server: usize, queue: usize },
    #[error("server {server} serves packet {packet:?} not owned by queue {queue}")]
    ForeignPacket { server: usize, queue: usize, packet: Packet },
    #[error("queue {queue} is served out of FIFO order")]
    NotFifo { queue: usize },
    #[error("queue {queue} is assigned more servers than it has packets")]
    Overserved { queue: usize },
}

/// Queues plus the current slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    slot: u64,
    queues: Vec<VecDeque<Packet>>,
    total: usize,
}

impl SystemState {
    pub fn new(n: usize) -> Self {
        SystemState { slot: 0, queues: vec![VecDeque::new(); n], total: 0 }
    }

    /// State at `slot` holding packets with the given delays per queue,
    /// oldest first. Delays in a queue must be non-increasing.
    pub fn with_delays(slot: u64, delays: &[&[u64]]) -> Self {
        let mut s = SystemState::new(delays.len());
        s.slot = slot;
        for (i, ds) in delays.iter().enumerate() {
            let mut prev: Option<u64> = None;
            let mut idx = 0;
            for &d in ds.iter() {
                assert!(d <= slot, "delay exceeds slot");
                let arrival = slot - d;
                idx = if prev == Some(arrival) { idx + 1 } else { 1 };
                assert!(prev.is_none_or(|p| p <= arrival), "delays must be non-increasing");
                prev = Some(arrival);
                s.queues[i].push_back(Packet::new(arrival, i, idx));
            }
            s.total += ds.len();
        }
        s
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.queues.len()
    }

    #[inline]
    pub fn slot(&self) -> u64 {
        self.slot
    }

    #[inline]
    pub fn len(&self, queue: usize) -> usize {
        self.queues[queue].len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    #[inline]
    pub fn total_packets(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn queue(&self, queue: usize) -> &VecDeque<Packet> {
        &self.queues[queue]
    }

    /// HOL delay `W_i`; zero for an empty queue.
    #[inline]
    pub fn hol_delay(&self, queue: usize) -> u64 {
        self.queues[queue].front().map_or(0, |p| p.delay(self.slot))
    }

    /// Delay of the `l`-th packet (0-based) of a queue.
    #[inline]
    pub fn delay_at(&self, queue: usize, l: usize) -> Option<u64> {
        self.queues[queue].get(l).map(|p| p.delay(self.slot))
    }

    /// Largest HOL delay `W(t)`.
    pub fn max_hol_delay(&self) -> u64 {
        (0..self.n()).map(|i| self.hol_delay(i)).max().unwrap_or(0)
    }

    /// Append arrivals in queue order, numbering them 1.. within the slot.
    pub fn push_arrivals(&mut self, arrivals: &[u32], out: &mut Vec<Packet>) {
        debug_assert_eq!(arrivals.len(), self.n());
        out.clear();
        for (i, &a) in arrivals.iter().enumerate() {
            for x in 1..=a {
                let p = Packet::new(self.slot, i, x);
                self.queues[i].push_back(p);
                out.push(p);
            }
            self.total += a as usize;
        }
    }

    /// Remove the scheduled packets and advance to the next slot.
    pub fn depart_and_advance(&mut self, schedule: &Schedule) -> usize {
        let mut gone = 0;
        for (i, &k) in schedule.served.iter().enumerate() {
            let k = k as usize;
            self.queues[i].drain(..k);
            gone += k;
        }
        self.total -= gone;
        self.slot += 1;
        gone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub queue: usize,
    pub packet: Packet,
}

/// Per-slot server assignments. `served[i]` counts packets taken from the
/// head of queue `i`; `ops` is the policy's basic-operation tally.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    servers: Vec<Option<Assignment>>,
    served: Vec<u32>,
    pub ops: u64,
}

impl Schedule {
    pub fn new(n: usize) -> Self {
        Schedule { servers: vec![None; n], served: vec![0; n], ops: 0 }
    }

    pub fn reset(&mut self, n: usize) {
        self.servers.clear();
        self.servers.resize(n, None);
        self.served.clear();
        self.served.resize(n, 0);
        self.ops = 0;
    }

    /// Give `server` the next unserved packet of `queue`. Returns `false`
    /// (leaving the server idle) if the queue has nothing left.
    pub fn assign_next(&mut self, state: &SystemState, server: usize, queue: usize) -> bool {
        let k = self.served[queue] as usize;
        match state.queue(queue).get(k) {
            Some(&packet) => {
                debug_assert!(self.servers[server].is_none());
                self.servers[server] = Some(Assignment { queue, packet });
                self.served[queue] += 1;
                true
            }
            None => false,
        }
    }

    pub fn get(&self, server: usize) -> Option<Assignment> {
        self.servers[server]
    }

    pub fn servers(&self) -> &[Option<Assignment>] {
        &self.servers
    }

    /// Server -> queue view.
    pub fn queue_of(&self, server: usize) -> Option<usize> {
        self.servers[server].map(|a| a.queue)
    }

    pub fn served(&self, queue: usize) -> u32 {
        self.served[queue]
    }

    pub fn served_counts(&self) -> &[u32] {
        &self.served
    }

    pub fn total_served(&self) -> usize {
        self.served.iter().map(|&k| k as usize).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.servers.iter().enumerate().filter_map(|(j, a)| a.map(|a| (j, a.queue)))
    }

    /// Check feasibility against the slot's state and connectivity.
    pub fn validate(&self, state: &SystemState, conn: &ConnMatrix) -> Result<(), ScheduleViolation> {
        let n = state.n();
        if self.servers.len() != n || self.served.len() != n {
            return Err(ScheduleViolation::WrongWidth { expected: n, got: self.servers.len() });
        }
        let mut taken: Vec<Vec<Packet>> = vec![Vec::new(); n];
        for (server, a) in self.servers.iter().enumerate() {
            let Some(a) = a else { continue };
            if !conn.is_on(a.queue, server) {
                return Err(ScheduleViolation::Disconnected { server, queue: a.queue });
            }
            if a.packet.queue as usize != a.queue {
                return Err(ScheduleViolation::ForeignPacket { server, queue: a.queue, packet: a.packet });
            }
            taken[a.queue].push(a.packet);
        }
        for (queue, mut ps) in taken.into_iter().enumerate() {
            if ps.len() != self.served[queue] as usize {
                return Err(ScheduleViolation::NotFifo { queue });
            }
            if ps.len() > state.len(queue) {
                return Err(ScheduleViolation::Overserved { queue });
            }
            ps.sort_unstable();
            // distinct packets forming the head of the queue
            if ps.iter().zip(state.queue(queue).iter()).any(|(a, b)| a != b) {
                return Err(ScheduleViolation::NotFifo { queue });
            }
        }
        Ok(())
    }
}

/// Delay-violation and queue statistics over the measured window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsAccumulator {
    pub warmup: u64,
    /// `delay_hist[w]` counts measured slots with `W(t) = w`; the last bucket
    /// holds every `W(t) >= DELAY_BUCKETS - 1`.
    pub delay_hist: Vec<u64>,
    pub slot_samples: u64,
    pub queue_length_sum: u128,
    /// Largest per-slot basic-operation count seen.
    pub ops_max: u64,
    pub ops_total: u128,
    pub arrived: u64,
    pub departed: u64,
    pub in_system: u64,
}

impl MetricsAccumulator {
    pub fn new(warmup: u64) -> Self {
        MetricsAccumulator {
            warmup,
            delay_hist: vec![0; DELAY_BUCKETS],
            slot_samples: 0,
            queue_length_sum: 0,
            ops_max: 0,
            ops_total: 0,
            arrived: 0,
            departed: 0,
            in_system: 0,
        }
    }

    fn record_delay(&mut self, w: u64, queued: usize) {
        let b = (w as usize).min(DELAY_BUCKETS - 1);
        self.delay_hist[b] += 1;
        self.slot_samples += 1;
        self.queue_length_sum += queued as u128;
    }

    /// Measured slots with `W(t) > b`.
    pub fn violation_count(&self, b: u64) -> u64 {
        let start = (b as usize + 1).min(DELAY_BUCKETS - 1);
        self.delay_hist[start..].iter().sum()
    }

    /// Empirical `P(W(0) > b)`.
    pub fn violation_prob(&self, b: u64) -> f64 {
        if self.slot_samples == 0 {
            return 0.0;
        }
        self.violation_count(b) as f64 / self.slot_samples as f64
    }

    pub fn mean_total_queue_length(&self) -> f64 {
        if self.slot_samples == 0 {
            return 0.0;
        }
        self.queue_length_sum as f64 / self.slot_samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub warmup: u64,
    /// Validate every schedule against the state and connectivity.
    pub validate: bool,
    pub packet_cap: usize,
}

impl RunOptions {
    pub fn new(warmup: u64) -> Self {
        RunOptions { warmup, validate: cfg!(debug_assertions), packet_cap: DEFAULT_PACKET_CAP }
    }

    /// Default warm-up for a horizon: `max(10^4, horizon/100)`, clipped to
    /// leave at least one measured slot.
    pub fn default_warmup(horizon: u64) -> u64 {
        (horizon / 100).max(10_000).min(horizon.saturating_sub(1))
    }
}

/// One policy driven through a sample path.
pub struct Simulation<P: Policy + ?Sized> {
    pub state: SystemState,
    pub metrics: MetricsAccumulator,
    pub schedule: Schedule,
    options: RunOptions,
    arrivals: Vec<Packet>,
    pub policy: alloc::boxed::Box<P>,
}

impl<P: Policy + ?Sized> Simulation<P> {
    pub fn new(n: usize, policy: alloc::boxed::Box<P>, options: RunOptions) -> Self {
        Simulation {
            state: SystemState::new(n),
            metrics: MetricsAccumulator::new(options.warmup),
            schedule: Schedule::new(n),
            options,
            arrivals: Vec::new(),
            policy,
        }
    }

    /// Process one slot. On return `self.schedule` holds the slot's schedule.
    pub fn step(&mut self, data: &SlotData) -> Result<(), EngineError> {
        self.begin(data)?;
        self.commit();
        Ok(())
    }

    /// First half of a slot: admit arrivals, record `W(t)` and build the
    /// schedule. `self.state` is left as the policy saw it until
    /// [`Simulation::commit`].
    pub fn begin(&mut self, data: &SlotData) -> Result<(), EngineError> {
        let t = self.state.slot();
        if data.slot != t {
            return Err(EngineError::OutOfOrder { expected: t, got: data.slot });
        }
        self.state.push_arrivals(&data.arrivals, &mut self.arrivals);
        self.metrics.arrived += self.arrivals.len() as u64;
        if self.state.total_packets() > self.options.packet_cap {
            return Err(EngineError::Unstable { slot: t, packets: self.state.total_packets() });
        }
        self.policy.observe_arrivals(t, &self.arrivals);
        if t >= self.options.warmup {
            let w = self.state.max_hol_delay();
            self.metrics.record_delay(w, self.state.total_packets());
        }
        self.schedule.reset(self.state.n());
        self.policy.schedule(&self.state, &data.conn, &mut self.schedule);
        self.metrics.ops_max = self.metrics.ops_max.max(self.schedule.ops);
        self.metrics.ops_total += self.schedule.ops as u128;
        if self.options.validate {
            self.schedule
                .validate(&self.state, &data.conn)
                .map_err(|violation| EngineError::InvalidSchedule { slot: t, violation })?;
        }
        Ok(())
    }

    /// Second half of a slot: remove the scheduled packets and advance.
    pub fn commit(&mut self) {
        let gone = self.state.depart_and_advance(&self.schedule);
        self.metrics.departed += gone as u64;
        self.metrics.in_system = self.state.total_packets() as u64;
        debug_assert_eq!(self.metrics.arrived, self.metrics.departed + self.metrics.in_system);
    }
}

/// Single slot of `policy` against `state`, returning the next state.
pub fn step(
    state: &SystemState,
    data: &SlotData,
    policy: &mut dyn Policy,
    metrics: &mut MetricsAccumulator,
) -> Result<SystemState, EngineError> {
    let mut next = state.clone();
    if data.slot != next.slot() {
        return Err(EngineError::OutOfOrder { expected: next.slot(), got: data.slot });
    }
    let mut arrivals = Vec::new();
    next.push_arrivals(&data.arrivals, &mut arrivals);
    metrics.arrived += arrivals.len() as u64;
    policy.observe_arrivals(next.slot(), &arrivals);
    if next.slot() >= metrics.warmup {
        metrics.record_delay(next.max_hol_delay(), next.total_packets());
    }
    let mut schedule = Schedule::new(next.n());
    policy.schedule(&next, &data.conn, &mut schedule);
    metrics.ops_max = metrics.ops_max.max(schedule.ops);
    metrics.ops_total += schedule.ops as u128;
    schedule
        .validate(&next, &data.conn)
        .map_err(|violation| EngineError::InvalidSchedule { slot: next.slot(), violation })?;
    metrics.departed += next.depart_and_advance(&schedule) as u64;
    metrics.in_system = next.total_packets() as u64;
    Ok(next)
}

/// Run one policy over a whole sample path.
pub fn run<P: Policy + ?Sized>(
    path: &SamplePath,
    policy: alloc::boxed::Box<P>,
    options: RunOptions,
) -> Result<MetricsAccumulator, EngineError> {
    if options.warmup >= path.horizon() {
        return Err(EngineError::NoSamples { warmup: options.warmup, horizon: path.horizon() });
    }
    let mut sim = Simulation::new(path.n(), policy, options);
    let mut stream = path.stream();
    while let Some(data) = stream.next_slot() {
        sim.step(data)?;
    }
    Ok(sim.metrics)
}

/// Run several policies in lockstep over one replay of the path; each slot's
/// arrivals and connectivity are generated once and shared.
pub fn run_paired(
    path: &SamplePath,
    policies: Vec<alloc::boxed::Box<dyn Policy>>,
    options: RunOptions,
) -> Vec<Result<MetricsAccumulator, EngineError>> {
    if options.warmup >= path.horizon() {
        let e = EngineError::NoSamples { warmup: options.warmup, horizon: path.horizon() };
        return policies.iter().map(|_| Err(e.clone())).collect();
    }
    let mut sims: Vec<_> = policies.into_iter().map(|p| Some(Simulation::new(path.n(), p, options))).collect();
    let mut results: Vec<Option<Result<MetricsAccumulator, EngineError>>> = sims.iter().map(|_| None).collect();
    let mut stream = path.stream();
    while let Some(data) = stream.next_slot() {
        let mut live = false;
        for (k, slot) in sims.iter_mut().enumerate() {
            if let Some(sim) = slot {
                if let Err(e) = sim.step(data) {
                    results[k] = Some(Err(e));
                    *slot = None;
                } else {
                    live = true;
                }
            }
        }
        if !live {
            break;
        }
    }
    for (k, sim) in sims.into_iter().enumerate() {
        if let Some(sim) = sim {
            results[k] = Some(Ok(sim.metrics));
        }
    }
    results.into_iter().map(|r| r.expect("every policy finished")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{Dssg, PolicyKind};

    fn slot(t: u64, arrivals: &[u32], conn: ConnMatrix) -> SlotData {
        SlotData { slot: t, arrivals: arrivals.to_vec(), conn }
    }

    #[test]
    fn empty_system_stays_empty() {
        let mut metrics = MetricsAccumulator::new(0);
        let s = SystemState::new(3);
        let next = step(&s, &slot(0, &[0, 0, 0], ConnMatrix::all_on(3)), &mut Dssg::default(), &mut metrics).unwrap();
        assert!(next.is_empty());
        assert_eq!(next.slot(), 1);
        assert_eq!(metrics.delay_hist[0], 1);
        assert_eq!(metrics.violation_count(0), 0);
    }

    #[test]
    fn single_connected_packet_departs() {
        let s = SystemState::with_delays(3, &[&[3]]);
        let mut metrics = MetricsAccumulator::new(0);
        let next = step(&s, &slot(3, &[0], ConnMatrix::all_on(1)), &mut Dssg::default(), &mut metrics).unwrap();
        assert!(next.is_empty());
        assert_eq!(metrics.violation_count(2), 1);
        assert_eq!(metrics.violation_count(3), 0);
    }

    #[test]
    fn dssg_hand_trace_two_queues() {
        let s = SystemState::with_delays(5, &[&[5, 5], &[3]]);
        let mut metrics = MetricsAccumulator::new(0);
        let next = step(&s, &slot(5, &[0, 0], ConnMatrix::all_on(2)), &mut Dssg::default(), &mut metrics).unwrap();
        assert_eq!(next.len(0), 0);
        assert_eq!(next.len(1), 1);
        assert_eq!(next.hol_delay(1), 4);
    }

    #[test]
    fn warmup_must_leave_samples() {
        let cfg = crate::model::ModelConfig {
            n: 2,
            horizon: 10,
            arrivals: crate::model::ArrivalSpec::IidBernoulli { alpha: 0.5, burst: 1 },
            channels: crate::model::ChannelSpec::IidOnOff { q: 0.5 },
        };
        let path = crate::model::generate_sample_path(&cfg, 1).unwrap();
        let err = run(&path, PolicyKind::Dssg.build(2), RunOptions::new(10)).unwrap_err();
        assert_eq!(err, EngineError::NoSamples { warmup: 10, horizon: 10 });
    }

    #[test]
    fn validation_catches_bad_schedules() {
        let s = SystemState::with_delays(4, &[&[4, 2], &[1]]);
        let conn = ConnMatrix::from_rows(&[&[1, 0], &[0, 1]]);
        let mut sch = Schedule::new(2);
        sch.assign_next(&s, 1, 0);
        assert_eq!(sch.validate(&s, &conn), Err(ScheduleViolation::Disconnected { server: 1, queue: 0 }));
        let mut sch = Schedule::new(2);
        sch.servers[0] = Some(Assignment { queue: 0, packet: s.queue(0)[1] });
        sch.served[0] = 1;
        assert_eq!(sch.validate(&s, &conn), Err(ScheduleViolation::NotFifo { queue: 0 }));
        let mut sch = Schedule::new(2);
        sch.assign_next(&s, 0, 0);
        sch.assign_next(&s, 1, 1);
        assert_eq!(sch.validate(&s, &conn), Ok(()));
    }

    #[test]
    fn assign_next_refuses_when_exhausted() {
        let s = SystemState::with_delays(2, &[&[1], &[]]);
        let mut sch = Schedule::new(2);
        assert!(sch.assign_next(&s, 0, 0));
        assert!(!sch.assign_next(&s, 1, 0));
        assert!(!sch.assign_next(&s, 1, 1));
        assert_eq!(sch.total_served(), 1);
    }
}
