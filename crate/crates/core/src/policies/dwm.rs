use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::dmws::allocate_independent;
use super::Policy;
use crate::engine::{Schedule, SystemState};
use crate::matching::{max_weight_matching, GroupMatcher, WeightedBipartiteGraph};
use crate::model::{ConnMatrix, Packet};

/// Left vertex set of the delay-weighted matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSet {
    /// The `min(Q_i, n)` oldest packets of every queue.
    PerQueue,
    /// The `n` oldest packets in the system.
    OldestN,
}

/// Which exact kernel computes the matching. Both return a matching of
/// maximum total delay with ties resolved by the packet order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingRoute {
    /// Oldest-first insertion with augmenting paths ([`GroupMatcher`]).
    #[default]
    VertexGreedy,
    /// Packed integer weights through [`max_weight_matching`].
    Potentials,
}

/// Delay-weighted matching: maximizes the summed delay of the served
/// packets (DWM, or DWM-n with [`CandidateSet::OldestN`]).
#[derive(Debug, Clone)]
pub struct Dwm {
    candidates: CandidateSet,
    route: MatchingRoute,
    matcher: GroupMatcher,
}

impl Dwm {
    pub fn new(candidates: CandidateSet, route: MatchingRoute) -> Self {
        Dwm { candidates, route, matcher: GroupMatcher::default() }
    }
}

/// Candidate packets, oldest first.
fn candidates(state: &SystemState, set: CandidateSet) -> Vec<Packet> {
    let n = state.n();
    let mut heap: BinaryHeap<Reverse<(Packet, usize)>> =
        (0..n).filter_map(|i| state.queue(i).front().map(|&p| Reverse((p, 0)))).collect();
    let limit = match set {
        CandidateSet::PerQueue => usize::MAX,
        CandidateSet::OldestN => n,
    };
    let mut out = Vec::new();
    while let Some(Reverse((p, l))) = heap.pop() {
        out.push(p);
        if out.len() == limit {
            break;
        }
        let i = p.queue as usize;
        if l + 1 < n {
            if let Some(&next) = state.queue(i).get(l + 1) {
                heap.push(Reverse((next, l + 1)));
            }
        }
    }
    out
}

/// Matching by oldest-first insertion. A queue whose packet cannot be
/// added is dead for the rest of the slot: its younger packets share the
/// same adjacency and the matched set only grows.
fn match_greedy(
    state: &SystemState,
    conn: &ConnMatrix,
    set: CandidateSet,
    matcher: &mut GroupMatcher,
) -> u64 {
    let n = state.n();
    matcher.reset(n, n);
    let mut ops = 0u64;
    let limit = match set {
        CandidateSet::PerQueue => usize::MAX,
        CandidateSet::OldestN => n,
    };
    // cutoff: the last packet inside the candidate set
    let cutoff = match set {
        CandidateSet::OldestN => candidates(state, set).last().copied(),
        CandidateSet::PerQueue => None,
    };
    let mut dead = alloc::vec![false; n];
    let mut heap: BinaryHeap<Reverse<(Packet, usize)>> =
        (0..n).filter_map(|i| state.queue(i).front().map(|&p| Reverse((p, 0)))).collect();
    let mut considered = 0usize;
    while let Some(Reverse((p, l))) = heap.pop() {
        if matcher.matched() == n || considered == limit {
            break;
        }
        if cutoff.is_some_and(|c| p > c) {
            break;
        }
        considered += 1;
        let i = p.queue as usize;
        ops += 1;
        if dead[i] {
            continue;
        }
        if matcher.try_insert(i, |g| conn.row(g), &mut ops) {
            if l + 1 < n {
                if let Some(&next) = state.queue(i).get(l + 1) {
                    heap.push(Reverse((next, l + 1)));
                }
            }
        } else {
            dead[i] = true;
        }
    }
    ops
}

/// Emit a schedule from a server -> queue map; each queue's servers take
/// its oldest packets in server-index order.
fn emit(state: &SystemState, owner: impl Fn(usize) -> Option<usize>, out: &mut Schedule) {
    for s in 0..state.n() {
        if let Some(i) = owner(s) {
            let ok = out.assign_next(state, s, i);
            debug_assert!(ok);
        }
    }
}

/// Matching through the general kernel with packed lexicographic weights:
/// `delay * K + tiebreak`, where the tiebreak is the scaled fractional part
/// of the packet weight and `K` exceeds any sum of `n` tiebreaks.
fn match_potentials(state: &SystemState, conn: &ConnMatrix, set: CandidateSet) -> (Vec<(usize, usize)>, u64) {
    let n = state.n();
    let cand = candidates(state, set);
    let bound = cand.iter().map(|p| p.index).max().unwrap_or(1);
    let t = state.slot();
    let unit = (n as u128 + 1) * (bound as u128 + 1);
    let k = n as u128 * unit + 1;
    let mut g = WeightedBipartiteGraph::new(cand.len(), n);
    for (l, p) in cand.iter().enumerate() {
        let scaled = p.scaled_weight(t, n, bound);
        let weight = (scaled / unit) * k + scaled % unit;
        for s in 0..n {
            if conn.is_on(p.queue as usize, s) {
                g.set(l, s, Some(weight as i128));
            }
        }
    }
    let m = max_weight_matching(&g);
    let ops = (cand.len() * cand.len() * (cand.len() + n)) as u64;
    (m.pairs.into_iter().map(|(l, s)| (s, cand[l].queue as usize)).collect(), ops)
}

fn stage_one(
    state: &SystemState,
    conn: &ConnMatrix,
    set: CandidateSet,
    route: MatchingRoute,
    matcher: &mut GroupMatcher,
    out: &mut Schedule,
) {
    match route {
        MatchingRoute::VertexGreedy => {
            out.ops += match_greedy(state, conn, set, matcher);
            emit(state, |s| matcher.owner(s), out);
        }
        MatchingRoute::Potentials => {
            let (pairs, ops) = match_potentials(state, conn, set);
            out.ops += ops;
            let mut owner = alloc::vec![None; state.n()];
            for (s, i) in pairs {
                owner[s] = Some(i);
            }
            emit(state, |s| owner[s], out);
        }
    }
}

impl Policy for Dwm {
    fn name(&self) -> &'static str {
        match self.candidates {
            CandidateSet::PerQueue => "dwm",
            CandidateSet::OldestN => "dwmn",
        }
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        stage_one(state, conn, self.candidates, self.route, &mut self.matcher, out);
    }
}

/// Two-stage hybrid: DWM-n first, then every server left idle is allocated
/// by the D-MWS rule against the residual queues.
#[derive(Debug, Clone)]
pub struct Hybrid {
    route: MatchingRoute,
    matcher: GroupMatcher,
    hol: Vec<u64>,
    avail: Vec<u32>,
}

impl Hybrid {
    pub fn new(route: MatchingRoute) -> Self {
        Hybrid { route, matcher: GroupMatcher::default(), hol: Vec::new(), avail: Vec::new() }
    }
}

impl Policy for Hybrid {
    fn name(&self) -> &'static str {
        "hybrid"
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        let n = state.n();
        stage_one(state, conn, CandidateSet::OldestN, self.route, &mut self.matcher, out);
        self.hol.clear();
        self.avail.clear();
        for i in 0..n {
            let k = out.served(i) as usize;
            self.hol.push(state.delay_at(i, k).unwrap_or(0));
            self.avail.push((state.len(i) - k) as u32);
        }
        let idle: Vec<usize> = (0..n).filter(|&s| out.get(s).is_none()).collect();
        out.ops += allocate_independent(state, conn, &self.hol, &self.avail, idle.into_iter(), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut dyn Policy, s: &SystemState, c: &ConnMatrix) -> Schedule {
        let mut out = Schedule::new(s.n());
        p.schedule(s, c, &mut out);
        out
    }

    fn total_delay(s: &SystemState, out: &Schedule) -> u64 {
        out.servers().iter().flatten().map(|a| a.packet.delay(s.slot())).sum()
    }

    fn both_routes(set: CandidateSet) -> [Dwm; 2] {
        [Dwm::new(set, MatchingRoute::VertexGreedy), Dwm::new(set, MatchingRoute::Potentials)]
    }

    #[test]
    fn serves_both_when_possible() {
        let s = SystemState::with_delays(5, &[&[5], &[3]]);
        let c = ConnMatrix::from_rows(&[&[1, 0], &[1, 1]]);
        for mut p in both_routes(CandidateSet::PerQueue) {
            let out = run(&mut p, &s, &c);
            assert_eq!(out.queue_of(0), Some(0));
            assert_eq!(out.queue_of(1), Some(1));
            assert_eq!(total_delay(&s, &out), 8);
        }
    }

    #[test]
    fn single_usable_server_takes_oldest() {
        let s = SystemState::with_delays(5, &[&[5], &[3]]);
        let c = ConnMatrix::from_rows(&[&[1, 0], &[1, 0]]);
        for mut p in both_routes(CandidateSet::PerQueue) {
            let out = run(&mut p, &s, &c);
            assert_eq!(out.queue_of(0), Some(0));
            assert_eq!(out.total_served(), 1);
        }
    }

    #[test]
    fn empty_system() {
        let s = SystemState::new(3);
        for mut p in both_routes(CandidateSet::PerQueue) {
            assert_eq!(run(&mut p, &s, &ConnMatrix::all_on(3)).total_served(), 0);
        }
    }

    #[test]
    fn oldest_n_restricts_candidates() {
        let s = SystemState::with_delays(9, &[&[9, 8, 7], &[1]]);
        for mut p in both_routes(CandidateSet::OldestN) {
            let out = run(&mut p, &s, &ConnMatrix::all_on(2));
            assert_eq!(out.served_counts(), &[2, 0]);
        }
        for mut p in both_routes(CandidateSet::OldestN) {
            assert_eq!(run(&mut p, &s, &ConnMatrix::new(2)).total_served(), 0);
        }
    }

    #[test]
    fn hybrid_without_idle_servers_equals_dwmn() {
        let s = SystemState::with_delays(9, &[&[9, 8, 7, 6], &[1]]);
        let c = ConnMatrix::all_on(2);
        let a = run(&mut Hybrid::new(MatchingRoute::VertexGreedy), &s, &c);
        let b = run(&mut Dwm::new(CandidateSet::OldestN, MatchingRoute::VertexGreedy), &s, &c);
        assert_eq!(a.servers(), b.servers());
    }

    #[test]
    fn hybrid_stage_two_fills_idle_server() {
        // oldest three packets all in queue 0, which only reaches server 0;
        // server 1 sees queue 2, whose packet is outside the oldest-3 set
        let s = SystemState::with_delays(9, &[&[9, 8, 7], &[], &[1]]);
        let c = ConnMatrix::from_rows(&[&[1, 0, 0], &[0, 0, 0], &[0, 1, 0]]);
        for route in [MatchingRoute::VertexGreedy, MatchingRoute::Potentials] {
            let dwmn = run(&mut Dwm::new(CandidateSet::OldestN, route), &s, &c);
            assert_eq!(dwmn.queue_of(1), None);
            let out = run(&mut Hybrid::new(route), &s, &c);
            assert_eq!(out.queue_of(0), Some(0));
            assert_eq!(out.queue_of(1), Some(2));
            assert_eq!(out.queue_of(2), None);
        }
    }
}
