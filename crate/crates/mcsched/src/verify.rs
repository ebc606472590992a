//! Property suites run against randomized instances. Every failure carries
//! the trial seed that reproduces it.

use std::fmt;

use mcsched_core::engine::{RunOptions, Schedule, Simulation, SystemState};
use mcsched_core::matching::{max_weight_matching, WeightedBipartiteGraph};
use mcsched_core::model::{generate_sample_path, ArrivalSpec, ChannelSpec, ConnMatrix, ModelConfig, Packet};
use mcsched_core::policies::{
    check_mwf, dssg_ops_budget, CandidateSet, Dqsg, Dssg, Dwm, Gfbs, GfbsParams, MatchingRoute, Policy, SFrame,
};
use mcsched_core::rng::{mix, SeqRng};
use serde::{Deserialize, Serialize};

use crate::config::ModelBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Equivalence,
    Dominance,
    Mwf,
    Complexity,
    MatchingOracle,
    FrameRecursion,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Equivalence,
        Suite::Dominance,
        Suite::Mwf,
        Suite::Complexity,
        Suite::MatchingOracle,
        Suite::FrameRecursion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Equivalence => "equivalence",
            Suite::Dominance => "dominance",
            Suite::Mwf => "mwf",
            Suite::Complexity => "complexity",
            Suite::MatchingOracle => "matching-oracle",
            Suite::FrameRecursion => "frame-recursion",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            Suite::Equivalence | Suite::MatchingOracle => 10_000,
            Suite::Dominance => 1000,
            Suite::Mwf => 20,
            Suite::Complexity => 10,
            Suite::FrameRecursion => 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub trial: usize,
    pub seed: u64,
    pub slot: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub trials: usize,
    /// Individual assertions evaluated (slots, instances or pairs).
    pub checks: u64,
    pub failures: Vec<Failure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks > 0
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {} trials, {} checks, {} failures", self.suite.name(), self.trials, self.checks, self.failures.len())?;
        for fail in self.failures.iter().take(5) {
            write!(f, "\n  trial {} seed {:#018x}", fail.trial, fail.seed)?;
            if let Some(s) = fail.slot {
                write!(f, " slot {s}")?;
            }
            write!(f, ": {}", fail.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Defaults per suite when `None`.
    pub trials: Option<usize>,
    pub seed: u64,
    /// Model for the suites that simulate the configured system.
    pub model: ModelBlock,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { trials: None, seed: 1, model: ModelBlock::default() }
    }
}

pub fn trial_seed(base: u64, suite: Suite, trial: usize) -> u64 {
    mix(mix(base ^ (suite as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ trial as u64)
}

pub fn run_verify(suite: Suite, opts: &VerifyOptions) -> VerifyReport {
    let trials = opts.trials.unwrap_or(suite.default_trials());
    let mut report = VerifyReport { suite, trials, checks: 0, failures: Vec::new() };
    for trial in 0..trials {
        let seed = trial_seed(opts.seed, suite, trial);
        let res = match suite {
            Suite::Equivalence => equivalence_trial(seed),
            Suite::Dominance => dominance_trial(seed, trial),
            Suite::Mwf => mwf_trial(seed, trial, &opts.model),
            Suite::Complexity => complexity_trial(seed, trial, &opts.model),
            Suite::MatchingOracle => matching_trial(seed),
            Suite::FrameRecursion => recursion_trial(seed, trial),
        };
        match res {
            Ok(checks) => report.checks += checks,
            Err((slot, detail)) => report.failures.push(Failure { trial, seed, slot, detail }),
        }
    }
    report
}

type TrialResult = Result<u64, (Option<u64>, String)>;

/// Random backlog and connectivity: each queue holds up to `max_len`
/// packets with delays up to `slot`.
pub fn random_instance(rng: &mut SeqRng, n: usize, q: f64, max_len: usize, slot: u64) -> (SystemState, ConnMatrix) {
    let queues: Vec<Vec<u64>> = (0..n)
        .map(|_| {
            let len = rng.below(max_len as u64 + 1) as usize;
            let mut d: Vec<u64> = (0..len).map(|_| rng.below(slot + 1)).collect();
            d.sort_unstable_by(|a, b| b.cmp(a));
            d
        })
        .collect();
    let refs: Vec<&[u64]> = queues.iter().map(Vec::as_slice).collect();
    let conn = ConnMatrix::from_fn(n, |_, _| rng.chance(q));
    (SystemState::with_delays(slot, &refs), conn)
}

fn schedule_of(p: &mut dyn Policy, s: &SystemState, c: &ConnMatrix) -> Schedule {
    let mut out = Schedule::new(s.n());
    p.schedule(s, c, &mut out);
    out
}

fn equivalence_trial(seed: u64) -> TrialResult {
    let mut rng = SeqRng::new(seed);
    let n = 2 + rng.below(29) as usize;
    let q = [0.25, 0.5, 0.75][rng.below(3) as usize];
    let (s, c) = random_instance(&mut rng, n, q, 8, 60);
    let a = schedule_of(&mut Dssg::default(), &s, &c);
    let b = schedule_of(&mut Dqsg::default(), &s, &c);
    if a.servers() != b.servers() {
        let first = (0..n).find(|&k| a.get(k) != b.get(k)).expect("differs");
        return Err((
            Some(s.slot()),
            format!("n={n} q={q}: server {first} gets {:?} under D-SSG, {:?} under D-QSG", a.queue_of(first), b.queue_of(first)),
        ));
    }
    Ok(1)
}

fn iid(n: usize, horizon: u64, alpha: f64, burst: u32, q: f64) -> ModelConfig {
    ModelConfig { n, horizon, arrivals: ArrivalSpec::IidBernoulli { alpha, burst }, channels: ChannelSpec::IidOnOff { q } }
}

/// Random load for the frame suites: unit or double bursts, or the bursty
/// two-state process, under one of two channel qualities.
fn frame_model(rng: &mut SeqRng, n: usize, horizon: u64) -> ModelConfig {
    let q = [0.5, 0.75][rng.below(2) as usize];
    match rng.below(3) {
        0 => iid(n, horizon, 0.3 + 0.65 * rng.unit(), 1, q),
        1 => iid(n, horizon, (0.3 + 0.65 * rng.unit()) / 2.0, 2, q),
        _ => ModelConfig { n, horizon, arrivals: ArrivalSpec::bursty_default(), channels: ChannelSpec::IidOnOff { q } },
    }
}

/// D-SSG and G-FBS on one sample path: G-FBS's per-queue cumulative
/// departures never exceed D-SSG's. Both serve per-queue prefixes, so this
/// is the departed-set inclusion.
pub fn dominance_run(cfg: &ModelConfig, seed: u64, h: u64) -> TrialResult {
    let n = cfg.n;
    let path = generate_sample_path(cfg, seed).map_err(|e| (None, e.to_string()))?;
    let mut opts = RunOptions::new(0);
    opts.validate = true;
    opts.packet_cap = usize::MAX;
    let params = GfbsParams::clamped(n, h, cfg.arrivals.max_burst()).map_err(|e| (None, e.to_string()))?;
    let mut a = Simulation::new(n, Box::new(Dssg::default()), opts);
    let mut b = Simulation::new(n, Box::new(Gfbs::new(params)), opts);
    let (mut da, mut db) = (vec![0u64; n], vec![0u64; n]);
    let mut checks = 0;
    let mut stream = path.stream();
    while let Some(d) = stream.next_slot() {
        a.step(d).map_err(|e| (Some(d.slot), e.to_string()))?;
        b.step(d).map_err(|e| (Some(d.slot), e.to_string()))?;
        for i in 0..n {
            da[i] += a.schedule.served(i) as u64;
            db[i] += b.schedule.served(i) as u64;
            if db[i] > da[i] {
                return Err((Some(d.slot), format!("n={n} h={h}: queue {i} has {} G-FBS departures vs {} D-SSG", db[i], da[i])));
            }
        }
        b.policy.check_invariants().map_err(|e| (Some(d.slot), e.to_string()))?;
        checks += 1;
    }
    Ok(checks)
}

fn dominance_trial(seed: u64, trial: usize) -> TrialResult {
    let mut rng = SeqRng::new(seed);
    let n = [16, 25, 36, 49][trial % 4];
    let h = [3, 5, 8][(trial / 4) % 3];
    let cfg = frame_model(&mut rng, n, 500);
    dominance_run(&cfg, rng.next_u64(), h)
}

fn model_for(model: &ModelBlock, n: usize, horizon: u64) -> ModelConfig {
    ModelConfig { n, horizon, arrivals: model.arrivals.clone(), channels: model.channels.clone() }
}

fn mwf_trial(seed: u64, trial: usize, model: &ModelBlock) -> TrialResult {
    let n = 10 * (1 + trial % 5);
    dssg_path_checks(&model_for(model, n, 2000), seed, |state, conn, out| {
        check_mwf(state, conn, out).map_err(|e| e.to_string())
    })
}

fn complexity_trial(seed: u64, trial: usize, model: &ModelBlock) -> TrialResult {
    let n = 10 * (1 + trial % 10);
    let budget = dssg_ops_budget(n);
    dssg_path_checks(&model_for(model, n, 2000), seed, |_, _, out| {
        if out.ops > budget {
            Err(format!("n={n}: {} operations, budget {budget}", out.ops))
        } else {
            Ok(())
        }
    })
}

fn dssg_path_checks(
    cfg: &ModelConfig,
    seed: u64,
    mut check: impl FnMut(&SystemState, &ConnMatrix, &Schedule) -> Result<(), String>,
) -> TrialResult {
    let path = generate_sample_path(cfg, seed).map_err(|e| (None, e.to_string()))?;
    let mut opts = RunOptions::new(0);
    opts.validate = true;
    let mut sim = Simulation::new(cfg.n, Box::new(Dssg::default()), opts);
    let mut stream = path.stream();
    let mut checks = 0;
    while let Some(d) = stream.next_slot() {
        sim.begin(d).map_err(|e| (Some(d.slot), e.to_string()))?;
        check(&sim.state, &d.conn, &sim.schedule).map_err(|e| (Some(d.slot), e))?;
        sim.commit();
        checks += 1;
    }
    Ok(checks)
}

/// Best matching weight by exhaustive search.
pub fn enumerate_matchings(g: &WeightedBipartiteGraph) -> i128 {
    fn go(g: &WeightedBipartiteGraph, r: usize, used: &mut [bool]) -> i128 {
        if r == g.right() {
            return 0;
        }
        let mut best = go(g, r + 1, used);
        for l in 0..g.left() {
            if let (false, Some(w)) = (used[l], g.weight(l, r)) {
                used[l] = true;
                best = best.max(w + go(g, r + 1, used));
                used[l] = false;
            }
        }
        best
    }
    go(g, 0, &mut vec![false; g.left()])
}

/// Largest total scaled packet weight any schedule can serve, by search
/// over every server-to-packet assignment.
pub fn brute_force_schedule_weight(s: &SystemState, c: &ConnMatrix, bound: u32) -> u128 {
    let packets: Vec<Packet> = (0..s.n()).flat_map(|i| s.queue(i).iter().copied()).collect();
    fn go(k: usize, s: &SystemState, c: &ConnMatrix, ps: &[Packet], used: &mut [bool], bound: u32) -> u128 {
        if k == s.n() {
            return 0;
        }
        let mut best = go(k + 1, s, c, ps, used, bound);
        for (j, p) in ps.iter().enumerate() {
            if !used[j] && c.is_on(p.queue as usize, k) {
                used[j] = true;
                best = best.max(p.scaled_weight(s.slot(), s.n(), bound) + go(k + 1, s, c, ps, used, bound));
                used[j] = false;
            }
        }
        best
    }
    go(0, s, c, &packets, &mut vec![false; packets.len()], bound)
}

fn matching_trial(seed: u64) -> TrialResult {
    let mut rng = SeqRng::new(seed);
    let (left, right) = (rng.below(9) as usize, rng.below(5) as usize);
    let mut g = WeightedBipartiteGraph::new(left, right);
    for l in 0..left {
        for r in 0..right {
            if rng.chance(0.6) {
                g.set(l, r, Some(rng.below(50) as i128 + 1));
            }
        }
    }
    let m = max_weight_matching(&g);
    let want = enumerate_matchings(&g);
    if m.total != want || g.total(&m.pairs) != Some(m.total) {
        return Err((None, format!("{left}x{right} graph: kernel {} vs enumeration {want}", m.total)));
    }

    let n = 1 + rng.below(4) as usize;
    let q = [0.25, 0.5, 0.75][rng.below(3) as usize];
    let (s, c) = random_instance(&mut rng, n, q, 8 / n, 12);
    let want = brute_force_schedule_weight(&s, &c, 16);
    for route in [MatchingRoute::VertexGreedy, MatchingRoute::Potentials] {
        let out = schedule_of(&mut Dwm::new(CandidateSet::PerQueue, route), &s, &c);
        let got: u128 = out.servers().iter().flatten().map(|a| a.packet.scaled_weight(s.slot(), n, 16)).sum();
        if got != want || out.validate(&s, &c).is_err() {
            return Err((Some(s.slot()), format!("DWM {route:?} on n={n}: weight {got} vs enumeration {want}")));
        }
    }
    Ok(2)
}

fn recursion_trial(seed: u64, trial: usize) -> TrialResult {
    let mut rng = SeqRng::new(seed);
    let n = [16, 25, 36, 49, 64][trial % 5];
    let h = [3, 5, 8][(trial / 5) % 3];
    let cfg = frame_model(&mut rng, n, 500);
    let path = generate_sample_path(&cfg, rng.next_u64()).map_err(|e| (None, e.to_string()))?;
    let params = GfbsParams::clamped(n, h, cfg.arrivals.max_burst()).map_err(|e| (None, e.to_string()))?;
    let mut opts = RunOptions::new(0);
    opts.packet_cap = usize::MAX;
    let mut sim = Simulation::new(n, Box::new(Gfbs::new(params)), opts);
    let mut stream = path.stream();
    while let Some(d) = stream.next_slot() {
        sim.step(d).map_err(|e| (Some(d.slot), e.to_string()))?;
        sim.policy.check_invariants().map_err(|e| (Some(d.slot), e.to_string()))?;
    }
    Ok(sim.policy.recursion_checks())
}

/// Fraction of random S-frames on which restricted D-SSG succeeds: `n`
/// packets with at most `2H` per queue (`H = h`, unit arrivals), distinct
/// ages, i.i.d. channels with ON probability `q`.
pub fn success_rate(n: usize, h: u64, q: f64, trials: usize, seed: u64) -> f64 {
    let params = GfbsParams::clamped(n, h, 1).expect("positive parameters");
    let cap = 2 * params.cap_h;
    let mut rng = SeqRng::new(seed);
    let mut wins = 0;
    for _ in 0..trials {
        let mut real: Vec<Vec<Packet>> = vec![Vec::new(); n];
        let mut placed = 0;
        let slot = n as u64 + 1;
        while placed < n {
            let i = rng.below(n as u64) as usize;
            if (real[i].len() as u32) < cap {
                real[i].push(Packet::new(0, i, 0));
                placed += 1;
            }
        }
        // distinct ages: older packets sit earlier in each queue
        let mut ages: Vec<u64> = (1..=n as u64).collect();
        for k in (1..ages.len()).rev() {
            ages.swap(k, rng.below(k as u64 + 1) as usize);
        }
        let mut it = ages.into_iter();
        for (i, ps) in real.iter_mut().enumerate() {
            let mut mine: Vec<u64> = ps.iter().map(|_| it.next().expect("n ages")).collect();
            mine.sort_unstable_by(|a, b| b.cmp(a));
            *ps = mine.into_iter().map(|a| Packet::new(slot - a, i, 1)).collect();
        }
        let frame = SFrame::pad(real, cap);
        let conn = ConnMatrix::from_fn(n, |_, _| rng.chance(q));
        let out = frame.schedule(&conn, slot);
        wins += frame.is_success(&out, params.n0, params.f) as usize;
    }
    wins as f64 / trials as f64
}
