//! Sweep orchestration: one paired simulation per `(n, seed)` cell, every
//! policy in lockstep on the same sample path.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use mcsched_core::engine::{EngineError, Simulation};
use mcsched_core::model::generate_sample_path;
use mcsched_core::policies::{
    check_mwf, CandidateSet, Dwm, Gfbs, GfbsParams, Hybrid, MatchingRoute, Policy, PolicyKind,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::{emit_report, read_rows, Format};
use crate::HarnessError;

/// One `(policy, n, b, seed)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub n: usize,
    pub b: u64,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: u64,
    pub violation_count: u64,
    pub slot_samples: u64,
    pub prob: Option<f64>,
    pub neg_log_prob_over_n: Option<f64>,
    pub mean_total_queue_length: f64,
    pub wall_time_ms: f64,
    pub ops_per_slot_max: u64,
    /// The run hit the packet cap and stopped early.
    pub unstable: bool,
}

pub type RowKey = (String, usize, u64, u64);

impl ResultRow {
    pub fn key(&self) -> RowKey {
        (self.policy.clone(), self.n, self.b, self.seed)
    }

    /// Equality ignoring `wall_time_ms`.
    pub fn same_measurement(&self, other: &ResultRow) -> bool {
        ResultRow { wall_time_ms: 0.0, ..self.clone() } == ResultRow { wall_time_ms: 0.0, ..other.clone() }
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by_key(ResultRow::key);
}

/// A fluid max-weight check failure seen while running a cell in verify mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MwfFailure {
    pub n: usize,
    pub seed: u64,
    pub slot: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct CellResult {
    pub rows: Vec<ResultRow>,
    pub mwf_failures: Vec<MwfFailure>,
    /// D-SSG slots checked against the fluid max-weight condition.
    pub mwf_checks: u64,
}

pub fn build_policy(kind: PolicyKind, n: usize, burst: u32, gfbs_h: u64, route: MatchingRoute) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Gfbs => Box::new(Gfbs::new(GfbsParams::clamped(n, gfbs_h, burst.max(1)).expect("positive parameters"))),
        PolicyKind::Dwm => Box::new(Dwm::new(CandidateSet::PerQueue, route)),
        PolicyKind::Dwmn => Box::new(Dwm::new(CandidateSet::OldestN, route)),
        PolicyKind::Hybrid => Box::new(Hybrid::new(route)),
        k => k.build_for(n, burst),
    }
}

struct Lane {
    kind: PolicyKind,
    sim: Option<Simulation<dyn Policy>>,
    elapsed: Duration,
    unstable: bool,
    metrics: Option<mcsched_core::engine::MetricsAccumulator>,
}

/// Run every configured policy on the `(n, seed)` sample path.
pub fn run_cell(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<CellResult, HarnessError> {
    let path = generate_sample_path(&cfg.model_config(n), seed).map_err(|e| HarnessError::Config(e.to_string()))?;
    let opts = cfg.run_options();
    let burst = cfg.model.arrivals.max_burst();
    let mut lanes: Vec<Lane> = cfg
        .policies
        .iter()
        .map(|&kind| Lane {
            kind,
            sim: Some(Simulation::new(n, build_policy(kind, n, burst, cfg.gfbs_h, cfg.matching_route), opts)),
            elapsed: Duration::ZERO,
            unstable: false,
            metrics: None,
        })
        .collect();
    let mut out = CellResult::default();
    let mut stream = path.stream();
    while let Some(data) = stream.next_slot() {
        let mut live = false;
        for lane in lanes.iter_mut() {
            let Some(sim) = lane.sim.as_mut() else { continue };
            let start = Instant::now();
            match sim.begin(data) {
                Ok(()) => {}
                Err(EngineError::Unstable { .. }) => {
                    lane.elapsed += start.elapsed();
                    lane.unstable = true;
                    lane.metrics = lane.sim.take().map(|s| s.metrics);
                    continue;
                }
                Err(e) => return Err(HarnessError::Engine { policy: lane.kind.to_string(), n, seed, source: e }),
            }
            if cfg.verify && lane.kind == PolicyKind::Dssg {
                out.mwf_checks += 1;
                if let Err(v) = check_mwf(&sim.state, &data.conn, &sim.schedule) {
                    out.mwf_failures.push(MwfFailure { n, seed, slot: data.slot, detail: v.to_string() });
                }
            }
            sim.commit();
            lane.elapsed += start.elapsed();
            live = true;
        }
        if !live {
            break;
        }
    }
    let warmup = cfg.warmup();
    for lane in lanes {
        let unstable = lane.unstable;
        let m = lane.metrics.or(lane.sim.map(|s| s.metrics)).expect("metrics");
        for &b in &cfg.b {
            let (count, samples) = if unstable { (0, 0) } else { (m.violation_count(b), m.slot_samples) };
            let prob = (samples > 0).then(|| count as f64 / samples as f64);
            let neg_log = prob.filter(|&p| p > 0.0).map(|p| -p.ln() / n as f64);
            out.rows.push(ResultRow {
                policy: lane.kind.to_string(),
                n,
                b,
                seed,
                horizon: cfg.horizon,
                warmup,
                violation_count: count,
                slot_samples: samples,
                prob,
                neg_log_prob_over_n: neg_log,
                mean_total_queue_length: m.mean_total_queue_length(),
                wall_time_ms: lane.elapsed.as_secs_f64() * 1e3,
                ops_per_slot_max: m.ops_max,
                unstable,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub mwf_failures: Vec<MwfFailure>,
    pub mwf_checks: u64,
    /// Cells skipped because `--resume` found them complete.
    pub resumed_cells: usize,
}

impl SweepOutcome {
    pub fn unstable_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.unstable).count()
    }
}

/// Where rows are appended as cells finish. CSV outputs journal in place;
/// JSON outputs journal to a sibling `.partial.csv` file.
pub fn journal_path(out: &Path, format: Format) -> PathBuf {
    match format {
        Format::Csv => out.to_path_buf(),
        Format::Json => {
            let mut s = out.as_os_str().to_owned();
            s.push(".partial.csv");
            PathBuf::from(s)
        }
    }
}

fn expected_keys(cfg: &ExperimentConfig, n: usize, seed: u64) -> impl Iterator<Item = RowKey> + '_ {
    cfg.policies.iter().flat_map(move |p| cfg.b.iter().map(move |&b| (p.to_string(), n, b, seed)))
}

/// Run the whole grid. With an output path, rows are appended to the
/// journal as each cell completes and the final file is rewritten sorted by
/// `(policy, n, b, seed)`. With `resume`, complete cells already in the
/// journal are kept and not rerun.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    format: Format,
    resume: bool,
) -> Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    let seeds = cfg.seed_list();
    let cells: Vec<(usize, u64)> = cfg.n_grid.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();

    let journal = cfg.output.as_ref().map(|o| journal_path(o, format));
    let mut kept: BTreeMap<RowKey, ResultRow> = BTreeMap::new();
    if let (true, Some(j)) = (resume, &journal) {
        if j.exists() {
            for row in read_rows(j, Format::Csv)? {
                kept.insert(row.key(), row);
            }
        }
    }
    let done: BTreeSet<(usize, u64)> =
        cells.iter().copied().filter(|&(n, s)| expected_keys(cfg, n, s).all(|k| kept.contains_key(&k))).collect();
    kept.retain(|(_, n, _, s), _| done.contains(&(*n, *s)));
    let todo: Vec<(usize, u64)> = cells.iter().copied().filter(|c| !done.contains(c)).collect();

    let writer = match &journal {
        Some(j) => {
            if !kept.is_empty() {
                // rewrite the journal with only complete cells so stale partial rows vanish
                emit_report(&kept.values().cloned().collect::<Vec<_>>(), Format::Csv, j)?;
            }
            let exists = j.exists() && !kept.is_empty();
            let file = OpenOptions::new()
                .create(true)
                .append(exists)
                .write(true)
                .truncate(!exists)
                .open(j)
                .map_err(|e| HarnessError::io(j, e))?;
            Some(Mutex::new(csv::WriterBuilder::new().has_headers(!exists).from_writer(file)))
        }
        None => None,
    };

    let run = || -> Result<Vec<CellResult>, HarnessError> {
        todo.par_iter()
            .map(|&(n, seed)| {
                let cell = run_cell(cfg, n, seed)?;
                if let (Some(w), Some(j)) = (&writer, &journal) {
                    let mut w = w.lock().expect("journal lock");
                    for r in &cell.rows {
                        w.serialize(r).map_err(|e| HarnessError::Csv(j.clone(), e.to_string()))?;
                    }
                    w.flush().map_err(|e| HarnessError::io(j, e))?;
                }
                Ok(cell)
            })
            .collect()
    };
    let results = if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run)?
    } else {
        run()?
    };
    drop(writer);

    let mut outcome = SweepOutcome { resumed_cells: done.len(), ..Default::default() };
    outcome.rows.extend(kept.into_values());
    for cell in results {
        outcome.rows.extend(cell.rows);
        outcome.mwf_failures.extend(cell.mwf_failures);
        outcome.mwf_checks += cell.mwf_checks;
    }
    sort_rows(&mut outcome.rows);
    if let Some(out) = &cfg.output {
        emit_report(&outcome.rows, format, out)?;
        if format == Format::Json {
            if let Some(j) = &journal {
                let _ = std::fs::remove_file(j);
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcsched_core::model::{ArrivalSpec, ChannelSpec};

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            model: crate::config::ModelBlock {
                arrivals: ArrivalSpec::IidBernoulli { alpha: 0.5, burst: 1 },
                channels: ChannelSpec::IidOnOff { q: 0.5 },
            },
            policies: vec![PolicyKind::Dssg],
            n_grid: vec![10],
            b: vec![4],
            horizon: 3000,
            warmup: Some(100),
            seeds: vec![1],
            ..Default::default()
        }
    }

    #[test]
    fn one_cell_one_row() {
        let out = run_sweep(&small(), Format::Csv, false).unwrap();
        assert_eq!(out.rows.len(), 1);
        let r = &out.rows[0];
        assert_eq!((r.policy.as_str(), r.n, r.b, r.seed), ("dssg", 10, 4, 1));
        assert_eq!(r.slot_samples, 2900);
    }

    #[test]
    fn seeds_change_only_seed_dependent_fields() {
        let mut cfg = small();
        cfg.seeds = vec![1, 2];
        cfg.policies = vec![PolicyKind::Dssg, PolicyKind::Qssg];
        let out = run_sweep(&cfg, Format::Csv, false).unwrap();
        assert_eq!(out.rows.len(), 4);
        let again = run_sweep(&cfg, Format::Csv, false).unwrap();
        for (a, b) in out.rows.iter().zip(&again.rows) {
            assert!(a.same_measurement(b));
        }
        assert_eq!(out.rows[0].horizon, out.rows[1].horizon);
    }

    #[test]
    fn verify_mode_checks_mwf() {
        let mut cfg = small();
        cfg.verify = true;
        let out = run_sweep(&cfg, Format::Csv, false).unwrap();
        assert_eq!(out.mwf_checks, 3000);
        assert!(out.mwf_failures.is_empty());
    }

    #[test]
    fn overload_is_flagged_not_fatal() {
        let mut cfg = small();
        cfg.model.arrivals = ArrivalSpec::IidBernoulli { alpha: 0.9, burst: 2 };
        cfg.packet_cap = 500;
        cfg.policies = vec![PolicyKind::Dssg, PolicyKind::Dmws];
        let out = run_sweep(&cfg, Format::Csv, false).unwrap();
        assert_eq!(out.unstable_rows(), 2);
        assert!(out.rows.iter().all(|r| r.prob.is_none()));
    }
}
