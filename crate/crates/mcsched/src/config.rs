//! Experiment configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mcsched_core::engine::{RunOptions, DEFAULT_PACKET_CAP};
use mcsched_core::model::{ArrivalSpec, ChannelSpec, ModelConfig};
use mcsched_core::policies::{MatchingRoute, PolicyKind};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const DESK_HORIZON: u64 = 1_000_000;
pub const FULL_HORIZON: u64 = 10_000_000;

/// Arrival and channel processes shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub arrivals: ArrivalSpec,
    pub channels: ChannelSpec,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock { arrivals: ArrivalSpec::bursty_default(), channels: ChannelSpec::IidOnOff { q: 0.75 } }
    }
}

/// A sweep over policies, system sizes, thresholds and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub policies: Vec<PolicyKind>,
    pub n_grid: Vec<usize>,
    pub b: Vec<u64>,
    pub horizon: u64,
    /// Defaults to `max(10^4, horizon / 100)`.
    pub warmup: Option<u64>,
    pub seeds: Vec<u64>,
    /// Each listed seed `s` expands to `s, s+1, ..., s+replications-1`.
    pub replications: u32,
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub packet_cap: usize,
    /// G-FBS frame span.
    pub gfbs_h: u64,
    /// Matching kernel for dwm, dwmn and hybrid.
    pub matching_route: MatchingRoute,
    /// Validate schedules and check the D-SSG fluid max-weight condition.
    pub verify: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelBlock::default(),
            policies: vec![PolicyKind::Dssg, PolicyKind::Dwm, PolicyKind::Hybrid, PolicyKind::Qssg, PolicyKind::Dmws],
            n_grid: (1..=10).map(|k| 10 * k).collect(),
            b: (1..=8).collect(),
            horizon: DESK_HORIZON,
            warmup: None,
            seeds: vec![1],
            replications: 1,
            output: None,
            jobs: 0,
            packet_cap: DEFAULT_PACKET_CAP,
            gfbs_h: 5,
            matching_route: MatchingRoute::VertexGreedy,
            verify: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| RunOptions::default_warmup(self.horizon))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        let r = self.replications.max(1) as u64;
        let set: BTreeSet<u64> = self.seeds.iter().flat_map(|&s| (0..r).map(move |k| s.wrapping_add(k))).collect();
        set.into_iter().collect()
    }

    pub fn model_config(&self, n: usize) -> ModelConfig {
        ModelConfig { n, horizon: self.horizon, arrivals: self.model.arrivals.clone(), channels: self.model.channels.clone() }
    }

    pub fn run_options(&self) -> RunOptions {
        let mut o = RunOptions::new(self.warmup());
        o.validate = self.verify;
        o.packet_cap = self.packet_cap;
        o
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.policies.is_empty() {
            return bad("policy list is empty".into());
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("n_grid must be non-empty and positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.b.is_empty() {
            return bad("b set is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.horizon <= self.warmup() {
            return bad(format!("horizon {} must exceed warmup {}", self.horizon, self.warmup()));
        }
        if self.gfbs_h == 0 {
            return bad("gfbs_h must be positive".into());
        }
        self.model_config(self.n_grid[0]).validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}
