//! Scheduling policies. Each maps a system state and one slot's
//! connectivity to a [`Schedule`].

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Schedule, SystemState};
use crate::model::{ConnMatrix, Packet};

mod dmws;
mod dqsg;
mod dssg;
mod dwm;
pub mod gfbs;
mod qssg;

pub use dmws::Dmws;
pub use dqsg::Dqsg;
pub use dssg::{check_mwf, dssg_ops_budget, Dssg, MwfViolation};
pub use dwm::{CandidateSet, Dwm, Hybrid, MatchingRoute};
pub use gfbs::{FrameCounters, FrameState, Gfbs, GfbsError, GfbsParams, SFrame, SFrameOutcome};
pub use qssg::Qssg;

pub trait Policy {
    fn name(&self) -> &'static str;

    /// Called once per slot with that slot's arrivals, in queue order, before
    /// [`Policy::schedule`]. Stateless policies ignore it.
    fn observe_arrivals(&mut self, _slot: u64, _arrivals: &[Packet]) {}

    /// Fill `out` (already reset to all-idle) for the current slot.
    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule);
}

/// Policy identities, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dssg,
    Dqsg,
    Dmws,
    Qssg,
    Gfbs,
    Dwm,
    Dwmn,
    Hybrid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Dssg,
        PolicyKind::Dqsg,
        PolicyKind::Dmws,
        PolicyKind::Qssg,
        PolicyKind::Gfbs,
        PolicyKind::Dwm,
        PolicyKind::Dwmn,
        PolicyKind::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dssg => "dssg",
            PolicyKind::Dqsg => "dqsg",
            PolicyKind::Dmws => "dmws",
            PolicyKind::Qssg => "qssg",
            PolicyKind::Gfbs => "gfbs",
            PolicyKind::Dwm => "dwm",
            PolicyKind::Dwmn => "dwmn",
            PolicyKind::Hybrid => "hybrid",
        }
    }

    /// Instantiate with default parameters for arrival bound 1.
    pub fn build(self, n: usize) -> Box<dyn Policy> {
        self.build_for(n, 1)
    }

    /// Instantiate for systems whose per-slot arrivals never exceed
    /// `burst`. G-FBS uses `h = 5` and a clamped leftover frame; use
    /// [`Gfbs::new`] to choose.
    pub fn build_for(self, n: usize, burst: u32) -> Box<dyn Policy> {
        match self {
            PolicyKind::Dssg => Box::new(Dssg::default()),
            PolicyKind::Dqsg => Box::new(Dqsg::default()),
            PolicyKind::Dmws => Box::new(Dmws::default()),
            PolicyKind::Qssg => Box::new(Qssg::default()),
            PolicyKind::Gfbs => Box::new(Gfbs::new(GfbsParams::clamped(n, 5, burst.max(1)).expect("n >= 1"))),
            PolicyKind::Dwm => Box::new(Dwm::new(CandidateSet::PerQueue, MatchingRoute::VertexGreedy)),
            PolicyKind::Dwmn => Box::new(Dwm::new(CandidateSet::OldestN, MatchingRoute::VertexGreedy)),
            PolicyKind::Hybrid => Box::new(Hybrid::new(MatchingRoute::VertexGreedy)),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}` (expected dssg|dqsg|dmws|qssg|gfbs|dwm|dwmn|hybrid)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownPolicy(s.into()))
    }
}

/// Index of the best candidate by `(weight desc, index asc)`.
#[inline]
pub(crate) fn better(weight: u64, best: Option<(usize, u64)>) -> bool {
    match best {
        None => true,
        Some((_, w)) => weight > w,
    }
}
