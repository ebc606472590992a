use alloc::vec::Vec;

use super::{better, Policy};
use crate::engine::{Schedule, SystemState};
use crate::model::ConnMatrix;

/// Delay-based queue-side greedy.
///
/// Each round takes, among non-empty queues that still see an available
/// connected server, the one with the largest HOL delay (smallest index on
/// ties) and hands it its smallest-index available connected server.
/// Cubic per slot; kept as the reference side of the equivalence check.
#[derive(Debug, Default, Clone)]
pub struct Dqsg {
    hol: Vec<u64>,
    left: Vec<u32>,
    free: Vec<bool>,
}

impl Policy for Dqsg {
    fn name(&self) -> &'static str {
        "dqsg"
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        let n = state.n();
        self.hol.clear();
        self.left.clear();
        self.free.clear();
        self.free.resize(n, true);
        for i in 0..n {
            self.hol.push(state.hol_delay(i));
            self.left.push(state.len(i) as u32);
        }
        let mut ops = 0u64;
        for _round in 0..n {
            let mut best: Option<(usize, u64)> = None;
            for i in 0..n {
                if self.left[i] == 0 {
                    continue;
                }
                ops += n as u64;
                let reachable = (0..n).any(|j| self.free[j] && conn.is_on(i, j));
                if reachable && better(self.hol[i], best) {
                    best = Some((i, self.hol[i]));
                }
            }
            let Some((i, _)) = best else { break };
            let j = (0..n).find(|&j| self.free[j] && conn.is_on(i, j)).expect("reachable");
            self.free[j] = false;
            out.assign_next(state, j, i);
            self.left[i] -= 1;
            self.hol[i] = state.delay_at(i, out.served(i) as usize).unwrap_or(0);
        }
        out.ops = ops;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oldest_queue_takes_its_only_server() {
        let s = SystemState::with_delays(5, &[&[5], &[3]]);
        let c = ConnMatrix::from_rows(&[&[0, 1], &[1, 1]]);
        let mut out = Schedule::new(2);
        Dqsg::default().schedule(&s, &c, &mut out);
        assert_eq!(out.queue_of(1), Some(0));
        assert_eq!(out.queue_of(0), Some(1));
    }

    #[test]
    fn all_off_is_empty() {
        let s = SystemState::with_delays(5, &[&[5], &[3]]);
        let mut out = Schedule::new(2);
        Dqsg::default().schedule(&s, &ConnMatrix::new(2), &mut out);
        assert_eq!(out.total_served(), 0);
    }
}
