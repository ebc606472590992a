use alloc::vec::Vec;

use super::{better, Policy};
use crate::engine::{Schedule, SystemState};
use crate::model::ConnMatrix;

/// Delay-based MaxWeight: every server independently picks the connected
/// non-empty queue with the largest slot-start HOL delay. Servers piling
/// onto one queue take its oldest packets in server order; any surplus idles.
#[derive(Debug, Default, Clone)]
pub struct Dmws {
    hol: Vec<u64>,
}

/// Allocate each listed server by the max-HOL rule against fixed weights.
/// `avail[i]` is how many packets of queue `i` are still schedulable.
pub(crate) fn allocate_independent(
    state: &SystemState,
    conn: &ConnMatrix,
    hol: &[u64],
    avail: &[u32],
    servers: impl Iterator<Item = usize>,
    out: &mut Schedule,
) -> u64 {
    let n = state.n();
    let mut ops = 0;
    for k in servers {
        let mut best: Option<(usize, u64)> = None;
        for i in 0..n {
            ops += 1;
            if avail[i] > 0 && conn.is_on(i, k) && better(hol[i], best) {
                best = Some((i, hol[i]));
            }
        }
        if let Some((i, _)) = best {
            out.assign_next(state, k, i);
        }
    }
    ops
}

impl Policy for Dmws {
    fn name(&self) -> &'static str {
        "dmws"
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        let n = state.n();
        self.hol.clear();
        self.hol.extend((0..n).map(|i| state.hol_delay(i)));
        let avail: Vec<u32> = (0..n).map(|i| state.len(i) as u32).collect();
        out.ops = allocate_independent(state, conn, &self.hol, &avail, 0..n, out);
    }
}
