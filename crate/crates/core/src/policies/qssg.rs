use alloc::vec::Vec;

use super::{better, Policy};
use crate::engine::{Schedule, SystemState};
use crate::model::ConnMatrix;

/// Queue-length server-side greedy: D-SSG's round structure with the
/// remaining queue length as the weight.
#[derive(Debug, Default, Clone)]
pub struct Qssg {
    left: Vec<u32>,
}

impl Policy for Qssg {
    fn name(&self) -> &'static str {
        "qssg"
    }

    fn schedule(&mut self, state: &SystemState, conn: &ConnMatrix, out: &mut Schedule) {
        let n = state.n();
        self.left.clear();
        self.left.extend((0..n).map(|i| state.len(i) as u32));
        let mut ops = n as u64;
        for k in 0..n {
            let mut best: Option<(usize, u64)> = None;
            for i in 0..n {
                ops += 1;
                if self.left[i] > 0 && conn.is_on(i, k) && better(self.left[i] as u64, best) {
                    best = Some((i, self.left[i] as u64));
                }
            }
            if let Some((i, _)) = best {
                out.assign_next(state, k, i);
                self.left[i] -= 1;
                ops += 1;
            }
        }
        out.ops = ops;
    }
}
