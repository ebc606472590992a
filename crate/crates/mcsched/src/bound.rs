//! Tables of the rate-function upper bound.

use mcsched_core::analysis::{i_u, BoundInputs, Branch, DEFAULT_T_MAX};
use mcsched_core::model::ArrivalSpec;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub b: u64,
    pub q: f64,
    pub i_x: f64,
    pub service_only: f64,
    /// `c:term` pairs separated by `;`.
    pub c_terms: String,
    pub i_u: f64,
    /// `service_only` or `c=<k>`.
    pub branch: String,
    /// Minimizing `t` of the arrival term on the winning branch.
    pub t_star: Option<u32>,
}

pub fn bound_table(q: f64, arrivals: &ArrivalSpec, bs: &[u64]) -> Result<Vec<BoundRow>, HarnessError> {
    bs.iter()
        .map(|&b| {
            let inputs = BoundInputs { q, b, arrivals: arrivals.clone(), t_max: DEFAULT_T_MAX };
            let rep = i_u(&inputs).map_err(|e| HarnessError::Config(e.to_string()))?;
            let c_terms = rep.terms.iter().enumerate().map(|(c, v)| format!("{c}:{v:.6}")).collect::<Vec<_>>().join(";");
            let (branch, t_star) = match rep.branch {
                Branch::ServiceOnly => ("service_only".to_string(), None),
                Branch::ArrivalService { c } => (format!("c={c}"), Some(rep.arrival_rates[c as usize].t)),
            };
            Ok(BoundRow { b, q, i_x: rep.i_x, service_only: rep.service_only, c_terms, i_u: rep.value, branch, t_star })
        })
        .collect()
}
