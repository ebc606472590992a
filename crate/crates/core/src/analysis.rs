//! Rate-function upper bound and empirical rate-function estimation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ArrivalSpec;

pub const DEFAULT_T_MAX: u32 = 200;

/// Violation count a point needs to enter a rate-function fit.
pub const MIN_VIOLATIONS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("probability {name} = {value} outside (0, 1)")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("t_max must be at least 1")]
    ZeroHorizon,
    #[error("no closed-form arrival rate for this arrival process")]
    Unsupported,
    #[error("b = {b}: {usable} usable point(s), need at least 2 with >= {MIN_VIOLATIONS} violations")]
    InsufficientPoints { b: u64, usable: usize },
}

/// `D(x || y)` for Bernoulli distributions.
pub fn kl_divergence(x: f64, y: f64) -> f64 {
    fn term(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * libm::log(a / b)
        }
    }
    term(x, y) + term(1.0 - x, 1.0 - y)
}

fn open_unit(name: &'static str, value: f64) -> Result<f64, AnalysisError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(AnalysisError::InvalidProbability { name, value })
    }
}

/// `I_X = ln(1 / (1 - q))`.
pub fn i_x(q: f64) -> Result<f64, AnalysisError> {
    let q = open_unit("q", q)?;
    Ok(-libm::log1p(-q))
}

/// `I_AG(t, x)` for i.i.d. 0-L arrivals.
pub fn i_ag_at(alpha: f64, burst: u32, t: u32, x: f64) -> f64 {
    let t = t as f64;
    let ratio = (t + x) / (burst as f64 * t);
    if ratio > 1.0 {
        f64::INFINITY
    } else if ratio <= alpha {
        0.0
    } else {
        t * kl_divergence(ratio, alpha)
    }
}

/// `I_AG(x)` truncated to `t <= t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRate {
    pub value: f64,
    /// Minimizing `t`.
    pub t: u32,
    /// The minimizer lies below `t_max`, so truncation did not bind.
    pub interior: bool,
}

pub fn i_ag(arrivals: &ArrivalSpec, x: f64, t_max: u32) -> Result<ArrivalRate, AnalysisError> {
    let ArrivalSpec::IidBernoulli { alpha, burst } = *arrivals else {
        return Err(AnalysisError::Unsupported);
    };
    if t_max == 0 {
        return Err(AnalysisError::ZeroHorizon);
    }
    let alpha = open_unit("alpha", alpha)?;
    let mut best = ArrivalRate { value: f64::INFINITY, t: 1, interior: true };
    for t in 1..=t_max {
        let v = i_ag_at(alpha, burst, t, x);
        if v < best.value {
            best = ArrivalRate { value: v, t, interior: t < t_max };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub q: f64,
    pub b: u64,
    pub arrivals: ArrivalSpec,
    pub t_max: u32,
}

/// Which event family attains the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Branch {
    /// A queue disconnected for `b + 1` slots.
    ServiceOnly,
    /// An arrival surplus of `b - c` together with `c` disconnected slots.
    ArrivalService { c: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub i_x: f64,
    pub service_only: f64,
    /// `I_AG(b - c) + c I_X` for `c = 0..=b`.
    pub terms: Vec<f64>,
    /// `I_AG(b - c)` for `c = 0..=b`, with its minimizer.
    pub arrival_rates: Vec<ArrivalRate>,
    pub value: f64,
    pub branch: Branch,
}

/// `I_U(b) = min{(b+1) I_X, min_c I_AG(b-c) + c I_X}`.
pub fn i_u(inputs: &BoundInputs) -> Result<BoundReport, AnalysisError> {
    let ix = i_x(inputs.q)?;
    let b = inputs.b;
    let service_only = (b + 1) as f64 * ix;
    let mut terms = Vec::with_capacity(b as usize + 1);
    let mut arrival_rates = Vec::with_capacity(b as usize + 1);
    let mut value = service_only;
    let mut branch = Branch::ServiceOnly;
    for c in 0..=b {
        let rate = i_ag(&inputs.arrivals, (b - c) as f64, inputs.t_max)?;
        let term = rate.value + c as f64 * ix;
        if term < value {
            value = term;
            branch = Branch::ArrivalService { c };
        }
        terms.push(term);
        arrival_rates.push(rate);
    }
    Ok(BoundReport { i_x: ix, service_only, terms, arrival_rates, value, branch })
}

/// One measured point of `P(W(0) > b)` at system size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: u32,
    pub violation_count: u64,
    pub slot_samples: u64,
}

impl RatePoint {
    pub fn prob(&self) -> f64 {
        self.violation_count as f64 / self.slot_samples as f64
    }
}

/// Least-squares slope of `-ln P` against `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunctionEstimate {
    pub b: u64,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub used: Vec<RatePoint>,
    /// Points with fewer than [`MIN_VIOLATIONS`] violations; their `P` is
    /// only bounded above.
    pub dropped: Vec<RatePoint>,
}

fn sq(v: f64) -> f64 {
    v * v
}

/// Fit `-ln(count / samples) = a + I n`. The standard error is the usual
/// residual-based one with three or more points; with exactly two it falls
/// back to the binomial delta method, `Var(-ln P) ~ (1 - P) / count`.
pub fn estimate_rate_function(points: &[RatePoint], b: u64) -> Result<RateFunctionEstimate, AnalysisError> {
    let (used, dropped): (Vec<RatePoint>, Vec<RatePoint>) =
        points.iter().partition(|p| p.violation_count >= MIN_VIOLATIONS && p.slot_samples > 0);
    if used.len() < 2 {
        return Err(AnalysisError::InsufficientPoints { b, usable: used.len() });
    }
    let k = used.len() as f64;
    let xs: Vec<f64> = used.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = used.iter().map(|p| -libm::log(p.prob())).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let (slope, intercept) = if sxx > 0.0 { (sxy / sxx, my - sxy / sxx * mx) } else { (0.0, my) };
    let slope_se = if sxx == 0.0 {
        f64::INFINITY
    } else if used.len() >= 3 {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| sq(y - intercept - slope * x)).sum();
        libm::sqrt(rss / (k - 2.0) / sxx)
    } else {
        let var: f64 = used
            .iter()
            .zip(&xs)
            .map(|(p, x)| sq(x - mx) * (1.0 - p.prob()) / p.violation_count as f64)
            .sum();
        libm::sqrt(var) / sxx
    };
    Ok(RateFunctionEstimate { b, slope, intercept, slope_se, used, dropped })
}
