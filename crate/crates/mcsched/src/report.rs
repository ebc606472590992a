//! Result files and rate-function summaries.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mcsched_core::analysis::{estimate_rate_function, RateFunctionEstimate, RatePoint};
use serde::{Deserialize, Serialize};

use crate::sweep::ResultRow;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Serialize records to a writer; CSV headers are the field names.
pub fn write_records<T: Serialize, W: Write>(rows: &[T], format: Format, out: W) -> Result<(), String> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r).map_err(|e| e.to_string())?;
            }
            w.flush().map_err(|e| e.to_string())
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows).map_err(|e| e.to_string())?;
            out.write_all(b"\n").map_err(|e| e.to_string())
        }
    }
}

/// Write rows to `path`, replacing it atomically.
pub fn emit_report(rows: &[ResultRow], format: Format, path: &Path) -> Result<(), HarnessError> {
    emit_records(rows, format, path)
}

pub fn emit_records<T: Serialize>(rows: &[T], format: Format, path: &Path) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    write_records(rows, format, BufWriter::new(file)).map_err(|e| HarnessError::Csv(path.to_path_buf(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn parse_rows(text: &str, format: Format) -> Result<Vec<ResultRow>, String> {
    match format {
        Format::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string()),
        Format::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
    }
}

pub fn read_rows(path: &Path, format: Format) -> Result<Vec<ResultRow>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let rows = match format {
        Format::Csv => csv::Reader::from_reader(BufReader::new(file))
            .deserialize()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string()),
        Format::Json => serde_json::from_reader(BufReader::new(file)).map_err(|e| e.to_string()),
    };
    rows.map_err(|e| HarnessError::Csv(path.to_path_buf(), e))
}

/// Pool violation counts over seeds for each `(policy, b, n)`; unstable
/// rows are left out.
pub fn pooled_points(rows: &[ResultRow]) -> BTreeMap<(String, u64), Vec<RatePoint>> {
    let mut acc: BTreeMap<(String, u64), BTreeMap<usize, (u64, u64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.unstable) {
        let e = acc.entry((r.policy.clone(), r.b)).or_default().entry(r.n).or_default();
        e.0 += r.violation_count;
        e.1 += r.slot_samples;
    }
    acc.into_iter()
        .map(|(k, by_n)| {
            let pts = by_n
                .into_iter()
                .map(|(n, (c, s))| RatePoint { n: n as u32, violation_count: c, slot_samples: s })
                .collect();
            (k, pts)
        })
        .collect()
}

/// Rate-function fit for one `(policy, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub policy: String,
    pub b: u64,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    pub points_used: usize,
    pub points_dropped: usize,
    /// Smallest n whose point was dropped for too few violations.
    pub first_dropped_n: Option<u32>,
    pub note: String,
}

pub fn fit(policy: &str, b: u64, points: &[RatePoint]) -> (FitRow, Option<RateFunctionEstimate>) {
    match estimate_rate_function(points, b) {
        Ok(est) => (
            FitRow {
                policy: policy.into(),
                b,
                slope: Some(est.slope),
                slope_se: Some(est.slope_se),
                intercept: Some(est.intercept),
                points_used: est.used.len(),
                points_dropped: est.dropped.len(),
                first_dropped_n: est.dropped.iter().map(|p| p.n).min(),
                note: if est.dropped.is_empty() {
                    String::new()
                } else {
                    "dropped points have P below 5/slot_samples".into()
                },
            },
            Some(est),
        ),
        Err(e) => (
            FitRow {
                policy: policy.into(),
                b,
                slope: None,
                slope_se: None,
                intercept: None,
                points_used: 0,
                points_dropped: points.len(),
                first_dropped_n: points.iter().map(|p| p.n).min(),
                note: format!("{policy}: {e}"),
            },
            None,
        ),
    }
}

/// Fit every `(policy, b)` in a result set.
pub fn summarize(rows: &[ResultRow]) -> Vec<FitRow> {
    pooled_points(rows).into_iter().map(|((p, b), pts)| fit(&p, b, &pts).0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(policy: &str, n: usize, seed: u64, count: u64) -> ResultRow {
        let prob = count as f64 / 1000.0;
        ResultRow {
            policy: policy.into(),
            n,
            b: 4,
            seed,
            horizon: 2000,
            warmup: 1000,
            violation_count: count,
            slot_samples: 1000,
            prob: Some(prob),
            neg_log_prob_over_n: (count > 0).then(|| -prob.ln() / n as f64),
            mean_total_queue_length: 1.25,
            wall_time_ms: 3.5,
            ops_per_slot_max: 220,
            unstable: false,
        }
    }

    #[test]
    fn single_row_csv_has_two_lines() {
        let mut buf = Vec::new();
        write_records(&[row("dssg", 10, 1, 7)], Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with('\n'));
        assert_eq!(
            text.lines().next().unwrap(),
            "policy,n,b,seed,horizon,warmup,violation_count,slot_samples,prob,neg_log_prob_over_n,\
             mean_total_queue_length,wall_time_ms,ops_per_slot_max,unstable"
        );
    }

    #[test]
    fn json_is_array_of_objects() {
        let mut buf = Vec::new();
        write_records(&[row("dssg", 10, 1, 0)], Format::Json, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert!(v[0]["neg_log_prob_over_n"].is_null());
        assert_eq!(v[0]["policy"], "dssg");
    }

    #[test]
    fn pooling_sums_over_seeds() {
        let rows = [row("dssg", 10, 1, 50), row("dssg", 10, 2, 30), row("dssg", 20, 1, 5)];
        let pts = &pooled_points(&rows)[&("dssg".to_string(), 4)];
        assert_eq!(pts[0], RatePoint { n: 10, violation_count: 80, slot_samples: 2000 });
        assert_eq!(pts.len(), 2);
        let fits = summarize(&rows);
        assert!(fits[0].slope.unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn round_trip(counts in proptest::collection::vec((1usize..200, 0u64..1000, any::<u64>()), 1..20), json in any::<bool>()) {
            let rows: Vec<ResultRow> = counts.iter().map(|&(n, c, s)| {
                let mut r = row("hybrid", n, s, c);
                r.wall_time_ms = (s % 10_000) as f64 / 7.0;
                r.mean_total_queue_length = c as f64 / 3.0;
                r
            }).collect();
            let format = if json { Format::Json } else { Format::Csv };
            let mut buf = Vec::new();
            write_records(&rows, format, &mut buf).unwrap();
            prop_assert_eq!(parse_rows(std::str::from_utf8(&buf).unwrap(), format).unwrap(), rows);
        }
    }
}
