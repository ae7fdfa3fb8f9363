//! Result-curve export: collects per-run summaries into a CSV of
//! error rate against training hours.

use super::IoError;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CURVE_HEADER: &str = "hours,system,dev_cer,eval_cer";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub system: String,
    /// Speech training volume in hours (frames / 100 / 3600 for
    /// synthetic corpora).
    pub hours: f64,
    pub dev_cer: f64,
    #[serde(default)]
    pub eval_cer: Option<f64>,
}

pub fn read_summaries(paths: &[&Path]) -> Result<Vec<RunSummary>, IoError> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = std::fs::read(p)?;
        let s: RunSummary =
            serde_json::from_slice(&bytes).map_err(|e| IoError::BadSummary {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
        if s.system.contains(',') {
            return Err(IoError::BadSummary {
                path: p.display().to_string(),
                reason: "system name must not contain a comma".into(),
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// CSV rows sorted by hours ascending (ties by system name).
pub fn export_curve(summaries: &[RunSummary]) -> String {
    let mut rows: Vec<&RunSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| {
        a.hours
            .partial_cmp(&b.hours)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.system.cmp(&b.system))
    });
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for s in rows {
        let eval = s.eval_cer.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", s.hours, s.system, s.dev_cer, eval));
    }
    out
}
