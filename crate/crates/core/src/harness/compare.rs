use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::error::{Error, Result};

/// One metric of two reports, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub delta: f64,
}

/// Signed per-metric differences of two runs on the same dataset, IND
/// accuracy first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a_mode: String,
    pub b_mode: String,
    pub rows: Vec<DeltaRow>,
}

impl Comparison {
    pub fn delta(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.delta)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>10} {:>10} {:>10}",
            "metric", self.a_mode, self.b_mode, "delta"
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:<20} {:>10.2} {:>10.2} {:>+10.2}", r.metric, r.a, r.b, r.delta);
        }
        out
    }
}

pub fn compare(a: &ExperimentReport, b: &ExperimentReport) -> Result<Comparison> {
    if a.dataset.sha256 != b.dataset.sha256 {
        return Err(Error::InvalidInput(format!(
            "reports come from different datasets ({} vs {})",
            a.dataset.path, b.dataset.path
        )));
    }
    let mut rows = vec![DeltaRow {
        metric: "ind_test_accuracy".into(),
        a: a.ind_test_accuracy * 100.0,
        b: b.ind_test_accuracy * 100.0,
        delta: (b.ind_test_accuracy - a.ind_test_accuracy) * 100.0,
    }];
    for ((name, x), (_, y)) in a.metrics.raw.fields().into_iter().zip(b.metrics.raw.fields()) {
        rows.push(DeltaRow {
            metric: name.into(),
            a: x * 100.0,
            b: y * 100.0,
            delta: (y - x) * 100.0,
        });
    }
    Ok(Comparison {
        a_mode: a.mode.to_string(),
        b_mode: b.mode.to_string(),
        rows,
    })
}
