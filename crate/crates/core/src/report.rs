//! Report files: campaign JSON/CSV, design-point CSVs, and the matching
//! human-readable tables. Numbers are formatted once, by the `PointRow`
//! and record formatters, so tables and CSVs always agree.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::axmult::MultiplierProfile;
use crate::dse::{DesignPoint, ObjectiveField, ObjectiveValues};
use crate::error::{Error, Result};
use crate::faultsim::{Calibration, CampaignPlan, CampaignResult, RepetitionRecord, WORST_CASE_P};
use crate::manifest::SITE_SPACE;

pub const TOOL_NAME: &str = "axdse";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const POINTS_HEADER: [&str; 7] = [
    "multiplier",
    "mask",
    "approx_drop",
    "fi_drop",
    "area",
    "power",
    "latency",
];

/// One `points.csv` / `pareto.csv` row, already rounded to the printed
/// precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRow {
    pub multiplier: String,
    pub mask: String,
    pub approx_drop: String,
    pub fi_drop: String,
    pub area: String,
    pub power: String,
    pub latency: String,
}

impl PointRow {
    pub fn from_point(p: &DesignPoint) -> Self {
        PointRow {
            multiplier: p.multiplier_id.clone(),
            mask: p.mask.clone(),
            approx_drop: format!("{:.4}", p.approx_drop_pct),
            fi_drop: format!("{:.4}", p.fi_drop_pct),
            area: format!("{:.3}", p.costs.area_proxy),
            power: format!("{:.6}", p.costs.power_proxy),
            latency: p.costs.latency_proxy.to_string(),
        }
    }

    fn fields(&self) -> [&str; 7] {
        [
            &self.multiplier,
            &self.mask,
            &self.approx_drop,
            &self.fi_drop,
            &self.area,
            &self.power,
            &self.latency,
        ]
    }

    fn parse_num(s: &str, col: &str) -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Parse {
            context: "points csv".into(),
            message: format!("column `{col}`: `{s}` is not a number"),
        })
    }
}

impl ObjectiveValues for PointRow {
    fn objective_value(&self, field: ObjectiveField) -> f64 {
        let s = match field {
            ObjectiveField::AreaProxy => &self.area,
            ObjectiveField::PowerProxy => &self.power,
            ObjectiveField::LatencyProxy => &self.latency,
            ObjectiveField::ApproxDrop => &self.approx_drop,
            ObjectiveField::FiDrop => &self.fi_drop,
        };
        s.parse().unwrap_or(f64::NAN)
    }
}

pub fn points_csv(rows: &[PointRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(POINTS_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn read_points_csv(text: &str) -> Result<Vec<PointRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != POINTS_HEADER {
        return Err(Error::Parse {
            context: "points csv".into(),
            message: format!("expected header `{}`", POINTS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let get = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let row = PointRow {
            multiplier: get(0),
            mask: get(1),
            approx_drop: get(2),
            fi_drop: get(3),
            area: get(4),
            power: get(5),
            latency: get(6),
        };
        for (i, col) in POINTS_HEADER.iter().enumerate().skip(2) {
            PointRow::parse_num(row.fields()[i], col)?;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        context: "points csv".into(),
        message: e.to_string(),
    }
}

/// Fixed-width table with the same cell strings as the CSV.
pub fn points_table(rows: &[PointRow]) -> String {
    let mut widths = POINTS_HEADER.map(str::len);
    for r in rows {
        for (w, f) in widths.iter_mut().zip(r.fields()) {
            *w = (*w).max(f.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 7]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, POINTS_HEADER);
    for r in rows {
        line(&mut out, r.fields());
    }
    out
}

pub fn campaign_csv(records: &[RepetitionRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "repetition",
        "layer",
        "element",
        "bit",
        "correct",
        "accuracy",
    ])
    .expect("in-memory write");
    for r in records {
        w.write_record([
            r.index.to_string(),
            r.site.layer_index.to_string(),
            r.site.element_index.to_string(),
            r.site.bit.to_string(),
            r.correct.to_string(),
            format!("{:.6}", r.accuracy),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Identity of the evaluated network and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub multiplier: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub site_count: u64,
    pub images: usize,
    pub baseline_accuracy: f64,
    pub mean_faulty_accuracy: f64,
    pub std_faulty_accuracy: f64,
    pub vulnerability: f64,
    /// Vulnerability in percentage points, two decimals.
    pub vulnerability_pct: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub tool: String,
    pub version: String,
    pub site_space: String,
    /// Failure probability assumed by the sample-size formula.
    pub sample_size_p: f64,
    pub context: RunContext,
    pub plan: CampaignPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    pub summary: CampaignSummary,
    pub repetitions: Vec<RepetitionRecord>,
}

impl CampaignReport {
    pub fn new(
        result: &CampaignResult,
        context: RunContext,
        calibration: Option<Calibration>,
    ) -> Self {
        CampaignReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            site_space: SITE_SPACE.into(),
            sample_size_p: WORST_CASE_P,
            context,
            plan: result.plan,
            calibration,
            summary: CampaignSummary {
                site_count: result.site_count,
                images: result.images,
                baseline_accuracy: result.baseline_accuracy,
                mean_faulty_accuracy: result.mean_faulty_accuracy,
                std_faulty_accuracy: result.std_faulty_accuracy,
                vulnerability: result.vulnerability,
                vulnerability_pct: format!("{:.2}", result.vulnerability_pct()),
            },
            repetitions: result.records.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn profile_table(profiles: &[MultiplierProfile]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>10} {:>10} {:>10} {:>8} {:>9} {:>9}",
        "multiplier", "MAE%", "WCE%", "MRE%", "EP%", "power_mW", "area_um2"
    );
    for p in profiles {
        let _ = writeln!(
            out,
            "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>8.2} {:>9.4} {:>9.1}",
            p.id, p.mae_pct, p.wce_pct, p.mre_pct, p.ep_pct, p.power_mw, p.area_um2
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(m: &str, mask: &str, a: f64) -> PointRow {
        PointRow {
            multiplier: m.into(),
            mask: mask.into(),
            approx_drop: format!("{a:.4}"),
            fi_drop: "1.2500".into(),
            area: "100.000".into(),
            power: "0.500000".into(),
            latency: "42".into(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("exact", "000", 0.0), row("trunc1", "1-1--111", 2.5)];
        let text = points_csv(&rows);
        assert!(text.starts_with("multiplier,mask,approx_drop,fi_drop,area,power,latency\n"));
        assert_eq!(read_points_csv(&text).unwrap(), rows);
    }

    #[test]
    fn bad_csv() {
        assert!(read_points_csv("a,b\n1,2\n").is_err());
        let text = points_csv(&[row("x", "1", 0.0)]).replace("42", "forty");
        assert!(read_points_csv(&text).is_err());
    }

    #[test]
    fn table_uses_csv_cells() {
        let rows = vec![row("trunc2", "101", 0.12345)];
        let t = points_table(&rows);
        assert!(t.contains("0.1235") || t.contains("0.1234"));
        assert!(t.contains(&rows[0].approx_drop));
    }
}
