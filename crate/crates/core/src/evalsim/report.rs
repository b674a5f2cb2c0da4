use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::reference;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRow {
    pub model: String,
    pub reason_top1: f64,
    pub reason_top3: f64,
    pub department_top1: f64,
    pub department_top3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub features: String,
    pub reason_top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub strategy: String,
    pub coverage: f64,
    pub transfer_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub train_size: usize,
    pub test_size: usize,
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
    pub test_accuracy: f64,
}

/// Everything an evaluation run measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fingerprint: String,
    #[serde(default)]
    pub context: Option<ContextRow>,
    #[serde(default)]
    pub heads: Vec<HeadRow>,
    #[serde(default)]
    pub feature_sets: Vec<FeatureRow>,
    #[serde(default)]
    pub routing: Vec<RoutingRow>,
    /// Training support of each kept class.
    #[serde(default)]
    pub class_support: BTreeMap<String, usize>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Which reference blocks to print next to measured rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Baselines {
    pub published: bool,
}

pub fn percent(x: f64, decimals: usize) -> String {
    format!("{:.*}%", decimals, 100.0 * x)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn render(&self, out: &mut String) {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| std::iter::once(&self.header).chain(&self.rows).map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String], out: &mut String| {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                let pad = w - cell.chars().count();
                if i == 0 {
                    s.push_str(cell);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(cell);
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(&self.header, out);
        let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            line(r, out);
        }
    }
}

/// Renders aligned text tables: classifier heads (one decimal), text
/// representations (two decimals) and routing strategies.
pub fn render_report(report: &MetricReport, baselines: Baselines) -> String {
    let mut out = String::new();
    if !report.fingerprint.is_empty() {
        let _ = writeln!(out, "config {}\n", report.fingerprint);
    }

    if let Some(c) = &report.context {
        let _ = writeln!(out, "Context gate");
        let mut t = Table::new(&["", "train", "test", "positive", "negative", "dropped", "test acc"]);
        t.row(vec![
            "measured".into(),
            c.train_size.to_string(),
            c.test_size.to_string(),
            c.positives.to_string(),
            c.negatives.to_string(),
            c.dropped.to_string(),
            percent(c.test_accuracy, 1),
        ]);
        if baselines.published {
            t.row(vec![
                "published".into(),
                "-".into(),
                "-".into(),
                reference::CONTEXT_POSITIVE.to_string(),
                reference::CONTEXT_NEGATIVE.to_string(),
                "-".into(),
                percent(reference::CONTEXT_ACCURACY, 1),
            ]);
        }
        t.render(&mut out);
        out.push('\n');
    }

    if !report.heads.is_empty() || baselines.published {
        let _ = writeln!(out, "Classifier heads");
        let mut t = Table::new(&["model", "reason top-1", "reason top-3", "dept top-1", "dept top-3"]);
        for h in &report.heads {
            t.row(vec![
                h.model.clone(),
                percent(h.reason_top1, 1),
                percent(h.reason_top3, 1),
                percent(h.department_top1, 1),
                percent(h.department_top3, 1),
            ]);
        }
        if baselines.published {
            for h in reference::HEADS {
                t.row(vec![
                    format!("{} (published)", h.model),
                    percent(h.reason_top1, 1),
                    percent(h.reason_top3, 1),
                    percent(h.department_top1, 1),
                    percent(h.department_top3, 1),
                ]);
            }
        }
        t.render(&mut out);
        out.push('\n');
    }

    if !report.feature_sets.is_empty() || baselines.published {
        let _ = writeln!(out, "Text representations");
        let mut t = Table::new(&["features", "reason top-1"]);
        for f in &report.feature_sets {
            t.row(vec![f.features.clone(), percent(f.reason_top1, 2)]);
        }
        if baselines.published {
            for f in reference::FEATURE_SETS {
                t.row(vec![format!("{} (published)", f.features), percent(f.reason_top1, 2)]);
            }
        }
        t.render(&mut out);
        out.push('\n');
    }

    if !report.routing.is_empty() || baselines.published {
        let _ = writeln!(out, "Routing");
        let mut t = Table::new(&["strategy", "coverage", "transfer rate", "msgs/ticket"]);
        for r in &report.routing {
            t.row(vec![
                r.strategy.clone(),
                percent(r.coverage, 1),
                r.transfer_rate.map_or_else(|| "n/a".to_owned(), |x| percent(x, 1)),
                "-".into(),
            ]);
        }
        if baselines.published {
            for r in reference::ROUTING {
                t.row(vec![
                    format!("{} (published)", r.strategy),
                    r.coverage.map_or_else(|| "-".to_owned(), |c| percent(c, 0)),
                    percent(r.transfer_rate, 1),
                    format!("{:.1}", r.messages_per_ticket),
                ]);
            }
        }
        t.render(&mut out);
        out.push('\n');
    }

    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}
