//! Published shared-task results, stored as constants for side-by-side
//! comparison with a run.

use std::fmt::Write as _;
use std::str::FromStr;

use super::MetricsReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    /// Test-set weighted F1 per emotion subtask.
    PerEmotion,
    /// Test-set scores per task.
    PerTask,
    /// Validation scores of the modality ablation.
    Ablation,
    /// Shared-task leaderboard.
    Leaderboard,
}

impl TableId {
    pub const ALL: [TableId; 4] = [
        TableId::PerEmotion,
        TableId::PerTask,
        TableId::Ablation,
        TableId::Leaderboard,
    ];

    pub fn key(self) -> &'static str {
        match self {
            TableId::PerEmotion => "table2",
            TableId::PerTask => "table3",
            TableId::Ablation => "table5",
            TableId::Leaderboard => "table7",
        }
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableId::ALL
            .into_iter()
            .find(|t| t.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown reference table `{s}` (table2 | table3 | table5 | table7)"
                ))
            })
    }
}

/// Whether a run is shown as an extra row or an extra column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunAxis {
    Row,
    Column,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub id: TableId,
    pub title: &'static str,
    pub corner: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<(&'static str, Vec<Option<f64>>)>,
    pub run_axis: RunAxis,
    /// Row (or column) that deltas are reported against.
    pub anchor: usize,
}

impl ReferenceTable {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|c| *c == column)?;
        self.rows.iter().find(|(r, _)| *r == row)?.1[c]
    }

    /// The run's values along the table's run axis.
    pub fn run_values(&self, report: &MetricsReport) -> Vec<Option<f64>> {
        match self.id {
            TableId::PerEmotion => vec![
                report.sentiment,
                report.humour_binary,
                report.humour_intensity,
                report.sarcasm_binary,
                report.sarcasm_intensity,
                report.offensive_binary,
                report.offensive_intensity,
                report.motivation,
            ],
            _ => vec![report.task_a, report.task_b, report.task_c, report.mean],
        }
    }
}

const TASKS: [&str; 4] = ["Task A", "Task B", "Task C", "Mean"];

fn row(label: &'static str, values: &[f64]) -> (&'static str, Vec<Option<f64>>) {
    (label, values.iter().copied().map(Some).collect())
}

pub fn reference_table(id: TableId) -> ReferenceTable {
    match id {
        TableId::PerEmotion => ReferenceTable {
            id,
            title: "Weighted F1 per emotion subtask (test)",
            corner: "Subtask",
            columns: vec!["Only Text", "MMMT"],
            rows: vec![
                row("Sentiment (A)", &[0.5072, 0.5318]),
                row("Humour (B)", &[0.9239, 0.8111]),
                row("Humour (C)", &[0.4131, 0.4036]),
                row("Sarcasm (B)", &[0.6386, 0.8191]),
                row("Sarcasm (C)", &[0.1604, 0.3083]),
                row("Offensive (B)", &[0.5581, 0.485]),
                row("Offensive (C)", &[0.5045, 0.485]),
                row("Motivation (B, C)", &[0.9764, 0.98]),
            ],
            run_axis: RunAxis::Column,
            anchor: 1,
        },
        TableId::PerTask => ReferenceTable {
            id,
            title: "Weighted F1 per task (test)",
            corner: "Model",
            columns: TASKS.to_vec(),
            rows: vec![
                row("Only Text", &[0.5072, 0.7743, 0.5136, 0.5984]),
                row("MMMT", &[0.5318, 0.7738, 0.5443, 0.6166]),
            ],
            run_axis: RunAxis::Row,
            anchor: 1,
        },
        TableId::Ablation => ReferenceTable {
            id,
            title: "Modality ablation (validation)",
            corner: "Features",
            columns: TASKS.to_vec(),
            rows: vec![
                row("text", &[0.5127, 0.6494, 0.5001, 0.5541]),
                row("image", &[0.5139, 0.6404, 0.5117, 0.5553]),
                row("clip", &[0.5113, 0.6559, 0.4835, 0.5502]),
                row("image+text", &[0.5118, 0.6452, 0.5041, 0.5537]),
                row("clip+image", &[0.5077, 0.6398, 0.5053, 0.5510]),
                row("clip+text", &[0.5118, 0.6551, 0.5032, 0.5567]),
                row("image+clip+text", &[0.5178, 0.6394, 0.5029, 0.5534]),
            ],
            run_axis: RunAxis::Row,
            anchor: 6,
        },
        TableId::Leaderboard => ReferenceTable {
            id,
            title: "Shared-task leaderboard (test)",
            corner: "Team",
            columns: TASKS.to_vec(),
            rows: vec![
                row("BLUE", &[0.5318, 0.8059, 0.5443, 0.6273]),
                row("BROWALLIA", &[0.5255, 0.767, 0.5453, 0.6126]),
                row("Amazon PARS", &[0.5025, 0.7609, 0.5564, 0.6066]),
                row("HCILab", &[0.4995, 0.7414, 0.5301, 0.5903]),
                row("weipengfei", &[0.4887, 0.6915, 0.5033, 0.5612]),
                row("BASELINE", &[0.434, 0.7358, 0.5105, 0.5601]),
                row("Yet", &[0.5088, 0.6106, 0.51, 0.5431]),
                row("Greeny", &[0.5037, 0.6106, 0.484, 0.5328]),
                ("Little Flower", vec![Some(0.5081), Some(0.8229), None, None]),
            ],
            run_axis: RunAxis::Row,
            anchor: 0,
        },
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"))
}

fn delta(run: Option<f64>, reference: Option<f64>) -> String {
    match (run, reference) {
        (Some(a), Some(b)) => format!("{:+.4}", a - b),
        _ => "N/A".to_string(),
    }
}

pub fn render_grid(corner: &str, header: &[String], rows: &[(String, Vec<String>)]) -> String {
    let first = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([corner.len()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| rows.iter().map(|(_, v)| v[i].len()).chain([h.len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{corner:<first$}");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(out, " | {h:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(first + widths.iter().map(|w| w + 3).sum::<usize>()));
    out.push('\n');
    for (label, values) in rows {
        let _ = write!(out, "{label:<first$}");
        for (v, w) in values.iter().zip(&widths) {
            let _ = write!(out, " | {v:>w$}");
        }
        out.push('\n');
    }
    out
}

/// The reference table with the run added as a row or column, plus its
/// deltas against the anchor entry.
pub fn render_comparison(table: &ReferenceTable, report: &MetricsReport) -> String {
    let run = table.run_values(report);
    let mut out = format!("{} [{}]\n", table.title, table.id.key());
    match table.run_axis {
        RunAxis::Row => {
            let anchor = &table.rows[table.anchor];
            let mut rows: Vec<(String, Vec<String>)> = table
                .rows
                .iter()
                .map(|(l, v)| (l.to_string(), v.iter().map(|x| cell(*x)).collect()))
                .collect();
            rows.push(("this run".into(), run.iter().map(|x| cell(*x)).collect()));
            rows.push((
                format!("delta vs {}", anchor.0),
                run.iter().zip(&anchor.1).map(|(a, b)| delta(*a, *b)).collect(),
            ));
            let header: Vec<String> = table.columns.iter().map(|c| c.to_string()).collect();
            out.push_str(&render_grid(table.corner, &header, &rows));
        }
        RunAxis::Column => {
            let anchor = table.columns[table.anchor];
            let mut header: Vec<String> = table.columns.iter().map(|c| c.to_string()).collect();
            header.push("this run".into());
            header.push(format!("delta vs {anchor}"));
            let rows: Vec<(String, Vec<String>)> = table
                .rows
                .iter()
                .zip(&run)
                .map(|((l, v), r)| {
                    let mut cells: Vec<String> = v.iter().map(|x| cell(*x)).collect();
                    cells.push(cell(*r));
                    cells.push(delta(*r, v[table.anchor]));
                    (l.to_string(), cells)
                })
                .collect();
            out.push_str(&render_grid(table.corner, &header, &rows));
        }
    }
    out
}
