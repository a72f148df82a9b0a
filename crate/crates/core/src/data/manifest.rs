//! CSV label manifests: `id,sentiment,humour,sarcasm,offensive,motivation`,
//! with an empty cell or `-1` for an absent label.

use std::path::Path;

use super::{Head, LabelSet, Split};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub labels: LabelSet,
}

const HEADER: [&str; 6] = ["id", "sentiment", "humour", "sarcasm", "offensive", "motivation"];

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::data(format!(
            "{}: expected header {}, found {}",
            path.display(),
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record[0].to_string();
        let mut labels = LabelSet::default();
        for (i, head) in Head::ALL.iter().enumerate() {
            let cell = record[i + 1].trim();
            let value = match cell {
                "" | "-1" => None,
                v => Some(
                    v.parse::<u8>()
                        .map_err(|_| Error::label(&id, format!("{head} cell `{v}` is not a label")))?,
                ),
            };
            labels.set(*head, value);
        }
        labels.validate(&id)?;
        rows.push(ManifestRow { id, labels });
    }
    Ok(rows)
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(HEADER)?;
    for row in rows {
        let mut cells = vec![row.id.clone()];
        cells.extend(
            Head::ALL
                .iter()
                .map(|h| row.labels.get(*h).map_or(String::new(), |v| v.to_string())),
        );
        writer.write_record(&cells)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    crate::cli::atomic_write(path, manifest_to_string(rows)?.as_bytes())
}

/// Label-only manifest whose per-head marginals equal the published counts
/// of `split` exactly. Each head's column is an independent seeded shuffle.
pub fn table1_manifest(split: Split, seed: u64) -> Vec<ManifestRow> {
    let stats = super::table1(split);
    let n = stats.total(Head::Sentiment);
    let mut rng = SplitMix64::new(seed);
    let mut rows: Vec<ManifestRow> = (0..n)
        .map(|i| ManifestRow {
            id: format!("{}_{i:05}", split.name()),
            labels: LabelSet::default(),
        })
        .collect();
    for head in Head::ALL {
        let mut column: Vec<u8> = stats
            .counts(head)
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c as u8, k))
            .collect();
        rng.shuffle(&mut column);
        for (row, v) in rows.iter_mut().zip(column) {
            row.labels.set(head, Some(v));
        }
    }
    rows
}
