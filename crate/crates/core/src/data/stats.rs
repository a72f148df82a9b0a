use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Head, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Per-class label counts for each head. Absent labels are not counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    counts: Vec<Vec<usize>>,
}

impl Default for SplitStats {
    fn default() -> Self {
        Self {
            counts: Head::ALL.iter().map(|h| vec![0; h.num_classes()]).collect(),
        }
    }
}

impl SplitStats {
    pub fn from_counts(per_head: [&[usize]; 5]) -> Result<Self> {
        let mut stats = Self::default();
        for (head, counts) in Head::ALL.iter().zip(per_head) {
            if counts.len() != head.num_classes() {
                return Err(Error::config(format!(
                    "{head}: {} counts for {} classes",
                    counts.len(),
                    head.num_classes()
                )));
            }
            stats.counts[head.index()] = counts.to_vec();
        }
        Ok(stats)
    }

    pub fn counts(&self, head: Head) -> &[usize] {
        &self.counts[head.index()]
    }

    pub fn total(&self, head: Head) -> usize {
        self.counts(head).iter().sum()
    }

    fn add(&mut self, labels: &LabelSet) {
        for head in Head::ALL {
            if let Some(v) = labels.get(head) {
                if let Some(c) = self.counts[head.index()].get_mut(usize::from(v)) {
                    *c += 1;
                }
            }
        }
    }

    /// Cells where `self` and `other` differ, as `(head, class, self, other)`.
    pub fn differences(&self, other: &SplitStats) -> Vec<(Head, usize, usize, usize)> {
        let mut diffs = Vec::new();
        for head in Head::ALL {
            for (c, (a, b)) in self.counts(head).iter().zip(other.counts(head)).enumerate() {
                if a != b {
                    diffs.push((head, c, *a, *b));
                }
            }
        }
        diffs
    }
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for head in Head::ALL {
            let cells: Vec<String> = self.counts(head).iter().map(|c| c.to_string()).collect();
            writeln!(f, "{:<11} {}", head.name(), cells.join(" "))?;
        }
        Ok(())
    }
}

pub fn compute_stats<'a>(labels: impl IntoIterator<Item = &'a LabelSet>) -> SplitStats {
    let mut stats = SplitStats::default();
    for l in labels {
        stats.add(l);
    }
    stats
}

type Columns = [&'static [usize]; 5];

/// Published label distribution of the MEMOTION 2.0 splits.
pub fn table1(split: Split) -> SplitStats {
    let columns: Columns = match split {
        Split::Train => [
            &[973, 4510, 1517],
            &[918, 3666, 1865, 551],
            &[3871, 1759, 1069, 301],
            &[5182, 1107, 529, 182],
            &[6714, 286],
        ],
        Split::Validation => [
            &[200, 975, 325],
            &[229, 745, 419, 107],
            &[804, 388, 246, 62],
            &[1110, 238, 107, 45],
            &[1430, 70],
        ],
        Split::Test => [
            &[451, 971, 78],
            &[62, 892, 398, 148],
            &[185, 248, 892, 175],
            &[943, 457, 87, 13],
            &[1480, 20],
        ],
    };
    SplitStats::from_counts(columns).expect("table shape matches schema")
}
