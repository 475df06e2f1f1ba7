//! Reader and writer for the UCI HAR published layout.
//!
//! A dataset root holds `train/` and `test/`, each with `X_<split>.txt` (one whitespace-delimited
//! feature row per line), `y_<split>.txt` (activity 1..6 per line) and `subject_<split>.txt`
//! (subject id per line). Activities are mapped to zero-based states.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SegmentedSeries;

/// Feature count of the published dataset.
pub const HAR_FEATURES: usize = 561;

/// Activity names in label order (label 1 is index 0).
pub const HAR_ACTIVITIES: [&str; 6] = [
    "WALKING",
    "WALKING_UPSTAIRS",
    "WALKING_DOWNSTAIRS",
    "SITTING",
    "STANDING",
    "LAYING",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// How rows of one subject are turned into series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SessionGrouping {
    /// All rows of a subject, in file order, form one series.
    #[default]
    Subject,
    /// Each maximal run of consecutive rows of one subject is its own series.
    Contiguous,
}

/// Both published splits.
#[derive(Debug, Clone)]
pub struct HarData {
    pub train: Vec<SegmentedSeries>,
    pub test: Vec<SegmentedSeries>,
}

fn split_files(root: &Path, split: Split) -> [PathBuf; 3] {
    let dir = root.join(split.name());
    let s = split.name();
    [
        dir.join(format!("X_{s}.txt")),
        dir.join(format!("y_{s}.txt")),
        dir.join(format!("subject_{s}.txt")),
    ]
}

/// Accepts either the dataset root or a directory containing `UCI HAR Dataset/`.
fn resolve_root(dir: &Path) -> PathBuf {
    let nested = dir.join("UCI HAR Dataset");
    if !dir.join("train").is_dir() && nested.join("train").is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))
}

fn parse_int_column(text: &str, what: &str) -> Result<Vec<i64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<i64>()
                .map_err(|_| Error::Format(format!("{what} line {}: not an integer: {:?}", i + 1, l.trim())))
        })
        .collect()
}

/// Parses the three files of one split from their contents.
pub fn parse_har(
    features: &str,
    labels: &str,
    subjects: &str,
    grouping: SessionGrouping,
) -> Result<Vec<SegmentedSeries>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in features.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Format(format!("feature line {}: bad value {v:?}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "feature line {}: {} values, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let labels = parse_int_column(labels, "label")?;
    let subjects = parse_int_column(subjects, "subject")?;
    if rows.len() != labels.len() || rows.len() != subjects.len() {
        return Err(Error::Format(format!(
            "row count mismatch: {} feature rows, {} labels, {} subject ids",
            rows.len(),
            labels.len(),
            subjects.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Format("split contains no rows".into()));
    }
    let states = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (1..=6).contains(&l) {
                Ok((l - 1) as usize)
            } else {
                Err(Error::Format(format!(
                    "label line {}: activity {l} outside 1..6",
                    i + 1
                )))
            }
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut runs: Vec<(i64, Vec<usize>)> = Vec::new();
    for (t, &s) in subjects.iter().enumerate() {
        let existing = match grouping {
            SessionGrouping::Subject => runs.iter().position(|(id, _)| *id == s),
            SessionGrouping::Contiguous => runs.last().filter(|(id, _)| *id == s).map(|_| runs.len() - 1),
        };
        match existing {
            Some(k) => runs[k].1.push(t),
            None => runs.push((s, vec![t])),
        }
    }
    let p = rows[0].len();
    let mut run_counter = std::collections::HashMap::new();
    runs.into_iter()
        .map(|(subject, idx)| {
            let obs = DMatrix::from_fn(idx.len(), p, |r, c| rows[idx[r]][c]);
            let lab = idx.iter().map(|&t| states[t]).collect();
            let id = match grouping {
                SessionGrouping::Subject => subject.to_string(),
                SessionGrouping::Contiguous => {
                    let k = run_counter.entry(subject).or_insert(0);
                    *k += 1;
                    format!("{subject}-{k}")
                }
            };
            SegmentedSeries::new(obs, Some(lab), id)
        })
        .collect()
}

/// Loads one split from a dataset root.
pub fn load_har_split(dir: &Path, split: Split, grouping: SessionGrouping) -> Result<Vec<SegmentedSeries>> {
    let [x, y, s] = split_files(&resolve_root(dir), split);
    parse_har(&read(&x)?, &read(&y)?, &read(&s)?, grouping)
}

/// Loads both splits from a dataset root.
pub fn load_har(dir: &Path, grouping: SessionGrouping) -> Result<HarData> {
    Ok(HarData {
        train: load_har_split(dir, Split::Train, grouping)?,
        test: load_har_split(dir, Split::Test, grouping)?,
    })
}

/// Writes labeled series in the published layout. Series ids that parse as integers are used as
/// subject ids; others are numbered from 1 in order.
pub fn write_har_split(dir: &Path, split: Split, series: &[SegmentedSeries]) -> Result<()> {
    let [x, y, s] = split_files(dir, split);
    fs::create_dir_all(dir.join(split.name()))?;
    let (mut xs, mut ys, mut ss) = (String::new(), String::new(), String::new());
    for (k, ser) in series.iter().enumerate() {
        let labels = ser
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("HAR layout needs labeled series".into()))?;
        if let Some(&l) = labels.iter().find(|&&l| l >= 6) {
            return Err(Error::InvalidInput(format!("state {l} has no HAR activity label")));
        }
        let id: u64 = ser.subject_id.parse().unwrap_or(k as u64 + 1);
        for t in 0..ser.len() {
            let row: Vec<String> = ser.observations.row(t).iter().map(|v| format!("{v:.8e}")).collect();
            xs.push_str(&row.join(" "));
            xs.push('\n');
            let _ = writeln!(ys, "{}", labels[t] + 1);
            let _ = writeln!(ss, "{id}");
        }
    }
    fs::write(x, xs)?;
    fs::write(y, ys)?;
    fs::write(s, ss)?;
    Ok(())
}
