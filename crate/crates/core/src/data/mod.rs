//! Raw eye-tracking task segments.
//!
//! A [`Dataset`] is a list of [`TaskRecord`]s, each holding the ordered raw
//! samples recorded while one user worked on one task, plus the confusion
//! label for that segment. Segments labelled confused end at the moment the
//! user reported confusion; [`trim_pre_report`] removes the tail that would
//! otherwise carry the intention to press the report button.

mod synth;
mod tsv;

pub use synth::{synth_generate, SignalMode, SynthConfig};
pub use tsv::{parse_dataset, parse_meta, read_dataset_dir, write_dataset, write_dataset_dir, write_meta};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Default amount of data removed before a confusion report.
pub const DEFAULT_TRIM_MS: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed row {row} in {file}: {reason}")]
    MalformedRow {
        file: String,
        row: usize,
        reason: String,
    },
    #[error("label references unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` has no label row")]
    UnlabeledTask(String),
    #[error("task `{0}` has no samples left after trimming")]
    EmptyAfterTrim(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotConfused,
    Confused,
}

impl Label {
    /// Class index used by the classifiers: confused is the positive class.
    pub fn class_index(self) -> usize {
        match self {
            Label::NotConfused => 0,
            Label::Confused => 1,
        }
    }

    pub fn is_confused(self) -> bool {
        self == Label::Confused
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotConfused => "not_confused",
            Label::Confused => "confused",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "confused" => Ok(Label::Confused),
            "not_confused" => Ok(Label::NotConfused),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Measurements of one eye in a single raw sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EyeSample {
    pub x: f64,
    pub y: f64,
    /// Pupil diameter in millimetres.
    pub pupil: f64,
    /// Eye to screen distance in millimetres.
    pub dist: f64,
    pub valid: bool,
}

impl EyeSample {
    pub fn invalid() -> Self {
        EyeSample {
            x: f64::NAN,
            y: f64::NAN,
            pupil: f64::NAN,
            dist: f64::NAN,
            valid: false,
        }
    }
}

// Bitwise float comparison so that `nan` measurements of invalid eyes compare
// equal after a round-trip through the text format.
impl PartialEq for EyeSample {
    fn eq(&self, other: &Self) -> bool {
        self.valid == other.valid
            && self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.pupil.to_bits() == other.pupil.to_bits()
            && self.dist.to_bits() == other.dist.to_bits()
    }
}

/// One eye-tracker reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub timestamp_ms: f64,
    pub left: EyeSample,
    pub right: EyeSample,
}

impl RawSample {
    /// Gaze point as the mean of the valid eyes, `None` when both are invalid.
    pub fn gaze_point(&self) -> Option<(f64, f64)> {
        match (self.left.valid, self.right.valid) {
            (true, true) => Some((
                (self.left.x + self.right.x) / 2.0,
                (self.left.y + self.right.y) / 2.0,
            )),
            (true, false) => Some((self.left.x, self.left.y)),
            (false, true) => Some((self.right.x, self.right.y)),
            (false, false) => None,
        }
    }

    pub fn any_valid(&self) -> bool {
        self.left.valid || self.right.valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub user_id: String,
    pub task_id: String,
    pub samples: Vec<RawSample>,
    pub label: Label,
    /// Present exactly when the task is labelled confused.
    pub report_time_ms: Option<f64>,
}

impl TaskRecord {
    pub fn duration_ms(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp_ms - a.timestamp_ms,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(DataError::InvalidDataset(format!(
                "task `{}` has no samples",
                self.task_id
            )));
        }
        if self.label.is_confused() != self.report_time_ms.is_some() {
            return Err(DataError::InvalidDataset(format!(
                "task `{}`: report time must be present iff label is confused",
                self.task_id
            )));
        }
        let sorted = self
            .samples
            .windows(2)
            .all(|w| w[0].timestamp_ms <= w[1].timestamp_ms);
        if !sorted || self.samples[0].timestamp_ms < 0.0 {
            return Err(DataError::InvalidDataset(format!(
                "task `{}`: timestamps must be nonnegative and nondecreasing",
                self.task_id
            )));
        }
        Ok(())
    }
}

/// Screen geometry and nominal sampling rate of the recording device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub screen_width: u32,
    pub screen_height: u32,
    pub sampling_rate_hz: f64,
}

impl Default for Meta {
    fn default() -> Self {
        Meta {
            screen_width: 1280,
            screen_height: 1024,
            sampling_rate_hz: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: Meta,
    pub tasks: Vec<TaskRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for task in &self.tasks {
            if !seen.insert(task.task_id.as_str()) {
                return Err(DataError::InvalidDataset(format!(
                    "duplicate task id `{}`",
                    task.task_id
                )));
            }
            task.validate()?;
        }
        Ok(())
    }

    /// Distinct user ids in order of first appearance.
    pub fn users(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.tasks
            .iter()
            .filter(|t| seen.insert(t.user_id.as_str()))
            .map(|t| t.user_id.clone())
            .collect()
    }

    pub fn confused_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.label.is_confused()).count()
    }
}

/// Removes the last `trim_ms` of data before a confusion report.
///
/// Keeps exactly the samples with `timestamp_ms <= report_time_ms - trim_ms`.
/// Tasks without a report are returned unchanged.
pub fn trim_pre_report(task: &TaskRecord, trim_ms: f64) -> Result<TaskRecord> {
    let Some(report) = task.report_time_ms else {
        return Ok(task.clone());
    };
    let cutoff = report - trim_ms;
    let samples: Vec<RawSample> = task
        .samples
        .iter()
        .filter(|s| s.timestamp_ms <= cutoff)
        .copied()
        .collect();
    if samples.is_empty() {
        return Err(DataError::EmptyAfterTrim(task.task_id.clone()));
    }
    Ok(TaskRecord {
        samples,
        ..task.clone()
    })
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn sample(t: f64, x: f64, y: f64) -> RawSample {
        let eye = EyeSample {
            x,
            y,
            pupil: 3.0,
            dist: 600.0,
            valid: true,
        };
        RawSample {
            timestamp_ms: t,
            left: eye,
            right: eye,
        }
    }

    pub fn task(id: &str, user: &str, times: &[f64], report: Option<f64>) -> TaskRecord {
        TaskRecord {
            user_id: user.into(),
            task_id: id.into(),
            samples: times.iter().map(|&t| sample(t, 100.0, 100.0)).collect(),
            label: if report.is_some() {
                Label::Confused
            } else {
                Label::NotConfused
            },
            report_time_ms: report,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn trim_keeps_samples_up_to_report_minus_one_second() {
        let times: Vec<f64> = (0..10000).map(f64::from).collect();
        let t = task("t1", "u1", &times, Some(10000.0));
        let trimmed = trim_pre_report(&t, DEFAULT_TRIM_MS).unwrap();
        assert_eq!(trimmed.samples.len(), 9001);
        assert_eq!(trimmed.samples.last().unwrap().timestamp_ms, 9000.0);
        assert_eq!(trimmed.label, Label::Confused);
        assert_eq!(trimmed.task_id, "t1");
    }

    #[test]
    fn trim_passes_not_confused_through() {
        let t = task("t1", "u1", &[0.0, 5.0, 9.0], None);
        assert_eq!(trim_pre_report(&t, DEFAULT_TRIM_MS).unwrap(), t);
    }

    #[test]
    fn trim_reports_empty_result() {
        let t = task("t1", "u1", &[0.0, 100.0, 400.0], Some(500.0));
        assert!(matches!(
            trim_pre_report(&t, DEFAULT_TRIM_MS),
            Err(DataError::EmptyAfterTrim(id)) if id == "t1"
        ));
    }

    #[test]
    fn gaze_point_averages_valid_eyes() {
        let mut s = sample(0.0, 10.0, 20.0);
        s.right.x = 30.0;
        assert_eq!(s.gaze_point(), Some((20.0, 20.0)));
        s.left.valid = false;
        assert_eq!(s.gaze_point(), Some((30.0, 20.0)));
        s.right.valid = false;
        assert_eq!(s.gaze_point(), None);
    }

    #[test]
    fn validate_rejects_duplicate_ids_and_label_mismatch() {
        let a = task("t1", "u1", &[0.0], None);
        let ds = Dataset {
            meta: Meta::default(),
            tasks: vec![a.clone(), a.clone()],
        };
        assert!(ds.validate().is_err());

        let mut b = a;
        b.label = Label::Confused;
        assert!(b.validate().is_err());
    }
}
