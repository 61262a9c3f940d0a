//! Tab-separated storage of datasets.
//!
//! `samples.tsv` holds one raw sample per row, `labels.tsv` one label per
//! task, and `meta.txt` the screen geometry and sampling rate as key-value
//! pairs. Floats are written in shortest round-trip form so that reading back
//! a written dataset reproduces it bit for bit.

use super::{DataError, Dataset, EyeSample, Label, Meta, RawSample, Result, TaskRecord};
use crate::config::KeyValues;
use crate::io_util::atomic_write;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const SAMPLES_HEADER: [&str; 13] = [
    "user_id",
    "task_id",
    "timestamp_ms",
    "left_x",
    "left_y",
    "right_x",
    "right_y",
    "left_pupil",
    "right_pupil",
    "left_dist",
    "right_dist",
    "left_valid",
    "right_valid",
];

pub const LABELS_HEADER: [&str; 3] = ["task_id", "label", "report_time_ms"];

pub const SAMPLES_FILE: &str = "samples.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const META_FILE: &str = "meta.txt";

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a dataset from its two TSV files.
pub fn parse_dataset(samples_path: &Path, labels_path: &Path, meta: Meta) -> Result<Dataset> {
    let samples = read_file(samples_path)?;
    let labels = read_file(labels_path)?;
    parse_dataset_str(&samples, &labels, meta)
}

fn malformed(file: &str, row: usize, reason: impl Into<String>) -> DataError {
    DataError::MalformedRow {
        file: file.to_string(),
        row,
        reason: reason.into(),
    }
}

fn parse_f64(file: &str, row: usize, field: &str, name: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| malformed(file, row, format!("column {name}: `{field}` is not a number")))
}

fn parse_flag(file: &str, row: usize, field: &str, name: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(malformed(
            file,
            row,
            format!("column {name}: `{field}` is not 0 or 1"),
        )),
    }
}

/// Parses dataset text. Row numbers in errors are 1-based file lines.
pub fn parse_dataset_str(samples: &str, labels: &str, meta: Meta) -> Result<Dataset> {
    const SF: &str = SAMPLES_FILE;
    const LF: &str = LABELS_FILE;

    let mut lines = samples.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split('\t').eq(SAMPLES_HEADER.iter().copied()) => {}
        Some(_) => return Err(malformed(SF, 1, "unexpected header")),
        None => return Err(malformed(SF, 1, "empty input")),
    }

    let mut order: Vec<TaskRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != SAMPLES_HEADER.len() {
            return Err(malformed(
                SF,
                row,
                format!("expected {} columns, found {}", SAMPLES_HEADER.len(), f.len()),
            ));
        }
        let num = |k: usize| parse_f64(SF, row, f[k], SAMPLES_HEADER[k]);
        let timestamp_ms = num(2)?;
        if timestamp_ms.is_nan() || timestamp_ms < 0.0 {
            return Err(malformed(SF, row, "timestamp must be a nonnegative number"));
        }
        let left = EyeSample {
            x: num(3)?,
            y: num(4)?,
            pupil: num(7)?,
            dist: num(9)?,
            valid: parse_flag(SF, row, f[11], SAMPLES_HEADER[11])?,
        };
        let right = EyeSample {
            x: num(5)?,
            y: num(6)?,
            pupil: num(8)?,
            dist: num(10)?,
            valid: parse_flag(SF, row, f[12], SAMPLES_HEADER[12])?,
        };
        let sample = RawSample {
            timestamp_ms,
            left,
            right,
        };
        let (user_id, task_id) = (f[0], f[1]);
        let slot = match index.get(task_id) {
            Some(&k) => k,
            None => {
                index.insert(task_id.to_string(), order.len());
                order.push(TaskRecord {
                    user_id: user_id.to_string(),
                    task_id: task_id.to_string(),
                    samples: Vec::new(),
                    label: Label::NotConfused,
                    report_time_ms: None,
                });
                order.len() - 1
            }
        };
        if order[slot].user_id != user_id {
            return Err(malformed(
                SF,
                row,
                format!("task `{task_id}` appears under more than one user"),
            ));
        }
        order[slot].samples.push(sample);
    }
    if order.is_empty() {
        return Err(malformed(SF, 2, "empty input: no sample rows"));
    }

    let mut labelled = vec![false; order.len()];
    let mut lines = labels.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split('\t').eq(LABELS_HEADER.iter().copied()) => {}
        Some(_) => return Err(malformed(LF, 1, "unexpected header")),
        None => return Err(malformed(LF, 1, "empty input")),
    }
    for (i, line) in lines {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 && f.len() != 3 {
            return Err(malformed(
                LF,
                row,
                format!("expected 3 columns, found {}", f.len()),
            ));
        }
        let label: Label = f[1].parse().map_err(|e: String| malformed(LF, row, e))?;
        let report = f.get(2).copied().unwrap_or("");
        let report_time_ms = match (label, report) {
            (Label::NotConfused, "") => None,
            (Label::NotConfused, _) => {
                return Err(malformed(LF, row, "not_confused task with a report time"))
            }
            (Label::Confused, "") => {
                return Err(malformed(LF, row, "confused task without a report time"))
            }
            (Label::Confused, r) => Some(parse_f64(LF, row, r, "report_time_ms")?),
        };
        let Some(&slot) = index.get(f[0]) else {
            return Err(DataError::UnknownTask(f[0].to_string()));
        };
        if labelled[slot] {
            return Err(malformed(LF, row, format!("duplicate label for `{}`", f[0])));
        }
        labelled[slot] = true;
        order[slot].label = label;
        order[slot].report_time_ms = report_time_ms;
    }
    if let Some(k) = labelled.iter().position(|&l| !l) {
        return Err(DataError::UnlabeledTask(order[k].task_id.clone()));
    }

    for task in &mut order {
        // stable: duplicate timestamps keep file order
        task.samples
            .sort_by(|a, b| a.timestamp_ms.total_cmp(&b.timestamp_ms));
    }
    let ds = Dataset { meta, tasks: order };
    ds.validate()?;
    Ok(ds)
}

fn push_f64(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        let _ = write!(out, "{v}");
    }
}

/// Renders the two TSV files as strings `(samples, labels)`.
pub fn render_dataset(ds: &Dataset) -> (String, String) {
    let mut s = SAMPLES_HEADER.join("\t");
    s.push('\n');
    for task in &ds.tasks {
        for smp in &task.samples {
            s.push_str(&task.user_id);
            s.push('\t');
            s.push_str(&task.task_id);
            for v in [
                smp.timestamp_ms,
                smp.left.x,
                smp.left.y,
                smp.right.x,
                smp.right.y,
                smp.left.pupil,
                smp.right.pupil,
                smp.left.dist,
                smp.right.dist,
            ] {
                s.push('\t');
                push_f64(&mut s, v);
            }
            s.push_str(if smp.left.valid { "\t1" } else { "\t0" });
            s.push_str(if smp.right.valid { "\t1" } else { "\t0" });
            s.push('\n');
        }
    }
    let mut l = LABELS_HEADER.join("\t");
    l.push('\n');
    for task in &ds.tasks {
        l.push_str(&task.task_id);
        l.push('\t');
        l.push_str(task.label.as_str());
        l.push('\t');
        if let Some(r) = task.report_time_ms {
            push_f64(&mut l, r);
        }
        l.push('\n');
    }
    (s, l)
}

pub fn write_dataset(ds: &Dataset, samples_path: &Path, labels_path: &Path) -> Result<()> {
    let (s, l) = render_dataset(ds);
    atomic_write(samples_path, s.as_bytes())?;
    atomic_write(labels_path, l.as_bytes())?;
    Ok(())
}

pub fn parse_meta(path: &Path) -> Result<Meta> {
    let text = read_file(path)?;
    meta_from_kv(&KeyValues::parse(&text).map_err(DataError::InvalidConfig)?)
}

pub(crate) fn meta_from_kv(kv: &KeyValues) -> Result<Meta> {
    let mut meta = Meta::default();
    if let Some(w) = kv.get_parsed::<u32>("screen_width").map_err(DataError::InvalidConfig)? {
        meta.screen_width = w;
    }
    if let Some(h) = kv.get_parsed::<u32>("screen_height").map_err(DataError::InvalidConfig)? {
        meta.screen_height = h;
    }
    if let Some(r) = kv.get_parsed::<f64>("sampling_rate_hz").map_err(DataError::InvalidConfig)? {
        meta.sampling_rate_hz = r;
    }
    if meta.screen_width == 0 || meta.screen_height == 0 || !(meta.sampling_rate_hz > 0.0) {
        return Err(DataError::InvalidConfig(
            "screen dimensions and sampling rate must be positive".into(),
        ));
    }
    Ok(meta)
}

pub fn render_meta(meta: &Meta) -> String {
    format!(
        "screen_width={}\nscreen_height={}\nsampling_rate_hz={}\n",
        meta.screen_width, meta.screen_height, meta.sampling_rate_hz
    )
}

pub fn write_meta(meta: &Meta, path: &Path) -> Result<()> {
    atomic_write(path, render_meta(meta).as_bytes())
}

/// Reads `samples.tsv`, `labels.tsv` and `meta.txt` from a directory.
/// A missing `meta.txt` falls back to the default geometry.
pub fn read_dataset_dir(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        parse_meta(&meta_path)?
    } else {
        Meta::default()
    };
    parse_dataset(&dir.join(SAMPLES_FILE), &dir.join(LABELS_FILE), meta)
}

pub fn write_dataset_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_dataset(ds, &dir.join(SAMPLES_FILE), &dir.join(LABELS_FILE))?;
    write_meta(&ds.meta, &dir.join(META_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples_text(rows: &[&str]) -> String {
        let mut s = SAMPLES_HEADER.join("\t");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    fn labels_text(rows: &[&str]) -> String {
        let mut s = LABELS_HEADER.join("\t");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    fn row(user: &str, task: &str, t: f64) -> String {
        format!("{user}\t{task}\t{t}\t10\t20\t11\t21\t3.1\t3.2\t600\t601\t1\t1")
    }

    #[test]
    fn parses_two_tasks_of_three_rows() {
        let rows: Vec<String> = [("u1", "t1"), ("u2", "t2")]
            .iter()
            .flat_map(|(u, t)| (0..3).map(move |k| row(u, t, f64::from(k) * 8.0)))
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let ds = parse_dataset_str(
            &samples_text(&refs),
            &labels_text(&["t1\tconfused\t5000", "t2\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap();
        assert_eq!(ds.tasks.len(), 2);
        assert!(ds.tasks.iter().all(|t| t.samples.len() == 3));
        assert_eq!(ds.tasks[0].label, Label::Confused);
        assert_eq!(ds.tasks[0].report_time_ms, Some(5000.0));
        assert_eq!(ds.tasks[1].report_time_ms, None);
        assert_eq!(ds.tasks[0].samples[1].right.pupil, 3.2);
    }

    #[test]
    fn empty_samples_file_is_malformed() {
        let err = parse_dataset_str("", &labels_text(&[]), Meta::default()).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { row: 1, .. }));
        let err = parse_dataset_str(&samples_text(&[]), &labels_text(&[]), Meta::default())
            .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { .. }));
    }

    #[test]
    fn label_for_absent_task_is_unknown() {
        let r = row("u1", "t1", 0.0);
        let err = parse_dataset_str(
            &samples_text(&[&r]),
            &labels_text(&["t1\tnot_confused\t", "t99\tconfused\t5000"]),
            Meta::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::UnknownTask(id) if id == "t99"));
    }

    #[test]
    fn task_without_label_is_unlabeled() {
        let a = row("u1", "t1", 0.0);
        let b = row("u1", "t2", 0.0);
        let err = parse_dataset_str(
            &samples_text(&[&a, &b]),
            &labels_text(&["t1\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::UnlabeledTask(id) if id == "t2"));
    }

    #[test]
    fn bad_column_count_reports_row() {
        let a = row("u1", "t1", 0.0);
        let err = parse_dataset_str(
            &samples_text(&[&a, "u1\tt1\t5"]),
            &labels_text(&["t1\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { row: 3, .. }), "{err}");
    }

    #[test]
    fn bad_number_reports_row() {
        let bad = "u1\tt1\tabc\t10\t20\t11\t21\t3.1\t3.2\t600\t601\t1\t1";
        let err = parse_dataset_str(
            &samples_text(&[bad]),
            &labels_text(&["t1\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { row: 2, .. }));
    }

    #[test]
    fn samples_are_time_sorted_with_stable_duplicates() {
        let rows = [
            "u1\tt1\t16\t1\t1\t1\t1\t3\t3\t600\t600\t1\t1",
            "u1\tt1\t8\t2\t2\t2\t2\t3\t3\t600\t600\t1\t1",
            "u1\tt1\t8\t3\t3\t3\t3\t3\t3\t600\t600\t1\t0",
        ];
        let ds = parse_dataset_str(
            &samples_text(&rows),
            &labels_text(&["t1\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap();
        let xs: Vec<f64> = ds.tasks[0].samples.iter().map(|s| s.left.x).collect();
        assert_eq!(xs, vec![2.0, 3.0, 1.0]);
        assert!(!ds.tasks[0].samples[1].right.valid);
    }

    #[test]
    fn nan_measurements_round_trip() {
        let rows = ["u1\tt1\t0\tnan\tnan\t5\t6\tnan\t3\tnan\t600\t0\t1"];
        let ds = parse_dataset_str(
            &samples_text(&rows),
            &labels_text(&["t1\tnot_confused\t"]),
            Meta::default(),
        )
        .unwrap();
        let (s, l) = render_dataset(&ds);
        assert_eq!(s, samples_text(&rows));
        let again = parse_dataset_str(&s, &l, Meta::default()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn meta_round_trip() {
        let meta = Meta {
            screen_width: 320,
            screen_height: 240,
            sampling_rate_hz: 60.0,
        };
        let kv = KeyValues::parse(&render_meta(&meta)).unwrap();
        assert_eq!(meta_from_kv(&kv).unwrap(), meta);
    }
}
