//! Turning task records into paired sequence/image training items.

use super::features::{feature_rows, FeatureSequence, FEATURE_NAMES};
use super::raster::{rasterize_scanpath, ScanPathImage};
use super::window::{cyclic_split, extract_window};
use super::{PreprocessConfig, PreprocessError, Result};
use crate::data::{trim_pre_report, Dataset, Label, TaskRecord};
use crate::io_util::atomic_write;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

/// One training unit: a split subsequence paired with the scan path of the
/// whole trial it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub sequence: FeatureSequence,
    /// Shared by all split items of a task.
    pub image: Arc<ScanPathImage>,
    pub label: Label,
    pub parent_task_id: Arc<str>,
    pub user_id: Arc<str>,
    pub split_index: usize,
    /// True for SMOTE output.
    pub synthetic: bool,
}

impl DataItem {
    pub fn id(&self) -> String {
        if self.synthetic {
            format!("{}_{}_smote", self.parent_task_id, self.split_index)
        } else {
            format!("{}_{}", self.parent_task_id, self.split_index)
        }
    }
}

/// Why a task produced no items.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedTask {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuiltItems {
    pub items: Vec<DataItem>,
    pub dropped: Vec<DroppedTask>,
}

/// Items of a single task, in split order.
pub fn task_items(task: &TaskRecord, dataset: &Dataset, cfg: &PreprocessConfig) -> Result<Vec<DataItem>> {
    if task.samples.is_empty() {
        return Err(PreprocessError::InvalidConfig(format!(
            "task `{}` has no samples",
            task.task_id
        )));
    }
    let trimmed = trim_pre_report(task, cfg.trim_ms)?;
    let image = Arc::new(rasterize_scanpath(&trimmed, &dataset.meta, &cfg.raster)?);
    let window = extract_window(&trimmed, cfg.window_s);
    let rows = feature_rows(&window.samples);
    let task_id: Arc<str> = Arc::from(task.task_id.as_str());
    let user_id: Arc<str> = Arc::from(task.user_id.as_str());
    Ok(cyclic_split(&rows, cfg.n_splits)
        .into_iter()
        .enumerate()
        .map(|(j, part)| DataItem {
            sequence: FeatureSequence::from_rows(&part, cfg.seq_len),
            image: Arc::clone(&image),
            label: task.label,
            parent_task_id: Arc::clone(&task_id),
            user_id: Arc::clone(&user_id),
            split_index: j,
            synthetic: false,
        })
        .collect())
}

/// Trims, rasterizes the full trial, windows, splits and pads every task.
///
/// Tasks that end up empty after trimming or have no valid gaze are dropped
/// with a warning and listed in [`BuiltItems::dropped`]. Items come out in
/// dataset order, split index ascending within a task.
pub fn build_items(dataset: &Dataset, cfg: &PreprocessConfig) -> Result<BuiltItems> {
    cfg.validate()?;
    let mut out = BuiltItems::default();
    for task in &dataset.tasks {
        match task_items(task, dataset, cfg) {
            Ok(items) => out.items.extend(items),
            Err(e @ (PreprocessError::Data(_) | PreprocessError::NoValidGaze(_))) => {
                log::warn!("dropping task {}: {e}", task.task_id);
                out.dropped.push(DroppedTask {
                    task_id: task.task_id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if !out.dropped.is_empty() {
        log::warn!("{} task(s) dropped during preprocessing", out.dropped.len());
    }
    Ok(out)
}

/// Writes `index.tsv`, one `items/<task>_<split>.tsv` per item and one
/// `images/<task>.pgm` per task.
pub fn write_items_dir(items: &[DataItem], dir: &Path) -> Result<()> {
    let io = |e: crate::data::DataError| PreprocessError::Data(e);
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|source| {
            PreprocessError::Data(crate::data::DataError::Io {
                path: p.display().to_string(),
                source,
            })
        })
    };
    mkdir(&dir.join("items"))?;
    mkdir(&dir.join("images"))?;

    let mut index = String::from("item\ttask_id\tsplit_index\tlabel\tuser_id\tsynthetic\n");
    let mut last_image: Option<&Arc<ScanPathImage>> = None;
    for item in items {
        let id = item.id();
        let _ = writeln!(
            index,
            "{id}\t{}\t{}\t{}\t{}\t{}",
            item.parent_task_id,
            item.split_index,
            item.label,
            item.user_id,
            u8::from(item.synthetic)
        );
        let mut seq = String::from("mask");
        for name in FEATURE_NAMES {
            seq.push('\t');
            seq.push_str(name);
        }
        seq.push('\n');
        for t in 0..item.sequence.len() {
            seq.push(if item.sequence.mask[t] { '1' } else { '0' });
            for v in item.sequence.row(t) {
                let _ = write!(seq, "\t{v}");
            }
            seq.push('\n');
        }
        atomic_write(&dir.join("items").join(format!("{id}.tsv")), seq.as_bytes()).map_err(io)?;
        if !last_image.is_some_and(|l| Arc::ptr_eq(l, &item.image)) {
            let path = dir.join("images").join(format!("{}.pgm", item.parent_task_id));
            atomic_write(&path, &item.image.to_pgm()).map_err(io)?;
            last_image = Some(&item.image);
        }
    }
    atomic_write(&dir.join("index.tsv"), index.as_bytes()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_util::task;
    use crate::data::Meta;

    fn ds(tasks: Vec<TaskRecord>) -> Dataset {
        Dataset { meta: Meta::default(), tasks }
    }

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 1000.0 / 120.0).collect()
    }

    #[test]
    fn six_hundred_samples_give_four_full_items() {
        let d = ds(vec![task("t1", "u1", &times(600), None)]);
        let built = build_items(&d, &PreprocessConfig::default()).unwrap();
        assert_eq!(built.items.len(), 4);
        for (j, it) in built.items.iter().enumerate() {
            assert_eq!(it.split_index, j);
            assert_eq!(it.sequence.len(), 150);
            assert_eq!(it.sequence.length_valid(), 150);
            assert!(Arc::ptr_eq(&it.image, &built.items[0].image));
            assert!(!it.synthetic);
        }
    }

    #[test]
    fn short_task_is_prefix_padded() {
        let d = ds(vec![task("t1", "u1", &times(100), None)]);
        let built = build_items(&d, &PreprocessConfig::default()).unwrap();
        for it in &built.items {
            assert_eq!(it.sequence.length_valid(), 25);
            assert_eq!(it.sequence.first_valid(), 125);
            assert!(it.sequence.values[..125 * 8].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn confused_tasks_are_trimmed_and_empty_ones_dropped() {
        let d = ds(vec![
            task("t1", "u1", &times(2400), Some(20000.0)),
            task("t2", "u1", &[0.0, 100.0], Some(500.0)),
        ]);
        let built = build_items(&d, &PreprocessConfig::default()).unwrap();
        assert_eq!(built.items.len(), 4);
        assert_eq!(built.dropped.len(), 1);
        assert_eq!(built.dropped[0].task_id, "t2");
        assert!(built.items.iter().all(|it| it.label == Label::Confused));
    }

    #[test]
    fn writes_directory_layout() {
        let d = ds(vec![task("t1", "u1", &times(40), None)]);
        let built = build_items(&d, &PreprocessConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_items_dir(&built.items, dir.path()).unwrap();
        let index = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
        assert_eq!(index.lines().count(), 5);
        assert!(dir.path().join("items/t1_3.tsv").exists());
        let pgm = std::fs::read(dir.path().join("images/t1.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n214 171\n255\n"));
        let seq = std::fs::read_to_string(dir.path().join("items/t1_0.tsv")).unwrap();
        assert_eq!(seq.lines().count(), 151);
    }
}
