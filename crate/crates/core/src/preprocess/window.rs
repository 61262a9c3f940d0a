use crate::data::TaskRecord;

/// Keeps the samples within `window_s` seconds of the last one.
///
/// A sample is kept when `timestamp_ms > last - window_s * 1000`, so the kept
/// span is strictly shorter than the window. Shorter tasks come back whole.
pub fn extract_window(task: &TaskRecord, window_s: f64) -> TaskRecord {
    let Some(last) = task.samples.last() else {
        return task.clone();
    };
    let cutoff = last.timestamp_ms - window_s * 1000.0;
    // timestamps are sorted, so the kept samples form a suffix
    let start = task.samples.partition_point(|s| s.timestamp_ms <= cutoff);
    TaskRecord {
        samples: task.samples[start..].to_vec(),
        ..task.clone()
    }
}

/// Deals `items` into `k` interleaved lists like a deck of cards: list `j`
/// receives the elements at indices `j, j + k, j + 2k, ...` in order.
///
/// # Panics
/// When `k == 0`.
pub fn cyclic_split<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    assert!(k >= 1, "cyclic_split needs k >= 1");
    (0..k)
        .map(|j| items.iter().skip(j).step_by(k).cloned().collect())
        .collect()
}

/// Inverse of [`cyclic_split`].
pub fn interleave<T: Clone>(parts: &[Vec<T>]) -> Vec<T> {
    let total: usize = parts.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut i = 0;
    while out.len() < total {
        for p in parts {
            if let Some(v) = p.get(i) {
                out.push(v.clone());
            }
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_util::task;
    use proptest::prelude::*;

    #[test]
    fn deals_like_cards() {
        let s: Vec<u32> = (0..8).collect();
        assert_eq!(
            cyclic_split(&s, 4),
            vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]
        );
        let lens: Vec<usize> = cyclic_split(&(0..7).collect::<Vec<_>>(), 4)
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(lens, vec![2, 2, 2, 1]);
        let lens: Vec<usize> = cyclic_split(&vec![0u8; 600], 4).iter().map(Vec::len).collect();
        assert_eq!(lens, vec![150; 4]);
    }

    #[test]
    fn window_of_a_long_task() {
        // 1644 samples over 13.7 s at 120 Hz
        let times: Vec<f64> = (0..1644).map(|k| k as f64 * 1000.0 / 120.0).collect();
        let t = task("t", "u", &times, None);
        let w = extract_window(&t, 5.0);
        assert_eq!(w.samples.len(), 600);
        assert!(w.duration_ms() < 5000.0);
    }

    #[test]
    fn short_and_single_tasks_kept_whole() {
        let times: Vec<f64> = (0..300).map(|k| k as f64 * 2500.0 / 300.0).collect();
        let t = task("t", "u", &times, None);
        assert_eq!(extract_window(&t, 5.0).samples.len(), 300);
        let one = task("t", "u", &[42.0], None);
        assert_eq!(extract_window(&one, 5.0), one);
    }

    proptest! {
        #[test]
        fn split_then_interleave_is_identity(v in proptest::collection::vec(any::<i32>(), 0..200), k in 1usize..=8) {
            let parts = cyclic_split(&v, k);
            prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), v.len());
            prop_assert_eq!(interleave(&parts), v.clone());
            // each part is an order-preserving subsequence
            for (j, p) in parts.iter().enumerate() {
                for (i, x) in p.iter().enumerate() {
                    prop_assert_eq!(*x, v[j + i * k]);
                }
            }
        }

        #[test]
        fn window_keeps_a_recent_suffix(gaps in proptest::collection::vec(0.0f64..50.0, 1..400), window in 0.1f64..3.0) {
            let mut t = 0.0;
            let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
            let task = task("t", "u", &times, None);
            let w = extract_window(&task, window);
            prop_assert!(!w.samples.is_empty());
            prop_assert!(w.duration_ms() <= window * 1000.0);
            let kept = w.samples.len();
            let dropped = &task.samples[..task.samples.len() - kept];
            let first_kept = w.samples[0].timestamp_ms;
            prop_assert!(dropped.iter().all(|s| s.timestamp_ms < first_kept));
        }
    }
}
