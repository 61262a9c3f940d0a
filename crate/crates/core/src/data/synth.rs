//! Seeded synthetic eye-tracking datasets with a plantable class signal.
//!
//! Every task is a smooth walk between a handful of task-specific targets in
//! the main screen area: fixations with small jitter joined by short linear
//! saccades, pupil and head distance drifting around per-user baselines, and
//! occasional blinks. Task lengths are lognormal and the recorded segment
//! ends at a uniform point of its task, whatever the label. Confused tasks
//! run one extra second past the visible segment in which the gaze travels
//! to the report button; that second is what the pre-report trim removes.
//!
//! Two cues can be planted in confused tasks:
//!
//! * temporal: in the last 2 s of the visible segment the pupils dilate
//!   along a ramp and (except in [`SignalMode::Split`]) the gaze flicks
//!   rapidly between the two most recent targets. Only the ordering of the
//!   samples places it at the end of the sequence.
//! * spatial: repeated excursions to a corner region the walk never enters.
//!   In [`SignalMode::Split`] the excursions happen before the final 5 s so
//!   that only the full-trial scan path contains them.
//!
//! Values are quantized before they are stored, which keeps the emitted text
//! stable for a given seed.

use super::{DataError, Dataset, EyeSample, Label, Meta, RawSample, Result, TaskRecord, DEFAULT_TRIM_MS};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    TemporalOnly,
    SpatialOnly,
    Both,
    /// Half of the confused tasks carry only the temporal cue, the other half
    /// only the spatial cue, each hidden from the other branch's input.
    Split,
    None,
}

impl FromStr for SignalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "temporal_only" | "temporal" => SignalMode::TemporalOnly,
            "spatial_only" | "spatial" => SignalMode::SpatialOnly,
            "both" => SignalMode::Both,
            "split" => SignalMode::Split,
            "none" => SignalMode::None,
            other => return Err(format!("unknown signal mode `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub tasks_per_user: usize,
    pub confused_fraction: f64,
    pub signal_mode: SignalMode,
    pub signal_strength: f64,
    /// Mean and sd of the lognormal task length.
    pub mean_duration_s: f64,
    pub sd_duration_s: f64,
    /// Lower bound on task and segment length. A segment ends at a uniform
    /// point between this bound and the end of its task.
    pub min_duration_s: f64,
    pub meta: Meta,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 136,
            tasks_per_user: 40,
            confused_fraction: 112.0 / 5440.0,
            signal_mode: SignalMode::Both,
            signal_strength: 1.0,
            mean_duration_s: 13.7,
            sd_duration_s: 11.3,
            min_duration_s: 1.0,
            meta: Meta::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_users == 0 || self.tasks_per_user == 0 {
            return bad("n_users and tasks_per_user must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.confused_fraction) {
            return bad("confused_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad("signal_strength must lie in [0, 1]");
        }
        if !(self.mean_duration_s > 0.0) || !(self.sd_duration_s >= 0.0) || !(self.min_duration_s > 0.0) {
            return bad("durations must be positive");
        }
        if self.meta.screen_width < 16 || self.meta.screen_height < 16 || !(self.meta.sampling_rate_hz > 0.0) {
            return bad("screen must be at least 16x16 and the sampling rate positive");
        }
        Ok(())
    }
}

const TEMPORAL_WINDOW_MS: f64 = 2000.0;
const SEQUENCE_WINDOW_MS: f64 = 5000.0;
const MAX_PUPIL_DILATION_MM: f64 = 0.9;
const MAX_CORNER_VISITS: f64 = 6.0;

fn quantize(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

struct UserTraits {
    pupil_left: f64,
    pupil_right: f64,
    dist: f64,
    eye_offset: f64,
    fixation_ms: f64,
}

#[derive(Clone, Copy)]
struct Fixation {
    start: f64,
    x: f64,
    y: f64,
    from_x: f64,
    from_y: f64,
    saccade_start: f64,
}

#[derive(Clone, Copy, Default)]
struct Cues {
    pupil_ramp: bool,
    revisit_burst: bool,
    corner_visits: bool,
    corner_before_window: bool,
}

/// Generates a dataset. Deterministic for a fixed config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_tasks = cfg.n_users * cfg.tasks_per_user;
    let n_confused = ((cfg.confused_fraction * n_tasks as f64).round() as usize).min(n_tasks);
    let mut confused = vec![false; n_tasks];
    let mut picked: Vec<usize> = sample_indices(&mut rng, n_tasks, n_confused).into_vec();
    picked.sort_unstable();
    for &k in &picked {
        confused[k] = true;
    }
    // rank among confused tasks, used to alternate cues in split mode
    let mut confused_rank = vec![0usize; n_tasks];
    for (rank, &k) in picked.iter().enumerate() {
        confused_rank[k] = rank;
    }

    let duration = {
        let m = cfg.mean_duration_s;
        let s = cfg.sd_duration_s.max(1e-9);
        let sigma2 = (1.0 + (s * s) / (m * m)).ln();
        LogNormal::new(m.ln() - sigma2 / 2.0, sigma2.sqrt())
            .map_err(|e| DataError::InvalidConfig(e.to_string()))?
    };

    let mut tasks = Vec::with_capacity(n_tasks);
    for u in 0..cfg.n_users {
        let traits = UserTraits {
            pupil_left: (3.4 + 0.35 * std_normal(&mut rng)).clamp(2.0, 6.0),
            pupil_right: 0.0,
            dist: 620.0 + 40.0 * std_normal(&mut rng),
            eye_offset: 0.004 * cfg.meta.screen_width as f64 * std_normal(&mut rng),
            fixation_ms: rng.random_range(180.0..320.0),
        };
        let traits = UserTraits {
            pupil_right: (traits.pupil_left + 0.05 * std_normal(&mut rng)).clamp(2.0, 6.0),
            ..traits
        };
        for k in 0..cfg.tasks_per_user {
            let idx = u * cfg.tasks_per_user + k;
            // the segment ends at a uniform point of the task, for both classes
            let min_ms = cfg.min_duration_s * 1000.0;
            let task_ms = (duration.sample(&mut rng) * 1000.0).max(min_ms);
            let visible_ms = rng.random_range(min_ms..=task_ms).round();
            let cues = if confused[idx] {
                cues_for(cfg.signal_mode, confused_rank[idx])
            } else {
                Cues::default()
            };
            let record = generate_task(
                &mut rng,
                cfg,
                &traits,
                format!("u{u:03}"),
                format!("u{u:03}_t{k:03}"),
                visible_ms,
                confused[idx],
                cues,
            );
            tasks.push(record);
        }
    }
    Ok(Dataset {
        meta: cfg.meta,
        tasks,
    })
}

fn cues_for(mode: SignalMode, confused_rank: usize) -> Cues {
    match mode {
        SignalMode::None => Cues::default(),
        SignalMode::TemporalOnly => Cues {
            pupil_ramp: true,
            revisit_burst: true,
            ..Cues::default()
        },
        SignalMode::SpatialOnly => Cues {
            corner_visits: true,
            ..Cues::default()
        },
        SignalMode::Both => Cues {
            pupil_ramp: true,
            revisit_burst: true,
            corner_visits: true,
            corner_before_window: false,
        },
        SignalMode::Split if confused_rank.is_multiple_of(2) => Cues {
            pupil_ramp: true,
            ..Cues::default()
        },
        SignalMode::Split => Cues {
            corner_visits: true,
            corner_before_window: true,
            ..Cues::default()
        },
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

#[allow(clippy::too_many_arguments)]
fn generate_task(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    traits: &UserTraits,
    user_id: String,
    task_id: String,
    visible_ms: f64,
    confused: bool,
    cues: Cues,
) -> TaskRecord {
    let w = cfg.meta.screen_width as f64;
    let h = cfg.meta.screen_height as f64;
    let strength = cfg.signal_strength;
    let total_ms = if confused {
        visible_ms + DEFAULT_TRIM_MS
    } else {
        visible_ms
    };

    // main area leaves the top-right corner free for the report button
    let n_targets = rng.random_range(5..=8);
    let targets: Vec<(f64, f64)> = (0..n_targets)
        .map(|_| {
            (
                rng.random_range(0.05..0.75) * w,
                rng.random_range(0.25..0.95) * h,
            )
        })
        .collect();
    let corner = (0.91 * w, 0.09 * h);
    let button = (0.95 * w, 0.04 * h);

    let n_visits = if cues.corner_visits {
        (MAX_CORNER_VISITS * strength).round() as usize
    } else {
        0
    };
    let visit_window_end = if cues.corner_before_window {
        visible_ms - SEQUENCE_WINDOW_MS - 600.0
    } else {
        visible_ms - 400.0
    };
    let mut visits: Vec<f64> = if n_visits > 0 && visit_window_end > 0.0 {
        (0..n_visits)
            .map(|_| rng.random_range(0.0..visit_window_end))
            .collect()
    } else {
        Vec::new()
    };
    visits.sort_by(f64::total_cmp);
    visits.reverse();

    let burst_start = visible_ms - TEMPORAL_WINDOW_MS;
    let mut boundaries = vec![];
    if cues.revisit_burst {
        boundaries.push(burst_start);
    }
    if confused {
        boundaries.push(visible_ms);
    }

    let mut fixes: Vec<Fixation> = Vec::new();
    let mut cur = rng.random_range(0..n_targets);
    let mut prev = (cur + 1) % n_targets;
    let (mut px, mut py) = targets[cur];
    let mut t = 0.0;
    let mut first = true;
    while t <= total_ms {
        let (tx, ty, mut dur) = if confused && t >= visible_ms {
            (button.0, button.1, total_ms - t + 100.0)
        } else if cues.revisit_burst && t >= burst_start {
            std::mem::swap(&mut cur, &mut prev);
            let (x, y) = targets[cur];
            (x, y, rng.random_range(100.0..160.0))
        } else if visits.last().is_some_and(|&v| v <= t) && t < visit_window_end {
            visits.pop();
            (
                corner.0 + rng.random_range(-0.03..0.03) * w,
                corner.1 + rng.random_range(-0.03..0.03) * h,
                rng.random_range(200.0..320.0),
            )
        } else {
            if visits.last().is_some_and(|&v| v <= t) {
                visits.pop();
            }
            let mut next = rng.random_range(0..n_targets);
            if next == cur {
                next = (next + 1) % n_targets;
            }
            prev = cur;
            cur = next;
            let (x, y) = targets[cur];
            (x, y, traits.fixation_ms * rng.random_range(0.6..1.4))
        };
        let dist = ((tx - px).powi(2) + (ty - py).powi(2)).sqrt();
        let saccade = if first { 0.0 } else { 20.0 + 40.0 * dist / w };
        first = false;
        let start = t + saccade;
        if let Some(&b) = boundaries.iter().find(|&&b| b > start) {
            if start + dur > b {
                dur = (b - start).max(1.0);
            }
        }
        fixes.push(Fixation {
            start,
            x: tx,
            y: ty,
            from_x: px,
            from_y: py,
            saccade_start: t,
        });
        px = tx;
        py = ty;
        t = start + dur;
    }

    // blinks (both eyes) and single-eye dropouts
    let mut blinks: Vec<(f64, f64, u8)> = Vec::new();
    let mut bt = rng.random_range(0.0..3000.0);
    while bt < total_ms {
        blinks.push((bt, bt + rng.random_range(80.0..180.0), 0));
        bt += rng.random_range(2000.0..5000.0);
    }
    let mut dt = rng.random_range(0.0..8000.0);
    while dt < total_ms {
        let eye = if rng.random_bool(0.5) { 1 } else { 2 };
        blinks.push((dt, dt + rng.random_range(30.0..90.0), eye));
        dt += rng.random_range(4000.0..12000.0);
    }

    let period = 1000.0 / cfg.meta.sampling_rate_hz;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let drift_period = rng.random_range(3000.0..9000.0);
    let noise = 0.003 * w;
    let mut samples = Vec::with_capacity((total_ms / period) as usize + 2);
    let mut fi = 0usize;
    let mut last_t = 0.0f64;
    let mut k = 0usize;
    loop {
        let nominal = k as f64 * period;
        let ts = if k == 0 {
            0.0
        } else {
            quantize(nominal + 0.15 * std_normal(rng), 3).max(last_t)
        };
        let past_end = if confused { ts >= total_ms } else { ts > total_ms };
        if past_end {
            break;
        }
        last_t = ts;
        k += 1;

        while fi + 1 < fixes.len() && fixes[fi + 1].saccade_start <= ts {
            fi += 1;
        }
        let f = &fixes[fi];
        let (gx, gy) = if ts < f.start && f.start > f.saccade_start {
            let a = (ts - f.saccade_start) / (f.start - f.saccade_start);
            (f.from_x + a * (f.x - f.from_x), f.from_y + a * (f.y - f.from_y))
        } else {
            (f.x, f.y)
        };

        let drift = (std::f64::consts::TAU * ts / drift_period + phase).sin();
        let mut dilation = 0.0;
        if cues.pupil_ramp && ts >= burst_start {
            let a = ((ts - burst_start) / TEMPORAL_WINDOW_MS).min(1.0);
            dilation = strength * MAX_PUPIL_DILATION_MM * a;
        }
        let head = traits.dist + 6.0 * drift + 1.0 * std_normal(rng);

        let mut left_valid = true;
        let mut right_valid = true;
        for &(a, b, eye) in &blinks {
            if ts >= a && ts < b {
                match eye {
                    0 => {
                        left_valid = false;
                        right_valid = false;
                    }
                    1 => left_valid = false,
                    _ => right_valid = false,
                }
            }
        }

        let mut eye = |valid: bool, offset: f64, pupil: f64| {
            if !valid {
                return EyeSample::invalid();
            }
            let x = (gx + offset + noise * std_normal(rng)).clamp(0.0, w - 0.01);
            let y = (gy + noise * std_normal(rng)).clamp(0.0, h - 0.01);
            EyeSample {
                x: quantize(x, 2).min(w - 0.01),
                y: quantize(y, 2).min(h - 0.01),
                pupil: quantize(pupil + 0.08 * drift + dilation + 0.03 * std_normal(rng), 4),
                dist: quantize(head + 0.5 * std_normal(rng), 1),
                valid: true,
            }
        };
        let left = eye(left_valid, -traits.eye_offset / 2.0, traits.pupil_left);
        let right = eye(right_valid, traits.eye_offset / 2.0, traits.pupil_right);
        samples.push(RawSample {
            timestamp_ms: ts,
            left,
            right,
        });
    }

    TaskRecord {
        user_id,
        task_id,
        samples,
        label: if confused {
            Label::Confused
        } else {
            Label::NotConfused
        },
        report_time_ms: confused.then_some(total_ms),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tsv::render_dataset;

    fn small(mode: SignalMode, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 6,
            tasks_per_user: 5,
            confused_fraction: 0.3,
            signal_mode: mode,
            signal_strength: 1.0,
            mean_duration_s: 8.0,
            sd_duration_s: 1.0,
            min_duration_s: 7.0,
            meta: Meta {
                screen_width: 320,
                screen_height: 240,
                sampling_rate_hz: 120.0,
            },
            seed,
        }
    }

    #[test]
    fn same_seed_same_text() {
        let a = synth_generate(&small(SignalMode::Both, 3)).unwrap();
        let b = synth_generate(&small(SignalMode::Both, 3)).unwrap();
        assert_eq!(render_dataset(&a), render_dataset(&b));
        let c = synth_generate(&small(SignalMode::Both, 4)).unwrap();
        assert_ne!(render_dataset(&a), render_dataset(&c));
    }

    #[test]
    fn default_counts() {
        let cfg = SynthConfig {
            mean_duration_s: 1.0,
            sd_duration_s: 0.1,
            min_duration_s: 0.5,
            meta: sampling_rate_hz_override(),
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        assert_eq!(ds.tasks.len(), 5440);
        assert_eq!(ds.confused_count(), 112);
        assert_eq!(ds.users().len(), 136);
    }

    // keeps the default-count test light: lower rate, same bookkeeping
    fn sampling_rate_hz_override() -> Meta {
        Meta {
            screen_width: 320,
            screen_height: 240,
            sampling_rate_hz: 30.0,
        }
    }

    #[test]
    fn samples_respect_bounds_and_order() {
        for mode in [SignalMode::Both, SignalMode::Split, SignalMode::None] {
            let ds = synth_generate(&small(mode, 11)).unwrap();
            ds.validate().unwrap();
            for t in &ds.tasks {
                for s in &t.samples {
                    for e in [s.left, s.right] {
                        if e.valid {
                            assert!(e.x >= 0.0 && e.x < 320.0);
                            assert!(e.y >= 0.0 && e.y < 240.0);
                            assert!(e.pupil > 0.0 && e.dist > 0.0);
                        }
                    }
                }
                if let Some(r) = t.report_time_ms {
                    assert!(t.samples.last().unwrap().timestamp_ms < r);
                }
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small(SignalMode::None, 0);
        cfg.confused_fraction = 1.5;
        assert!(matches!(synth_generate(&cfg), Err(DataError::InvalidConfig(_))));
        let mut cfg = small(SignalMode::None, 0);
        cfg.n_users = 0;
        assert!(synth_generate(&cfg).is_err());
    }

    fn in_corner(s: &RawSample, w: f64, h: f64) -> bool {
        s.gaze_point()
            .is_some_and(|(x, y)| x > 0.84 * w && y < 0.16 * h)
    }

    #[test]
    fn null_mode_visible_part_never_enters_corner() {
        let ds = synth_generate(&small(SignalMode::None, 5)).unwrap();
        for t in &ds.tasks {
            let kept = crate::data::trim_pre_report(t, DEFAULT_TRIM_MS).unwrap();
            assert!(!kept.samples.iter().any(|s| in_corner(s, 320.0, 240.0)));
        }
        // the trimmed second of a confused task does head for the button
        let c = ds.tasks.iter().find(|t| t.label.is_confused()).unwrap();
        assert!(c.samples.iter().any(|s| in_corner(s, 320.0, 240.0)));
    }

    #[test]
    fn split_mode_spatial_cue_stays_out_of_last_five_seconds() {
        let ds = synth_generate(&small(SignalMode::Split, 9)).unwrap();
        let mut with_corner = 0;
        for t in ds.tasks.iter().filter(|t| t.label.is_confused()) {
            let kept = crate::data::trim_pre_report(t, DEFAULT_TRIM_MS).unwrap();
            let end = kept.samples.last().unwrap().timestamp_ms;
            let corner: Vec<_> = kept
                .samples
                .iter()
                .filter(|s| in_corner(s, 320.0, 240.0))
                .collect();
            if !corner.is_empty() {
                with_corner += 1;
            }
            assert!(corner.iter().all(|s| s.timestamp_ms < end - 5000.0));
        }
        assert!(with_corner > 0);
    }
}
