//! The `vtnet` command line: synthesize data, preprocess, render scan paths,
//! train a single model, run cross-validation, check gradients and render
//! reports.
//!
//! [`dispatch`] returns the process exit status: 0 on success, 1 when the
//! command fails, 2 on a usage error.

pub mod settings;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use settings::{parse_assignment, resolve, Settings};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use vtnet_core::config::KeyValues;
use vtnet_core::data::{
    read_dataset_dir, synth_generate, trim_pre_report, write_dataset_dir, Meta, SignalMode, SynthConfig,
};
use vtnet_core::eval::{
    balance_training_set, derive_seed, emit_report, split_validation, EvalReport, ReportFormat,
};
use vtnet_core::io_util::atomic_write;
use vtnet_core::model::{format_history, gradient_suite, init_model, save_checkpoint, Variant, VtnetConfig};
use vtnet_core::preprocess::{
    build_items, compute_stats, grid_size, normalize, rasterize_scanpath, write_items_dir, DataItem,
};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "vtnet", version, about = "Confusion detection from raw eye-tracking data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Build paired sequence/image items from a dataset directory.
    Preprocess(PreprocessArgs),
    /// Write scan-path images of tasks as PGM files.
    Render(RenderArgs),
    /// Train one model on a user-level fit/validation split.
    Train(TrainArgs),
    /// Run repeated user-grouped cross-validation.
    Cv(CvArgs),
    /// Finite-difference checks of every layer and the full models.
    Gradcheck(GradcheckArgs),
    /// Render a saved evaluation report.
    Report(ReportArgs),
}

/// Settings shared by the verbs that run the pipeline.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key=value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<Settings> {
        let mut kv = KeyValues::default();
        for (k, v) in &self.set {
            kv.set(k.clone(), v.clone());
        }
        for (k, v) in extra {
            if let Some(v) = v {
                kv.set(*k, v.clone());
            }
        }
        if let Some(s) = self.seed {
            kv.set("seed", s.to_string());
        }
        resolve(self.config.as_deref(), &kv)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    confused_fraction: Option<f64>,
    /// temporal_only, spatial_only, both, split or none.
    #[arg(long)]
    signal: Option<SignalMode>,
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    mean_duration: Option<f64>,
    #[arg(long)]
    sd_duration: Option<f64>,
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    screen_width: Option<u32>,
    #[arg(long)]
    screen_height: Option<u32>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory, one `<task>.pgm` per task.
    #[arg(long)]
    out: PathBuf,
    /// Only render these tasks; repeatable.
    #[arg(long)]
    task: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "vtnet")]
    variant: Variant,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log (tab-separated).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Normalization constants as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    /// Variants to evaluate, comma separated or repeated. Defaults to all.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<Variant>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Also score task-level majority votes.
    #[arg(long)]
    votes: bool,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the table view here.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON report written by `cv`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line `argv` (program name first) and returns the exit
/// status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Render(a) => render(a),
        Command::Train(a) => train(a),
        Command::Cv(a) => cv(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_data(dir: &Path) -> Result<vtnet_core::data::Dataset> {
    let ds = read_dataset_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    ds.validate()?;
    Ok(ds)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let d = SynthConfig::default();
    let seed = match a.seed {
        Some(s) => s,
        None => settings::env_seed()?.unwrap_or(0),
    };
    let cfg = SynthConfig {
        n_users: a.users.unwrap_or(d.n_users),
        tasks_per_user: a.tasks.unwrap_or(d.tasks_per_user),
        confused_fraction: a.confused_fraction.unwrap_or(d.confused_fraction),
        signal_mode: a.signal.unwrap_or(d.signal_mode),
        signal_strength: a.strength.unwrap_or(d.signal_strength),
        mean_duration_s: a.mean_duration.unwrap_or(d.mean_duration_s),
        sd_duration_s: a.sd_duration.unwrap_or(d.sd_duration_s),
        min_duration_s: a.min_duration.unwrap_or(d.min_duration_s),
        meta: Meta {
            screen_width: a.screen_width.unwrap_or(d.meta.screen_width),
            screen_height: a.screen_height.unwrap_or(d.meta.screen_height),
            sampling_rate_hz: a.rate.unwrap_or(d.meta.sampling_rate_hz),
        },
        seed,
    };
    let ds = synth_generate(&cfg)?;
    write_dataset_dir(&ds, &a.out)?;
    println!(
        "{} users, {} tasks, {} confused -> {}",
        ds.users().len(),
        ds.tasks.len(),
        ds.confused_count(),
        a.out.display()
    );
    Ok(0)
}

fn preprocess(a: PreprocessArgs) -> Result<i32> {
    let s = a.config.resolve(&[])?;
    let ds = read_data(&a.data)?;
    let built = build_items(&ds, &s.cv.preprocess)?;
    write_items_dir(&built.items, &a.out)?;
    let confused = built.items.iter().filter(|it| it.label.is_confused()).count();
    println!(
        "{} items ({} confused), {} task(s) dropped -> {}",
        built.items.len(),
        confused,
        built.dropped.len(),
        a.out.display()
    );
    Ok(0)
}

fn render(a: RenderArgs) -> Result<i32> {
    let s = a.config.resolve(&[])?;
    let ds = read_data(&a.data)?;
    let wanted: HashSet<&str> = a.task.iter().map(String::as_str).collect();
    let known: HashSet<&str> = ds.tasks.iter().map(|t| t.task_id.as_str()).collect();
    if let Some(missing) = a.task.iter().find(|t| !known.contains(t.as_str())) {
        bail!("unknown task `{missing}`");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut n = 0;
    for task in ds.tasks.iter().filter(|t| wanted.is_empty() || wanted.contains(t.task_id.as_str())) {
        let trimmed = trim_pre_report(task, s.cv.preprocess.trim_ms)?;
        let img = rasterize_scanpath(&trimmed, &ds.meta, &s.cv.preprocess.raster)?;
        let path = a.out.join(format!("{}.pgm", task.task_id));
        atomic_write(&path, &img.to_pgm())?;
        n += 1;
    }
    println!("{n} image(s) -> {}", a.out.display());
    Ok(0)
}

fn normalized(items: &[&DataItem], stats: &vtnet_core::preprocess::FeatureStats) -> Vec<DataItem> {
    items
        .iter()
        .map(|it| DataItem {
            sequence: normalize(&it.sequence, stats),
            ..(*it).clone()
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<i32> {
    let s = a.config.resolve(&[])?;
    let ds = read_data(&a.data)?;
    let cv = &s.cv;
    let built = build_items(&ds, &cv.preprocess)?;
    let users = ds.users();
    let count = |u: &str| built.items.iter().filter(|it| &*it.user_id == u).count();
    let (fit_users, val_users) = split_validation(&users, count, cv.val_frac, derive_seed(s.seed, &[1]))?;
    let fit_set: HashSet<&str> = fit_users.iter().map(String::as_str).collect();
    let (fit_raw, val_raw): (Vec<&DataItem>, Vec<&DataItem>) =
        built.items.iter().partition(|it| fit_set.contains(&*it.user_id));
    let stats = compute_stats(fit_raw.iter().map(|it| &it.sequence), &ds.meta)?;
    let fit = normalized(&fit_raw, &stats);
    let val = normalized(&val_raw, &stats);
    let train_set = balance_training_set(fit, a.variant, cv.smote_percent, cv.smote_k, derive_seed(s.seed, &[2]))?;

    let (w, h) = grid_size(&ds.meta, cv.preprocess.raster.downsize);
    let mcfg = VtnetConfig {
        variant: a.variant,
        seed: derive_seed(s.seed, &[3]),
        image_width: w,
        image_height: h,
        ..cv.model.clone()
    };
    let mut model = init_model(&mcfg)?;
    let epochs = model.fit(&train_set, &val)?;
    save_checkpoint(&model, &a.out)?;
    if let Some(log) = &a.log {
        write_text(log, &format_history(&model.history))?;
    }
    if let Some(path) = &a.stats {
        let mut text = serde_json::to_string_pretty(&stats)?;
        text.push('\n');
        write_text(path, &text)?;
    }
    let val_line = match model.validation_metrics(&val)? {
        Some(m) => format!(
            "val sens {:.3} spec {:.3} combined {:.3}",
            m.sensitivity, m.specificity, m.combined
        ),
        None => "no validation items".to_string(),
    };
    println!(
        "{}: {} fit / {} val users, {} train items, {} epochs, best epoch {}, {val_line} -> {}",
        a.variant.display_name(),
        fit_users.len(),
        val_users.len(),
        train_set.len(),
        epochs,
        model.best_epoch().map_or("-".to_string(), |e| e.to_string()),
        a.out.display()
    );
    Ok(0)
}

fn cv(a: CvArgs) -> Result<i32> {
    let extra = [
        ("runs", a.runs.map(|v| v.to_string())),
        ("folds", a.folds.map(|v| v.to_string())),
        ("jobs", a.jobs.map(|v| v.to_string())),
        ("task_votes", a.votes.then(|| "true".to_string())),
    ];
    let s = a.config.resolve(&extra)?;
    let ds = read_data(&a.data)?;
    let variants = if a.variant.is_empty() {
        Variant::ALL.to_vec()
    } else {
        let mut seen = HashSet::new();
        a.variant.iter().copied().filter(|v| seen.insert(*v)).collect()
    };
    let report = vtnet_core::eval::run_cv(&ds, &variants, &s.cv, s.seed)?;
    write_text(&a.out, &emit_report(&report, ReportFormat::Json))?;
    let table = emit_report(&report, ReportFormat::Table);
    if let Some(path) = &a.table {
        write_text(path, &table)?;
    }
    print!("{table}");
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let results = gradient_suite(a.seeds)?;
    let mut failed = 0;
    for r in &results {
        let ok = r.max_error < GRADCHECK_TOLERANCE;
        failed += usize::from(!ok);
        println!("{:<16} {:.3e} {}", r.name, r.max_error, if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        eprintln!("{failed} check(s) exceed {GRADCHECK_TOLERANCE:e}");
        return Ok(1);
    }
    Ok(0)
}

fn report(a: ReportArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", a.input.display()))?;
    let out = emit_report(&report, a.format);
    match &a.out {
        Some(p) => write_text(p, &out)?,
        None => print!("{out}"),
    }
    Ok(0)
}
