//! Command-line surface: dataset generation, single training runs, the
//! scaling sweep, geometry reports, evaluation protocols, and the
//! self-verification suites. One JSON config drives everything; `--set`
//! overrides patch dotted paths before parsing, so sweep variants stay
//! scriptable. Exit codes: 0 success, 1 usage, 2 runtime failure.
//! Diagnostics go to standard error; data goes to files or standard out.

use std::collections::{BTreeMap, VecDeque};
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::eval::{full_eval, EvalConfig, EvalReport};
use crate::geometry::{default_analysis_species, geometry_report, GeometryReport};
use crate::model::{
    init_model, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelState,
};
use crate::synth::{generate_dataset, subsample_scale, Dataset, SynthConfig};
use crate::train::{metrics_csv, train_run, TrainConfig};
use crate::verify::run_suites;
use crate::{Error, Result};

// ── configuration ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmitFlags {
    pub report: bool,
    pub projections: bool,
    pub metrics: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags { report: true, projections: true, metrics: true }
    }
}

/// One config file drives every command; each subcommand reads the parts
/// it needs, so a sweep config also works for `gen` or `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub model_seed: u64,
    /// Seed for the nested scale subsampling; fixed across scales so the
    /// smaller train sets are prefixes of the larger ones.
    pub subsample_seed: u64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub scales: Vec<usize>,
    pub output_dir: String,
    pub emit: EmitFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            model_seed: 1,
            subsample_seed: 0,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            scales: Vec::new(),
            output_dir: "out".into(),
            emit: EmitFlags::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::ConfigInvalid {
                reason: format!("scales must be strictly increasing, got {:?}", self.scales),
            });
        }
        Ok(())
    }
}

/// Patch one `key=value` override into the raw config JSON. Keys are
/// dotted paths; values parse as JSON when they can and fall back to
/// strings, so `--set train.lr_max=0.02` and `--set synth.variant_axes=[]`
/// both work.
fn apply_set(root: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (key, raw) = entry.split_once('=').ok_or_else(|| Error::ConfigInvalid {
        reason: format!("--set expects KEY=VALUE, got {entry:?}"),
    })?;
    let val: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigInvalid { reason: format!("--set path {key:?} has an empty segment") });
    }
    let (last, front) = parts.split_last().expect("nonempty split");
    let mut cur = root;
    for p in front {
        let obj = cur.as_object_mut().ok_or_else(|| Error::ConfigInvalid {
            reason: format!("--set path {key:?} crosses a non-object value"),
        })?;
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| Error::ConfigInvalid {
        reason: format!("--set path {key:?} crosses a non-object value"),
    })?;
    obj.insert(last.to_string(), val);
    Ok(())
}

pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    for s in sets {
        apply_set(&mut v, s)?;
    }
    Ok(serde_json::from_value(v)?)
}

// ── file helpers ─────────────────────────────────────────────────────────

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

// ── sweep outputs ────────────────────────────────────────────────────────

pub const TREND_HEADER: &str = "scale,zeroshot_acc,alignment,differentiation,\
rho_axis0,fdr_axis0,rho_axis1,fdr_axis1,fdr_numerator,fdr_denominator";

/// One trend line per scale. Alignment/differentiation and the
/// numerator/denominator split come from the first variant axis; the
/// second axis contributes its own rho/fdr columns. Absent statistics
/// leave their cells empty.
pub fn trend_row(scale: usize, report: &GeometryReport, evals: &[EvalReport]) -> String {
    let acc = |task: String| -> Option<f64> {
        evals.iter().find(|r| r.task == task).map(|r| r.accuracy)
    };
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let axis0 = report.rho.first().map(|r| r.axis.clone());
    let alignment = axis0.as_ref().and_then(|a| acc(format!("variant_alignment:{a}")));
    let differentiation =
        axis0.as_ref().and_then(|a| acc(format!("variant_differentiation:{a}")));
    let rho = |i: usize| report.rho.get(i).and_then(|r| r.empirical);
    let fdr = |i: usize| report.fdr.get(i).and_then(|f| f.mean_ratio);
    format!(
        "{scale},{},{},{},{},{},{},{},{},{}",
        cell(acc("zero_shot_ncc".into())),
        cell(alignment),
        cell(differentiation),
        cell(rho(0)),
        cell(fdr(0)),
        cell(rho(1)),
        cell(fdr(1)),
        cell(report.fdr.first().and_then(|f| f.mean_numerator)),
        cell(report.fdr.first().and_then(|f| f.mean_denominator)),
    )
}

/// Flat view of the 3D projection: one row per plotted sample, then one
/// `prototype` row per species, then per-species `arrow:<axis>` rows
/// giving the projected variation columns.
pub fn projection_csv(report: &GeometryReport, ds: &Dataset) -> String {
    let mut out = String::from("sample_id,species_id,variant,px,py,pz\n");
    let coord = |m: &crate::numeric::Matrix, i: usize| {
        format!("{},{},{}", m[(i, 0)], m[(i, 1)], m[(i, 2)])
    };
    for (row, &idx) in report.plane_samples.iter().enumerate() {
        let smp = &ds.samples[idx];
        let variant: Vec<String> = ds
            .config
            .variant_axes
            .iter()
            .map(|ax| smp.variants.get(&ax.name).cloned().unwrap_or_default())
            .collect();
        out.push_str(&format!(
            "{idx},{},{},{}\n",
            smp.sid,
            variant.join("|"),
            coord(&report.plane.coords, row),
        ));
    }
    for (row, &sid) in report.plane.species_ids.iter().enumerate() {
        out.push_str(&format!(",{sid},prototype,{}\n", coord(&report.plane.species_coords, row)));
    }
    for (axis, proj) in &report.plane.arrows {
        // arrow columns cover the analysis species minus the skipped ones,
        // in analysis order, mirroring how the variation matrix was built
        let skipped = report
            .rho
            .iter()
            .find(|r| &r.axis == axis)
            .map(|r| r.skipped_species.clone())
            .unwrap_or_default();
        let included: Vec<usize> = report
            .analysis_species
            .iter()
            .copied()
            .filter(|s| !skipped.contains(s))
            .collect();
        for j in 0..proj.cols() {
            let sid = included.get(j).map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                ",{sid},arrow:{axis},{},{},{}\n",
                proj[(0, j)],
                proj[(1, j)],
                proj[(2, j)],
            ));
        }
    }
    out
}

// ── argument surface ─────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "eclab",
    version,
    about = "Deterministic laboratory for the embedding geometry of hierarchical contrastive training"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic taxonomic dataset
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train one model on a dataset file
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-ckpt")]
        out_ckpt: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train across data scales and emit the trend table
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Geometry report for a checkpoint on a dataset
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write the 3D projection CSV here
        #[arg(long)]
        projections: Option<PathBuf>,
    },
    /// Run one evaluation protocol family
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Few-shot support size (fewshot task)
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Self-check suites; exit 0 only when every check passes
    Verify {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Zeroshot,
    Fewshot,
    Probe,
    Discovery,
    Variants,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { config, out, set } => cmd_gen(&config, &out, &set),
        Cmd::Train { data, config, out_ckpt, metrics, set } => {
            cmd_train(&data, &config, &out_ckpt, &metrics, &set)
        }
        Cmd::Sweep { config, out_dir, set } => cmd_sweep(&config, out_dir.as_deref(), &set),
        Cmd::Analyze { ckpt, data, report, projections } => {
            cmd_analyze(&ckpt, &data, &report, projections.as_deref())
        }
        Cmd::Eval { task, ckpt, data, k, report } => cmd_eval(task, &ckpt, &data, k, &report),
        Cmd::Verify { ckpt, seed } => cmd_verify(ckpt.as_deref(), seed),
    }
}

// ── subcommands ──────────────────────────────────────────────────────────

fn cmd_gen(config: &Path, out: &Path, sets: &[String]) -> Result<()> {
    let cfg = load_config(config, sets)?;
    let ds = generate_dataset(&cfg.synth)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    crate::synth::save(&ds, out)?;
    eprintln!(
        "wrote {} samples across {} species to {}",
        ds.samples.len(),
        ds.species_count(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    config: &Path,
    out_ckpt: &Path,
    metrics: &Path,
    sets: &[String],
) -> Result<()> {
    let cfg = load_config(config, sets)?;
    let ds = crate::synth::load(data)?;
    let model = init_model(&cfg.model, cfg.model_seed, &ds)?;
    let outcome = train_run(model, &ds, &cfg.train, |row| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  zeroshot {:.4}",
            row.epoch, row.loss, row.zeroshot_acc
        );
    })?;
    save_checkpoint(&Checkpoint::new(outcome.model, Some(outcome.optimizer)), out_ckpt)?;
    write_text(metrics, &metrics_csv(&outcome.metrics))?;
    eprintln!("checkpoint {} metrics {}", out_ckpt.display(), metrics.display());
    Ok(())
}

fn cmd_analyze(
    ckpt: &Path,
    data: &Path,
    report_path: &Path,
    projections: Option<&Path>,
) -> Result<()> {
    let ds = crate::synth::load(data)?;
    let ckpt = load_checkpoint(ckpt)?;
    let analysis = default_analysis_species(ds.species_count(), 6);
    let report = geometry_report(&ckpt.state, &ds, &analysis)?;
    write_json(report_path, &report)?;
    if let Some(p) = projections {
        write_text(p, &projection_csv(&report, &ds))?;
    }
    eprintln!("report {}", report_path.display());
    Ok(())
}

/// Map a task family to the reports it keeps from the full protocol run.
pub fn filter_reports(task: EvalTask, evals: Vec<EvalReport>) -> Vec<EvalReport> {
    evals
        .into_iter()
        .filter(|r| match task {
            EvalTask::Zeroshot => r.task == "zero_shot_ncc",
            EvalTask::Fewshot => r.task == "simpleshot",
            EvalTask::Probe => {
                matches!(r.task.as_str(), "linear_probe" | "multilabel_probe" | "attribute_probe")
            }
            EvalTask::Discovery => r.task == "ssl_kmeans",
            EvalTask::Variants => r.task.starts_with("variant_"),
        })
        .collect()
}

fn cmd_eval(
    task: EvalTask,
    ckpt: &Path,
    data: &Path,
    k: Option<usize>,
    report: &Path,
) -> Result<()> {
    let ds = crate::synth::load(data)?;
    let ckpt = load_checkpoint(ckpt)?;
    let mut ecfg = EvalConfig::default();
    if let Some(k) = k {
        ecfg.shots = k;
    }
    let kept = filter_reports(task, full_eval(&ckpt.state, &ds, &ecfg)?);
    if kept.is_empty() {
        return Err(Error::Other("no evaluation reports for this task on this dataset".into()));
    }
    for r in &kept {
        eprintln!("{}: {:.4} ({}/{})", r.task, r.accuracy, r.correct, r.n);
    }
    write_json(report, &kept)
}

fn cmd_verify(ckpt: Option<&Path>, seed: u64) -> Result<()> {
    let loaded = match ckpt {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let results = run_suites(loaded.as_ref(), seed);
    let mut failed = 0usize;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.detail);
        if !r.passed {
            failed += 1;
            if let Some(instance) = &r.instance {
                eprintln!("instance {}: {}", r.suite, serde_json::to_string(instance)?);
            }
        }
    }
    if failed > 0 {
        return Err(Error::Other(format!("{failed} verification check(s) failed")));
    }
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────────

fn worker_threads() -> usize {
    std::env::var("EC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

struct ScaleFiles<'a> {
    cfg: &'a RunConfig,
    ds_full: &'a Dataset,
    model0: &'a ModelState,
    analysis: &'a [usize],
    out: &'a Path,
}

fn run_scale(ctx: &ScaleFiles<'_>, scale: usize) -> Result<String> {
    let ds = subsample_scale(ctx.ds_full, scale, ctx.cfg.subsample_seed)?;
    let outcome = train_run(ctx.model0.clone(), &ds, &ctx.cfg.train, |row| {
        eprintln!(
            "scale {scale} epoch {:>3}  loss {:.5}  zeroshot {:.4}",
            row.epoch, row.loss, row.zeroshot_acc
        );
    })?;
    let report = geometry_report(&outcome.model, &ds, ctx.analysis)?;
    let evals = full_eval(&outcome.model, &ds, &ctx.cfg.eval)?;

    let dir = ctx.out.join(format!("scale_{scale}"));
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(
        &Checkpoint::new(outcome.model, Some(outcome.optimizer)),
        &dir.join("ckpt.json"),
    )?;
    write_json(&dir.join("eval.json"), &evals)?;
    if ctx.cfg.emit.metrics {
        write_text(&dir.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    }
    if ctx.cfg.emit.report {
        write_json(&dir.join("report.json"), &report)?;
    }
    if ctx.cfg.emit.projections {
        write_text(&dir.join("projection.csv"), &projection_csv(&report, &ds))?;
    }
    Ok(trend_row(scale, &report, &evals))
}

/// Nested-subsample scaling sweep. Every scale trains from the same
/// initial parameters on a prefix-nested train subset, then reports
/// geometry and evaluation results. Trend rows land in scale order and
/// flush as each scale completes; per-scale files are written by the
/// worker that ran the scale, so parallel workers never share a file.
fn cmd_sweep(config: &Path, out_dir: Option<&Path>, sets: &[String]) -> Result<()> {
    let cfg = load_config(config, sets)?;
    cfg.validate()?;
    if cfg.scales.is_empty() {
        return Err(Error::ConfigInvalid { reason: "sweep needs at least one scale".into() });
    }
    let out: PathBuf = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone().into());
    std::fs::create_dir_all(&out)?;

    eprintln!("generating dataset ({} species)", cfg.synth.species_count());
    let ds_full = generate_dataset(&cfg.synth)?;
    let model0 = init_model(&cfg.model, cfg.model_seed, &ds_full)?;
    let analysis = default_analysis_species(ds_full.species_count(), 6);

    // untrained-encoder geometry anchors the before/after comparisons
    let baseline = geometry_report(&model0, &ds_full, &analysis)?;
    write_json(&out.join("baseline.json"), &baseline)?;

    let trend_path = out.join("trend.csv");
    let file = std::fs::File::create(&trend_path)?;
    let mut trend = std::io::BufWriter::new(file);
    writeln!(trend, "{TREND_HEADER}")?;
    trend.flush()?;

    let ctx = ScaleFiles { cfg: &cfg, ds_full: &ds_full, model0: &model0, analysis: &analysis, out: &out };
    let jobs: Mutex<VecDeque<(usize, usize)>> =
        Mutex::new(cfg.scales.iter().copied().enumerate().collect());
    let abort = AtomicBool::new(false);
    let threads = worker_threads().min(cfg.scales.len());
    let (tx, rx) = mpsc::channel::<(usize, Result<String>)>();

    std::thread::scope(|s| -> Result<()> {
        for _ in 0..threads {
            let tx = tx.clone();
            let ctx = &ctx;
            let jobs = &jobs;
            let abort = &abort;
            s.spawn(move || {
                loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let job = jobs.lock().expect("job queue").pop_front();
                    let Some((idx, scale)) = job else { break };
                    let res = run_scale(ctx, scale);
                    if res.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    if tx.send((idx, res)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Result<String>> = BTreeMap::new();
        let mut next = 0usize;
        let mut first_err: Option<Error> = None;
        while let Ok((idx, res)) = rx.recv() {
            pending.insert(idx, res);
            while first_err.is_none() {
                let Some(res) = pending.remove(&next) else { break };
                match res {
                    Ok(row) => {
                        writeln!(trend, "{row}")?;
                        trend.flush()?;
                        eprintln!("scale {} done", cfg.scales[next]);
                        next += 1;
                    }
                    Err(e) => first_err = Some(e),
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })?;

    eprintln!("trend {}", trend_path.display());
    Ok(())
}
