//! Subcommands as library functions. Each returns a [`CommandOutcome`]
//! instead of exiting so tests can drive the pipeline directly.
//!
//! Exit codes: 0 success, 1 invalid input (config, arguments, missing
//! prerequisite files), 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use crafted_core::eval::{EvaluationReport, MetricMatrix, BASELINE_LABEL};
use crafted_core::model::NoisePredictor;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, write_attack_log, write_heatmap, write_loss_curve, write_matrix, write_pairs};
use crate::checkpoint::{load_classifier, load_predictor, Checkpoint};
use crate::config::ExperimentConfig;
use crate::pipeline::{self, class_names, provenance, Layout};
use crate::selfcheck::{self, Mutation};

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalOptions {
    pub config: Option<PathBuf>,
    /// Overrides `seed_base` from the config.
    pub seed: Option<u64>,
    /// Worker threads for evaluation; results do not depend on it.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub duration: Duration,
    /// Human-readable text: the summary on success, the diagnostic on failure.
    pub message: String,
}

impl CommandOutcome {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(Vec<PathBuf>, String), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn finish(start: Instant, r: CmdResult) -> CommandOutcome {
    let duration = start.elapsed();
    match r {
        Ok((artifacts, message)) => CommandOutcome { exit_code: 0, artifacts, duration, message },
        Err(Failure::Invalid(e)) => {
            CommandOutcome { exit_code: 1, artifacts: vec![], duration, message: format!("error: {e:#}") }
        }
        Err(Failure::Runtime(e)) => {
            CommandOutcome { exit_code: 2, artifacts: vec![], duration, message: format!("error: {e:#}") }
        }
    }
}

/// Loads, overrides and validates the config named by `--config`.
pub fn resolve_config(opts: &GlobalOptions) -> anyhow::Result<ExperimentConfig> {
    let path = opts.config.as_ref().ok_or_else(|| anyhow!("--config is required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = opts.seed {
        cfg.seed_base = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn write_config(layout: &Layout, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let path = layout.config();
    fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display())).map_err(runtime)?;
    fs::write(&path, cfg.to_json_string()).with_context(|| format!("writing {}", path.display())).map_err(runtime)?;
    Ok(path)
}

/// Trains the noise predictor and classifier and writes their checkpoints
/// and loss curves.
pub fn cmd_train_base(opts: &GlobalOptions) -> CommandOutcome {
    let start = Instant::now();
    finish(start, train_base(opts))
}

fn train_base(opts: &GlobalOptions) -> CmdResult {
    let cfg = resolve_config(opts).map_err(invalid)?;
    let layout = Layout::for_config(&cfg);
    let mut written = vec![write_config(&layout, &cfg)?];
    let base = pipeline::train_base(&cfg).map_err(runtime)?;
    let p = layout.base_predictor();
    Checkpoint::from_predictor(&base.predictor, provenance(&cfg, None, "base noise predictor"))
        .save(&p)
        .map_err(runtime)?;
    written.push(p);
    let c = layout.base_classifier();
    Checkpoint::from_classifier(&base.classifier, provenance(&cfg, None, "frozen classifier")).save(&c).map_err(runtime)?;
    written.push(c);
    write_loss_curve(&layout.predictor_loss(), &base.predictor_curve).map_err(runtime)?;
    written.push(layout.predictor_loss());
    write_loss_curve(&layout.classifier_loss(), &base.classifier_report.loss_curve).map_err(runtime)?;
    written.push(layout.classifier_loss());
    let msg = format!(
        "trained base models in {}\nclassifier accuracy: train {:.3}, test {:.3}\nfinal predictor loss {:.5}",
        layout.root.display(),
        base.classifier_report.train_accuracy,
        base.classifier_report.test_accuracy,
        base.predictor_curve.last().copied().unwrap_or(f64::NAN),
    );
    Ok((written, msg))
}

fn load_base(layout: &Layout) -> Result<(NoisePredictor<f32>, crafted_core::model::Classifier<f32>), Failure> {
    for p in [layout.base_predictor(), layout.base_classifier()] {
        if !p.exists() {
            return Err(invalid(anyhow!("{} not found; run train-base first", p.display())));
        }
    }
    let (predictor, _) = load_predictor(&layout.base_predictor()).map_err(runtime)?;
    let (classifier, _) = load_classifier(&layout.base_classifier()).map_err(runtime)?;
    Ok((predictor, classifier))
}

/// Fine-tunes a copy of the base predictor against `target_class` and writes
/// the tampered checkpoint and the per-epoch attack log.
pub fn cmd_attack(opts: &GlobalOptions, target_class: usize) -> CommandOutcome {
    let start = Instant::now();
    finish(start, attack(opts, target_class))
}

fn attack(opts: &GlobalOptions, target: usize) -> CmdResult {
    let cfg = resolve_config(opts).map_err(invalid)?;
    if target >= cfg.dataset.num_classes {
        return Err(invalid(anyhow!(
            "--target-class {target} is out of range for {} classes",
            cfg.dataset.num_classes
        )));
    }
    let layout = Layout::for_config(&cfg);
    let (base, classifier) = load_base(&layout)?;
    let (tuned, log) = pipeline::run_attack(&cfg, &base, &classifier, target).map_err(runtime)?;
    let ckpt = layout.attack_checkpoint(target);
    let name = &class_names(cfg.dataset.num_classes)[target];
    Checkpoint::from_predictor(&tuned, provenance(&cfg, Some(target), &format!("attacked: {name}")))
        .save(&ckpt)
        .map_err(runtime)?;
    let log_path = layout.attack_log(target);
    write_attack_log(&log_path, &log).map_err(runtime)?;
    let last = log.records.last().expect("at least one epoch");
    let msg = format!(
        "attacked class {target} ({name}) for {} epochs ({:?}); final loss {:.4}, delta norm {:.6} (eta {})",
        log.records.len(),
        log.stop,
        last.loss,
        last.delta_norm,
        cfg.attack.eta
    );
    Ok((vec![ckpt, log_path], msg))
}

/// Metadata written next to the metric CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMeta {
    pub class_names: Vec<String>,
    pub images_per_cell: usize,
    pub seed_base: u64,
    pub config_hash: String,
    pub models: Vec<String>,
}

pub const METRIC_FILES: [&str; 4] = ["accuracy.csv", "l2.csv", "fid_proxy.csv", "delta_norm.csv"];

/// Attacked checkpoints in `dir`, sorted by target class.
fn attacked_models(
    dir: &Path,
    cfg: &ExperimentConfig,
) -> Result<Vec<(usize, PathBuf, NoisePredictor<f32>)>, Failure> {
    let mut found = Vec::new();
    if !dir.exists() {
        return Ok(found);
    }
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display())).map_err(runtime)?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    for path in paths {
        let (model, manifest) = load_predictor(&path).map_err(invalid)?;
        let target = manifest
            .provenance
            .attack_target
            .ok_or_else(|| invalid(anyhow!("{} has no attack target in its provenance", path.display())))?;
        if *model.arch() != cfg.predictor_arch() {
            return Err(invalid(anyhow!("{} does not match the configured architecture", path.display())));
        }
        if target >= cfg.dataset.num_classes {
            return Err(invalid(anyhow!("{}: attack target {target} is not a class", path.display())));
        }
        if found.iter().any(|(t, _, _)| *t == target) {
            return Err(invalid(anyhow!("two checkpoints in {} attack class {target}", dir.display())));
        }
        found.push((target, path, model));
    }
    found.sort_by_key(|(t, _, _)| *t);
    Ok(found)
}

/// Computes the accuracy, paired-L2 and FID-proxy matrices for the base
/// model and every attacked checkpoint in `models` (default: the
/// experiment's `attacks/` directory) and writes CSVs and heatmaps.
pub fn cmd_evaluate(opts: &GlobalOptions, models: Option<&Path>) -> CommandOutcome {
    let start = Instant::now();
    finish(start, evaluate(opts, models))
}

fn evaluate(opts: &GlobalOptions, models: Option<&Path>) -> CmdResult {
    let cfg = resolve_config(opts).map_err(invalid)?;
    let layout = Layout::for_config(&cfg);
    let dir = match models {
        Some(d) if !d.is_dir() => return Err(invalid(anyhow!("--models {} is not a directory", d.display()))),
        Some(d) => d.to_path_buf(),
        None => layout.attacks_dir(),
    };
    let (base, classifier) = load_base(&layout)?;
    let names = class_names(cfg.dataset.num_classes);
    let found = attacked_models(&dir, &cfg)?;
    let mut deltas = Vec::new();
    let mut attacked = Vec::new();
    for (target, _, model) in found {
        deltas.push((names[target].clone(), pipeline::parameter_distance(&model, &base).map_err(runtime)?));
        attacked.push((names[target].clone(), model));
    }
    let report = pipeline::evaluate(&cfg, &base, &attacked, &classifier, opts.jobs.max(1)).map_err(runtime)?;
    let out = layout.results_dir();
    let mut written = write_report(&out, &report).map_err(runtime)?;
    let delta_path = out.join("delta_norm.csv");
    write_pairs(&delta_path, [artifacts::ROW_HEADER, "delta_norm"], &deltas).map_err(runtime)?;
    written.push(delta_path);
    let meta = EvaluationMeta {
        class_names: names,
        images_per_cell: report.images_per_cell,
        seed_base: report.seed_base,
        config_hash: cfg.hash(),
        models: attacked.iter().map(|(l, _)| l.clone()).collect(),
    };
    let meta_path = out.join("evaluation.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .with_context(|| format!("writing {}", meta_path.display()))
        .map_err(runtime)?;
    written.push(meta_path);
    Ok((written, format!("wrote evaluation for {} attacked models to {}", attacked.len(), out.display())))
}

/// Writes the three matrices as CSV plus a PNG heatmap each (when drawable).
pub fn write_report(dir: &Path, report: &EvaluationReport) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, m) in [("accuracy", &report.accuracy), ("l2", &report.l2), ("fid_proxy", &report.fid_proxy)] {
        let csv = dir.join(format!("{name}.csv"));
        write_matrix(&csv, m)?;
        written.push(csv);
        written.extend(write_heatmap(&dir.join(format!("{name}.png")), m));
    }
    Ok(written)
}

/// One line of the rendered summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSummary {
    pub target: String,
    pub baseline_accuracy: f64,
    pub attacked_accuracy: f64,
    pub success: f64,
    pub delta_norm: Option<f64>,
    pub fid_diagonal: Option<f64>,
    pub fid_exceeds_row_median: Option<bool>,
}

/// Builds the per-target summary from matrices already on disk.
pub fn summarize(accuracy: &MetricMatrix, fid: &MetricMatrix, deltas: &[(String, f64)]) -> anyhow::Result<Vec<TargetSummary>> {
    let base = accuracy.row(BASELINE_LABEL).ok_or_else(|| anyhow!("accuracy.csv has no baseline row"))?;
    let fid_flags = fid.diagonal_exceeds_row_median();
    let fid_diag = fid.diagonal();
    let mut out = Vec::new();
    for (target, attacked) in accuracy.diagonal() {
        let col = accuracy.col_labels().iter().position(|c| *c == target).expect("diagonal label is a column");
        out.push(TargetSummary {
            baseline_accuracy: base[col],
            attacked_accuracy: attacked,
            success: base[col] - attacked,
            delta_norm: deltas.iter().find(|(k, _)| *k == target).map(|(_, v)| *v),
            fid_diagonal: fid_diag.iter().find(|(k, _)| *k == target).map(|(_, v)| *v),
            fid_exceeds_row_median: fid_flags.iter().find(|(k, _)| *k == target).map(|(_, v)| *v),
            target,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

/// Renders a summary of an evaluation results directory without
/// recomputing any metric, and writes it as `summary.csv`.
pub fn cmd_report(results: &Path) -> CommandOutcome {
    let start = Instant::now();
    finish(start, report(results))
}

fn report(dir: &Path) -> CmdResult {
    let missing: Vec<String> =
        METRIC_FILES.iter().map(|f| dir.join(f)).filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(invalid(anyhow!("missing metric files: {}", missing.join(", "))));
    }
    let accuracy = artifacts::read_matrix(&dir.join("accuracy.csv")).map_err(invalid)?;
    let fid = artifacts::read_matrix(&dir.join("fid_proxy.csv")).map_err(invalid)?;
    let deltas = artifacts::read_pairs(&dir.join("delta_norm.csv")).map_err(invalid)?;
    let rows = summarize(&accuracy, &fid, &deltas).map_err(invalid)?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display())).map_err(runtime)?;
    let header = [
        "attack_target",
        "baseline_accuracy",
        "attacked_accuracy",
        "success",
        "delta_norm",
        "fid_diagonal",
        "fid_diagonal_exceeds_row_median",
    ];
    let write = |w: &mut csv::Writer<fs::File>, rec: &[String]| w.write_record(rec).map_err(|e| runtime(e));
    write(&mut w, &header.map(String::from))?;
    let mut text = format!("{:<10} {:>9} {:>9} {:>8} {:>11} {:>12}  fid>median\n", "target", "baseline", "attacked", "drop", "delta_norm", "fid_diag");
    for r in &rows {
        write(
            &mut w,
            &[
                r.target.clone(),
                r.baseline_accuracy.to_string(),
                r.attacked_accuracy.to_string(),
                r.success.to_string(),
                opt(r.delta_norm),
                opt(r.fid_diagonal),
                r.fid_exceeds_row_median.map_or_else(|| "-".into(), |b| b.to_string()),
            ],
        )?;
        text.push_str(&format!(
            "{:<10} {:>9.4} {:>9.4} {:>8.4} {:>11} {:>12}  {}\n",
            r.target,
            r.baseline_accuracy,
            r.attacked_accuracy,
            r.success,
            r.delta_norm.map_or_else(|| "-".into(), |v| format!("{v:.6}")),
            r.fid_diagonal.map_or_else(|| "-".into(), |v| format!("{v:.3}")),
            r.fid_exceeds_row_median.map_or_else(|| "-".into(), |b| b.to_string()),
        ));
    }
    w.flush().with_context(|| format!("writing {}", path.display())).map_err(runtime)?;
    Ok((vec![path], text))
}

/// Runs the analytic oracle suite. Any failing check is a runtime failure.
pub fn cmd_selfcheck() -> CommandOutcome {
    let start = Instant::now();
    let r = (|| {
        let mutation = Mutation::from_env().map_err(|e| invalid(anyhow!(e)))?;
        let checks = selfcheck::run(mutation);
        let text: String = checks
            .iter()
            .map(|c| format!("{} {}: {}\n", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail))
            .collect();
        if checks.iter().all(|c| c.passed) {
            Ok((vec![], text))
        } else {
            Err(runtime(anyhow!("selfcheck failed\n{text}")))
        }
    })();
    finish(start, r)
}
