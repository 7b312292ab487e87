use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crafted::artifacts::{read_attack_log, read_loss_curve, read_matrix};
use crafted::checkpoint::{load_classifier, load_predictor, Checkpoint, Provenance};
use crafted::commands::{cmd_attack, cmd_evaluate, cmd_report, cmd_selfcheck, cmd_train_base, GlobalOptions};
use crafted::pipeline::{class_names, Layout};
use crafted::ExperimentConfig;
use crafted_core::eval::evaluate_models;
use tempfile::TempDir;

fn tiny_config(out: &Path) -> String {
    format!(
        r#"{{
  "output_dir": {out:?},
  "dataset": {{"num_classes": 2, "image_size": 8, "train_per_class": 16, "test_per_class": 8}},
  "predictor": {{"base_channels": 2, "hidden_dim": 8, "time_embed_dim": 4, "epochs": 3, "batch_size": 8}},
  "classifier": {{"conv1_channels": 2, "conv2_channels": 2, "feature_dim": 4, "epochs": 2, "batch_size": 8}},
  "attack": {{"inference_steps": 4, "grad_split_k": 2, "batch_noises": 2, "max_epochs": 3, "learning_rate": 1e-3, "early_stop": null}},
  "evaluation": {{"images_per_cell": 6}}
}}"#
    )
}

struct Setup {
    _dir: TempDir,
    opts: GlobalOptions,
    layout: Layout,
    cfg: ExperimentConfig,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, tiny_config(&dir.path().join("out"))).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let opts = GlobalOptions { config: Some(cfg_path), seed: None, jobs: 2 };
    let layout = Layout::new(dir.path().join("out").join(format!("exp-{}", cfg.hash())));
    Setup { _dir: dir, opts, layout, cfg }
}

fn trained() -> Setup {
    let s = setup();
    let out = cmd_train_base(&s.opts);
    assert_eq!(out.exit_code, 0, "{}", out.message);
    s
}

#[test]
fn missing_or_absent_config_is_a_validation_failure() {
    let out = cmd_train_base(&GlobalOptions { config: Some("/no/such/config.json".into()), ..Default::default() });
    assert_eq!(out.exit_code, 1);
    assert!(out.message.contains("/no/such/config.json"));
    assert_eq!(cmd_train_base(&GlobalOptions::default()).exit_code, 1);
    assert_eq!(cmd_attack(&GlobalOptions::default(), 0).exit_code, 1);
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"attack": {"grad_split_k": 30, "clip_norm": 0}}"#).unwrap();
    let out = cmd_train_base(&GlobalOptions { config: Some(p), ..Default::default() });
    assert_eq!(out.exit_code, 1);
    assert!(out.message.contains("grad_split_k") && out.message.contains("clip_norm"), "{}", out.message);
}

#[test]
fn train_base_is_reproducible_and_writes_loss_curves() {
    let s = trained();
    let first: Vec<Vec<u8>> =
        [s.layout.base_predictor(), s.layout.base_classifier()].iter().map(|p| fs::read(p).unwrap()).collect();
    let curve = read_loss_curve(&s.layout.predictor_loss()).unwrap();
    assert_eq!(curve.len(), s.cfg.predictor.epochs);
    assert_eq!(read_loss_curve(&s.layout.classifier_loss()).unwrap().len(), s.cfg.classifier.epochs);
    let again = cmd_train_base(&s.opts);
    assert_eq!(again.exit_code, 0);
    let second: Vec<Vec<u8>> =
        [s.layout.base_predictor(), s.layout.base_classifier()].iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(first, second);
    let written = ExperimentConfig::load(&s.layout.config()).unwrap();
    assert_eq!(written, s.cfg);
}

#[test]
fn attack_validates_target_and_requires_base() {
    let s = setup();
    assert_eq!(cmd_attack(&s.opts, 0).exit_code, 1, "base models not trained yet");
    let s = trained();
    let out = cmd_attack(&s.opts, 2);
    assert_eq!(out.exit_code, 1);
    assert!(out.message.contains("out of range"));
}

#[test]
fn attack_is_bounded_and_bit_reproducible() {
    let s = trained();
    let base_before = fs::read(s.layout.base_predictor()).unwrap();
    let out = cmd_attack(&s.opts, 1);
    assert_eq!(out.exit_code, 0, "{}", out.message);
    let ckpt = fs::read(s.layout.attack_checkpoint(1)).unwrap();
    let log = fs::read(s.layout.attack_log(1)).unwrap();
    let rows = read_attack_log(&s.layout.attack_log(1)).unwrap();
    assert_eq!(rows.len(), s.cfg.attack.max_epochs);
    assert!(rows.last().unwrap().2 <= s.cfg.attack.eta);
    let (_, manifest) = load_predictor(&s.layout.attack_checkpoint(1)).unwrap();
    assert_eq!(manifest.provenance.attack_target, Some(1));

    assert_eq!(cmd_attack(&s.opts, 1).exit_code, 0);
    assert_eq!(fs::read(s.layout.attack_checkpoint(1)).unwrap(), ckpt);
    assert_eq!(fs::read(s.layout.attack_log(1)).unwrap(), log);
    assert_eq!(fs::read(s.layout.base_predictor()).unwrap(), base_before, "input checkpoint mutated");
}

#[test]
fn evaluate_with_no_attacked_models_reports_baseline_only() {
    let s = trained();
    let empty = tempfile::tempdir().unwrap();
    let out = cmd_evaluate(&s.opts, Some(empty.path()));
    assert_eq!(out.exit_code, 0, "{}", out.message);
    let acc = read_matrix(&s.layout.results_dir().join("accuracy.csv")).unwrap();
    assert_eq!(acc.row_labels(), ["baseline"]);
    assert!(read_matrix(&s.layout.results_dir().join("l2.csv")).unwrap().rows().is_empty());
    assert_eq!(cmd_evaluate(&s.opts, Some(Path::new("/no/such/models"))).exit_code, 1);
}

fn copy_base_as_attack(s: &Setup, dir: &Path, target: usize) -> PathBuf {
    let (base, _) = load_predictor(&s.layout.base_predictor()).unwrap();
    let prov = Provenance { attack_target: Some(target), ..Default::default() };
    let p = dir.join(format!("copy-{target}.ckpt"));
    Checkpoint::from_predictor(&base, prov).save(&p).unwrap();
    p
}

#[test]
fn identical_model_gives_zero_distance_and_matches_library_call() {
    let s = trained();
    let models = tempfile::tempdir().unwrap();
    copy_base_as_attack(&s, models.path(), 0);
    let out = cmd_evaluate(&s.opts, Some(models.path()));
    assert_eq!(out.exit_code, 0, "{}", out.message);
    let results = s.layout.results_dir();
    let l2 = read_matrix(&results.join("l2.csv")).unwrap();
    assert!(l2.rows().iter().flatten().all(|&v| v == 0.0));
    let fid = read_matrix(&results.join("fid_proxy.csv")).unwrap();
    assert!(fid.rows().iter().flatten().all(|&v| v <= 1e-4));
    let acc = read_matrix(&results.join("accuracy.csv")).unwrap();
    assert_eq!(acc.rows()[0], acc.rows()[1]);

    // sequential library evaluation, no worker pool
    let (base, _) = load_predictor(&s.layout.base_predictor()).unwrap();
    let (clf, _) = load_classifier(&s.layout.base_classifier()).unwrap();
    let schedule = s.cfg.schedule().unwrap();
    let plan = s.cfg.eval_plan(&schedule).unwrap();
    let names = class_names(2);
    let direct = evaluate_models(
        &base,
        &[(names[0].clone(), &base)],
        &clf,
        &names,
        &schedule,
        &plan,
        &s.cfg.eval_settings(),
    )
    .unwrap();
    assert_eq!(direct.accuracy, acc);
    assert_eq!(direct.l2, l2);
    assert_eq!(direct.fid_proxy, fid);
}

#[test]
fn evaluation_output_does_not_depend_on_worker_count() {
    let s = trained();
    assert_eq!(cmd_attack(&s.opts, 0).exit_code, 0);
    let read_all = |dir: &Path| -> Vec<Vec<u8>> {
        ["accuracy.csv", "l2.csv", "fid_proxy.csv", "delta_norm.csv", "accuracy.png", "evaluation.json"]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect()
    };
    let one = GlobalOptions { jobs: 1, ..s.opts.clone() };
    assert_eq!(cmd_evaluate(&one, None).exit_code, 0);
    let a = read_all(&s.layout.results_dir());
    let four = GlobalOptions { jobs: 4, ..s.opts.clone() };
    assert_eq!(cmd_evaluate(&four, None).exit_code, 0);
    assert_eq!(read_all(&s.layout.results_dir()), a);
}

#[test]
fn report_reads_values_without_recomputing() {
    let s = trained();
    assert_eq!(cmd_attack(&s.opts, 1).exit_code, 0);
    assert_eq!(cmd_evaluate(&s.opts, None).exit_code, 0);
    let results = s.layout.results_dir();
    let out = cmd_report(&results);
    assert_eq!(out.exit_code, 0, "{}", out.message);
    let summary = fs::read(results.join("summary.csv")).unwrap();
    let acc = read_matrix(&results.join("accuracy.csv")).unwrap();
    let mut r = csv::Reader::from_path(results.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "frame");
    let baseline: f64 = rows[0][1].parse().unwrap();
    let attacked: f64 = rows[0][2].parse().unwrap();
    assert_eq!(baseline, acc.get("baseline", "frame").unwrap());
    assert_eq!(attacked, acc.get("frame", "frame").unwrap());
    assert_eq!(cmd_report(&results).exit_code, 0);
    assert_eq!(fs::read(results.join("summary.csv")).unwrap(), summary, "summary must be stable");

    fs::remove_file(results.join("fid_proxy.csv")).unwrap();
    let out = cmd_report(&results);
    assert_eq!(out.exit_code, 1);
    assert!(out.message.contains("fid_proxy.csv"), "{}", out.message);
}

#[test]
fn selfcheck_passes_in_process() {
    let out = cmd_selfcheck();
    assert_eq!(out.exit_code, 0, "{}", out.message);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crafted"))
}

#[test]
fn binary_exit_codes_and_mutation_hook() {
    let ok = binary().arg("selfcheck").output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let mutated = binary().arg("selfcheck").env("CRAFTED_SELFCHECK_MUTATION", "project_gradient_sign").output().unwrap();
    assert_eq!(mutated.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mutated.stderr).contains("FAIL"));
    let missing = binary().args(["--config", "/no/such.json", "train-base"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
}

#[test]
fn output_root_env_override_and_seed_flag() {
    let s = setup();
    let root = tempfile::tempdir().unwrap();
    let run = binary()
        .args(["--config", s.opts.config.as_ref().unwrap().to_str().unwrap(), "--seed", "5", "train-base"])
        .env("CRAFTED_OUT", root.path())
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let mut cfg = s.cfg.clone();
    cfg.seed_base = 5;
    let exp = root.path().join(format!("exp-{}", cfg.hash()));
    assert!(exp.join("base/predictor.ckpt").is_file());
    let written = ExperimentConfig::load(&exp.join("config.json")).unwrap();
    assert_eq!(written.seed_base, 5);
}
