//! Experiment configuration: a JSON document whose every key has a default.
//!
//! Loading is strict. Unknown keys are rejected and every validation failure
//! is reported, not just the first. The materialised config is hashed to name
//! the experiment directory.

use std::fmt;
use std::path::{Path, PathBuf};

use crafted_core::attack::{AdversarialObjective, AttackConfig, EarlyStop};
use crafted_core::diffusion::{InferencePlan, NoiseSchedule, ScheduleKind};
use crafted_core::eval::EvalSettings;
use crafted_core::model::{
    ClassifierArch, ClassifierTrainingConfig, PredictorArch, PredictorTrainingConfig, ShapesConfig,
};
use crafted_core::{derive_seed, SeedRole};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ENV: &str = "CRAFTED_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { num_train_steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { num_classes: 2, image_size: 16, train_per_class: 200, test_per_class: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub base_channels: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cond_dropout: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            hidden_dim: 128,
            time_embed_dim: 32,
            epochs: 100,
            batch_size: 32,
            learning_rate: 2e-3,
            cond_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { conv1_channels: 8, conv2_channels: 16, feature_dim: 64, epochs: 3, batch_size: 32, learning_rate: 2e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveConfig {
    #[default]
    Untargeted,
    Targeted { label: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub threshold: f64,
    pub check_every: usize,
    pub patience: usize,
    pub probe_samples: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        let d = EarlyStop::default();
        Self { threshold: 0.25, check_every: 3, patience: d.patience, probe_samples: d.probe_samples }
    }
}

/// Ball radius for the desk-scale model. The core's default (0.05) is sized
/// for a much larger network; at ~155k parameters a hard target class needs
/// the extra room to flip within 200 epochs.
pub const DESK_ETA: f64 = 0.08;

/// Fine-tuning hyperparameters. The target class is chosen per run on the
/// command line, so attacks on different classes share one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    pub inference_steps: usize,
    pub grad_split_k: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_noises: usize,
    pub eta: f64,
    pub boundary_fraction: f64,
    pub max_epochs: usize,
    pub guidance_scale: f64,
    pub objective: ObjectiveConfig,
    /// `null` disables early stopping.
    pub early_stop: Option<EarlyStopConfig>,
    /// Also fine-tune the class-embedding table (frozen by default).
    pub tune_class_embedding: bool,
}

impl Default for AttackSettings {
    fn default() -> Self {
        let d = AttackConfig::default();
        Self {
            inference_steps: d.inference_steps,
            grad_split_k: d.grad_split_k,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            clip_norm: d.clip_norm,
            batch_noises: d.batch_noises,
            eta: DESK_ETA,
            boundary_fraction: d.boundary_fraction,
            max_epochs: d.max_epochs,
            guidance_scale: d.guidance_scale,
            objective: ObjectiveConfig::Untargeted,
            early_stop: Some(EarlyStopConfig::default()),
            tune_class_embedding: d.tune_class_embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub images_per_cell: usize,
    pub guidance_scale: f64,
    pub regularization: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let d = EvalSettings::default();
        Self { images_per_cell: d.images_per_cell, guidance_scale: d.guidance_scale, regularization: d.regularization }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed_base: u64,
    pub output_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub dataset: DatasetConfig,
    pub predictor: PredictorConfig,
    pub classifier: ClassifierConfig,
    pub attack: AttackSettings,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed_base: 0,
            output_dir: PathBuf::from("runs"),
            schedule: ScheduleConfig::default(),
            dataset: DatasetConfig::default(),
            predictor: PredictorConfig::default(),
            classifier: ClassifierConfig::default(),
            attack: AttackSettings::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid JSON: {0}")]
    Parse(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config:\n{}", ValidationList(.0))]
    Invalid(Vec<String>),
}

struct ValidationList<'a>(&'a [String]);

impl fmt::Display for ValidationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {e}")?;
        }
        Ok(())
    }
}

/// Key paths present in `given` but absent from the schema `reference`.
fn unknown_keys(given: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else {
        return;
    };
    for (k, v) in g {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => out.push(path),
            Some(rv) => unknown_keys(v, rv, &path, out),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON document; blank input yields the defaults.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        if !value.is_object() {
            return Err(ConfigError::Parse("top level must be an object".into()));
        }
        let reference = serde_json::to_value(Self::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&value, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every constraint and reports all failures together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        let s = &self.schedule;
        check(s.num_train_steps >= 1, "schedule.num_train_steps must be at least 1");
        check(
            0.0 < s.beta_start && s.beta_start <= s.beta_end && s.beta_end < 1.0,
            "schedule requires 0 < beta_start <= beta_end < 1",
        );
        let d = &self.dataset;
        check((2..=4).contains(&d.num_classes), "dataset.num_classes must be in 2..=4");
        check(d.image_size >= 4 && d.image_size % 4 == 0, "dataset.image_size must be a positive multiple of 4");
        check(d.train_per_class > 0, "dataset.train_per_class must be positive");
        check(d.test_per_class > 0, "dataset.test_per_class must be positive");
        let p = &self.predictor;
        check(p.base_channels > 0 && p.hidden_dim > 0, "predictor widths must be positive");
        check(p.time_embed_dim >= 2 && p.time_embed_dim % 2 == 0, "predictor.time_embed_dim must be even and >= 2");
        check(p.batch_size > 0, "predictor.batch_size must be positive");
        check(p.learning_rate > 0.0, "predictor.learning_rate must be positive");
        check((0.0..1.0).contains(&p.cond_dropout), "predictor.cond_dropout must lie in [0, 1)");
        let c = &self.classifier;
        check(c.conv1_channels > 0 && c.conv2_channels > 0 && c.feature_dim > 0, "classifier widths must be positive");
        check(c.batch_size > 0, "classifier.batch_size must be positive");
        check(c.learning_rate > 0.0, "classifier.learning_rate must be positive");
        let a = &self.attack;
        check(a.inference_steps >= 1, "attack.inference_steps must be at least 1");
        check(
            a.grad_split_k >= 1 && a.grad_split_k <= a.inference_steps,
            "attack.grad_split_k must satisfy 0 < grad_split_k <= inference_steps",
        );
        check(a.inference_steps <= s.num_train_steps, "attack.inference_steps cannot exceed schedule.num_train_steps");
        check(a.learning_rate > 0.0, "attack.learning_rate must be positive");
        check(a.weight_decay >= 0.0, "attack.weight_decay must be nonnegative");
        check(a.clip_norm > 0.0, "attack.clip_norm must be positive");
        check(a.batch_noises > 0, "attack.batch_noises must be positive");
        check(a.eta > 0.0, "attack.eta must be positive");
        check(a.boundary_fraction > 0.0 && a.boundary_fraction < 1.0, "attack.boundary_fraction must lie in (0, 1)");
        check(a.max_epochs > 0, "attack.max_epochs must be positive");
        check(
            a.max_epochs * a.batch_noises <= crafted_core::seed::ROLE_STRIDE as usize,
            "attack.max_epochs * attack.batch_noises exceeds the per-role seed range",
        );
        check(a.guidance_scale.is_finite(), "attack.guidance_scale must be finite");
        if let ObjectiveConfig::Targeted { label } = a.objective {
            check(label < d.num_classes, "attack.objective.targeted.label is not a valid class");
        }
        if let Some(es) = &a.early_stop {
            check((0.0..=1.0).contains(&es.threshold), "attack.early_stop.threshold must lie in [0, 1]");
            check(
                es.check_every > 0 && es.patience > 0 && es.probe_samples > 0,
                "attack.early_stop counts must be positive",
            );
        }
        let e = &self.evaluation;
        check(e.images_per_cell > 0, "evaluation.images_per_cell must be positive");
        check(
            e.images_per_cell * d.num_classes <= crafted_core::seed::ROLE_STRIDE as usize,
            "evaluation.images_per_cell * dataset.num_classes exceeds the per-role seed range",
        );
        check(e.guidance_scale.is_finite(), "evaluation.guidance_scale must be finite");
        check(e.regularization >= 0.0, "evaluation.regularization must be nonnegative");
        if errs.is_empty() { Ok(()) } else { Err(ConfigError::Invalid(errs)) }
    }

    /// Short hex digest of everything except `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// `$CRAFTED_OUT` when set, otherwise `output_dir`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_root().join(format!("exp-{}", self.hash()))
    }

    pub fn schedule(&self) -> crafted_core::Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::build(s.num_train_steps, s.beta_start, s.beta_end, ScheduleKind::Linear)
    }

    pub fn shapes(&self) -> ShapesConfig {
        let d = &self.dataset;
        ShapesConfig {
            num_classes: d.num_classes,
            image_size: d.image_size,
            train_per_class: d.train_per_class,
            test_per_class: d.test_per_class,
        }
    }

    pub fn predictor_arch(&self) -> PredictorArch {
        PredictorArch {
            image_channels: 1,
            image_size: self.dataset.image_size,
            base_channels: self.predictor.base_channels,
            hidden_dim: self.predictor.hidden_dim,
            time_embed_dim: self.predictor.time_embed_dim,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn classifier_arch(&self) -> ClassifierArch {
        ClassifierArch {
            image_channels: 1,
            image_size: self.dataset.image_size,
            conv1_channels: self.classifier.conv1_channels,
            conv2_channels: self.classifier.conv2_channels,
            feature_dim: self.classifier.feature_dim,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn seed(&self, role: SeedRole) -> crafted_core::Result<u64> {
        derive_seed(self.seed_base, role, 0)
    }

    pub fn predictor_training(&self) -> crafted_core::Result<PredictorTrainingConfig> {
        let p = &self.predictor;
        Ok(PredictorTrainingConfig {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            cond_dropout: p.cond_dropout,
            seed: self.seed(SeedRole::PredictorTraining)?,
        })
    }

    pub fn classifier_training(&self) -> crafted_core::Result<ClassifierTrainingConfig> {
        let c = &self.classifier;
        Ok(ClassifierTrainingConfig {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: self.seed(SeedRole::ClassifierTraining)?,
        })
    }

    pub fn attack_config(&self, target_class: usize) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            inference_steps: a.inference_steps,
            grad_split_k: a.grad_split_k,
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            clip_norm: a.clip_norm,
            batch_noises: a.batch_noises,
            eta: a.eta,
            boundary_fraction: a.boundary_fraction,
            max_epochs: a.max_epochs,
            target_class,
            guidance_scale: a.guidance_scale,
            objective: match a.objective {
                ObjectiveConfig::Untargeted => AdversarialObjective::Untargeted,
                ObjectiveConfig::Targeted { label } => AdversarialObjective::Targeted { label },
            },
            early_stop: a.early_stop.as_ref().map(|e| EarlyStop {
                threshold: e.threshold,
                check_every: e.check_every,
                patience: e.patience,
                probe_samples: e.probe_samples,
            }),
            seed_base: self.seed_base,
            tune_class_embedding: a.tune_class_embedding,
        }
    }

    /// Plan used by the attack: `inference_steps` steps, the last
    /// `grad_split_k` of them differentiated.
    pub fn attack_plan(&self, schedule: &NoiseSchedule) -> crafted_core::Result<InferencePlan> {
        InferencePlan::uniform(schedule, self.attack.inference_steps, self.attack.grad_split_k)
    }

    /// Plan used for evaluation sampling (same timesteps, no gradient phase).
    pub fn eval_plan(&self, schedule: &NoiseSchedule) -> crafted_core::Result<InferencePlan> {
        self.attack_plan(schedule)?.with_grad_split(0)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        let e = &self.evaluation;
        EvalSettings {
            images_per_cell: e.images_per_cell,
            guidance_scale: e.guidance_scale,
            seed_base: self.seed_base,
            regularization: e.regularization,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json_str("  \n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.attack.eta, DESK_ETA);
        assert_eq!(cfg.dataset.num_classes, 2);
        assert_eq!(cfg.attack.inference_steps, 20);
        assert_eq!(cfg.attack.grad_split_k, 10);
        assert_eq!(cfg.attack.weight_decay, 1e-2);
        assert_eq!(cfg.attack.clip_norm, 1.0);
        assert_eq!(cfg.attack.batch_noises, 8);
        assert_eq!(cfg.attack.boundary_fraction, 0.98);
        assert_eq!(ExperimentConfig::from_json_str("{}").unwrap(), cfg);
    }

    #[test]
    fn shipped_desk_config_equals_defaults() {
        let desk = include_str!("../../../configs/desk.json");
        assert_eq!(ExperimentConfig::from_json_str(desk).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::from_json_str(r#"{"attack": {"etaa": 1, "k": 2}, "bogus": 3}"#).unwrap_err();
        let ConfigError::UnknownKeys(keys) = err else { panic!("{err}") };
        assert_eq!(keys, vec!["attack.etaa", "attack.k", "bogus"]);
    }

    #[test]
    fn every_validation_failure_is_reported() {
        let err = ExperimentConfig::from_json_str(
            r#"{"attack": {"grad_split_k": 30, "eta": -1}, "dataset": {"num_classes": 7}}"#,
        )
        .unwrap_err();
        let ConfigError::Invalid(list) = &err else { panic!("{err}") };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list.iter().any(|e| e.contains("grad_split_k")));
        assert!(list.iter().any(|e| e.contains("eta")));
        assert!(list.iter().any(|e| e.contains("num_classes")));
    }

    #[test]
    fn emitted_config_parses_back_identically() {
        let mut cfg = ExperimentConfig::default();
        cfg.attack.objective = ObjectiveConfig::Targeted { label: 1 };
        cfg.attack.early_stop = None;
        cfg.attack.learning_rate = 3.3e-5;
        cfg.seed_base = 17;
        let back = ExperimentConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_settings() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.attack.eta = 0.06;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn type_errors_are_parse_errors() {
        assert!(matches!(
            ExperimentConfig::from_json_str(r#"{"attack": {"eta": "big"}}"#),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(ExperimentConfig::from_json_str("[1]"), Err(ConfigError::Parse(_))));
    }
}
