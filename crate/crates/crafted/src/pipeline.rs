//! The experiment pipeline as library calls: base training, attack,
//! evaluation. The CLI commands are thin wrappers around these.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crafted_core::attack::{crafted_finetune, l2_norm, AttackLog};
use crafted_core::eval::{evaluate_cells, generate_cell, EvaluationReport};
use crafted_core::model::{
    train_classifier, train_noise_predictor, Classifier, ClassifierReport, Dataset, NoisePredictor, ShapeKind,
};
use crafted_core::{SeedRole, Tensor};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::ExperimentConfig;

/// Canonical file locations inside an experiment directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.experiment_dir())
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn base_dir(&self) -> PathBuf {
        self.root.join("base")
    }

    pub fn base_predictor(&self) -> PathBuf {
        self.base_dir().join("predictor.ckpt")
    }

    pub fn base_classifier(&self) -> PathBuf {
        self.base_dir().join("classifier.ckpt")
    }

    pub fn predictor_loss(&self) -> PathBuf {
        self.base_dir().join("predictor_loss.csv")
    }

    pub fn classifier_loss(&self) -> PathBuf {
        self.base_dir().join("classifier_loss.csv")
    }

    pub fn attacks_dir(&self) -> PathBuf {
        self.root.join("attacks")
    }

    pub fn attack_checkpoint(&self, target: usize) -> PathBuf {
        self.attacks_dir().join(format!("target-{target}.ckpt"))
    }

    pub fn attack_log(&self, target: usize) -> PathBuf {
        self.attacks_dir().join(format!("target-{target}_log.csv"))
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    ShapeKind::ALL.iter().take(num_classes).map(|k| k.name().to_string()).collect()
}

pub fn provenance(cfg: &ExperimentConfig, attack_target: Option<usize>, description: &str) -> Provenance {
    Provenance {
        seed_base: cfg.seed_base,
        config_hash: cfg.hash(),
        attack_target,
        description: description.to_string(),
    }
}

/// Trained base models and their loss curves.
#[derive(Debug, Clone)]
pub struct BaseModels {
    pub predictor: NoisePredictor<f32>,
    pub classifier: Classifier<f32>,
    pub predictor_curve: Vec<f64>,
    pub classifier_report: ClassifierReport,
}

pub fn train_base(cfg: &ExperimentConfig) -> Result<BaseModels> {
    let schedule = cfg.schedule()?;
    let data = Dataset::<f32>::shapes(&cfg.shapes(), cfg.seed_base).context("building dataset")?;
    let mut classifier = Classifier::init(cfg.classifier_arch(), cfg.seed(SeedRole::ClassifierInit)?)?;
    let classifier_report =
        train_classifier(&mut classifier, &data, &cfg.classifier_training()?).context("training classifier")?;
    let mut predictor = NoisePredictor::init(cfg.predictor_arch(), cfg.seed(SeedRole::PredictorInit)?)?;
    let predictor_curve = train_noise_predictor(&mut predictor, &data, &schedule, &cfg.predictor_training()?)
        .context("training noise predictor")?;
    Ok(BaseModels { predictor, classifier, predictor_curve, classifier_report })
}

pub fn run_attack(
    cfg: &ExperimentConfig,
    base: &NoisePredictor<f32>,
    classifier: &Classifier<f32>,
    target_class: usize,
) -> Result<(NoisePredictor<f32>, AttackLog)> {
    let schedule = cfg.schedule()?;
    let plan = cfg.attack_plan(&schedule)?;
    let attack = cfg.attack_config(target_class);
    Ok(crafted_finetune(base, classifier, &schedule, &plan, &attack)?)
}

/// `||theta - theta_0||_2` between two predictors of the same architecture.
pub fn parameter_distance(a: &NoisePredictor<f32>, b: &NoisePredictor<f32>) -> Result<f64> {
    anyhow::ensure!(a.arch() == b.arch(), "models have different architectures");
    let d: Vec<f64> = a.params().iter().zip(b.params()).map(|(&x, &y)| x as f64 - y as f64).collect();
    Ok(l2_norm(&d))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("starting worker pool")
}

/// Generates every `(model, class)` cell on a pool of `jobs` workers and
/// assembles the report. The output does not depend on `jobs`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    baseline: &NoisePredictor<f32>,
    attacked: &[(String, NoisePredictor<f32>)],
    classifier: &Classifier<f32>,
    jobs: usize,
) -> Result<EvaluationReport> {
    let schedule = cfg.schedule()?;
    let plan = cfg.eval_plan(&schedule)?;
    let settings = cfg.eval_settings();
    let names = class_names(cfg.dataset.num_classes);
    let models: Vec<&NoisePredictor<f32>> = std::iter::once(baseline).chain(attacked.iter().map(|(_, m)| m)).collect();
    let jobs_list: Vec<(usize, usize)> =
        (0..models.len()).flat_map(|m| (0..names.len()).map(move |c| (m, c))).collect();
    let cells: Vec<Vec<Tensor<f32>>> = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|&(m, c)| generate_cell(models[m], &schedule, &plan, c, &settings))
            .collect::<crafted_core::Result<_>>()
    })?;
    let mut per_model = cells.chunks(names.len()).map(<[_]>::to_vec);
    let base_cells = per_model.next().expect("baseline cells");
    let rows: Vec<(String, Vec<Vec<Tensor<f32>>>)> =
        attacked.iter().map(|(label, _)| label.clone()).zip(per_model).collect();
    Ok(evaluate_cells(classifier, &names, &base_cells, &rows, &settings)?)
}

/// Saves a predictor checkpoint and returns its path.
pub fn save_predictor(path: &Path, model: &NoisePredictor<f32>, prov: Provenance) -> Result<PathBuf> {
    Checkpoint::from_predictor(model, prov).save(path)?;
    Ok(path.to_path_buf())
}
