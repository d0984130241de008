//! The end-to-end experimental protocol as configuration: load, split, weaken, train, evaluate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_csv, load_idx, split, split_indices, synth_blobs, CsvOptions, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::losses::Correction;
use crate::model::{Architecture, Model};
use crate::trainer::{evaluate, train, Estimator, HistoryRecord, TrainConfig, TrainSet};
use crate::weaklabel::{
    default_alpha, default_size_dist, default_unlabeled_fraction, estimate_priors, weaken_traced,
    MixtureWeights, SizeMode, WeakDataset, WeakenConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// One CSV file; split into train and test by `test_ratio`.
    Csv {
        path: PathBuf,
        #[serde(default = "last_column")]
        label_column: isize,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// IDX image/label pairs. Every listed pair is concatenated before splitting.
    Idx {
        images: Vec<PathBuf>,
        labels: Vec<PathBuf>,
    },
    /// Gaussian blobs from [`synth_blobs`].
    Synthetic {
        classes: usize,
        dim: usize,
        samples: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn last_column() -> isize {
    -1
}

fn yes() -> bool {
    true
}

fn default_separation() -> f64 {
    3.0
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } => stem(path),
            DatasetSource::Idx { images, .. } => {
                images.first().map(|p| stem(p)).unwrap_or_default()
            }
            DatasetSource::Synthetic { classes, dim, .. } => format!("synthetic-k{classes}-d{dim}"),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Csv { path, .. } => vec![path],
            DatasetSource::Idx { images, labels } => {
                images.iter().chain(labels).map(PathBuf::as_path).collect()
            }
            DatasetSource::Synthetic { .. } => Vec::new(),
        }
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DatasetSource::Csv {
                path,
                label_column,
                normalize,
            } => {
                let mut ds = load_csv(
                    path,
                    CsvOptions {
                        label_column: *label_column,
                        ..Default::default()
                    },
                )?;
                if *normalize {
                    ds.normalize_min_max();
                }
                Ok(ds)
            }
            DatasetSource::Idx { images, labels } => {
                let mut all: Option<LabeledDataset> = None;
                for (i, l) in images.iter().zip(labels) {
                    let part = load_idx(i, l)?;
                    all = Some(match all {
                        Some(a) => a.concat(&part)?,
                        None => part,
                    });
                }
                all.ok_or_else(|| Error::Config("idx source lists no files".into()))
            }
            DatasetSource::Synthetic {
                classes,
                dim,
                samples,
                separation,
                seed,
            } => synth_blobs(*classes, *dim, *samples, *separation, *seed),
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Share of training samples left unlabeled: a number in `[0, 1)`, or `"auto"` for the
/// size-dependent default (0.99 below 50000 samples, 0.995 otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnlabeledFraction {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Default for UnlabeledFraction {
    fn default() -> Self {
        UnlabeledFraction::Value(0.0)
    }
}

impl UnlabeledFraction {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            UnlabeledFraction::Value(v) => v,
            UnlabeledFraction::Auto(_) => default_unlabeled_fraction(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WeakeningSpec {
    /// Explicit set-size distribution over `c = 1..K-1`; overrides `mu`.
    #[serde(default)]
    pub size_dist: Option<Vec<f64>>,
    /// Center of the `exp(-(c - mu)^2)` size distribution; defaults to `K/2`.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub unlabeled_fraction: UnlabeledFraction,
    #[serde(default)]
    pub mode: SizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub estimator: Estimator,
    /// Mixture weights; the `n_c / (K-c)^2` rule on the training groups when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: f64,
    /// Size priors for the class-prior estimators; estimated from group counts when absent.
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
    #[serde(default = "linear")]
    pub architecture: Architecture,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub correction: Correction,
}

fn linear() -> Architecture {
    Architecture::Linear
}

fn default_test_ratio() -> f64 {
    0.1
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    /// Held-out share of the loaded data used for testing.
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,
    /// Share of the (weakened) training data held out, with true labels, for model selection.
    #[serde(default)]
    pub validation_ratio: f64,
    #[serde(default)]
    pub weakening: WeakeningSpec,
    pub training: TrainingSpec,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid experiment spec: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for p in self.dataset.paths() {
            if !p.exists() {
                return bad(format!("dataset file {} does not exist", p.display()));
            }
        }
        if let DatasetSource::Idx { images, labels } = &self.dataset {
            if images.len() != labels.len() || images.is_empty() {
                return bad("idx source needs matching nonempty image and label lists".into());
            }
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if !(self.test_ratio > 0.0 && self.test_ratio < 1.0) {
            return bad(format!("test_ratio {} not in (0, 1)", self.test_ratio));
        }
        if !(self.validation_ratio >= 0.0 && self.validation_ratio < 1.0) {
            return bad(format!(
                "validation_ratio {} not in [0, 1)",
                self.validation_ratio
            ));
        }
        if let UnlabeledFraction::Value(v) = self.weakening.unlabeled_fraction {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("unlabeled_fraction {v} not in [0, 1)"));
            }
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0)
            || !(t.weight_decay >= 0.0)
            || t.batch_size == 0
            || t.eval_every == Some(0)
        {
            return bad("learning_rate > 0, weight_decay >= 0, batch_size >= 1 and eval_every >= 1 are required".into());
        }
        if !(0.0..=1.0).contains(&t.gamma) {
            return bad(format!("gamma {} not in [0, 1]", t.gamma));
        }
        Ok(())
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }
}

/// Data of one trial after splitting and weakening.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub train_weak: WeakDataset,
    /// Training rows with their true labels (used by the ordinary estimator).
    pub train_labeled: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: LabeledDataset,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_iteration: Option<usize>,
    pub history: Vec<HistoryRecord>,
    pub model: Model<f64>,
    pub config: TrainConfig,
}

/// Splits off the test set, weakens the rest, optionally holds out validation rows, and
/// resolves the estimator weights from the training groups.
pub fn prepare_trial(
    spec: &ExperimentSpec,
    data: &LabeledDataset,
    trial: usize,
) -> Result<PreparedTrial> {
    let seed = spec.trial_seed(trial);
    let k = data.num_classes();
    let (train_part, test) = split(data, 1.0 - spec.test_ratio, seed)?;

    let w = &spec.weakening;
    let size_dist = match (&w.size_dist, w.mu) {
        (Some(d), _) => d.clone(),
        (None, mu) => default_size_dist(k, mu.unwrap_or(k as f64 / 2.0))?,
    };
    let cfg = WeakenConfig {
        size_dist,
        unlabeled_fraction: w.unlabeled_fraction.resolve(data.len()),
        mode: w.mode,
        seed: seed ^ 0x5eed_0001,
    };
    let (weak_all, labels) = weaken_traced(&train_part, &cfg)?;

    let (train_weak, train_labeled, validation) = if spec.validation_ratio > 0.0 {
        let (tr, va) = split_indices(
            weak_all.len(),
            1.0 - spec.validation_ratio,
            seed ^ 0x5eed_0002,
        )?;
        let val = LabeledDataset::new(
            train_part.features().select_rows(&va),
            va.iter().map(|&i| labels[i]).collect(),
            k,
        )?;
        (weak_all.subset(&tr), train_part.subset(&tr), Some(val))
    } else {
        (weak_all, train_part, None)
    };

    let config = train_config(&spec.training, &train_weak, seed)?;
    Ok(PreparedTrial {
        train_weak,
        train_labeled,
        validation,
        test,
        config,
    })
}

/// Resolves the training configuration against the weak training set: the default
/// `α` rule and estimated size priors fill in whatever the spec leaves out.
pub fn train_config(t: &TrainingSpec, train_weak: &WeakDataset, seed: u64) -> Result<TrainConfig> {
    let k = train_weak.num_classes();
    let alpha = match &t.alpha {
        Some(a) => a.clone(),
        None if t.estimator == Estimator::Ordinary => vec![1.0 / (k - 1) as f64; k - 1],
        None => default_alpha(&train_weak.group_counts(), k)?,
    };
    let mut weights =
        MixtureWeights::new(alpha, t.gamma).map_err(|e| Error::Config(e.to_string()))?;
    if t.estimator.uses_priors() {
        let pi = match &t.pi {
            Some(p) => p.clone(),
            None => estimate_priors(train_weak)?.0,
        };
        weights = weights
            .with_priors(pi)
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(TrainConfig {
        estimator: t.estimator,
        weights,
        architecture: t.architecture,
        learning_rate: t.learning_rate,
        weight_decay: t.weight_decay,
        batch_size: t.batch_size,
        max_iterations: t.max_iterations,
        eval_every: t.eval_every.unwrap_or(t.max_iterations.max(1)),
        correction: t.correction,
        seed,
    })
}

/// Trains on a prepared trial and reports test accuracy of the selected model
/// (best validation accuracy when a validation set exists, otherwise the last iterate).
pub fn run_prepared(prep: &PreparedTrial, trial: usize) -> Result<TrialResult> {
    let set = match prep.config.estimator {
        Estimator::Ordinary => TrainSet::Labeled(&prep.train_labeled),
        _ => TrainSet::Weak(&prep.train_weak),
    };
    let out = train::<f64>(set, prep.validation.as_ref(), &prep.config)?;
    let test_accuracy = evaluate(&out.model, &prep.test)?;
    Ok(TrialResult {
        trial,
        seed: prep.config.seed,
        test_accuracy,
        best_iteration: out.best_iteration,
        history: out.history,
        model: out.model,
        config: prep.config.clone(),
    })
}

pub fn run_trial(
    spec: &ExperimentSpec,
    data: &LabeledDataset,
    trial: usize,
) -> Result<TrialResult> {
    run_prepared(&prepare_trial(spec, data, trial)?, trial)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
