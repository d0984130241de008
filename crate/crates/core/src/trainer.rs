//! Empirical risk minimization with stratified mini-batches and Adam.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{cl_risk, mcl_risk, mcul_risk, ordinary_risk, Correction, RiskOutput};
use crate::matrix::Matrix;
use crate::model::{Architecture, Model};
use crate::optim::{adam_step, AdamState};
use crate::scalar::Real;
use crate::weaklabel::{MixtureWeights, WeakDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Supervised risk on true labels.
    Ordinary,
    Mcl,
    Mcul,
    MclCl,
    MculCl,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Ordinary,
        Estimator::Mcl,
        Estimator::Mcul,
        Estimator::MclCl,
        Estimator::MculCl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ordinary => "ordinary",
            Estimator::Mcl => "mcl",
            Estimator::Mcul => "mcul",
            Estimator::MclCl => "mcl_cl",
            Estimator::MculCl => "mcul_cl",
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Estimator::Mcul | Estimator::MculCl)
    }

    pub fn uses_priors(self) -> bool {
        matches!(self, Estimator::MclCl | Estimator::MculCl)
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown estimator {s:?}")))
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub estimator: Estimator,
    pub weights: MixtureWeights,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Validation accuracy is measured every this many iterations (and at the end).
    pub eval_every: usize,
    pub correction: Correction,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch size and eval interval must be >= 1".into(),
            ));
        }
        if self.estimator != Estimator::Ordinary {
            self.weights
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
            if self.weights.alpha.len() != k - 1 {
                return Err(Error::Config(format!(
                    "alpha has {} entries but K = {k}",
                    self.weights.alpha.len()
                )));
            }
            if self.estimator.uses_priors() && self.weights.lambda.is_none() {
                return Err(Error::Config(format!(
                    "estimator {} needs class priors (lambda)",
                    self.estimator
                )));
            }
        }
        Ok(())
    }
}

/// Training input: weakly labeled data, or fully labeled data for the ordinary estimator.
#[derive(Debug, Clone, Copy)]
pub enum TrainSet<'a> {
    Weak(&'a WeakDataset),
    Labeled(&'a LabeledDataset),
}

impl TrainSet<'_> {
    fn num_classes(&self) -> usize {
        match self {
            TrainSet::Weak(w) => w.num_classes(),
            TrainSet::Labeled(l) => l.num_classes(),
        }
    }

    fn features(&self) -> &Matrix<f64> {
        match self {
            TrainSet::Weak(w) => w.features(),
            TrainSet::Labeled(l) => l.features(),
        }
    }
}

/// A set of row indices sampled together; `required` strata appear in every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub indices: Vec<usize>,
    pub required: bool,
}

/// Strata the estimator needs, in a fixed order.
pub fn strata_for(
    set: TrainSet<'_>,
    estimator: Estimator,
    weights: &MixtureWeights,
) -> Result<Vec<Stratum>> {
    let wd = match (set, estimator) {
        (TrainSet::Labeled(ds), Estimator::Ordinary) => {
            return Ok(vec![Stratum {
                name: "labeled".into(),
                indices: (0..ds.len()).collect(),
                required: true,
            }])
        }
        (TrainSet::Weak(wd), e) if e != Estimator::Ordinary => wd,
        (_, e) => {
            return Err(Error::Config(format!(
                "estimator {e} does not match the kind of training data"
            )))
        }
    };
    let k = wd.num_classes();
    let mut strata = Vec::new();
    if estimator.uses_priors() {
        let pooled: Vec<usize> = (1..k).flat_map(|c| wd.group(c).iter().copied()).collect();
        strata.push(Stratum {
            name: "labeled".into(),
            indices: pooled,
            required: true,
        });
    } else {
        for c in 1..k {
            let a = weights.alpha.get(c - 1).copied().unwrap_or(0.0);
            if a > 0.0 || !wd.group(c).is_empty() {
                strata.push(Stratum {
                    name: format!("c={c}"),
                    indices: wd.group(c).to_vec(),
                    required: a > 0.0,
                });
            }
        }
    }
    if estimator.uses_unlabeled() {
        strata.push(Stratum {
            name: "unlabeled".into(),
            indices: wd.unlabeled().to_vec(),
            required: weights.gamma > 0.0,
        });
    }
    for s in &strata {
        if s.required && s.indices.is_empty() {
            return Err(Error::Config(format!(
                "estimator {estimator} needs stratum {} but the data has none",
                s.name
            )));
        }
    }
    strata.retain(|s| !s.indices.is_empty());
    Ok(strata)
}

/// One epoch of stratified batches.
///
/// With `N` total samples there are `B = ceil(N / batch_size)` batches; each stratum is
/// shuffled and cut into `B` near-equal consecutive pieces, so batch quotas are
/// proportional to stratum sizes and every sample appears once. A required stratum with
/// fewer than `B` samples is cycled (reshuffling on each wrap) so that every batch still
/// holds at least one of its samples.
pub fn stratified_batches(
    strata: &[Stratum],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let total: usize = strata.iter().map(|s| s.indices.len()).sum();
    let nb = total.div_ceil(batch_size.max(1)).max(1);
    let mut batches = vec![Vec::new(); nb];
    for s in strata {
        let n = s.indices.len();
        let mut perm = s.indices.clone();
        perm.shuffle(rng);
        if n >= nb || !s.required {
            for (b, batch) in batches.iter_mut().enumerate() {
                batch.extend_from_slice(&perm[b * n / nb..(b + 1) * n / nb]);
            }
        } else {
            let mut pos = 0;
            for batch in batches.iter_mut() {
                if pos == n {
                    perm.shuffle(rng);
                    pos = 0;
                }
                batch.push(perm[pos]);
                pos += 1;
            }
        }
    }
    batches
}

/// Stratified batches for one epoch of `wd` under the given estimator.
pub fn make_batches(
    wd: &WeakDataset,
    estimator: Estimator,
    weights: &MixtureWeights,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    let strata = strata_for(TrainSet::Weak(wd), estimator, weights)?;
    Ok(stratified_batches(
        &strata,
        batch_size,
        &mut ChaCha8Rng::seed_from_u64(seed),
    ))
}

/// Evaluates the configured estimator on a batch of scores.
pub fn batch_risk<T: Real>(
    set: TrainSet<'_>,
    cfg: &TrainConfig,
    rows: &[usize],
    scores: &Matrix<T>,
) -> Result<RiskOutput<T>> {
    let w = &cfg.weights;
    match set {
        TrainSet::Labeled(ds) => {
            let labels: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
            ordinary_risk(scores, &labels)
        }
        TrainSet::Weak(wd) => {
            let sets: Vec<&[usize]> = rows.iter().map(|&i| wd.csets()[i].as_slice()).collect();
            match cfg.estimator {
                Estimator::Mcl => mcl_risk(scores, &sets, &w.alpha, cfg.correction),
                Estimator::Mcul => mcul_risk(scores, &sets, &w.alpha, w.gamma, cfg.correction),
                Estimator::MclCl | Estimator::MculCl => {
                    let gamma = if cfg.estimator == Estimator::MclCl {
                        0.0
                    } else {
                        w.gamma
                    };
                    let lambda = w
                        .lambda
                        .ok_or_else(|| Error::Config("missing lambda".into()))?;
                    cl_risk(scores, &sets, gamma, lambda, cfg.correction)
                }
                Estimator::Ordinary => Err(Error::Config(
                    "ordinary estimator needs labeled data".into(),
                )),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Mean training-batch risk since the previous record.
    pub risk: f64,
    /// `None` when no validation set was supplied.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Snapshot with the best validation accuracy (earliest on ties), else the final model.
    pub model: Model<T>,
    pub final_model: Model<T>,
    pub history: Vec<HistoryRecord>,
    pub best_iteration: Option<usize>,
}

/// Writes history as `iteration,risk,val_accuracy` CSV.
pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut out = String::from("iteration,risk,val_accuracy\n");
    for h in history {
        let acc = h.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", h.iteration, h.risk, acc);
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

/// Fraction of samples whose predicted class matches the true label.
pub fn evaluate<T: Real>(model: &Model<T>, ds: &LabeledDataset) -> Result<f64> {
    evaluate_features(model, &ds.features().cast(), ds.labels())
}

fn evaluate_features<T: Real>(model: &Model<T>, x: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Runs `max_iterations` Adam steps on the configured estimator.
///
/// Each step draws the next stratified batch, computes scores, the estimator's risk and
/// score gradient, back-propagates, and applies Adam. Batches are regenerated every
/// epoch from one seeded stream; the model is initialized from the same seed.
pub fn train<T: Real>(
    set: TrainSet<'_>,
    validation: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let k = set.num_classes();
    cfg.validate(k)?;
    let strata = strata_for(set, cfg.estimator, &cfg.weights)?;
    let x: Matrix<T> = set.features().cast();
    let d = x.cols();
    if let Some(v) = validation {
        if v.dim() != d || v.num_classes() != k {
            return Err(Error::Config(
                "validation set shape differs from training data".into(),
            ));
        }
    }
    let val = validation.map(|v| (v.features().cast::<T>(), v.labels()));

    let mut model = Model::<T>::init(cfg.architecture, d, k, cfg.seed)?;
    let mut adam = AdamState::new(model.params().len());
    let lr = T::of(cfg.learning_rate);
    let decay = T::of(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut iteration = 0;
    let mut risk_sum = 0.0;
    let mut risk_n = 0usize;

    'outer: while iteration < cfg.max_iterations {
        for rows in stratified_batches(&strata, cfg.batch_size, &mut rng) {
            let xb = x.select_rows(&rows);
            let (scores, cache) = model.forward_cached(&xb)?;
            let out = batch_risk(set, cfg, &rows, &scores)?;
            let risk = out.total().to_f64_lossless();
            if !risk.is_finite() {
                return Err(Error::Divergence {
                    iteration: iteration + 1,
                    risk,
                });
            }
            let grad = model.backward_with(&xb, &cache, &out.grad)?;
            adam_step(model.params_mut(), &grad, &mut adam, lr, decay)?;
            iteration += 1;
            risk_sum += risk;
            risk_n += 1;

            if iteration % cfg.eval_every == 0 || iteration == cfg.max_iterations {
                let val_accuracy = match &val {
                    Some((vx, vy)) => Some(evaluate_features(&model, vx, vy)?),
                    None => None,
                };
                if let Some(acc) = val_accuracy {
                    if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                        best = Some((acc, iteration, model.clone()));
                    }
                }
                history.push(HistoryRecord {
                    iteration,
                    risk: risk_sum / risk_n as f64,
                    val_accuracy,
                });
                risk_sum = 0.0;
                risk_n = 0;
            }
            if iteration == cfg.max_iterations {
                break 'outer;
            }
        }
    }

    let (chosen, best_iteration) = match best {
        Some((_, it, m)) => (m, Some(it)),
        None => (model.clone(), None),
    };
    Ok(TrainOutcome {
        model: chosen,
        final_model: model,
        history,
        best_iteration,
    })
}
