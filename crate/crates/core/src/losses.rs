//! Multi-complementary loss and the empirical risk estimators built from it.
//!
//! All estimators take a batch of precomputed score rows (`n × K`) together with the
//! row-aligned complementary-label sets (empty set = unlabeled sample) and return the
//! risk, a per-group decomposition, and the gradient of the risk with respect to every
//! score. Groups are identified by set size `c = 1..K-1`.
//!
//! | estimator    | per labeled sample of size `c`          | weight            | unlabeled term        |
//! |--------------|-----------------------------------------|-------------------|-----------------------|
//! | [`mcl_risk`] | `L(g) - (K-1)/c · Σ_{y∈Ȳ} ℓ(g,y)`        | `α_c / n_c`       | none                  |
//! | [`mcul_risk`]| `(1-γ)L(g) - (K-1)/c · Σ_{y∈Ȳ} ℓ(g,y)`   | `α_c / n_c`       | `γ/n_u · Σ L(g(x_u))` |
//! | [`cl_risk`]  | `(1-γ)L(g) - λ · Σ_{y∈Ȳ} ℓ(g,y)`         | `1 / n̄` (pooled)  | `γ/n_u · Σ L(g(x_u))` |
//!
//! Reductions run sequentially in row order, so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{combined_loss, cumulative_loss, softmax_into};
use crate::scalar::{sign0, Real};

/// Absolute-value correction applied to the labeled part of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    /// Each labeled sample's combined term `v` becomes `|v|`.
    PerSample,
    /// Each size group's weighted sum becomes its absolute value.
    PerGroup,
}

/// Decomposition of an empirical risk.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBreakdown<T> {
    pub total: T,
    /// Contribution of group `c` at index `c - 1`.
    pub per_group: Vec<T>,
    pub unlabeled_term: T,
}

impl<T: Real> RiskBreakdown<T> {
    fn assemble(per_group: Vec<T>, unlabeled_term: T) -> Self {
        let mut total = unlabeled_term;
        for &g in &per_group {
            total += g;
        }
        Self {
            total,
            per_group,
            unlabeled_term,
        }
    }

    /// `|total - (unlabeled_term + Σ per_group)|`.
    pub fn residual(&self) -> T {
        let s = self
            .per_group
            .iter()
            .fold(self.unlabeled_term, |a, &b| a + b);
        (self.total - s).abs()
    }
}

/// Risk value with its gradient with respect to the score batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskOutput<T> {
    pub breakdown: RiskBreakdown<T>,
    pub grad: Matrix<T>,
}

impl<T: Real> RiskOutput<T> {
    pub fn total(&self) -> T {
        self.breakdown.total
    }
}

fn check_set(k: usize, set: &[usize]) -> Result<()> {
    if set.len() >= k {
        return Err(Error::arg(format!(
            "complementary set of size {} for K = {k}",
            set.len()
        )));
    }
    for (i, &y) in set.iter().enumerate() {
        if y == 0 || y > k {
            return Err(Error::arg(format!(
                "complementary label {y} outside 1..={k}"
            )));
        }
        if set[..i].contains(&y) {
            return Err(Error::arg(format!("duplicate complementary label {y}")));
        }
    }
    Ok(())
}

/// Multi-complementary loss `L(g) - (K-1)/|Ȳ| · Σ_{y∈Ȳ} ℓ(g, y)` and its gradient.
pub fn mc_loss<T: Real>(g: &[T], cset: &[usize]) -> Result<(T, Vec<T>)> {
    let k = g.len();
    if cset.is_empty() {
        return Err(Error::arg("multi-complementary loss needs a nonempty set"));
    }
    check_set(k, cset)?;
    let coef = T::of_usize(k - 1) / T::of_usize(cset.len());
    let mut grad = vec![T::zero(); k];
    let v = combined_loss(g, cset, T::one(), coef, &mut grad);
    Ok((v, grad))
}

/// Ordinary empirical risk `(1/n) Σ ℓ(g(x_i), y_i)`.
pub fn ordinary_risk<T: Real>(scores: &Matrix<T>, labels: &[usize]) -> Result<RiskOutput<T>> {
    let (n, k) = (scores.rows(), scores.cols());
    if labels.len() != n || n == 0 {
        return Err(Error::arg(
            "ordinary risk needs one label per (nonempty) score row",
        ));
    }
    let w = T::one() / T::of_usize(n);
    let mut grad = Matrix::zeros(n, k);
    let mut acc = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > k {
            return Err(Error::arg(format!("label {y} outside 1..={k}")));
        }
        let g = scores.row(i);
        let row = grad.row_mut(i);
        let lse = softmax_into(g, row);
        row[y - 1] -= T::one();
        let v = lse - g[y - 1];
        acc += w * v;
        for p in row.iter_mut() {
            *p = w * *p;
        }
    }
    let mut per_group = vec![T::zero(); k - 1];
    per_group[k - 2] = acc;
    Ok(RiskOutput {
        breakdown: RiskBreakdown::assemble(per_group, T::zero()),
        grad,
    })
}

/// How each labeled sample's term is formed: `cum_coef·L - set_coef(c)·Σℓ`, weighted by `weight(c)`.
struct LabeledSpec<T> {
    cum_coef: T,
    set_coef: Vec<T>,
    weight: Vec<T>,
}

fn validate_batch<T: Real, S: AsRef<[usize]>>(
    scores: &Matrix<T>,
    csets: &[S],
) -> Result<(Vec<usize>, usize)> {
    let k = scores.cols();
    if k < 2 {
        return Err(Error::arg("scores need K >= 2 columns"));
    }
    if csets.len() != scores.rows() {
        return Err(Error::arg(format!(
            "{} score rows but {} label sets",
            scores.rows(),
            csets.len()
        )));
    }
    let mut counts = vec![0usize; k - 1];
    let mut n_u = 0;
    for s in csets {
        let s = s.as_ref();
        check_set(k, s)?;
        if s.is_empty() {
            n_u += 1;
        } else {
            counts[s.len() - 1] += 1;
        }
    }
    Ok((counts, n_u))
}

fn accumulate<T: Real, S: AsRef<[usize]>>(
    scores: &Matrix<T>,
    csets: &[S],
    spec: &LabeledSpec<T>,
    gamma: T,
    n_u: usize,
    correction: Correction,
) -> RiskOutput<T> {
    let (n, k) = (scores.rows(), scores.cols());
    let mut grad = Matrix::zeros(n, k);
    let mut per_group = vec![T::zero(); k - 1];

    for (i, s) in csets.iter().enumerate() {
        let s = s.as_ref();
        if s.is_empty() {
            continue;
        }
        let c = s.len() - 1;
        let w = spec.weight[c];
        if w == T::zero() {
            continue;
        }
        let row = grad.row_mut(i);
        let mut v = combined_loss(scores.row(i), s, spec.cum_coef, spec.set_coef[c], row);
        if correction == Correction::PerSample {
            let sg = sign0(v);
            v = v.abs();
            for p in row.iter_mut() {
                *p = w * sg * *p;
            }
        } else {
            for p in row.iter_mut() {
                *p = w * *p;
            }
        }
        per_group[c] += w * v;
    }

    if correction == Correction::PerGroup {
        let signs: Vec<T> = per_group.iter().map(|&v| sign0(v)).collect();
        for (i, s) in csets.iter().enumerate() {
            let s = s.as_ref();
            if !s.is_empty() {
                let sg = signs[s.len() - 1];
                for p in grad.row_mut(i) {
                    *p *= sg;
                }
            }
        }
        for v in per_group.iter_mut() {
            *v = v.abs();
        }
    }

    let mut unlabeled_term = T::zero();
    if gamma > T::zero() && n_u > 0 {
        let w = gamma / T::of_usize(n_u);
        for (i, s) in csets.iter().enumerate() {
            if !s.as_ref().is_empty() {
                continue;
            }
            let (v, gr) = cumulative_loss(scores.row(i));
            unlabeled_term += w * v;
            for (p, q) in grad.row_mut(i).iter_mut().zip(gr) {
                *p = w * q;
            }
        }
    }

    RiskOutput {
        breakdown: RiskBreakdown::assemble(per_group, unlabeled_term),
        grad,
    }
}

fn check_alpha<T: Real>(alpha: &[f64], k: usize, counts: &[usize]) -> Result<Vec<T>> {
    if alpha.len() != k - 1 {
        return Err(Error::arg(format!(
            "alpha has {} entries, scores have K = {k}",
            alpha.len()
        )));
    }
    alpha
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (&a, &n))| {
            if a > 0.0 && n == 0 {
                Err(Error::BatchComposition(format!(
                    "alpha_{} > 0 but the batch has no sample with {} complementary labels",
                    c + 1,
                    c + 1
                )))
            } else if n == 0 {
                Ok(T::zero())
            } else {
                Ok(T::of(a) / T::of_usize(n))
            }
        })
        .collect()
}

fn check_gamma(gamma: f64, n_u: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::arg(format!("gamma {gamma} not in [0, 1]")));
    }
    if gamma > 0.0 && n_u == 0 {
        return Err(Error::BatchComposition(
            "gamma > 0 but the batch has no unlabeled sample".into(),
        ));
    }
    Ok(())
}

fn size_coefs<T: Real>(k: usize) -> Vec<T> {
    (1..k)
        .map(|c| T::of_usize(k - 1) / T::of_usize(c))
        .collect()
}

/// Empirical MCL risk `Σ_c α_c/n_c Σ_i [L(g(x_i)) - (K-1)/c Σ_{y∈Ȳ_i} ℓ(g(x_i), y)]`.
///
/// Unlabeled rows are ignored.
pub fn mcl_risk<T: Real, S: AsRef<[usize]>>(
    scores: &Matrix<T>,
    csets: &[S],
    alpha: &[f64],
    correction: Correction,
) -> Result<RiskOutput<T>> {
    let (counts, _) = validate_batch(scores, csets)?;
    let k = scores.cols();
    let spec = LabeledSpec {
        cum_coef: T::one(),
        set_coef: size_coefs(k),
        weight: check_alpha(alpha, k, &counts)?,
    };
    Ok(accumulate(scores, csets, &spec, T::zero(), 0, correction))
}

/// Empirical MCUL risk: the MCL risk with a `γ` share of the cumulative-loss term
/// estimated on the unlabeled rows.
///
/// With `γ = 0` this is the same computation as [`mcl_risk`].
pub fn mcul_risk<T: Real, S: AsRef<[usize]>>(
    scores: &Matrix<T>,
    csets: &[S],
    alpha: &[f64],
    gamma: f64,
    correction: Correction,
) -> Result<RiskOutput<T>> {
    let (counts, n_u) = validate_batch(scores, csets)?;
    check_gamma(gamma, n_u)?;
    let k = scores.cols();
    let g = T::of(gamma);
    let spec = LabeledSpec {
        cum_coef: T::one() - g,
        set_coef: size_coefs(k),
        weight: check_alpha(alpha, k, &counts)?,
    };
    Ok(accumulate(scores, csets, &spec, g, n_u, correction))
}

/// Class-prior-aware risk over the pooled labeled rows:
/// `(1/n̄) Σ_i [(1-γ)L(g(x_i)) - λ Σ_{y∈Ȳ_i} ℓ(g(x_i), y)] + γ/n_u Σ L(g(x_u))`.
///
/// `γ = 0` gives the MCL^cl estimator.
pub fn cl_risk<T: Real, S: AsRef<[usize]>>(
    scores: &Matrix<T>,
    csets: &[S],
    gamma: f64,
    lambda: f64,
    correction: Correction,
) -> Result<RiskOutput<T>> {
    let (counts, n_u) = validate_batch(scores, csets)?;
    check_gamma(gamma, n_u)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("lambda {lambda} must be positive")));
    }
    let n_bar: usize = counts.iter().sum();
    if n_bar == 0 {
        return Err(Error::BatchComposition(
            "batch has no labeled sample".into(),
        ));
    }
    let k = scores.cols();
    let g = T::of(gamma);
    let w = T::one() / T::of_usize(n_bar);
    let spec = LabeledSpec {
        cum_coef: T::one() - g,
        set_coef: vec![T::of(lambda); k - 1],
        weight: vec![w; k - 1],
    };
    Ok(accumulate(scores, csets, &spec, g, n_u, correction))
}
