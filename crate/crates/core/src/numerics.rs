//! Softmax cross-entropy and the label-free cumulative loss, with analytic score gradients.
//!
//! Class labels are 1-based throughout the crate: a score vector `g` of length `K`
//! holds the score of class `y` at `g[y - 1]`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Validated score vector `g(x)`: at least two classes, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T>(Vec<T>);

impl<T: Real> ScoreVector<T> {
    pub fn new(scores: Vec<T>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::arg(format!(
                "score vector needs K >= 2 entries, got {}",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("score {i} is not finite")));
        }
        Ok(Self(scores))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn softmax_ce(&self, y: usize) -> Result<(T, Vec<T>)> {
        softmax_ce(&self.0, y)
    }

    pub fn cumulative_loss(&self) -> (T, Vec<T>) {
        cumulative_loss(&self.0)
    }
}

impl<T> AsRef<[T]> for ScoreVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(T::neg_infinity(), T::max)
}

/// `max(v) + ln Σ exp(v_i - max(v))`.
pub fn log_sum_exp<T: Real>(v: &[T]) -> Result<T> {
    if v.is_empty() {
        return Err(Error::arg("log_sum_exp of an empty vector"));
    }
    Ok(lse_unchecked(v))
}

#[inline]
pub(crate) fn lse_unchecked<T: Real>(v: &[T]) -> T {
    let m = max_of(v);
    let s: T = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Writes `softmax(v)` into `out` and returns `log_sum_exp(v)`.
pub fn softmax_into<T: Real>(v: &[T], out: &mut [T]) -> T {
    debug_assert_eq!(v.len(), out.len());
    let m = max_of(v);
    let mut s = T::zero();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
    m + s.ln()
}

pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    softmax_into(v, &mut out);
    out
}

fn check_class(k: usize, y: usize) -> Result<()> {
    if y == 0 || y > k {
        return Err(Error::arg(format!("class {y} outside 1..={k}")));
    }
    Ok(())
}

/// Softmax cross-entropy `ℓ(g, y) = lse(g) - g_y` and its gradient `softmax(g) - e_y`.
pub fn softmax_ce<T: Real>(g: &[T], y: usize) -> Result<(T, Vec<T>)> {
    check_class(g.len(), y)?;
    let mut grad = vec![T::zero(); g.len()];
    let lse = softmax_into(g, &mut grad);
    grad[y - 1] -= T::one();
    Ok((lse - g[y - 1], grad))
}

/// Cumulative loss `L(g) = Σ_y ℓ(g, y) = K·lse(g) - Σ_y g_y` with gradient `K·softmax(g) - 1`.
pub fn cumulative_loss<T: Real>(g: &[T]) -> (T, Vec<T>) {
    let k = T::of_usize(g.len());
    let mut grad = vec![T::zero(); g.len()];
    let lse = softmax_into(g, &mut grad);
    let total: T = g.iter().copied().sum();
    for v in grad.iter_mut() {
        *v = k * *v - T::one();
    }
    (k * lse - total, grad)
}

/// Evaluates `cum_coef·L(g) - set_coef·Σ_{y∈set} ℓ(g, y)` in one pass, accumulating
/// `scale·∇` into `grad`, and returns the unscaled value.
///
/// Expanding both losses in terms of `lse(g)` gives
/// `value = a·lse(g) + Σ_j g_j·(set_coef·[j∈set] - cum_coef)` with
/// `a = cum_coef·K - set_coef·|set|`, and `∇_j = a·softmax_j + set_coef·[j∈set] - cum_coef`.
/// When `a = 1` and the set is the full complement of `y`, this is bitwise the same
/// arithmetic as [`softmax_ce`], which keeps the estimator reductions exact.
///
/// `set` must hold distinct classes in `1..=K`; `probs` is scratch of length `K`.
pub(crate) fn combined_loss<T: Real>(
    g: &[T],
    set: &[usize],
    cum_coef: T,
    set_coef: T,
    probs: &mut [T],
) -> T {
    let k = g.len();
    let a = cum_coef * T::of_usize(k) - set_coef * T::of_usize(set.len());
    let lse = softmax_into(g, probs);
    let mut linear = T::zero();
    for (j, &gj) in g.iter().enumerate() {
        let member = set.contains(&(j + 1));
        let c = if member {
            set_coef - cum_coef
        } else {
            -cum_coef
        };
        linear += gj * c;
        probs[j] = a * probs[j] + c;
    }
    a * lse + linear
}
