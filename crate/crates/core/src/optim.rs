//! Adam with bias correction over flat parameter vectors.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments for `n` parameters with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }
}

/// One Adam update. `weight_decay · θ` is added to the gradient before the moment updates.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
    weight_decay: T,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || state.m.len() != state.v.len()
    {
        return Err(Error::arg(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let decay = weight_decay != T::zero();
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = if decay { g + weight_decay * *p } else { g };
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![1.0, -2.0, 3.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = vec![0.0f64, 0.0, 0.0];
        let mut s = AdamState::new(3);
        s.eps = 0.0;
        adam_step(&mut p, &[3.0, -0.01, 250.0], &mut s, 0.05, 0.0).unwrap();
        for (v, want) in p.iter().zip([-0.05, 0.05, -0.05]) {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        let mut w = vec![1.0f64];
        let mut s = AdamState::new(1);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut s, 0.1, 0.0).unwrap();
            assert!(w[0].abs() < prev);
            prev = w[0].abs();
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = vec![2.0f32];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, 0.1, 0.5).unwrap();
        assert!(p[0] < 2.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::<f64>::new(2);
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, 0.1, 0.0).is_err());
    }
}
