//! Score-producing classifiers: linear-in-input with bias, and a one-hidden-layer MLP.
//!
//! Parameters live in one flat vector, layer by layer, each layer as a row-major
//! `fan_in × fan_out` weight block followed by its bias. Gradients use the same layout,
//! so the optimizer works on plain slices.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub const DEFAULT_HIDDEN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// `d → hidden → K` with a rectifier on the hidden layer.
    Mlp {
        hidden: usize,
    },
}

impl Architecture {
    fn layer_dims(self, d: usize, k: usize) -> Vec<(usize, usize)> {
        match self {
            Architecture::Linear => vec![(d, k)],
            Architecture::Mlp { hidden } => vec![(d, hidden), (hidden, k)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: Architecture,
    d: usize,
    k: usize,
    params: Vec<T>,
}

/// Hidden activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    hidden: Option<Matrix<T>>,
}

fn num_params(dims: &[(usize, usize)]) -> usize {
    dims.iter().map(|&(i, o)| i * o + o).sum()
}

/// `out = x·W + b`, skipping zero inputs (sparse images are common).
fn affine<T: Real>(x: &Matrix<T>, w: &[T], b: &[T], out_dim: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), out_dim);
    for (i, xr) in x.iter_rows().enumerate() {
        let o = out.row_mut(i);
        o.copy_from_slice(b);
        for (j, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &w[j * out_dim..(j + 1) * out_dim];
            for (ov, &wv) in o.iter_mut().zip(wr) {
                *ov += xv * wv;
            }
        }
    }
    out
}

/// Accumulates `dW += xᵀ·dy` and `db += Σ_i dy_i`.
fn affine_grad<T: Real>(x: &Matrix<T>, dy: &Matrix<T>, dw: &mut [T], db: &mut [T]) {
    let out_dim = dy.cols();
    for (xr, dr) in x.iter_rows().zip(dy.iter_rows()) {
        for (bv, &g) in db.iter_mut().zip(dr) {
            *bv += g;
        }
        for (j, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &mut dw[j * out_dim..(j + 1) * out_dim];
            for (wv, &g) in wr.iter_mut().zip(dr) {
                *wv += xv * g;
            }
        }
    }
}

impl<T: Real> Model<T> {
    /// Weights uniform in `±sqrt(6/(fan_in+fan_out))`, biases zero.
    pub fn init(arch: Architecture, d: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || k < 2 {
            return Err(Error::arg("model needs d >= 1 and K >= 2"));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::arg("hidden width must be positive"));
        }
        let dims = arch.layer_dims(d, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(num_params(&dims));
        for &(fi, fo) in &dims {
            let a = (6.0 / (fi + fo) as f64).sqrt();
            params.extend((0..fi * fo).map(|_| T::of(rng.random_range(-a..a))));
            params.extend(std::iter::repeat_n(T::zero(), fo));
        }
        Ok(Self { arch, d, k, params })
    }

    /// All-zero parameters.
    pub fn zeros(arch: Architecture, d: usize, k: usize) -> Result<Self> {
        let dims = arch.layer_dims(d, k);
        Self::from_params(arch, d, k, vec![T::zero(); num_params(&dims)])
    }

    pub fn from_params(arch: Architecture, d: usize, k: usize, params: Vec<T>) -> Result<Self> {
        let want = num_params(&arch.layer_dims(d, k));
        if params.len() != want {
            return Err(Error::arg(format!(
                "expected {want} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("parameters must be finite"));
        }
        Ok(Self { arch, d, k, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let dims = self.arch.layer_dims(self.d, self.k);
        let off: usize = num_params(&dims[..l]);
        let (fi, fo) = dims[l];
        (
            &self.params[off..off + fi * fo],
            &self.params[off + fi * fo..off + fi * fo + fo],
        )
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.d {
            return Err(Error::arg(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.d
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward_cached(x).map(|(s, _)| s)
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        Ok(match self.arch {
            Architecture::Linear => {
                let (w, b) = self.layer(0);
                (affine(x, w, b, self.k), ForwardCache { hidden: None })
            }
            Architecture::Mlp { hidden } => {
                let (w1, b1) = self.layer(0);
                let mut h = affine(x, w1, b1, hidden);
                for v in h.as_mut_slice() {
                    *v = v.max(T::zero());
                }
                let (w2, b2) = self.layer(1);
                (affine(&h, w2, b2, self.k), ForwardCache { hidden: Some(h) })
            }
        })
    }

    /// Gradient of `Σ_i ⟨d_scores_i, g(x_i)⟩` with respect to every parameter.
    pub fn backward(&self, x: &Matrix<T>, d_scores: &Matrix<T>) -> Result<Vec<T>> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_with(x, &cache, d_scores)
    }

    pub fn backward_with(
        &self,
        x: &Matrix<T>,
        cache: &ForwardCache<T>,
        d_scores: &Matrix<T>,
    ) -> Result<Vec<T>> {
        self.check_input(x)?;
        if d_scores.rows() != x.rows() || d_scores.cols() != self.k {
            return Err(Error::arg(format!(
                "score gradient is {}x{}, expected {}x{}",
                d_scores.rows(),
                d_scores.cols(),
                x.rows(),
                self.k
            )));
        }
        let mut grad = vec![T::zero(); self.params.len()];
        match self.arch {
            Architecture::Linear => {
                let (dw, db) = grad.split_at_mut(self.d * self.k);
                affine_grad(x, d_scores, dw, db);
            }
            Architecture::Mlp { hidden } => {
                let h = cache
                    .hidden
                    .as_ref()
                    .ok_or_else(|| Error::arg("cache lacks hidden activations"))?;
                let l1 = self.d * hidden + hidden;
                let (g1, g2) = grad.split_at_mut(l1);
                let (dw2, db2) = g2.split_at_mut(hidden * self.k);
                affine_grad(h, d_scores, dw2, db2);

                let (w2, _) = self.layer(1);
                let mut dh = Matrix::zeros(x.rows(), hidden);
                for i in 0..x.rows() {
                    let ds = d_scores.row(i);
                    let hr = h.row(i);
                    for (j, v) in dh.row_mut(i).iter_mut().enumerate() {
                        // rectifier subgradient is 0 at 0
                        if hr[j] > T::zero() {
                            let wr = &w2[j * self.k..(j + 1) * self.k];
                            *v = wr.iter().zip(ds).map(|(&a, &b)| a * b).sum();
                        }
                    }
                }
                let (dw1, db1) = g1.split_at_mut(self.d * hidden);
                affine_grad(x, &dh, dw1, db1);
            }
        }
        Ok(grad)
    }

    /// Arg-max class per row (1-based), ties to the smallest class.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            d: self.d,
            k: self.k,
            params: self
                .params
                .iter()
                .map(|v| U::of(v.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params {
            bytes.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch,
            input_dim: self.d,
            num_classes: self.k,
            num_params: self.params.len(),
            params_f64_le: B64.encode(bytes),
            spec_hash: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let bytes = B64
            .decode(&ck.params_f64_le)
            .map_err(|e| Error::Format(format!("checkpoint payload: {e}")))?;
        if bytes.len() != ck.num_params * 8 {
            return Err(Error::Format("checkpoint payload length mismatch".into()));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Self::from_params(ck.architecture, ck.input_dim, ck.num_classes, params)
    }

    pub fn save(&self, path: impl AsRef<Path>, spec_hash: Option<String>) -> Result<()> {
        let mut ck = self.to_checkpoint();
        ck.spec_hash = spec_hash;
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(&ck)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_slice(&text)?)
    }
}

/// Row-wise arg-max (1-based), ties to the smallest index.
pub fn argmax_rows<T: Real>(scores: &Matrix<T>) -> Vec<usize> {
    scores
        .iter_rows()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate().skip(1) {
                if v > r[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect()
}

const CHECKPOINT_FORMAT: &str = "mcul-model";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: JSON envelope with the parameters as base64 little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub num_params: usize,
    pub params_f64_le: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_hash: Option<String>,
}
