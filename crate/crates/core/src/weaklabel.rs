//! Turning ordinary labels into complementary-label sets plus an unlabeled pool.
//!
//! Every complementary-label set of size `c` is drawn uniformly among the `C(K-1, c)`
//! subsets of the classes other than the true one, so the generated data follows the
//! uniform-selection assumption the unbiased estimators rely on.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const SUM_TOL: f64 = 1e-12;

/// One weakly labeled sample: a feature row and its complementary-label set
/// (sorted, 1-based; empty for unlabeled samples).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakSample<'a> {
    pub feature_index: usize,
    pub comp_set: &'a [usize],
}

impl WeakSample<'_> {
    pub fn is_unlabeled(&self) -> bool {
        self.comp_set.is_empty()
    }
}

/// Training data with no true labels: groups `S_c` of samples with `c` complementary
/// labels (`c = 1..K-1`) and an unlabeled pool `S_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakDataset {
    features: Matrix<f64>,
    csets: Vec<Vec<usize>>,
    groups: Vec<Vec<usize>>,
    unlabeled: Vec<usize>,
    k: usize,
}

impl WeakDataset {
    /// Builds a dataset from per-row complementary sets (empty = unlabeled).
    pub fn new(features: Matrix<f64>, csets: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::arg("need at least two classes"));
        }
        if features.rows() != csets.len() {
            return Err(Error::arg(format!(
                "{} feature rows but {} label sets",
                features.rows(),
                csets.len()
            )));
        }
        let mut groups = vec![Vec::new(); k - 1];
        let mut unlabeled = Vec::new();
        let mut csets = csets;
        for (i, set) in csets.iter_mut().enumerate() {
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::arg(format!(
                    "sample {i}: duplicate complementary label"
                )));
            }
            if set.iter().any(|&y| y == 0 || y > k) {
                return Err(Error::arg(format!(
                    "sample {i}: complementary label outside 1..={k}"
                )));
            }
            match set.len() {
                0 => unlabeled.push(i),
                c if c < k => groups[c - 1].push(i),
                _ => {
                    return Err(Error::arg(format!(
                        "sample {i}: a set of all {k} classes carries no information"
                    )))
                }
            }
        }
        Ok(Self {
            features,
            csets,
            groups,
            unlabeled,
            k,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.csets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.csets.is_empty()
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    /// Complementary sets aligned with feature rows.
    pub fn csets(&self) -> &[Vec<usize>] {
        &self.csets
    }

    /// Row indices of group `S_c`, `1 <= c <= K-1`.
    pub fn group(&self, c: usize) -> &[usize] {
        &self.groups[c - 1]
    }

    /// Row indices of the unlabeled pool.
    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    /// `n_c` for `c = 1..K-1`.
    pub fn group_counts(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn num_labeled(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let csets = idx.iter().map(|&i| self.csets[i].clone()).collect();
        Self::new(self.features.select_rows(idx), csets, self.k).expect("rows already validated")
    }

    pub fn samples(&self) -> impl Iterator<Item = WeakSample<'_>> {
        self.csets.iter().enumerate().map(|(i, s)| WeakSample {
            feature_index: i,
            comp_set: s,
        })
    }

    pub fn group_samples(&self, c: usize) -> impl Iterator<Item = WeakSample<'_>> {
        self.group(c).iter().map(|&i| WeakSample {
            feature_index: i,
            comp_set: &self.csets[i],
        })
    }

    /// Writes the JSON-lines format: a `{"K","d"}` header, then one `{"x","cset"}` record per row.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_jsonl_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(
            &mut *w,
            &Header {
                k: self.k,
                d: self.dim(),
            },
        )?;
        w.write_all(b"\n")?;
        for (row, set) in self.features.iter_rows().zip(&self.csets) {
            serde_json::to_writer(&mut *w, &RecordRef { x: row, cset: set })?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl_from(BufReader::new(file))
    }

    pub fn read_jsonl_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: Header = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::Parse {
                    line: 0,
                    message: "missing header".into(),
                });
            };
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("header: {e}"),
            })?;
        };
        let mut data = Vec::new();
        let mut csets = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rec.x.len() != header.d {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!(
                        "x has {} entries, header says d = {}",
                        rec.x.len(),
                        header.d
                    ),
                });
            }
            data.extend(rec.x);
            csets.push(rec.cset);
        }
        let n = csets.len();
        Self::new(Matrix::from_vec(n, header.d, data)?, csets, header.k)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "K")]
    k: usize,
    d: usize,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    x: &'a [f64],
    cset: &'a [usize],
}

#[derive(Deserialize)]
struct Record {
    x: Vec<f64>,
    cset: Vec<usize>,
}

/// How set sizes are assigned to labeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    /// Each labeled sample draws its own `c` from the size distribution.
    #[default]
    PerSample,
    /// Group sizes `n_c` are fixed to the size distribution times the labeled count
    /// (largest-remainder rounding), then assigned to a random permutation of samples.
    FixedCounts,
}

/// Parameters of [`weaken_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeakenConfig {
    /// Probability of each set size `c = 1..K-1`.
    pub size_dist: Vec<f64>,
    pub unlabeled_fraction: f64,
    pub mode: SizeMode,
    pub seed: u64,
}

/// Unlabeled fraction used for a training set of `n` samples: 0.99 below 50000, 0.995 otherwise.
pub fn default_unlabeled_fraction(n: usize) -> f64 {
    if n < 50_000 {
        0.99
    } else {
        0.995
    }
}

fn check_distribution(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::arg(format!(
            "{what} has length {}, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::arg(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::arg(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Largest-remainder rounding of `total · probs`.
fn apportion(probs: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn sample_size<R: Rng + ?Sized>(rng: &mut R, size_dist: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in size_dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    // rounding slack: the last size with positive mass
    size_dist.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1
}

/// Uniform `c`-subset of `{1..=k} \ {y}` by partial Fisher–Yates, sorted.
pub fn draw_complement_set<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    y: usize,
    c: usize,
) -> Vec<usize> {
    let mut cand: Vec<usize> = (1..=k).filter(|&v| v != y).collect();
    for i in 0..c {
        let j = rng.random_range(i..cand.len());
        cand.swap(i, j);
    }
    cand.truncate(c);
    cand.sort_unstable();
    cand
}

/// Weakens `ds`, keeping per-sample set sizes; see [`weaken_traced`].
pub fn weaken(
    ds: &LabeledDataset,
    size_dist: &[f64],
    unlabeled_fraction: f64,
    seed: u64,
) -> Result<WeakDataset> {
    weaken_with(
        ds,
        &WeakenConfig {
            size_dist: size_dist.to_vec(),
            unlabeled_fraction,
            mode: SizeMode::PerSample,
            seed,
        },
    )
}

pub fn weaken_with(ds: &LabeledDataset, cfg: &WeakenConfig) -> Result<WeakDataset> {
    weaken_traced(ds, cfg).map(|(wd, _)| wd)
}

/// Weakens `ds` and also returns the (otherwise discarded) true labels, row-aligned.
///
/// A seeded uniform subset of `round(fraction·n)` samples becomes unlabeled first; each
/// remaining sample then receives a size `c` and a uniform `c`-subset of its non-labels.
pub fn weaken_traced(ds: &LabeledDataset, cfg: &WeakenConfig) -> Result<(WeakDataset, Vec<usize>)> {
    let k = ds.num_classes();
    check_distribution(&cfg.size_dist, k - 1, "size distribution")?;
    if !(0.0..1.0).contains(&cfg.unlabeled_fraction) {
        return Err(Error::arg(format!(
            "unlabeled fraction {} not in [0, 1)",
            cfg.unlabeled_fraction
        )));
    }
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_unl = (cfg.unlabeled_fraction * n as f64).round() as usize;
    let mut is_unlabeled = vec![false; n];
    for &i in &order[..n_unl] {
        is_unlabeled[i] = true;
    }

    let mut sizes = vec![0usize; n];
    match cfg.mode {
        SizeMode::PerSample => {
            for (i, s) in sizes.iter_mut().enumerate() {
                if !is_unlabeled[i] {
                    *s = sample_size(&mut rng, &cfg.size_dist);
                }
            }
        }
        SizeMode::FixedCounts => {
            let labeled = &order[n_unl..];
            let counts = apportion(&cfg.size_dist, labeled.len());
            let mut perm = labeled.to_vec();
            perm.shuffle(&mut rng);
            let mut it = perm.into_iter();
            for (c, &cnt) in counts.iter().enumerate() {
                for i in it.by_ref().take(cnt) {
                    sizes[i] = c + 1;
                }
            }
        }
    }

    let labels = ds.labels();
    let csets: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if is_unlabeled[i] {
                Vec::new()
            } else {
                draw_complement_set(&mut rng, k, labels[i], sizes[i])
            }
        })
        .collect();
    let wd = WeakDataset::new(ds.features().clone(), csets, k)?;
    Ok((wd, labels.to_vec()))
}

/// Size distribution with `P(c) ∝ exp(-(c - mu)^2)` for `c = 1..K-1`.
pub fn default_size_dist(k: usize, mu: f64) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::arg("need K >= 2"));
    }
    let raw: Vec<f64> = (1..k).map(|i| (-(i as f64 - mu).powi(2)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Mixture weights `α_c ∝ n_c / (K - c)^2`, normalized; empty groups get zero weight.
pub fn default_alpha(counts: &[usize], k: usize) -> Result<Vec<f64>> {
    if counts.len() != k - 1 {
        return Err(Error::arg(format!(
            "expected {} group counts, got {}",
            k - 1,
            counts.len()
        )));
    }
    if counts.iter().all(|&n| n == 0) {
        return Err(Error::arg("all group counts are zero"));
    }
    let raw: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| n as f64 / ((k - i - 1) as f64).powi(2))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// `λ = (K - 1) / Σ_c c·π_c`.
pub fn lambda_from_priors(pi: &[f64]) -> f64 {
    let k_minus_1 = pi.len() as f64;
    let mean_size: f64 = pi.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    k_minus_1 / mean_size
}

/// Relative-frequency estimate of the size priors `π_c` and the derived `λ`.
pub fn estimate_priors(wd: &WeakDataset) -> Result<(Vec<f64>, f64)> {
    let counts = wd.group_counts();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::State(
            "no labeled samples to estimate priors from".into(),
        ));
    }
    let pi: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    let lambda = lambda_from_priors(&pi);
    Ok((pi, lambda))
}

/// Estimator configuration: mixture weights `α`, trade-off `γ`, and optional size priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub alpha: Vec<f64>,
    pub gamma: f64,
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl MixtureWeights {
    pub fn new(alpha: Vec<f64>, gamma: f64) -> Result<Self> {
        let w = Self {
            alpha,
            gamma,
            pi: None,
            lambda: None,
        };
        w.validate()?;
        Ok(w)
    }

    /// Attaches size priors and sets `λ` from them.
    pub fn with_priors(mut self, pi: Vec<f64>) -> Result<Self> {
        self.lambda = Some(lambda_from_priors(&pi));
        self.pi = Some(pi);
        self.validate()?;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::arg("alpha must have K-1 >= 1 entries"));
        }
        check_distribution(&self.alpha, self.alpha.len(), "alpha")?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::arg(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        if let Some(pi) = &self.pi {
            check_distribution(pi, self.alpha.len(), "pi")?;
            let want = lambda_from_priors(pi);
            match self.lambda {
                Some(l) if (l - want).abs() <= 1e-12 * want => {}
                _ => return Err(Error::arg("lambda must equal (K-1)/Σ c·π_c")),
            }
        }
        Ok(())
    }
}
