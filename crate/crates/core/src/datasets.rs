//! Labeled datasets, loaders, deterministic splits and synthetic finite distributions.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Features plus true labels in `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::arg("dataset must hold at least one sample"));
        }
        if features.rows() != labels.len() {
            return Err(Error::arg(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if k < 2 {
            return Err(Error::arg("need at least two classes"));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y == 0 || y > k) {
            return Err(Error::arg(format!(
                "label {y} of sample {i} outside 1..={k}"
            )));
        }
        if !features.is_finite() {
            return Err(Error::arg("features contain non-finite values"));
        }
        Ok(Self {
            features,
            labels,
            k,
        })
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.k != other.k {
            return Err(Error::arg("cannot concatenate datasets with different K"));
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            features: self.features.vstack(&other.features)?,
            labels,
            k: self.k,
        })
    }

    /// Rescales every feature column to `[0, 1]`; constant columns become 0.
    pub fn normalize_min_max(&mut self) {
        let (n, d) = (self.features.rows(), self.features.cols());
        for j in 0..d {
            let (lo, hi) = (0..n)
                .map(|i| self.features.get(i, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            let span = hi - lo;
            for i in 0..n {
                let v = self.features.get(i, j);
                let scaled = if span > 0.0 { (v - lo) / span } else { 0.0 };
                self.features.set(i, j, scaled);
            }
        }
    }

    /// Number of samples per class, indexed `0..k` for classes `1..=k`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &y in &self.labels {
            c[y - 1] += 1;
        }
        c
    }

    /// Writes features followed by the label as the last column, no header.
    /// Floats use Rust's shortest round-trip representation.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (row, y) in self.features.iter_rows().zip(&self.labels) {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    /// Column holding the label; negative values count from the end (`-1` is the last).
    pub label_column: isize,
    /// Expected class count; inferred from the labels when `None`.
    pub num_classes: Option<usize>,
    /// Remap labels to `1..=K` by sorted rank; when false they must already be `1..=K`.
    pub remap_labels: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: -1,
            num_classes: None,
            remap_labels: true,
        }
    }
}

fn parse_label(cell: &str) -> Option<i64> {
    let t = cell.trim();
    t.parse::<i64>().ok().or_else(|| {
        let f = t.parse::<f64>().ok()?;
        (f.fract() == 0.0 && f.abs() < 9e15).then_some(f as i64)
    })
}

/// Loads a comma-separated file.
///
/// A first row containing any non-numeric cell is treated as a header. Labels are
/// remapped to `1..=K` in ascending order of their original integer values.
pub fn load_csv(path: impl AsRef<Path>, opts: CsvOptions) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, opts)
}

/// [`load_csv`] on in-memory text.
pub fn parse_csv(text: &str, opts: CsvOptions) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut arity = None;
    let mut label_col = 0usize;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<(usize, i64)> = Vec::new();

    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            // header row
            arity = Some(rec.len());
            continue;
        }
        let width = *arity.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if rows.is_empty() {
            let lc = if opts.label_column < 0 {
                width as isize + opts.label_column
            } else {
                opts.label_column
            };
            if lc < 0 || lc as usize >= width {
                return Err(Error::arg(format!(
                    "label column {} out of range for {width} fields",
                    opts.label_column
                )));
            }
            label_col = lc as usize;
        }
        let mut feats = Vec::with_capacity(width - 1);
        for (j, cell) in rec.iter().enumerate() {
            if j == label_col {
                let y = parse_label(cell).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("label {cell:?} is not an integer"),
                })?;
                raw_labels.push((line, y));
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("field {} ({cell:?}) is not numeric", j + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("field {} is not finite", j + 1),
                    });
                }
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }

    if !opts.remap_labels {
        let top = raw_labels.iter().map(|&(_, y)| y).max().unwrap_or(1).max(2);
        let k = opts.num_classes.unwrap_or(top as usize);
        let mut labels = Vec::with_capacity(raw_labels.len());
        for (line, y) in raw_labels {
            if y < 1 || y as usize > k {
                return Err(Error::Parse {
                    line,
                    message: format!("label {y} outside 1..={k}"),
                });
            }
            labels.push(y as usize);
        }
        return LabeledDataset::new(Matrix::from_rows(&rows)?, labels, k);
    }
    let mut distinct: Vec<i64> = raw_labels.iter().map(|&(_, y)| y).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let k = opts.num_classes.unwrap_or(distinct.len());
    distinct.truncate(k);
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (line, y) in raw_labels {
        let pos = distinct.binary_search(&y).map_err(|_| Error::Parse {
            line,
            message: format!("label {y} is outside the {k}-class remap table"),
        })?;
        labels.push(pos + 1);
    }
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, k.max(2))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses IDX image and label payloads; pixels are scaled by `1/255` and labels shifted to `1..=K`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "images: magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let d = rows * cols;
    let payload = &images[16..];
    if payload.len() < n * d {
        return Err(Error::Format(format!(
            "images: payload holds {} bytes, header promises {}",
            payload.len(),
            n * d
        )));
    }

    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "labels: magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let m = be_u32(labels, 4, "labels")? as usize;
    let lpayload = &labels[8..];
    if lpayload.len() < m {
        return Err(Error::Format(format!(
            "labels: payload holds {} bytes, header promises {m}",
            lpayload.len()
        )));
    }
    if n != m {
        return Err(Error::Format(format!("{n} images but {m} labels")));
    }

    let features: Vec<f64> = payload[..n * d]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = lpayload[..m].iter().map(|&b| usize::from(b) + 1).collect();
    let k = labels.iter().copied().max().unwrap_or(0).max(2);
    LabeledDataset::new(Matrix::from_vec(n, d, features)?, labels, k)
}

/// Loads an IDX image file and its label file.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels)
}

/// Serializes a dataset in IDX form (`rows × cols` images, bytes = round(255·x)).
pub fn write_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::arg("image shape does not match feature dimension"));
    }
    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for v in [ds.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(
        ds.features()
            .as_slice()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels().iter().map(|&y| (y - 1) as u8));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::File::create(ip)
        .and_then(|mut f| f.write_all(&img))
        .map_err(|e| Error::io(ip, e))?;
    fs::File::create(lp)
        .and_then(|mut f| f.write_all(&lab))
        .map_err(|e| Error::io(lp, e))
}

/// Seeded shuffle of `0..n` split at `round(ratio·n)`.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (ratio * n as f64).round() as usize;
    let rest = idx.split_off(cut);
    Ok((idx, rest))
}

/// Random partition into a `ratio` share and the remainder.
pub fn split(
    ds: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (a, b) = split_indices(ds.len(), ratio, seed)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg(format!(
            "split of {} samples at {ratio} leaves an empty part",
            ds.len()
        )));
    }
    Ok((ds.subset(&a), ds.subset(&b)))
}

/// Explicit joint table `p(x_j, y)` over finitely many points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    points: Matrix<f64>,
    joint: Matrix<f64>,
}

impl FiniteDistribution {
    pub fn new(points: Matrix<f64>, joint: Matrix<f64>) -> Result<Self> {
        if points.rows() != joint.rows() || points.rows() == 0 {
            return Err(Error::arg(
                "points and joint table must have the same nonzero row count",
            ));
        }
        if joint.cols() < 2 {
            return Err(Error::arg("joint table needs at least two classes"));
        }
        if joint.as_slice().iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::arg("joint probabilities must be nonnegative"));
        }
        let total: f64 = joint.as_slice().iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("joint table sums to {total}, not 1")));
        }
        Ok(Self { points, joint })
    }

    pub fn num_points(&self) -> usize {
        self.joint.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.joint.cols()
    }

    pub fn points(&self) -> &Matrix<f64> {
        &self.points
    }

    pub fn joint(&self) -> &Matrix<f64> {
        &self.joint
    }

    /// `p(x_j, y)` for a 1-based class.
    pub fn p(&self, j: usize, y: usize) -> f64 {
        self.joint.get(j, y - 1)
    }

    /// Marginal `p(x_j)`.
    pub fn marginal(&self, j: usize) -> f64 {
        self.joint.row(j).iter().sum()
    }

    /// Class masses `p(y)`.
    pub fn class_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_classes()];
        for row in self.joint.iter_rows() {
            for (a, &b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m
    }

    /// Sampler over `(point, class)` pairs.
    pub fn sampler(&self) -> JointSampler {
        let mut cdf = Vec::with_capacity(self.joint.as_slice().len());
        let mut acc = 0.0;
        for &p in self.joint.as_slice() {
            acc += p;
            cdf.push(acc);
        }
        JointSampler {
            cdf,
            k: self.num_classes(),
        }
    }
}

/// Inverse-CDF sampler for a [`FiniteDistribution`].
#[derive(Debug, Clone)]
pub struct JointSampler {
    cdf: Vec<f64>,
    k: usize,
}

impl JointSampler {
    /// Draws `(point index, 1-based class)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let total = *self.cdf.last().expect("nonempty table");
        let u = rng.random::<f64>() * total;
        let flat = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        (flat / self.k, flat % self.k + 1)
    }
}

/// Random finite distribution: standard-normal points and a normalized uniform joint table.
pub fn synth_mixture(k: usize, d: usize, m_points: usize, seed: u64) -> Result<FiniteDistribution> {
    if k < 2 || m_points == 0 {
        return Err(Error::arg(
            "synth_mixture needs K >= 2 and at least one point",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<f64> = (0..m_points * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    // (0, 1] keeps every class mass strictly positive
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    let raw: Vec<f64> = (0..m_points * k)
        .map(|_| 1.0 - unit.sample(&mut rng))
        .collect();
    let total: f64 = raw.iter().sum();
    let joint: Vec<f64> = raw.iter().map(|v| v / total).collect();
    FiniteDistribution::new(
        Matrix::from_vec(m_points, d, points)?,
        Matrix::from_vec(m_points, k, joint)?,
    )
}

/// `n` Gaussian samples around `K` class centers: class `y` is centered at
/// `separation` along axis `(y-1) mod d`, negated for every second wrap-around.
/// Labels are balanced (`y = i mod K + 1`) and rows are shuffled.
pub fn synth_blobs(
    k: usize,
    d: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if k < 2 || d == 0 || n == 0 {
        return Err(Error::arg("synth_blobs needs K >= 2, d >= 1, n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k + 1).collect();
    labels.shuffle(&mut rng);
    let mut feats = Vec::with_capacity(n * d);
    for &y in &labels {
        let axis = (y - 1) % d;
        let sign = if ((y - 1) / d).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        for j in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            feats.push(noise + if j == axis { sign * separation } else { 0.0 });
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, d, feats)?, labels, k)
}
