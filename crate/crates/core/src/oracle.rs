//! Exact-enumeration oracles for the risk identities, Monte-Carlo convergence-rate
//! experiments, and finite-difference gradient checks.
//!
//! Every risk here is an exact finite expectation over a [`FiniteDistribution`] and the
//! complementary-set densities derived from it. Loss values come straight from
//! [`softmax_ce`], not from the fused estimator code in [`crate::losses`], so the two
//! routes stay independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{synth_mixture, FiniteDistribution};
use crate::error::{Error, Result};
use crate::losses::{cl_risk, mcl_risk, mcul_risk, ordinary_risk, Correction};
use crate::matrix::Matrix;
use crate::numerics::softmax_ce;
use crate::subsets;
use crate::trainer::Estimator;
use crate::weaklabel::{draw_complement_set, lambda_from_priors, MixtureWeights};

/// Largest class count the enumeration tables support.
pub const MAX_CLASSES: usize = 8;

/// `p̄_c(x_j, Ȳ)` for every point and every `c`-subset `Ȳ` (lexicographic rank order).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementDensity {
    k: usize,
    c: usize,
    subsets: Vec<Vec<usize>>,
    table: Matrix<f64>,
    /// Max deviation over `(j, y)` of the marginal identity
    /// `Σ_{Ȳ∌y} p̄_c(x_j, Ȳ) = p(x_j, y) + (K-c-1)/(K-1) Σ_{ŷ≠y} p(x_j, ŷ)`.
    pub marginal_identity_deviation: f64,
    /// Max deviation over `j` of `Σ_Ȳ p̄_c(x_j, Ȳ) = p(x_j)`.
    pub point_marginal_deviation: f64,
}

impl ComplementDensity {
    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn set_size(&self) -> usize {
        self.c
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// `p̄_c(x_j, Ȳ_r)`.
    pub fn p(&self, j: usize, rank: usize) -> f64 {
        self.table.get(j, rank)
    }

    pub fn table(&self) -> &Matrix<f64> {
        &self.table
    }

    /// `p̄(x_j, Ȳ_r) = p̄_c(x_j, Ȳ_r)·π_c`.
    pub fn mixture_p(&self, j: usize, rank: usize, pi_c: f64) -> f64 {
        self.table.get(j, rank) * pi_c
    }

    pub fn total_mass(&self) -> f64 {
        self.table.as_slice().iter().sum()
    }
}

fn check_capacity(k: usize) -> Result<()> {
    if k > MAX_CLASSES {
        return Err(Error::Capacity(format!(
            "K = {k} exceeds the enumeration limit of {MAX_CLASSES}"
        )));
    }
    Ok(())
}

/// Builds `p̄_c(x, Ȳ) = C(K-1, c)^{-1} Σ_{y∉Ȳ} p(x, y)` over all `c`-subsets.
pub fn build_complement_density(fd: &FiniteDistribution, c: usize) -> Result<ComplementDensity> {
    let k = fd.num_classes();
    check_capacity(k)?;
    if c == 0 || c >= k {
        return Err(Error::arg(format!("set size {c} not in 1..={}", k - 1)));
    }
    let sets = subsets::enumerate(k, c);
    let norm = subsets::binomial(k - 1, c) as f64;
    let m = fd.num_points();
    let mut table = Matrix::zeros(m, sets.len());
    for j in 0..m {
        for (r, s) in sets.iter().enumerate() {
            let mass: f64 = (1..=k).filter(|y| !s.contains(y)).map(|y| fd.p(j, y)).sum();
            table.set(j, r, mass / norm);
        }
    }

    let mut ident = 0.0f64;
    let mut point = 0.0f64;
    let shrink = (k - c - 1) as f64 / (k - 1) as f64;
    for j in 0..m {
        let row_sum: f64 = table.row(j).iter().sum();
        point = point.max((row_sum - fd.marginal(j)).abs());
        for y in 1..=k {
            let lhs: f64 = sets
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.contains(&y))
                .map(|(r, _)| table.get(j, r))
                .sum();
            let others: f64 = (1..=k).filter(|&v| v != y).map(|v| fd.p(j, v)).sum();
            ident = ident.max((lhs - (fd.p(j, y) + shrink * others)).abs());
        }
    }
    Ok(ComplementDensity {
        k,
        c,
        subsets: sets,
        table,
        marginal_identity_deviation: ident,
        point_marginal_deviation: point,
    })
}

/// Exact risks of a fixed score assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRisks {
    /// Ordinary classification risk `E_p[ℓ(g(x), y)]`.
    pub r: f64,
    /// `R_c` for `c = 1..K-1`.
    pub r_c: Vec<f64>,
    /// `R^u_c(γ)` for `c = 1..K-1`.
    pub r_c_unlabeled: Vec<f64>,
    pub r_mcl: f64,
    pub r_mcul: f64,
    /// `MCL^cl` (`γ = 0`), requires priors.
    pub r_mcl_cl: Option<f64>,
    /// `MCUL^cl` at the configured `γ`, requires priors.
    pub r_mcul_cl: Option<f64>,
}

impl ExactRisks {
    /// Largest `|R_* - R|` over every alternative formulation.
    pub fn max_deviation(&self) -> f64 {
        self.r_c
            .iter()
            .chain(&self.r_c_unlabeled)
            .chain([&self.r_mcl, &self.r_mcul])
            .chain(self.r_mcl_cl.iter())
            .chain(self.r_mcul_cl.iter())
            .map(|v| (v - self.r).abs())
            .fold(0.0, f64::max)
    }
}

struct LossTable {
    /// `ℓ(g(x_j), y)` at `[j][y-1]`.
    ell: Vec<Vec<f64>>,
    /// `L(g(x_j))`.
    cum: Vec<f64>,
}

fn loss_table(scores: &Matrix<f64>) -> Result<LossTable> {
    let k = scores.cols();
    let mut ell = Vec::with_capacity(scores.rows());
    for g in scores.iter_rows() {
        ell.push(
            (1..=k)
                .map(|y| softmax_ce(g, y).map(|(l, _)| l))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let cum = ell.iter().map(|r| r.iter().sum()).collect();
    Ok(LossTable { ell, cum })
}

/// Computes every risk formulation as an exact expectation.
pub fn exact_risks(
    fd: &FiniteDistribution,
    scores: &Matrix<f64>,
    weights: &MixtureWeights,
) -> Result<ExactRisks> {
    let k = fd.num_classes();
    let m = fd.num_points();
    if scores.rows() != m || scores.cols() != k {
        return Err(Error::arg(format!(
            "need a {m}x{k} score table, got {}x{}",
            scores.rows(),
            scores.cols()
        )));
    }
    if weights.alpha.len() != k - 1 {
        return Err(Error::arg("alpha length must be K-1"));
    }
    let lt = loss_table(scores)?;
    let r: f64 = (0..m)
        .map(|j| (1..=k).map(|y| fd.p(j, y) * lt.ell[j][y - 1]).sum::<f64>())
        .sum();
    let gamma = weights.gamma;
    let unl: f64 = (0..m).map(|j| fd.marginal(j) * lt.cum[j]).sum();

    let mut r_c = Vec::with_capacity(k - 1);
    let mut r_cu = Vec::with_capacity(k - 1);
    // per c: E_{p̄_c}[L] and E_{p̄_c}[Σ_{y∈Ȳ} ℓ]
    let mut parts = Vec::with_capacity(k - 1);
    for c in 1..k {
        let dens = build_complement_density(fd, c)?;
        let (mut e_cum, mut e_set) = (0.0, 0.0);
        for j in 0..m {
            for (rank, s) in dens.subsets().iter().enumerate() {
                let p = dens.p(j, rank);
                e_cum += p * lt.cum[j];
                e_set += p * s.iter().map(|&y| lt.ell[j][y - 1]).sum::<f64>();
            }
        }
        let coef = (k - 1) as f64 / c as f64;
        r_c.push(e_cum - coef * e_set);
        r_cu.push((1.0 - gamma) * e_cum - coef * e_set + gamma * unl);
        parts.push((e_cum, e_set));
    }
    let r_mcl = weights.alpha.iter().zip(&r_c).map(|(a, v)| a * v).sum();
    let r_mcul = weights.alpha.iter().zip(&r_cu).map(|(a, v)| a * v).sum();

    let (r_mcl_cl, r_mcul_cl) = match &weights.pi {
        Some(pi) => {
            let lambda = lambda_from_priors(pi);
            let (e_cum, e_set) = pi
                .iter()
                .zip(&parts)
                .fold((0.0, 0.0), |(a, b), (p, (c, s))| (a + p * c, b + p * s));
            (
                Some(e_cum - lambda * e_set),
                Some((1.0 - gamma) * e_cum - lambda * e_set + gamma * unl),
            )
        }
        None => (None, None),
    };

    Ok(ExactRisks {
        r,
        r_c,
        r_c_unlabeled: r_cu,
        r_mcl,
        r_mcul,
        r_mcl_cl,
        r_mcul_cl,
    })
}

/// Largest element-wise relative error between two gradient vectors, with entries below
/// `1e-4` in magnitude compared on an absolute scale of `1e-4`.
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

/// Central-difference check of `f`'s analytic gradient at `point`; returns the max relative error.
pub fn fd_gradient_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::arg("step must be positive"));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(Error::arg("gradient length differs from point length"));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = f(&x)?.0;
        x[i] = point[i] - h;
        let dn = f(&x)?.0;
        x[i] = point[i];
        numeric.push((up - dn) / (2.0 * h));
    }
    Ok(gradient_relative_error(&analytic, &numeric))
}

/// Settings for a Monte-Carlo convergence experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSetup {
    pub estimator: Estimator,
    pub weights: MixtureWeights,
    /// Share of labeled samples per set size; group sizes are `round(share_c · n)`.
    pub size_shares: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mean_abs_error: f64,
    pub sd_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub estimator: Estimator,
    pub exact_risk: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln(mean error)` against `ln(n)`.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Least-squares fit `y = a + b·x`; returns `(b, se(b))`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - a - b * xi).powi(2))
        .sum();
    let se = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (b, se)
}

fn group_sizes(shares: &[f64], n: usize) -> Vec<usize> {
    shares
        .iter()
        .map(|s| (s * n as f64).round() as usize)
        .collect()
}

/// Draws one weak sample set from `fd` and evaluates the estimator at the fixed scores.
fn sample_estimate(
    fd: &FiniteDistribution,
    scores: &Matrix<f64>,
    setup: &ConvergenceSetup,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let k = fd.num_classes();
    let sampler = fd.sampler();
    let w = &setup.weights;
    let mut rows = Vec::new();
    let mut sets: Vec<Vec<usize>> = Vec::new();

    if setup.estimator == Estimator::Ordinary {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (j, y) = sampler.sample(rng);
            rows.push(j);
            labels.push(y);
        }
        return Ok(ordinary_risk(&scores.select_rows(&rows), &labels)?.total());
    }

    if setup.estimator.uses_priors() {
        // sizes drawn per sample from the priors, pooled
        let pi =
            w.pi.as_ref()
                .ok_or_else(|| Error::arg("class-prior estimator needs pi"))?;
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = pi.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1;
            for (i, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    c = i + 1;
                    break;
                }
            }
            let (j, y) = sampler.sample(rng);
            rows.push(j);
            sets.push(draw_complement_set(rng, k, y, c));
        }
    } else {
        for (ci, &nc) in group_sizes(&setup.size_shares, n).iter().enumerate() {
            for _ in 0..nc {
                let (j, y) = sampler.sample(rng);
                rows.push(j);
                sets.push(draw_complement_set(rng, k, y, ci + 1));
            }
        }
    }
    if setup.estimator.uses_unlabeled() {
        for _ in 0..n {
            let (j, _) = sampler.sample(rng);
            rows.push(j);
            sets.push(Vec::new());
        }
    }
    let batch = scores.select_rows(&rows);
    let out = match setup.estimator {
        Estimator::Mcl => mcl_risk(&batch, &sets, &w.alpha, Correction::None)?,
        Estimator::Mcul => mcul_risk(&batch, &sets, &w.alpha, w.gamma, Correction::None)?,
        Estimator::MclCl => cl_risk(
            &batch,
            &sets,
            0.0,
            lambda_from_priors(w.pi.as_ref().unwrap()),
            Correction::None,
        )?,
        Estimator::MculCl => cl_risk(
            &batch,
            &sets,
            w.gamma,
            lambda_from_priors(w.pi.as_ref().unwrap()),
            Correction::None,
        )?,
        Estimator::Ordinary => unreachable!(),
    };
    Ok(out.total())
}

/// Mean absolute deviation of the empirical estimator from the exact risk over a grid of
/// sample sizes, and the fitted log-log slope.
///
/// Trial `t` uses its own ChaCha stream `t` of the base seed, so results do not depend on
/// thread scheduling.
pub fn mc_convergence(
    fd: &FiniteDistribution,
    scores: &Matrix<f64>,
    setup: &ConvergenceSetup,
) -> Result<ConvergenceTable> {
    let g = &setup.n_grid;
    if g.len() < 4 || g.windows(2).any(|w| w[1] <= w[0]) || g[0] == 0 {
        return Err(Error::arg(
            "n grid must be increasing with at least 4 positive points",
        ));
    }
    if (g[g.len() - 1] as f64 / g[0] as f64) < 100.0 {
        return Err(Error::arg("n grid must span at least two decades"));
    }
    if setup.trials < 2 {
        return Err(Error::arg("need at least 2 trials"));
    }
    let k = fd.num_classes();
    if setup.size_shares.len() != k - 1 {
        return Err(Error::arg("size shares must have K-1 entries"));
    }
    let exact = exact_risks(fd, scores, &setup.weights)?;
    let target = match setup.estimator {
        Estimator::Ordinary => exact.r,
        Estimator::Mcl => exact.r_mcl,
        Estimator::Mcul => exact.r_mcul,
        Estimator::MclCl => exact.r_mcl_cl.ok_or_else(|| Error::arg("missing priors"))?,
        Estimator::MculCl => exact
            .r_mcul_cl
            .ok_or_else(|| Error::arg("missing priors"))?,
    };

    let mut rows = Vec::with_capacity(g.len());
    for (gi, &n) in g.iter().enumerate() {
        let errs: Vec<f64> = (0..setup.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
                rng.set_stream(((gi as u64) << 32) | t as u64);
                sample_estimate(fd, scores, setup, n, &mut rng).map(|v| (v - target).abs())
            })
            .collect::<Result<_>>()?;
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
        rows.push(ConvergenceRow {
            n,
            mean_abs_error: mean,
            sd_abs_error: var.sqrt(),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.mean_abs_error.ln()).collect();
    let (slope, slope_stderr) = fit_slope(&lx, &ly);
    Ok(ConvergenceTable {
        estimator: setup.estimator,
        exact_risk: target,
        rows,
        slope,
        slope_stderr,
    })
}

/// Random estimator configuration for the identity suite.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub fd: FiniteDistribution,
    pub scores: Matrix<f64>,
    pub weights: MixtureWeights,
}

/// Seeded random `(distribution, scores, α, γ, π)` for `K` classes on `m` points.
pub fn random_case(k: usize, m: usize, seed: u64) -> Result<RandomCase> {
    let fd = synth_mixture(k, 2, m, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let scores: Vec<f64> = (0..m * k).map(|_| rng.random_range(-4.0..4.0)).collect();
    let simplex = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (1..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let alpha = simplex(&mut rng);
    let pi = simplex(&mut rng);
    let gamma = rng.random_range(0.0..=1.0);
    let weights = MixtureWeights::new(alpha, gamma)?.with_priors(pi)?;
    Ok(RandomCase {
        fd,
        scores: Matrix::from_vec(m, k, scores)?,
        weights,
    })
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_deviation: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            max_deviation,
            threshold,
            passed: max_deviation <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub estimator: Estimator,
    pub slope: f64,
    pub slope_stderr: f64,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub slope_fits: Vec<SlopeFit>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.slope_fits.iter().all(|s| s.passed)
    }
}

/// Exact unbiasedness identities for `K = 2..=6`, all `c`, `cases` seeded configurations each.
pub fn unbiasedness_checks(cases: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for k in 2..=6 {
        let (mut dev_c, mut dev_mcl, mut dev_mcul, mut dev_cl) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut dev_marg = 0.0f64;
        for i in 0..cases {
            let case = random_case(k, 6, seed ^ ((k as u64) << 40) ^ i as u64)?;
            let ex = exact_risks(&case.fd, &case.scores, &case.weights)?;
            for (rc, ru) in ex.r_c.iter().zip(&ex.r_c_unlabeled) {
                dev_c = dev_c.max((rc - ex.r).abs()).max((ru - ex.r).abs());
            }
            dev_mcl = dev_mcl.max((ex.r_mcl - ex.r).abs());
            dev_mcul = dev_mcul.max((ex.r_mcul - ex.r).abs());
            for v in ex.r_mcl_cl.iter().chain(ex.r_mcul_cl.iter()) {
                dev_cl = dev_cl.max((v - ex.r).abs());
            }
            for c in 1..k {
                let d = build_complement_density(&case.fd, c)?;
                dev_marg = dev_marg
                    .max(d.marginal_identity_deviation)
                    .max(d.point_marginal_deviation)
                    .max((d.total_mass() - 1.0).abs());
            }
        }
        out.push(CheckResult::new(
            format!("K={k} R_c = R (all c)"),
            dev_c,
            1e-10,
        ));
        out.push(CheckResult::new(format!("K={k} R_MCL = R"), dev_mcl, 1e-10));
        out.push(CheckResult::new(
            format!("K={k} R_MCUL = R"),
            dev_mcul,
            1e-10,
        ));
        out.push(CheckResult::new(format!("K={k} R_cl = R"), dev_cl, 1e-10));
        out.push(CheckResult::new(
            format!("K={k} complement density marginals"),
            dev_marg,
            1e-12,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_complement_swaps() {
        let fd = synth_mixture(2, 1, 3, 4).unwrap();
        let d = build_complement_density(&fd, 1).unwrap();
        for j in 0..3 {
            assert_eq!(d.p(j, 0), fd.p(j, 2));
            assert_eq!(d.p(j, 1), fd.p(j, 1));
        }
    }

    #[test]
    fn full_complement_recovers_joint() {
        let fd = synth_mixture(4, 1, 2, 5).unwrap();
        let d = build_complement_density(&fd, 3).unwrap();
        for j in 0..2 {
            for y in 1..=4usize {
                let comp: Vec<usize> = (1..=4).filter(|&v| v != y).collect();
                let r = subsets::rank(4, &comp).unwrap();
                assert!((d.p(j, r) - fd.p(j, y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_three_class_single_point() {
        let fd = FiniteDistribution::new(
            Matrix::zeros(1, 1),
            Matrix::from_rows(&[vec![1.0 / 3.0; 3]]).unwrap(),
        )
        .unwrap();
        let d = build_complement_density(&fd, 1).unwrap();
        for r in 0..3 {
            assert!((d.p(0, r) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(d.marginal_identity_deviation < 1e-15);
    }

    #[test]
    fn capacity_and_range_errors() {
        let fd = synth_mixture(9, 1, 1, 0).unwrap();
        assert!(matches!(
            build_complement_density(&fd, 2),
            Err(Error::Capacity(_))
        ));
        let fd = synth_mixture(3, 1, 1, 0).unwrap();
        assert!(build_complement_density(&fd, 3).is_err());
        assert!(build_complement_density(&fd, 0).is_err());
    }

    #[test]
    fn binary_r1_equals_r_and_gamma_zero_reduction() {
        let case = random_case(2, 5, 1).unwrap();
        let ex = exact_risks(&case.fd, &case.scores, &case.weights).unwrap();
        assert!((ex.r_c[0] - ex.r).abs() < 1e-12);

        let mut w = case.weights.clone();
        w.gamma = 0.0;
        let case = random_case(4, 6, 2).unwrap();
        let mut w4 = case.weights.clone();
        w4.gamma = 0.0;
        let ex = exact_risks(&case.fd, &case.scores, &w4).unwrap();
        assert_eq!(ex.r_mcul, ex.r_mcl);
        assert!(w.validate().is_ok());
    }

    #[test]
    fn k4_identities_hold() {
        let case = random_case(4, 6, 42).unwrap();
        let ex = exact_risks(&case.fd, &case.scores, &case.weights).unwrap();
        assert!(ex.max_deviation() <= 1e-10, "{ex:?}");
    }

    #[test]
    fn missing_scores_rejected() {
        let case = random_case(3, 4, 0).unwrap();
        let short = case.scores.select_rows(&[0, 1, 2]);
        assert!(exact_risks(&case.fd, &short, &case.weights).is_err());
    }

    #[test]
    fn fd_check_on_quadratic() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = x
                .iter()
                .enumerate()
                .map(|(i, a)| (i as f64 + 1.0) * a * a)
                .sum();
            let g = x
                .iter()
                .enumerate()
                .map(|(i, a)| 2.0 * (i as f64 + 1.0) * a)
                .collect();
            Ok((v, g))
        };
        let err = fd_gradient_check(f, &[0.3, -1.2, 2.5], 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
        assert!(fd_gradient_check(f, &[0.0], 0.0).is_err());
    }

    #[test]
    fn slope_fit_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 0.5, 0.0, -0.5];
        let (b, se) = fit_slope(&x, &y);
        assert!((b + 0.5).abs() < 1e-15 && se < 1e-12);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let case = random_case(3, 4, 0).unwrap();
        let mut setup = ConvergenceSetup {
            estimator: Estimator::Mcl,
            weights: case.weights.clone(),
            size_shares: vec![0.5, 0.5],
            n_grid: vec![10, 20, 30],
            trials: 10,
            seed: 0,
        };
        assert!(mc_convergence(&case.fd, &case.scores, &setup).is_err());
        setup.n_grid = vec![10, 20, 30, 40];
        assert!(mc_convergence(&case.fd, &case.scores, &setup).is_err());
    }
}
