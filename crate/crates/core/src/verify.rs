//! Seeded check suites shared by the acceptance tests and the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::LabeledDataset;
use crate::error::Result;
use crate::losses::{cl_risk, mcl_risk, mcul_risk, ordinary_risk, Correction, RiskOutput};
use crate::matrix::Matrix;
use crate::model::{Architecture, Model};
use crate::oracle::{
    fd_gradient_check, mc_convergence, random_case, unbiasedness_checks, CheckResult,
    ConvergenceSetup, ConvergenceTable, SlopeFit, VerificationReport,
};
use crate::subsets;
use crate::trainer::{train, Estimator, TrainConfig, TrainSet};
use crate::weaklabel::{draw_complement_set, MixtureWeights, WeakDataset};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// A random batch where every set size `1..K-1` appears at least once, plus `n_u` unlabeled rows.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    k: usize,
    n_labeled: usize,
    n_u: usize,
) -> (Matrix<f64>, Vec<Vec<usize>>) {
    let n = n_labeled.max(k - 1) + n_u;
    let scores: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut sets = Vec::with_capacity(n);
    for i in 0..n_labeled.max(k - 1) {
        let c = if i < k - 1 {
            i + 1
        } else {
            rng.random_range(1..k)
        };
        let y = rng.random_range(1..=k);
        sets.push(draw_complement_set(rng, k, y, c));
    }
    sets.extend(std::iter::repeat_n(Vec::new(), n_u));
    (Matrix::from_vec(n, k, scores).expect("shape"), sets)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn output_diff(a: &RiskOutput<f64>, b: &RiskOutput<f64>) -> f64 {
    (a.total() - b.total())
        .abs()
        .max(max_abs_diff(a.grad.as_slice(), b.grad.as_slice()))
}

/// Learns a K=2 linear model twice, from complementary labels and from the implied true
/// labels, and returns the largest parameter difference over the whole run.
pub fn binary_training_identity(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 11);
    let n = 300;
    let d = 4;
    let mut feats = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(1..=2usize);
        let shift = if y == 1 { -0.7 } else { 0.7 };
        for _ in 0..d {
            feats.push(shift + rng.random_range(-1.0..1.0));
        }
        labels.push(y);
    }
    let x = Matrix::from_vec(n, d, feats)?;
    let ds = LabeledDataset::new(x.clone(), labels.clone(), 2)?;
    let csets = labels.iter().map(|&y| vec![3 - y]).collect();
    let wd = WeakDataset::new(x, csets, 2)?;

    let mut worst = 0.0f64;
    for iters in [1usize, 7, 25] {
        let mut cfg = TrainConfig {
            estimator: Estimator::Ordinary,
            weights: MixtureWeights::new(vec![1.0], 0.0)?,
            architecture: Architecture::Linear,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            batch_size: 32,
            max_iterations: iters,
            eval_every: iters,
            correction: Correction::None,
            seed,
        };
        let sup = train::<f64>(TrainSet::Labeled(&ds), None, &cfg)?;
        cfg.estimator = Estimator::Mcl;
        let weak = train::<f64>(TrainSet::Weak(&wd), None, &cfg)?;
        worst = worst.max(max_abs_diff(
            sup.final_model.params(),
            weak.final_model.params(),
        ));
    }
    Ok(worst)
}

/// Reduction identities: `mcul(γ=0) = mcl` and full-complement MCL = ordinary risk,
/// over `cases` random batches, plus the K=2 training identity.
pub fn reduction_checks(cases: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = rng_for(seed, 2);
    let (mut dev_gamma, mut dev_full) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let k = rng.random_range(2..=7);
        let (nl, nu) = (rng.random_range(1..20), rng.random_range(0..5));
        let (scores, sets) = random_batch(&mut rng, k, nl, nu);
        let alpha = random_simplex(&mut rng, k - 1);
        for corr in [
            Correction::None,
            Correction::PerSample,
            Correction::PerGroup,
        ] {
            let a = mcl_risk(&scores, &sets, &alpha, corr)?;
            let b = mcul_risk(&scores, &sets, &alpha, 0.0, corr)?;
            dev_gamma = dev_gamma.max(output_diff(&a, &b));
        }

        let n = rng.random_range(1..30);
        let sc: Vec<f64> = (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let scores = Matrix::from_vec(n, k, sc)?;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let full: Vec<Vec<usize>> = labels
            .iter()
            .map(|&y| (1..=k).filter(|&v| v != y).collect())
            .collect();
        let mut onehot = vec![0.0; k - 1];
        onehot[k - 2] = 1.0;
        let a = mcl_risk(&scores, &full, &onehot, Correction::None)?;
        let b = ordinary_risk(&scores, &labels)?;
        dev_full = dev_full.max(output_diff(&a, &b));
    }
    Ok(vec![
        CheckResult::new("mcul(gamma=0) = mcl", dev_gamma, 1e-12),
        CheckResult::new("full-complement mcl = ordinary risk", dev_full, 1e-12),
        CheckResult::new(
            "K=2 mcl training = supervised training",
            binary_training_identity(seed)?,
            0.0,
        ),
    ])
}

fn estimator_risk(
    est: Estimator,
    scores: &Matrix<f64>,
    sets: &[Vec<usize>],
    w: &MixtureWeights,
    lambda: f64,
    corr: Correction,
) -> Result<RiskOutput<f64>> {
    match est {
        Estimator::Mcl => mcl_risk(scores, sets, &w.alpha, corr),
        Estimator::Mcul => mcul_risk(scores, sets, &w.alpha, w.gamma, corr),
        Estimator::MclCl => cl_risk(scores, sets, 0.0, lambda, corr),
        Estimator::MculCl => cl_risk(scores, sets, w.gamma, lambda, corr),
        Estimator::Ordinary => {
            let labels: Vec<usize> = sets
                .iter()
                .map(|s| (1..=scores.cols()).find(|y| !s.contains(y)).unwrap_or(1))
                .collect();
            ordinary_risk(scores, &labels)
        }
    }
}

/// Finite-difference checks of every estimator's score gradient, and of the full
/// risk-through-model parameter gradient for both architectures. Returns one result per
/// estimator and one per architecture, each the max relative error over `cases` configs.
pub fn gradient_checks(cases: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let h = 1e-5;
    let mut out = Vec::new();
    let corrections = [
        Correction::None,
        Correction::PerSample,
        Correction::PerGroup,
    ];

    for (ei, est) in Estimator::ALL.into_iter().enumerate() {
        let mut rng = rng_for(seed, 100 + ei as u64);
        let mut worst = 0.0f64;
        for i in 0..cases {
            let k = rng.random_range(2..=6);
            let (nl, nu) = (rng.random_range(1..12), rng.random_range(1..4));
            let (scores, sets) = random_batch(&mut rng, k, nl, nu);
            let w =
                MixtureWeights::new(random_simplex(&mut rng, k - 1), rng.random_range(0.0..=1.0))?;
            let lambda = rng.random_range(0.5..(k as f64));
            let corr = corrections[i % 3];
            let (rows, cols) = (scores.rows(), scores.cols());
            let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                let s = Matrix::from_vec(rows, cols, p.to_vec())?;
                let r = estimator_risk(est, &s, &sets, &w, lambda, corr)?;
                Ok((r.total(), r.grad.into_vec()))
            };
            worst = worst.max(fd_gradient_check(f, scores.as_slice(), h)?);
        }
        out.push(CheckResult::new(
            format!("{est} score gradient"),
            worst,
            1e-5,
        ));
    }

    for (ai, arch) in [Architecture::Linear, Architecture::Mlp { hidden: 6 }]
        .into_iter()
        .enumerate()
    {
        let mut rng = rng_for(seed, 200 + ai as u64);
        let mut worst = 0.0f64;
        for i in 0..cases {
            let k = rng.random_range(2..=5);
            let d = rng.random_range(1..=5);
            let est = Estimator::ALL[i % Estimator::ALL.len()];
            let (nl, nu) = (rng.random_range(1..8), rng.random_range(1..3));
            let (_, sets) = random_batch(&mut rng, k, nl, nu);
            let n = sets.len();
            let x = Matrix::from_vec(
                n,
                d,
                (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )?;
            let w =
                MixtureWeights::new(random_simplex(&mut rng, k - 1), rng.random_range(0.0..=1.0))?;
            let lambda = rng.random_range(0.5..(k as f64));
            let init = Model::<f64>::init(arch, d, k, rng.random())?;
            let corr = if i % 2 == 0 {
                Correction::None
            } else {
                Correction::PerSample
            };
            let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                let m = Model::from_params(arch, d, k, p.to_vec())?;
                let (s, cache) = m.forward_cached(&x)?;
                let r = estimator_risk(est, &s, &sets, &w, lambda, corr)?;
                let g = m.backward_with(&x, &cache, &r.grad)?;
                Ok((r.total(), g))
            };
            worst = worst.max(fd_gradient_check(f, init.params(), h)?);
        }
        let name = match arch {
            Architecture::Linear => "linear model parameter gradient",
            Architecture::Mlp { .. } => "mlp parameter gradient",
        };
        out.push(CheckResult::new(name, worst, 1e-5));
    }
    Ok(out)
}

/// Empirical frequency of every `c`-subset of the complement of every label, `K = 2..=max_k`.
pub fn uniformity_checks(max_k: usize, draws: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for k in 2..=max_k {
        let mut worst = 0.0f64;
        for c in 1..k {
            let want = 1.0 / subsets::binomial(k - 1, c) as f64;
            for y in 1..=k {
                let mut rng = rng_for(seed, ((k * 16 + c) * 16 + y) as u64);
                let mut counts = vec![0usize; subsets::binomial(k, c)];
                for _ in 0..draws {
                    let s = draw_complement_set(&mut rng, k, y, c);
                    counts[subsets::rank(k, &s)?] += 1;
                }
                for (r, s) in subsets::enumerate(k, c).iter().enumerate() {
                    let expect = if s.contains(&y) { 0.0 } else { want };
                    worst = worst.max((counts[r] as f64 / draws as f64 - expect).abs());
                }
            }
        }
        out.push(CheckResult::new(
            format!("K={k} subset frequencies"),
            worst,
            0.01,
        ));
    }
    Ok(out)
}

/// Monte-Carlo slope fits for MCL and MCUL at `K = 3`.
pub fn convergence_checks(
    trials: usize,
    seed: u64,
) -> Result<(Vec<ConvergenceTable>, Vec<SlopeFit>)> {
    let case = random_case(3, 8, seed)?;
    let mut tables = Vec::new();
    let mut fits = Vec::new();
    for est in [Estimator::Mcl, Estimator::Mcul] {
        let setup = ConvergenceSetup {
            estimator: est,
            weights: case.weights.clone(),
            size_shares: vec![0.5, 0.5],
            n_grid: vec![100, 1_000, 10_000, 100_000],
            trials,
            seed,
        };
        let t = mc_convergence(&case.fd, &case.scores, &setup)?;
        fits.push(SlopeFit {
            estimator: est,
            slope: t.slope,
            slope_stderr: t.slope_stderr,
            lower: -0.65,
            upper: -0.35,
            passed: (-0.65..=-0.35).contains(&t.slope),
        });
        tables.push(t);
    }
    Ok((tables, fits))
}

/// Every desk check: unbiasedness, reductions, gradients, uniformity, and optionally the slope fits.
pub fn full_report(seed: u64, with_convergence: bool) -> Result<VerificationReport> {
    let mut checks = unbiasedness_checks(50, seed)?;
    checks.extend(reduction_checks(100, seed)?);
    checks.extend(gradient_checks(100, seed)?);
    checks.extend(uniformity_checks(5, 100_000, seed)?);
    let slope_fits = if with_convergence {
        convergence_checks(200, seed)?.1
    } else {
        Vec::new()
    };
    Ok(VerificationReport { checks, slope_fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_batch_covers_all_sizes() {
        let mut rng = rng_for(0, 0);
        let (s, sets) = random_batch(&mut rng, 5, 2, 3);
        assert_eq!(s.rows(), sets.len());
        for c in 1..5 {
            assert!(sets.iter().any(|x| x.len() == c));
        }
        assert_eq!(sets.iter().filter(|x| x.is_empty()).count(), 3);
    }

    #[test]
    fn small_suites_pass() {
        assert!(reduction_checks(10, 1).unwrap().iter().all(|c| c.passed));
        assert!(gradient_checks(5, 1).unwrap().iter().all(|c| c.passed));
        assert!(uniformity_checks(3, 20_000, 1)
            .unwrap()
            .iter()
            .all(|c| c.passed));
    }
}
