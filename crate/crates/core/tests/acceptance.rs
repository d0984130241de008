//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line.
//!
//! The MNIST criteria read raw IDX files from `$MCUL_MNIST_DIR`, defaulting to
//! `<workspace>/data/mnist` (see `scripts/fetch_mnist.sh`).

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use mcul::experiment::{
    mean_std, run_trial, DatasetSource, ExperimentSpec, TrainingSpec, UnlabeledFraction,
    WeakeningSpec,
};
use mcul::oracle::{unbiasedness_checks, CheckResult};
use mcul::verify::{convergence_checks, gradient_checks, reduction_checks, uniformity_checks};
use mcul::{Architecture, Correction, Estimator, LabeledDataset};

const SEED: u64 = 20_190_601;

fn report(id: u32, title: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "criterion {id} [{verdict}] {title}: {detail}"
    );
}

fn summarize(checks: &[CheckResult]) -> (bool, String) {
    let worst = checks
        .iter()
        .map(|c| format!("{}={:.2e}/{:.0e}", c.name, c.max_deviation, c.threshold))
        .collect::<Vec<_>>()
        .join("; ");
    (checks.iter().all(|c| c.passed), worst)
}

#[test]
fn criterion_1_unbiasedness() {
    let t = Instant::now();
    let checks = unbiasedness_checks(50, SEED).unwrap();
    let (ok, detail) = summarize(&checks);
    let secs = t.elapsed().as_secs_f64();
    let ok = ok && secs <= 60.0;
    report(
        1,
        "exact unbiasedness K=2..6",
        ok,
        &format!("{detail} ({secs:.1}s)"),
    );
    assert!(ok);
}

#[test]
fn criterion_2_reductions() {
    let checks = reduction_checks(200, SEED).unwrap();
    let (ok, detail) = summarize(&checks);
    report(2, "reduction equivalences", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_3_gradients() {
    let t = Instant::now();
    let checks = gradient_checks(100, SEED).unwrap();
    let (ok, detail) = summarize(&checks);
    let secs = t.elapsed().as_secs_f64();
    let ok = ok && secs <= 60.0;
    report(
        3,
        "finite-difference gradients",
        ok,
        &format!("{detail} ({secs:.1}s)"),
    );
    assert!(ok);
}

#[test]
fn criterion_4_convergence_rate() {
    let t = Instant::now();
    let (tables, fits) = convergence_checks(200, SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = fits.iter().all(|f| f.passed) && secs <= 300.0;
    let detail = fits
        .iter()
        .zip(&tables)
        .map(|(f, t)| {
            let errs = t
                .rows
                .iter()
                .map(|r| format!("{:.2e}", r.mean_abs_error))
                .collect::<Vec<_>>()
                .join(",");
            format!(
                "{} slope {:.3}±{:.3} [{errs}]",
                f.estimator, f.slope, f.slope_stderr
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(
        4,
        "1/sqrt(n) convergence at K=3",
        ok,
        &format!("{detail} ({secs:.1}s)"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_uniformity() {
    let checks = uniformity_checks(5, 100_000, SEED).unwrap();
    let (ok, detail) = summarize(&checks);
    report(5, "complementary subset uniformity", ok, &detail);
    assert!(ok);
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MCUL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_source() -> DatasetSource {
    let dir = mnist_dir();
    DatasetSource::Idx {
        images: vec![
            dir.join("train-images-idx3-ubyte"),
            dir.join("t10k-images-idx3-ubyte"),
        ],
        labels: vec![
            dir.join("train-labels-idx1-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ],
    }
}

fn mnist() -> Result<&'static LabeledDataset, String> {
    static DATA: OnceLock<Result<LabeledDataset, String>> = OnceLock::new();
    DATA.get_or_init(|| {
        mnist_source()
            .load()
            .map_err(|e| format!("MNIST not available under {}: {e}", mnist_dir().display()))
    })
    .as_ref()
    .map_err(Clone::clone)
}

/// Prints the FAIL line for a criterion that could not run, then fails the test.
fn unavailable(id: u32, title: &str, why: &str) -> ! {
    report(id, title, false, why);
    panic!("{why}");
}

fn mnist_spec(estimator: Estimator, gamma: f64, unlabeled: UnlabeledFraction) -> ExperimentSpec {
    ExperimentSpec {
        dataset: mnist_source(),
        test_ratio: 0.1,
        validation_ratio: 0.0,
        weakening: WeakeningSpec {
            size_dist: None,
            mu: None,
            unlabeled_fraction: unlabeled,
            mode: Default::default(),
        },
        training: TrainingSpec {
            estimator,
            alpha: None,
            gamma,
            pi: None,
            architecture: Architecture::Linear,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 100,
            max_iterations: 60_000,
            eval_every: Some(6_000),
            correction: Correction::None,
        },
        trials: 3,
        seed: SEED,
        output_dir: None,
    }
}

fn accuracies(spec: &ExperimentSpec) -> Result<Vec<f64>, String> {
    spec.validate().map_err(|e| e.to_string())?;
    let data = mnist()?;
    (0..spec.trials)
        .map(|t| {
            run_trial(spec, data, t)
                .map(|r| r.test_accuracy * 100.0)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn fmt_acc(v: &[f64]) -> String {
    let (m, s) = mean_std(v);
    format!("{m:.2}±{s:.2} {v:.2?}")
}

#[test]
fn criterion_6_mnist_mcl() {
    let title = "MNIST linear MCL accuracy >= 74%";
    let t = Instant::now();
    let acc = accuracies(&mnist_spec(
        Estimator::Mcl,
        0.0,
        UnlabeledFraction::Value(0.0),
    ))
    .unwrap_or_else(|e| unavailable(6, title, &e));
    let (mean, _) = mean_std(&acc);
    let min = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = t.elapsed().as_secs_f64();
    let ok = min >= 74.0 && secs <= 1800.0;
    report(
        6,
        title,
        ok,
        &format!("{} mean {mean:.2} ({secs:.0}s)", fmt_acc(&acc)),
    );
    assert!(ok);
}

struct UnlabeledRuns {
    mcl: Vec<f64>,
    mcul: Vec<f64>,
    mcul_cl: Vec<f64>,
}

fn unlabeled_runs() -> Result<&'static UnlabeledRuns, String> {
    static RUNS: OnceLock<Result<UnlabeledRuns, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let frac = UnlabeledFraction::Value(0.995);
        Ok(UnlabeledRuns {
            mcl: accuracies(&mnist_spec(Estimator::Mcl, 0.0, frac))?,
            mcul: accuracies(&mnist_spec(Estimator::Mcul, 0.1, frac))?,
            mcul_cl: accuracies(&mnist_spec(Estimator::MculCl, 0.1, frac))?,
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

#[test]
fn criterion_7_unlabeled_benefit() {
    let title = "99.5% unlabeled: MCUL(0.1) beats MCL by >= 5 points";
    let r = unlabeled_runs().unwrap_or_else(|e| unavailable(7, title, &e));
    let gap = mean_std(&r.mcul).0 - mean_std(&r.mcl).0;
    let ok = gap >= 5.0;
    report(
        7,
        title,
        ok,
        &format!(
            "MCL {} MCUL {} gap {gap:.2}",
            fmt_acc(&r.mcl),
            fmt_acc(&r.mcul)
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_class_prior_benefit() {
    let title = "99.5% unlabeled: MCUL^cl >= MCUL";
    let r = unlabeled_runs().unwrap_or_else(|e| unavailable(8, title, &e));
    let gap = mean_std(&r.mcul_cl).0 - mean_std(&r.mcul).0;
    let ok = gap >= 0.0;
    report(
        8,
        title,
        ok,
        &format!(
            "MCUL {} MCUL^cl {} gap {gap:.2}",
            fmt_acc(&r.mcul),
            fmt_acc(&r.mcul_cl)
        ),
    );
    assert!(ok);
}
