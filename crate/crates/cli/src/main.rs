use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mcul::datasets::{load_csv, CsvOptions, LabeledDataset};
use mcul::experiment::{
    mean_std, prepare_trial, run_prepared, train_config, ExperimentSpec, UnlabeledFraction,
};
use mcul::oracle::{mc_convergence, random_case, ConvergenceSetup, ConvergenceTable};
use mcul::trainer::{evaluate, history_csv, train};
use mcul::verify::full_report;
use mcul::{Correction, Error, Estimator, Model, Result, TrainSet, WeakDataset};

mod table;

use table::Table;

#[derive(Parser)]
#[command(
    name = "mcul",
    version,
    about = "Learning from multi-complementary-label and unlabeled data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split and weaken a dataset; writes weak_train.jsonl and test.csv.
    GenWeak(Common),
    /// Train one model; writes model.json and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on this weak dataset instead of generating one from the config.
        #[arg(long)]
        weak: Option<PathBuf>,
        /// Labeled CSV (label last, already 1..=K) used for model selection.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Print the test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Labeled CSV with labels 1..=K in the last column.
        #[arg(long, conflicts_with = "config")]
        data: Option<PathBuf>,
        /// Evaluate on the config's test split instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the exact-identity, reduction, gradient and uniformity checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for verify.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also fit the Monte-Carlo convergence slopes.
        #[arg(long)]
        with_rate: bool,
    },
    /// Monte-Carlo error of the empirical estimators against sample size.
    Rate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Estimators to measure (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "mcl,mcul")]
        estimator: Vec<Estimator>,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
        grid: Vec<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat train/eval over seeds and print a mean±std accuracy table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Estimators to compare (comma separated); defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<Estimator>,
    },
}

/// Config file plus flag overrides shared by the experiment commands.
#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    estimator: Option<Estimator>,
    /// Apply the per-sample absolute-value correction.
    #[arg(long)]
    nn_correction: bool,
    /// A share in [0, 1) or "auto".
    #[arg(long)]
    unlabeled_fraction: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
}

struct Loaded {
    spec: ExperimentSpec,
    hash: String,
    out: PathBuf,
}

fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentSpec::from_json(&text)
}

/// SHA-256 of the canonical spec JSON, ignoring where outputs go.
fn spec_hash(spec: &ExperimentSpec) -> Result<String> {
    let mut s = spec.clone();
    s.output_dir = None;
    let canon = serde_json::to_string(&s)?;
    Ok(Sha256::digest(canon.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn load(common: &Common) -> Result<Loaded> {
    let mut spec = read_spec(&common.config)?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(g) = common.gamma {
        spec.training.gamma = g;
    }
    if let Some(e) = common.estimator {
        spec.training.estimator = e;
    }
    if common.nn_correction {
        spec.training.correction = Correction::PerSample;
    }
    if let Some(f) = &common.unlabeled_fraction {
        spec.weakening.unlabeled_fraction = serde_json::from_str(f)
            .or_else(|_| serde_json::from_str::<UnlabeledFraction>(&format!("\"{f}\"")))
            .map_err(|_| {
                Error::Config(format!(
                    "unlabeled fraction {f:?} is neither a number nor \"auto\""
                ))
            })?;
    }
    if let Some(t) = common.trials {
        spec.trials = t;
    }
    if let Some(o) = &common.out {
        spec.output_dir = Some(o.clone());
    }
    spec.validate()?;
    let hash = spec_hash(&spec)?;
    let out = spec
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded { spec, hash, out })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    spec_hash: &'a str,
    spec: &'a ExperimentSpec,
    files: Vec<String>,
}

fn write_manifest(l: &Loaded, command: &str, files: &[&str]) -> Result<()> {
    let m = Manifest {
        command,
        spec_hash: &l.hash,
        spec: &l.spec,
        files: files.iter().map(|s| s.to_string()).collect(),
    };
    write(
        &l.out.join("manifest.json"),
        &serde_json::to_string_pretty(&m)?,
    )
}

fn gen_weak(common: &Common) -> Result<()> {
    let l = load(common)?;
    let data = l.spec.dataset.load()?;
    let prep = prepare_trial(&l.spec, &data, 0)?;
    ensure_dir(&l.out)?;
    prep.train_weak
        .write_jsonl(l.out.join("weak_train.jsonl"))?;
    prep.test.write_csv(l.out.join("test.csv"))?;
    let mut files = vec!["weak_train.jsonl", "test.csv"];
    if let Some(v) = &prep.validation {
        v.write_csv(l.out.join("validation.csv"))?;
        files.push("validation.csv");
    }
    write_manifest(&l, "gen-weak", &files)?;
    let counts = prep.train_weak.group_counts();
    println!(
        "train {} (unlabeled {}, per size {:?}), test {}, spec {}",
        prep.train_weak.len(),
        prep.train_weak.unlabeled().len(),
        counts,
        prep.test.len(),
        l.hash
    );
    Ok(())
}

fn labeled_csv(path: &Path, k: Option<usize>) -> Result<LabeledDataset> {
    load_csv(
        path,
        CsvOptions {
            num_classes: k,
            remap_labels: false,
            ..Default::default()
        },
    )
}

fn train_cmd(common: &Common, weak: Option<&Path>, validation: Option<&Path>) -> Result<()> {
    let l = load(common)?;
    ensure_dir(&l.out)?;
    let (outcome, test_acc) = match weak {
        Some(p) => {
            let wd = WeakDataset::read_jsonl(p)?;
            let val = validation
                .map(|v| labeled_csv(v, Some(wd.num_classes())))
                .transpose()?;
            let cfg = train_config(&l.spec.training, &wd, l.spec.seed)?;
            let out = train::<f64>(TrainSet::Weak(&wd), val.as_ref(), &cfg)?;
            (out.model, None)
        }
        None => {
            let data = l.spec.dataset.load()?;
            let prep = prepare_trial(&l.spec, &data, 0)?;
            let r = run_prepared(&prep, 0)?;
            write(&l.out.join("history.csv"), &history_csv(&r.history))?;
            (r.model, Some(r.test_accuracy))
        }
    };
    outcome.save(l.out.join("model.json"), Some(l.hash.clone()))?;
    let mut files = vec!["model.json"];
    if test_acc.is_some() {
        files.push("history.csv");
    }
    write_manifest(&l, "train", &files)?;
    match test_acc {
        Some(a) => println!("test accuracy {a:.4}"),
        None => println!("saved {}", l.out.join("model.json").display()),
    }
    Ok(())
}

fn eval_cmd(
    model: &Path,
    data: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let m = Model::<f64>::load(model)?;
    let ds = match (data, config) {
        (Some(d), _) => labeled_csv(d, Some(m.num_classes()))?,
        (None, Some(c)) => {
            let mut spec = read_spec(c)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate()?;
            let data = spec.dataset.load()?;
            prepare_trial(&spec, &data, 0)?.test
        }
        (None, None) => return Err(Error::Config("eval needs --data or --config".into())),
    };
    println!("accuracy {:.4}", evaluate(&m, &ds)?);
    Ok(())
}

/// Returns whether every check passed.
fn verify_cmd(seed: u64, out: Option<&Path>, with_rate: bool) -> Result<bool> {
    let report = full_report(seed, with_rate)?;
    let json = serde_json::to_string_pretty(&report)?;
    for c in &report.checks {
        eprintln!(
            "{} {:<45} {:.3e} (limit {:.0e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.max_deviation,
            c.threshold
        );
    }
    for s in &report.slope_fits {
        eprintln!(
            "{} {} slope {:.3} in [{}, {}]",
            if s.passed { "ok  " } else { "FAIL" },
            s.estimator,
            s.slope,
            s.lower,
            s.upper
        );
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(&dir.join("verify.json"), &json)?;
    }
    println!("{json}");
    Ok(report.passed())
}

fn rate_table(tables: &[ConvergenceTable]) -> Table {
    let mut t = Table::new(vec![
        "estimator",
        "n",
        "mean_abs_error",
        "sd_abs_error",
        "slope",
    ]);
    for tab in tables {
        for r in &tab.rows {
            t.push(vec![
                tab.estimator.to_string(),
                r.n.to_string(),
                format!("{:.6e}", r.mean_abs_error),
                format!("{:.6e}", r.sd_abs_error),
                format!("{:.4}", tab.slope),
            ]);
        }
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn rate_cmd(
    seed: u64,
    trials: usize,
    classes: usize,
    estimators: &[Estimator],
    grid: &[usize],
    gamma: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    if !(2..=mcul::oracle::MAX_CLASSES).contains(&classes) {
        return Err(Error::Config(format!(
            "classes must be in 2..={}",
            mcul::oracle::MAX_CLASSES
        )));
    }
    let mut case = random_case(classes, 8, seed)?;
    if let Some(g) = gamma {
        case.weights.gamma = g;
        case.weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let shares = vec![1.0 / (classes - 1) as f64; classes - 1];
    let mut tables = Vec::new();
    for &est in estimators {
        let setup = ConvergenceSetup {
            estimator: est,
            weights: case.weights.clone(),
            size_shares: shares.clone(),
            n_grid: grid.to_vec(),
            trials,
            seed,
        };
        tables.push(
            mc_convergence(&case.fd, &case.scores, &setup).map_err(|e| match e {
                Error::Argument(m) => Error::Config(m),
                other => other,
            })?,
        );
    }
    let t = rate_table(&tables);
    println!("{}", t.aligned());
    println!("{}", t.csv());
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(&dir.join("rate.csv"), &t.csv())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepCell {
    estimator: Estimator,
    accuracies: Vec<f64>,
    mean: f64,
    std: f64,
}

fn sweep_cmd(common: &Common, estimators: &[Estimator]) -> Result<()> {
    let l = load(common)?;
    let data = l.spec.dataset.load()?;
    let ests = if estimators.is_empty() {
        vec![l.spec.training.estimator]
    } else {
        estimators.to_vec()
    };
    let mut cells = Vec::new();
    for &est in &ests {
        let mut spec = l.spec.clone();
        spec.training.estimator = est;
        let mut acc = Vec::with_capacity(spec.trials);
        for t in 0..spec.trials {
            let r = run_prepared(&prepare_trial(&spec, &data, t)?, t)?;
            eprintln!(
                "{est} trial {t} (seed {}): {:.2}",
                r.seed,
                r.test_accuracy * 100.0
            );
            acc.push(r.test_accuracy * 100.0);
        }
        let (mean, std) = mean_std(&acc);
        cells.push(SweepCell {
            estimator: est,
            accuracies: acc,
            mean,
            std,
        });
    }

    let mut header = vec!["dataset".to_string()];
    header.extend(ests.iter().map(|e| e.to_string()));
    let mut t = Table::new(header);
    let mut row = vec![l.spec.dataset.name()];
    row.extend(cells.iter().map(|c| format!("{:.2}±{:.2}", c.mean, c.std)));
    t.push(row);
    println!("{}", t.aligned());
    println!("{}", t.csv());

    ensure_dir(&l.out)?;
    write(&l.out.join("sweep.csv"), &t.csv())?;
    let json = serde_json::json!({ "spec_hash": l.hash, "trials": l.spec.trials, "cells": cells });
    write(
        &l.out.join("sweep.json"),
        &serde_json::to_string_pretty(&json)?,
    )?;
    write_manifest(&l, "sweep", &["sweep.csv", "sweep.json"])
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Config(_)
        | Error::Argument(_)
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::Io { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenWeak(c) => gen_weak(c).map(|_| true),
        Command::Train {
            common,
            weak,
            validation,
        } => train_cmd(common, weak.as_deref(), validation.as_deref()).map(|_| true),
        Command::Eval {
            model,
            data,
            config,
            seed,
        } => eval_cmd(model, data.as_deref(), config.as_deref(), *seed).map(|_| true),
        Command::Verify {
            seed,
            out,
            with_rate,
        } => verify_cmd(*seed, out.as_deref(), *with_rate),
        Command::Rate {
            seed,
            trials,
            classes,
            estimator,
            grid,
            gamma,
            out,
        } => rate_cmd(
            *seed,
            *trials,
            *classes,
            estimator,
            grid,
            *gamma,
            out.as_deref(),
        )
        .map(|_| true),
        Command::Sweep { common, estimators } => sweep_cmd(common, estimators).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
