use mcul::datasets::synth_blobs;
use mcul::losses::ordinary_risk;
use mcul::model::Checkpoint;
use mcul::optim::{adam_step, AdamState};
use mcul::trainer::{evaluate, history_csv, make_batches, train};
use mcul::weaklabel::{
    default_alpha, default_size_dist, weaken, weaken_traced, SizeMode, WeakenConfig,
};
use mcul::{
    Architecture, Correction, Error, Estimator, LabeledDataset, Matrix, MixtureWeights, Model,
    TrainConfig, TrainSet,
};

fn config(estimator: Estimator, weights: MixtureWeights, iters: usize) -> TrainConfig {
    TrainConfig {
        estimator,
        weights,
        architecture: Architecture::Linear,
        learning_rate: 0.05,
        weight_decay: 1e-4,
        batch_size: 32,
        max_iterations: iters,
        eval_every: 20,
        correction: Correction::None,
        seed: 3,
    }
}

#[test]
fn separable_binary_reaches_full_accuracy() {
    let ds = synth_blobs(2, 2, 400, 6.0, 1).unwrap();
    let cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![1.0], 0.0).unwrap(),
        300,
    );
    let out = train::<f64>(TrainSet::Labeled(&ds), None, &cfg).unwrap();
    assert_eq!(evaluate(&out.final_model, &ds).unwrap(), 1.0);
}

#[test]
fn mcl_learns_from_complementary_sets() {
    let ds = synth_blobs(4, 4, 2000, 4.0, 2).unwrap();
    let wd = weaken(&ds, &default_size_dist(4, 2.0).unwrap(), 0.0, 4).unwrap();
    let alpha = default_alpha(&wd.group_counts(), 4).unwrap();
    let cfg = config(
        Estimator::Mcl,
        MixtureWeights::new(alpha, 0.0).unwrap(),
        1500,
    );
    let out = train::<f64>(TrainSet::Weak(&wd), Some(&ds), &cfg).unwrap();
    assert!(evaluate(&out.model, &ds).unwrap() > 0.9);
    assert!(out.best_iteration.is_some());
}

fn mixed_weak_blobs() -> (LabeledDataset, mcul::WeakDataset, MixtureWeights) {
    let ds = synth_blobs(3, 3, 600, 4.0, 5).unwrap();
    let cfg_w = WeakenConfig {
        size_dist: vec![0.5, 0.5],
        unlabeled_fraction: 0.5,
        mode: SizeMode::FixedCounts,
        seed: 6,
    };
    let (wd, _) = weaken_traced(&ds, &cfg_w).unwrap();
    let w = MixtureWeights::new(vec![0.5, 0.5], 0.3)
        .unwrap()
        .with_priors(vec![0.5, 0.5])
        .unwrap();
    (ds, wd, w)
}

#[test]
fn every_estimator_trains_in_both_precisions() {
    let (ds, wd, w) = mixed_weak_blobs();
    for est in [
        Estimator::Mcl,
        Estimator::Mcul,
        Estimator::MclCl,
        Estimator::MculCl,
    ] {
        for arch in [Architecture::Linear, Architecture::Mlp { hidden: 16 }] {
            let mut cfg = config(est, w.clone(), 200);
            cfg.architecture = arch;
            let a = train::<f64>(TrainSet::Weak(&wd), None, &cfg).unwrap();
            let b = train::<f32>(TrainSet::Weak(&wd), None, &cfg).unwrap();
            let (acc_a, acc_b) = (
                evaluate(&a.final_model, &ds).unwrap(),
                evaluate(&b.final_model, &ds).unwrap(),
            );
            assert!(acc_a > 0.8, "{est} {arch:?} f64 {acc_a}");
            assert!(acc_b > 0.8, "{est} {arch:?} f32 {acc_b}");
            assert_eq!(a.history.len(), 10);
        }
    }
}

#[test]
fn per_sample_correction_trains_mlp() {
    let (ds, wd, w) = mixed_weak_blobs();
    for est in [Estimator::Mcl, Estimator::Mcul, Estimator::MclCl] {
        let mut cfg = config(est, w.clone(), 200);
        cfg.architecture = Architecture::Mlp { hidden: 16 };
        cfg.correction = Correction::PerSample;
        let out = train::<f64>(TrainSet::Weak(&wd), None, &cfg).unwrap();
        let acc = evaluate(&out.final_model, &ds).unwrap();
        assert!(acc > 0.9, "{est} {acc}");
        // corrected labeled terms are non-negative, so the logged risk is too
        assert!(out.history.iter().all(|h| h.risk >= 0.0), "{est}");
    }
}

#[test]
fn training_is_deterministic() {
    let ds = synth_blobs(3, 2, 300, 3.0, 7).unwrap();
    let wd = weaken(&ds, &[0.5, 0.5], 0.2, 8).unwrap();
    let w = MixtureWeights::new(vec![0.5, 0.5], 0.1).unwrap();
    let cfg = config(Estimator::Mcul, w, 120);
    let a = train::<f64>(TrainSet::Weak(&wd), Some(&ds), &cfg).unwrap();
    let b = train::<f64>(TrainSet::Weak(&wd), Some(&ds), &cfg).unwrap();
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(a.history, b.history);
    let mut other = cfg.clone();
    other.seed = 4;
    let c = train::<f64>(TrainSet::Weak(&wd), Some(&ds), &other).unwrap();
    assert_ne!(a.final_model.params(), c.final_model.params());
}

/// Plain supervised loop written against the public building blocks, without the trainer.
fn reference_loop(ds: &LabeledDataset, cfg: &TrainConfig) -> Model<f64> {
    let mut model =
        Model::<f64>::init(cfg.architecture, ds.dim(), ds.num_classes(), cfg.seed).unwrap();
    let mut adam = AdamState::new(model.params().len());
    let n = ds.len();
    let nb = n.div_ceil(cfg.batch_size);
    let mut it = 0;
    let mut epoch = 0u64;
    while it < cfg.max_iterations {
        // the trainer's batches for one stratum are its stream-1 shuffles cut into nb pieces
        let batches = epoch_batches(ds, cfg, epoch);
        assert_eq!(batches.len(), nb);
        for rows in batches {
            let x = ds.features().select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
            let s = model.forward(&x).unwrap();
            let r = ordinary_risk(&s, &y).unwrap();
            let g = model.backward(&x, &r.grad).unwrap();
            adam_step(
                model.params_mut(),
                &g,
                &mut adam,
                cfg.learning_rate,
                cfg.weight_decay,
            )
            .unwrap();
            it += 1;
            if it == cfg.max_iterations {
                return model;
            }
        }
        epoch += 1;
    }
    model
}

fn epoch_batches(ds: &LabeledDataset, cfg: &TrainConfig, epoch: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n = ds.len();
    let nb = n.div_ceil(cfg.batch_size);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..=epoch {
        perm = (0..n).collect();
        perm.shuffle(&mut rng);
    }
    (0..nb)
        .map(|b| perm[b * n / nb..(b + 1) * n / nb].to_vec())
        .collect()
}

#[test]
fn trainer_matches_reference_loop() {
    let ds = synth_blobs(3, 3, 250, 2.0, 9).unwrap();
    let cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![0.5, 0.5], 0.0).unwrap(),
        25,
    );
    let out = train::<f64>(TrainSet::Labeled(&ds), None, &cfg).unwrap();
    assert_eq!(out.final_model, reference_loop(&ds, &cfg));
}

#[test]
fn full_complement_mcl_matches_supervised_training() {
    let ds = synth_blobs(4, 3, 320, 2.5, 10).unwrap();
    let csets = ds
        .labels()
        .iter()
        .map(|&y| (1..=4).filter(|&v| v != y).collect())
        .collect();
    let wd = mcul::WeakDataset::new(ds.features().clone(), csets, 4).unwrap();
    let mut cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![0.0, 0.0, 1.0], 0.0).unwrap(),
        40,
    );
    let sup = train::<f64>(TrainSet::Labeled(&ds), None, &cfg).unwrap();
    cfg.estimator = Estimator::Mcl;
    let weak = train::<f64>(TrainSet::Weak(&wd), None, &cfg).unwrap();
    assert_eq!(sup.final_model, weak.final_model);
}

#[test]
fn zero_model_scores_chance_on_balanced_data() {
    let ds = synth_blobs(10, 5, 1000, 1.0, 11).unwrap();
    let m = Model::<f64>::zeros(Architecture::Linear, 5, 10).unwrap();
    // every prediction ties and resolves to class 1
    assert_eq!(evaluate(&m, &ds).unwrap(), 0.1);
}

#[test]
fn evaluate_counts_hits() {
    // identity weights: the largest feature wins
    let x = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![2.0, 1.0],
        vec![0.0, 3.0],
    ])
    .unwrap();
    let ds = LabeledDataset::new(x, vec![1, 2, 2, 2], 2).unwrap();
    let m = Model::from_params(
        Architecture::Linear,
        2,
        2,
        vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
    )
    .unwrap();
    assert_eq!(evaluate(&m, &ds).unwrap(), 0.75);
}

#[test]
fn divergence_is_reported() {
    let ds = synth_blobs(2, 2, 100, 1.0, 12).unwrap();
    let mut cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![1.0], 0.0).unwrap(),
        10,
    );
    cfg.learning_rate = f64::MAX;
    let err = train::<f32>(TrainSet::Labeled(&ds), None, &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn config_errors() {
    let ds = synth_blobs(3, 2, 60, 1.0, 13).unwrap();
    let wd = weaken(&ds, &[1.0, 0.0], 0.0, 0).unwrap();
    // alpha_2 > 0 but nobody has two complementary labels
    let cfg = config(
        Estimator::Mcl,
        MixtureWeights::new(vec![0.5, 0.5], 0.0).unwrap(),
        5,
    );
    assert!(matches!(
        train::<f64>(TrainSet::Weak(&wd), None, &cfg),
        Err(Error::Config(_))
    ));
    // gamma > 0 without unlabeled samples
    let cfg = config(
        Estimator::Mcul,
        MixtureWeights::new(vec![1.0, 0.0], 0.5).unwrap(),
        5,
    );
    assert!(matches!(
        train::<f64>(TrainSet::Weak(&wd), None, &cfg),
        Err(Error::Config(_))
    ));
    // class-prior estimator without priors
    let cfg = config(
        Estimator::MclCl,
        MixtureWeights::new(vec![1.0, 0.0], 0.0).unwrap(),
        5,
    );
    assert!(matches!(
        train::<f64>(TrainSet::Weak(&wd), None, &cfg),
        Err(Error::Config(_))
    ));
    // ordinary estimator on weak data
    let cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![1.0, 0.0], 0.0).unwrap(),
        5,
    );
    assert!(matches!(
        train::<f64>(TrainSet::Weak(&wd), None, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn batches_keep_every_required_group() {
    let ds = synth_blobs(5, 2, 2000, 1.0, 14).unwrap();
    let wd = weaken(&ds, &default_size_dist(5, 2.5).unwrap(), 0.99, 15).unwrap();
    let alpha = default_alpha(&wd.group_counts(), 5).unwrap();
    let w = MixtureWeights::new(alpha.clone(), 0.1).unwrap();
    let batches = make_batches(&wd, Estimator::Mcul, &w, 100, 16).unwrap();
    assert_eq!(batches.len(), 20);
    for b in &batches {
        for c in 1..5 {
            if alpha[c - 1] > 0.0 {
                assert!(b.iter().any(|&i| wd.csets()[i].len() == c), "group {c}");
            }
        }
        assert!(b.iter().any(|&i| wd.csets()[i].is_empty()));
    }
}

#[test]
fn checkpoint_and_history_round_trip() {
    let ds = synth_blobs(3, 2, 90, 2.0, 17).unwrap();
    let mut cfg = config(
        Estimator::Ordinary,
        MixtureWeights::new(vec![0.5, 0.5], 0.0).unwrap(),
        40,
    );
    cfg.architecture = Architecture::Mlp { hidden: 5 };
    let out = train::<f64>(TrainSet::Labeled(&ds), Some(&ds), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.model.save(&path, Some("abc".into())).unwrap();
    let back = Model::<f64>::load(&path).unwrap();
    assert_eq!(back, out.model);
    let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(ck.spec_hash.as_deref(), Some("abc"));

    let csv = history_csv(&out.history);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,risk,val_accuracy");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("40,"));
}
