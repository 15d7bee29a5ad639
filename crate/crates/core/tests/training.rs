use redistill::data::{load_checkpoint, load_config, load_metrics, save_checkpoint, save_config, save_metrics};
use redistill::lab::{self, DkdConfig, RunStatus};
use redistill::verify;
use redistill::{DatasetSpec, ExperimentConfig, LossSpec, MlpSpec, NoiseModel, RedistillConfig, SgdConfig};

fn small_config() -> ExperimentConfig {
    let sgd = SgdConfig {
        epochs: 8,
        batch_size: 16,
        lr_decay_epochs: vec![5, 7],
        ..SgdConfig::default()
    };
    ExperimentConfig {
        dataset: DatasetSpec::blobs(4, 6, 160, 80, 3.0, 5),
        teacher: MlpSpec::new(6, vec![24], 4).unwrap(),
        student: MlpSpec::new(6, vec![8], 4).unwrap(),
        teacher_train: sgd.clone(),
        student_train: SgdConfig {
            learning_rate: 0.005,
            ..sgd
        },
        loss: LossSpec::default(),
        kd: None,
        noise: NoiseModel::label_flip(0.2),
        seeds: vec![11, 12, 13],
    }
}

#[test]
fn loss_to_parameter_gradient_chain() {
    for seed in 0..10 {
        for lambda in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0] {
            for tau in [1.0, 4.0] {
                let cfg = RedistillConfig {
                    lambda,
                    tau,
                    ..RedistillConfig::default()
                };
                let err = verify::parameter_chain_error(seed, &cfg);
                assert!(err <= 1e-4, "seed {seed}, lambda {lambda}, tau {tau}: relative error {err:e}");
            }
        }
    }
}

#[test]
fn runs_are_pure_functions_of_config_and_seed() {
    let config = small_config();
    let (t1, r1) = lab::train_teacher(&config, 12).unwrap();
    let (t2, r2) = lab::train_teacher(&config, 12).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(r1, r2);

    let (s1, d1) = lab::distill_student(&config, &t1, 12).unwrap();
    let (s2, d2) = lab::distill_student(&config, &t1, 12).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(d1, d2);
    assert_eq!(d1.train_loss.len(), config.student_train.epochs);

    let (s3, _) = lab::distill_student(&config, &t1, 13).unwrap();
    assert_ne!(s1, s3);
}

#[test]
fn order_zero_and_decoupled_kd_train_identically() {
    let mut config = small_config();
    let base = RedistillConfig::default().with_lambda(0.0);
    config.loss = LossSpec::Redistill(base);
    let (teacher, _) = lab::train_teacher(&config, 11).unwrap();
    let (a, ra) = lab::distill_student(&config, &teacher, 11).unwrap();
    config.loss = LossSpec::Dkd(DkdConfig::from(base));
    let (b, rb) = lab::distill_student(&config, &teacher, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.train_loss, rb.train_loss);
    assert_eq!(ra.val_accuracy, rb.val_accuracy);
}

fn separable_config(separation: f64, weight_decay: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::blobs(3, 8, 600, 150, separation, 3),
        teacher: MlpSpec::new(8, vec![32], 3).unwrap(),
        student: MlpSpec::new(8, vec![8], 3).unwrap(),
        teacher_train: SgdConfig {
            weight_decay,
            ..SgdConfig::default()
        },
        student_train: SgdConfig::default(),
        loss: LossSpec::CrossEntropy,
        kd: None,
        noise: NoiseModel::default(),
        seeds: vec![0],
    }
}

fn increases_after_warm_up(losses: &[f64]) -> Vec<usize> {
    (2..losses.len() - 1).filter(|&e| losses[e + 1] > losses[e]).map(|e| e + 1).collect()
}

#[test]
fn cross_entropy_decreases_on_a_separable_task() {
    // Without weight decay; see the next test for the default recipe.
    let config = separable_config(10.0, 0.0);
    for seed in 0..10 {
        let (_, record) = lab::train_teacher(&config, seed).unwrap();
        assert_eq!(record.status, RunStatus::Completed);
        let ups = increases_after_warm_up(&record.train_loss);
        assert!(ups.is_empty(), "seed {seed}: loss rose at epochs {ups:?}: {:?}", record.train_loss);
        assert!(record.final_accuracy >= 0.99);
    }
}

/// With the default weight decay the optimizer settles at the regularized
/// optimum, so once the data are fit the plain cross-entropy drifts back up.
#[test]
fn weight_decay_lifts_cross_entropy_once_the_data_are_fit() {
    let config = separable_config(10.0, SgdConfig::default().weight_decay);
    let rising = (0..10)
        .filter(|&seed| {
            let (_, record) = lab::train_teacher(&config, seed).unwrap();
            assert!(record.final_accuracy >= 0.99);
            let losses = &record.train_loss;
            losses[losses.len() - 1] > losses[2..].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .count();
    assert!(rising >= 5, "only {rising} of 10 runs ended above their minimum");
}

#[test]
fn experiment_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();

    let config_path = dir.path().join("config.json");
    save_config(&config, &config_path).unwrap();
    assert_eq!(load_config::<ExperimentConfig>(&config_path).unwrap(), config);

    let (teacher, teacher_record) = lab::train_teacher(&config, 11).unwrap();
    let (_, student_record) = lab::distill_student(&config, &teacher, 11).unwrap();
    let records = vec![teacher_record, student_record];
    let metrics_path = dir.path().join("metrics.json");
    save_metrics(&records, &metrics_path).unwrap();
    let back: Vec<lab::RunRecord> = load_metrics(&metrics_path).unwrap();
    assert_eq!(back, records);
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a.wall_time_secs.to_bits(), b.wall_time_secs.to_bits());
    }

    let ckpt = dir.path().join("teacher.json");
    save_checkpoint(&teacher, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap(), teacher);
}
