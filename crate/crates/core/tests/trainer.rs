use compseg_core::mnist::dataset::SamplingMode;
use compseg_core::nn::ModelConfig;
use compseg_core::trainer::{
    run_ablation, standard_arms, train, AblationArm, Condition, DatasetSpec, ExperimentConfig, MnistSpec, Precision,
    StopReason,
};
use compseg_core::QSpec;

fn smoke(condition: Condition) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetSpec::MnistSeg(MnistSpec {
        synthetic_pool: 200,
        n: 64,
        supervised_fraction: 0.25,
        eval_fraction: 0.25,
        sampling: SamplingMode::PerPixel,
        ..MnistSpec::default()
    }));
    cfg.seed = 7;
    cfg.condition = condition;
    cfg.q = Some(QSpec::Preset("mnist-q1".into()));
    cfg.model = ModelConfig { depth: 1, base_width: 4, ..ModelConfig::default() };
    cfg.batch_size = 8;
    cfg.max_epochs = 3;
    cfg.patience = 10;
    cfg.precision = Precision::F64;
    cfg
}

/// Per-epoch total loss of the smoke run, as bit patterns. Recorded on
/// x86_64; approximately 0.39817, 0.38888, 0.40830.
const GOLDEN_TOTAL: [u64; 3] = [0x3fd97b98608523e0, 0x3fd8e37a0d8773d4, 0x3fda2199fa134084];

#[test]
fn smoke_run_reproduces_golden_trace() {
    let (_, report) = train(&smoke(Condition::Complementary)).unwrap();
    let bits: Vec<u64> = report.epochs.iter().map(|e| e.loss_total.to_bits()).collect();
    let values: Vec<f64> = report.epochs.iter().map(|e| e.loss_total).collect();
    assert_eq!(bits, GOLDEN_TOTAL, "trace {values:?}");
}

#[test]
fn identical_configs_give_identical_reports() {
    let cfg = smoke(Condition::Complementary);
    let (m1, a) = train(&cfg).unwrap();
    let (m2, b) = train(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(m1, m2);
    let mut other = cfg.clone();
    other.seed = 8;
    assert_ne!(train(&other).unwrap().1.to_csv(), a.to_csv());
}

#[test]
fn baseline_has_no_complementary_loss() {
    let (_, report) = train(&smoke(Condition::Baseline)).unwrap();
    assert_eq!(report.alpha, 0.0);
    assert!(report.epochs.iter().all(|e| e.loss_complementary == 0.0));
    assert!(report.epochs.iter().all(|e| e.loss_total == e.loss_supervised));
}

#[test]
fn patience_one_stops_after_first_stale_round() {
    let mut cfg = smoke(Condition::Complementary);
    // Updates too small to move the evaluation metric.
    cfg.learning_rate = 1e-300;
    cfg.weight_decay = 0.0;
    cfg.patience = 1;
    cfg.max_epochs = 10;
    let (_, report) = train(&cfg).unwrap();
    assert_eq!(report.best_epoch, 1);
    assert_eq!(report.last_epoch(), 2);
    assert_eq!(report.stop_reason, StopReason::Patience);
}

#[test]
fn max_epochs_bounds_the_run() {
    let (_, report) = train(&smoke(Condition::FullySupervised)).unwrap();
    assert_eq!(report.last_epoch(), 3);
    assert!(report.best_epoch <= report.last_epoch());
    assert_eq!(report.stop_reason, StopReason::MaxEpochs);
    assert!(report.epochs.iter().all(|e| e.loss_total.is_finite()));
}

#[test]
fn zero_alpha_with_full_masks_matches_fully_supervised() {
    let with_full_masks = |condition| {
        let mut cfg = smoke(condition);
        if let DatasetSpec::MnistSeg(spec) = &mut cfg.dataset {
            spec.supervised_fraction = 1.0;
        }
        cfg.loss.alpha = 0.0;
        cfg
    };
    let (_, comp) = train(&with_full_masks(Condition::Complementary)).unwrap();
    let (_, full) = train(&with_full_masks(Condition::FullySupervised)).unwrap();
    assert_eq!(comp.epochs.len(), full.epochs.len());
    for (c, f) in comp.epochs.iter().zip(&full.epochs) {
        assert_eq!(c.loss_supervised.to_bits(), f.loss_supervised.to_bits());
        assert_eq!(c.loss_total.to_bits(), f.loss_total.to_bits());
        assert_eq!(c.eval_macro_f1.map(f64::to_bits), f.eval_macro_f1.map(f64::to_bits));
    }
}

#[test]
fn ablation_table_shape_and_aggregation() {
    let mut base = smoke(Condition::Complementary);
    base.max_epochs = 1;
    let seen = std::sync::Mutex::new(Vec::new());
    let table = run_ablation(&base, &standard_arms(), &[0, 1], 2, |arm, seed, r| {
        assert!(r.is_ok());
        seen.lock().unwrap().push((arm.name.clone(), seed));
    })
    .unwrap();
    assert_eq!(table.rows.len(), 8);
    assert_eq!(seen.lock().unwrap().len(), 8);
    let order: Vec<(&str, u64)> = table.rows.iter().map(|r| (r.arm.as_str(), r.seed)).collect();
    assert_eq!(order[..3], [("baseline", 0), ("baseline", 1), ("q1", 0)]);
    for s in &table.summary {
        let vals: Vec<f64> = table.rows.iter().filter(|r| r.arm == s.arm).map(|r| r.macro_f1).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((s.mean_macro_f1 - mean).abs() <= 1e-12);
        assert_eq!(s.runs, 2);
    }

    // One condition and one seed: the table is that run's metric.
    let arm = AblationArm::new("q2", Condition::Complementary, Some("mnist-q2"));
    let single = run_ablation(&base, std::slice::from_ref(&arm), &[3], 1, |_, _, _| {}).unwrap();
    let (_, report) = train(&arm.apply(&base, 3)).unwrap();
    let expected = report.final_scores.unwrap().macro_f1;
    assert_eq!(single.summary[0].mean_macro_f1.to_bits(), expected.to_bits());
    assert_eq!(single.summary[0].std_macro_f1, 0.0);
}

#[test]
fn parallel_and_serial_ablations_agree() {
    let mut base = smoke(Condition::Complementary);
    base.max_epochs = 1;
    let arms = &standard_arms()[..2];
    let serial = run_ablation(&base, arms, &[0, 1], 1, |_, _, _| {}).unwrap();
    let parallel = run_ablation(&base, arms, &[0, 1], 3, |_, _, _| {}).unwrap();
    assert_eq!(serial.rows_csv(), parallel.rows_csv());
    assert_eq!(serial.summary_csv(), parallel.summary_csv());
}
