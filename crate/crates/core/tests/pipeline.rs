use mns_core::config::{DataConfig, ExperimentConfig, Method};
use mns_core::error::Stage;
use mns_core::pipeline::{
    bound_terms, derive_seed, generalization_bound, measure_generalization_gap, prepare_data, run_algorithm1,
    run_experiment, BoundInputs, ExperimentReport,
};
use mns_core::sweep::{mean_std, run_sweep};
use mns_core::Error;

fn small(seed: u64, method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.method = method;
    cfg.data = DataConfig::Blobs {
        classes: 3,
        per_class: 80,
        dim: 4,
        separation: 4.0,
        spread: 1.0,
        test_per_class: 50,
    };
    cfg.training.epochs = 4;
    cfg.training.batch_size = 32;
    cfg
}

fn bound(n: u64) -> BoundInputs {
    BoundInputs {
        input_bound: 1.0,
        classes: 2,
        depth: 1,
        frobenius: vec![1.0],
        loss_bound: 1.0,
        delta: (-2.0f64).exp(),
        pairs: n,
    }
}

#[test]
fn seeds_are_independent_per_tag() {
    assert_ne!(derive_seed(1, "data"), derive_seed(1, "test"));
    assert_ne!(derive_seed(1, "data"), derive_seed(2, "data"));
    assert_eq!(derive_seed(5, "stage1"), derive_seed(5, "stage1"));
}

#[test]
fn prepared_data_hides_nothing_it_should_not() {
    let cfg = small(3, Method::MnsTrueT);
    let d = prepare_data(&cfg).unwrap();
    assert_eq!(d.train.len() + d.validation.features.rows(), 240);
    assert_eq!(d.train_clean_labels.len(), d.train.len());
    assert_eq!(d.test.len(), 150);
    assert_eq!(d.truth.get(0, 0), 0.7);
    assert!(d.validation.pairs.noisy_labels().is_none());
}

#[test]
fn equal_seeds_give_identical_reports() {
    for m in [Method::Mcl, Method::MnsTrueT, Method::MnsEstimatedT] {
        let cfg = small(21, m);
        let a = run_algorithm1(&cfg).unwrap().without_timing();
        let b = run_algorithm1(&cfg).unwrap().without_timing();
        assert_eq!(a.to_json(), b.to_json());
    }
    let a = run_algorithm1(&small(21, Method::Mcl)).unwrap().without_timing();
    let b = run_algorithm1(&small(22, Method::Mcl)).unwrap().without_timing();
    assert_ne!(a.to_json(), b.to_json());
}

#[test]
fn report_contents() {
    let run = run_experiment(&small(4, Method::MnsEstimatedT)).unwrap();
    let r = &run.report;
    assert_eq!(r.schema_version, 1);
    assert_eq!(r.stage2.history.len(), 4);
    let sel = r.stage2.selected_epoch;
    assert!((1..=4).contains(&sel));
    let best = r.stage2.history.iter().map(|e| e.validation_pair_error).fold(f64::INFINITY, f64::min);
    assert_eq!(r.stage2.history[sel - 1].validation_pair_error, best);
    assert!((0.0..=1.0).contains(&r.test.accuracy));
    assert!(r.test.raw_accuracy <= r.test.accuracy);
    let est = r.estimation.as_ref().unwrap();
    assert_eq!(r.transition_layer.as_ref(), Some(&est.transition));
    assert!(est.error.unwrap() >= 0.0);
    assert_eq!(r.frobenius_norms, run.classifier.frobenius_norms());
    assert!(run.stage1_model.is_some());
    let csv = r.curves_csv();
    assert!(csv.starts_with("stage,epoch,"));
    assert_eq!(csv.lines().count(), 1 + 4 + 4);
    let back = ExperimentReport::from_json(&r.to_json()).unwrap();
    assert_eq!(&back, r);
}

#[test]
fn mcl_has_no_layer_and_true_t_uses_the_truth() {
    let r = run_algorithm1(&small(5, Method::Mcl)).unwrap();
    assert!(r.transition_layer.is_none() && r.estimation.is_none() && r.stage1.is_none());
    let r = run_algorithm1(&small(5, Method::MnsTrueT)).unwrap();
    assert_eq!(r.transition_layer.as_ref(), Some(&r.true_transition));
}

#[test]
fn warm_start_and_no_bias_are_honoured() {
    let mut cfg = small(11, Method::MnsEstimatedT);
    cfg.training.warm_start = true;
    cfg.model.bias = false;
    let run = run_experiment(&cfg).unwrap();
    assert!(!run.classifier.has_bias());
    assert_eq!(run.report.frobenius_norms.len(), 3);
}

#[test]
fn divergence_is_reported_with_its_stage() {
    let mut cfg = small(7, Method::MnsTrueT);
    cfg.optimizer.learning_rate = 1e300;
    match run_experiment(&cfg) {
        Err(Error::Diverged { stage, .. }) => assert_eq!(stage, Stage::Classifier),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.report.test.accuracy)),
    }
    cfg.method = Method::MnsEstimatedT;
    match run_experiment(&cfg) {
        Err(Error::Diverged { stage, .. }) => assert_eq!(stage, Stage::Estimation),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.report.test.accuracy)),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(1, Method::Mcl);
    cfg.noise.rho = 1.0;
    assert!(run_algorithm1(&cfg).is_err());
    let mut cfg = small(1, Method::Mcl);
    cfg.training.batch_size = 1;
    assert!(run_algorithm1(&cfg).is_err());
    assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
    assert!(ExperimentConfig::from_toml("method = \"kcl\"\n").is_err());
    let cfg = ExperimentConfig::from_toml("seed = 9\n[noise]\nrho = 0.45\n").unwrap();
    assert_eq!((cfg.seed, cfg.noise.rho, cfg.training.epochs), (9, 0.45, 30));
}

#[test]
fn bound_reference_value_and_monotonicity() {
    let v = generalization_bound(&bound(100)).unwrap();
    assert!((v - 0.970_964_009_006_190).abs() < 1e-12);
    let mut last = f64::INFINITY;
    for n in 1..5000 {
        let v = generalization_bound(&bound(n)).unwrap();
        assert!(v < last);
        last = v;
    }
    let (a, c) = bound_terms(&bound(100)).unwrap();
    assert!((a + c - v).abs() < 1e-15);
}

#[test]
fn bound_input_validation() {
    let mut b = bound(10);
    b.delta = 0.0;
    assert!(generalization_bound(&b).is_err());
    let mut b = bound(10);
    b.pairs = 0;
    assert!(generalization_bound(&b).is_err());
    let mut b = bound(10);
    b.frobenius = vec![1.0, 2.0];
    assert!(generalization_bound(&b).is_err());
    let mut b = bound(10);
    b.input_bound = -1.0;
    assert!(generalization_bound(&b).is_err());
    let mut b = bound(10);
    b.frobenius = vec![0.0];
    let (a, _) = bound_terms(&b).unwrap();
    assert_eq!(a, 0.0);
}

#[test]
fn measured_gap_stays_below_the_bound() {
    let g = measure_generalization_gap(&small(8, Method::MnsTrueT), 2000, 0.05).unwrap();
    assert!(g.gap <= g.bound);
    assert_eq!(g.inputs.depth, 3);
    assert!(g.train_risk.is_finite() && g.fresh_risk.is_finite());
}

#[test]
fn sweep_aggregates_runs() {
    let res = run_sweep(&small(0, Method::Mcl), &[0.2, 0.0, 0.2], &[Method::MnsTrueT, Method::Mcl], &[2, 1], 2).unwrap();
    assert_eq!(res.cells.len(), 2 * 2 * 2);
    assert!(!res.any_failed());
    let s = res.summary_for(Method::Mcl, 0.2).unwrap();
    assert_eq!(s.runs, 2);
    let accs: Vec<f64> = res
        .cells
        .iter()
        .filter(|c| c.method == Method::Mcl && c.rho == 0.2)
        .map(|c| c.accuracy.unwrap())
        .collect();
    let (m, sd) = mean_std(&accs).unwrap();
    assert_eq!((s.mean, s.std), (Some(m), Some(sd)));
    let table = res.table_csv();
    assert_eq!(table.lines().next(), Some("method,0,0.2"));
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains('±'));
    assert_eq!(res.cells_csv().lines().count(), 9);
    // one worker and many workers agree
    let serial = run_sweep(&small(0, Method::Mcl), &[0.0, 0.2], &[Method::Mcl, Method::MnsTrueT], &[1, 2], 1).unwrap();
    assert_eq!(serial, res);
}

#[test]
fn failed_sweep_cells_are_marked() {
    let mut cfg = small(0, Method::Mcl);
    cfg.optimizer.learning_rate = 1e300;
    let res = run_sweep(&cfg, &[0.1], &[Method::MnsTrueT], &[1], 1).unwrap();
    assert!(res.any_failed());
    assert!(res.table_csv().contains("FAILED"));
    assert!(res.cells_csv().contains("FAILED"));
}
