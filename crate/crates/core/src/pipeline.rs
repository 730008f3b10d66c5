//! The two-stage procedure end to end: estimate the transition matrix from
//! noisy pairs, train the classifier through a fixed transition layer, select
//! on noisy validation pairs, evaluate on clean test labels.

use std::fmt::Write as _;
use std::time::Instant;

use pathfinding::prelude::{kuhn_munkres, Matrix as WeightMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig, Method};
use crate::error::{Error, Result, Stage};
use crate::estimation::{
    estimate_transition_from_posteriors, estimation_error, is_degenerate, select_anchors_from_posteriors,
    train_noisy_posterior, EstimationReport, PosteriorModel,
};
use crate::idx::load_idx_images;
use crate::matrix::Matrix;
use crate::nn::MlpModel;
use crate::noise::{corrupt_labels, gaussian_blobs, symmetric_transition, LabeledDataset, PairStrategy, Split, TransitionMatrix};
use crate::objective::{evaluate_pairs, PairLoss, CLAMP_EPS};
use crate::train::{train_pairwise, EpochRecord, Selection, SimilarityData, ValidationPairs};

pub const SCHEMA_VERSION: u32 = 1;

/// Independent stream seed for a named purpose, derived from the run seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, mixed with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything a run needs after data generation, corruption and splitting.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: SimilarityData,
    pub validation: ValidationPairs,
    /// Clean labels of the training split; never shown to a learner.
    pub train_clean_labels: Vec<usize>,
    pub test: LabeledDataset,
    pub truth: TransitionMatrix,
    pub classes: usize,
}

fn load_sets(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &config.data {
        DataConfig::Blobs {
            classes,
            per_class,
            dim,
            separation,
            spread,
            test_per_class,
        } => {
            let train = gaussian_blobs(*classes, *per_class, *dim, *separation, *spread, derive_seed(config.seed, "data"))?;
            let mut test = gaussian_blobs(
                *classes,
                *test_per_class,
                *dim,
                *separation,
                *spread,
                derive_seed(config.seed, "test"),
            )?;
            test.split = Split::Test;
            Ok((train, test))
        }
        DataConfig::File { train, test } => {
            let tr = LabeledDataset::load(train)?;
            let mut te = LabeledDataset::load(test)?;
            if tr.num_classes != te.num_classes || tr.dim() != te.dim() {
                return Err(Error::invalid("train and test files disagree on classes or dimension"));
            }
            te.split = Split::Test;
            Ok((tr, te))
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
            test_limit,
            normalize,
        } => {
            let mut tr = load_idx_images(train_images, train_labels, *limit, *normalize)?;
            let mut te = load_idx_images(test_images, test_labels, *test_limit, *normalize)?;
            let c = tr.num_classes.max(te.num_classes);
            tr.num_classes = c;
            te.num_classes = c;
            te.split = Split::Test;
            Ok((tr, te))
        }
    }
}

/// Generate or load data, corrupt the training pool, and split off validation.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let (pool, test) = load_sets(config)?;
    let classes = pool.num_classes;
    let truth = match &config.noise.transition {
        Some(path) => TransitionMatrix::load(path)?,
        None => symmetric_transition(classes, config.noise.rho)?,
    };
    if truth.num_classes() != classes {
        return Err(Error::invalid("transition matrix size differs from class count"));
    }
    let noisy = corrupt_labels(&pool.labels, &truth, derive_seed(config.seed, "corrupt"))?;

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "split")));
    let n_val = ((pool.len() as f64 * config.training.validation_fraction).round() as usize).max(2);
    if pool.len() < n_val + 2 {
        return Err(Error::invalid("training pool too small to split off validation"));
    }
    let (val_idx, train_idx) = order.split_at(n_val);

    let train = SimilarityData::new(
        pool.features.select_rows(train_idx),
        train_idx.iter().map(|&i| noisy[i]).collect(),
    )?;
    let val_data = SimilarityData::new(
        pool.features.select_rows(val_idx),
        val_idx.iter().map(|&i| noisy[i]).collect(),
    )?;
    let validation = ValidationPairs::from_data(
        &val_data,
        config.training.validation_pairs,
        derive_seed(config.seed, "validation-pairs"),
    )?;
    Ok(PreparedData {
        train,
        validation,
        train_clean_labels: train_idx.iter().map(|&i| pool.labels[i]).collect(),
        test,
        truth,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy after matching predicted clusters to classes.
    pub accuracy: f64,
    /// Accuracy of the raw argmax index against the class index.
    pub raw_accuracy: f64,
    /// Rows: true class; columns: predicted index.
    pub confusion: Vec<Vec<u64>>,
    /// `assignment[p]` is the class matched to predicted index `p`.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub method: Method,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub stage1: Option<StageReport>,
    pub estimation: Option<EstimationReport>,
    pub true_transition: TransitionMatrix,
    /// Matrix fixed in the transition layer during stage two, if any.
    pub transition_layer: Option<TransitionMatrix>,
    pub stage2: StageReport,
    pub test: Evaluation,
    pub frobenius_norms: Vec<f64>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Same report with the wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        ExperimentReport {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    /// Per-epoch curves: `stage,epoch,learning_rate,train_loss,validation_loss,validation_pair_error`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("stage,epoch,learning_rate,train_loss,validation_loss,validation_pair_error\n");
        let stages = self
            .stage1
            .iter()
            .map(|r| ("estimation", r))
            .chain(std::iter::once(("classifier", &self.stage2)));
        for (name, r) in stages {
            for e in &r.history {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{}",
                    e.epoch, e.learning_rate, e.train_loss, e.validation_loss, e.validation_pair_error
                );
            }
        }
        s
    }
}

/// A finished run together with the trained models.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub classifier: MlpModel,
    pub stage1_model: Option<MlpModel>,
}

/// Stage one on prepared data: train `P̂(Ȳ|X)`, select anchors among the
/// training instances, estimate T̂.
pub fn run_estimation(config: &ExperimentConfig, data: &PreparedData) -> Result<(MlpModel, StageReport, EstimationReport)> {
    let tc = config.train_config(data.classes, Stage::Estimation, Selection::ValidationLoss);
    let outcome = train_noisy_posterior(
        &data.train,
        &data.validation,
        &config.model,
        &tc,
        data.classes,
        derive_seed(config.seed, "stage1"),
    )?;
    let probs = outcome.model.posteriors(data.train.features())?;
    let anchors = select_anchors_from_posteriors(&probs, config.estimation.anchors_per_class, config.estimation.percentile)?;
    let estimate = estimate_transition_from_posteriors(&probs, &anchors)?;
    let error = estimation_error(&data.truth, &estimate)?;
    Ok((
        outcome.model,
        StageReport {
            history: outcome.history,
            selected_epoch: outcome.selected_epoch,
        },
        EstimationReport {
            transition: estimate,
            error: Some(error),
            anchors,
        },
    ))
}

/// Run the configured method end to end and keep the models.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let started = Instant::now();
    let data = prepare_data(config)?;
    run_on_data(config, &data, started)
}

pub fn run_on_data(config: &ExperimentConfig, data: &PreparedData, started: Instant) -> Result<ExperimentRun> {
    let mut warnings = Vec::new();
    let (stage1_model, stage1, estimation) = if config.method == Method::MnsEstimatedT {
        let (m, r, e) = run_estimation(config, data)?;
        if is_degenerate(&e.transition) {
            warnings.push("estimated transition matrix has a near-uniform row".to_string());
        }
        (Some(m), Some(r), Some(e))
    } else {
        (None, None, None)
    };
    let layer = match config.method {
        Method::Mcl => None,
        Method::MnsTrueT => Some(data.truth.clone()),
        Method::MnsEstimatedT => estimation.as_ref().map(|e| e.transition.clone()),
    };

    let init = match (&stage1_model, config.training.warm_start) {
        (Some(m), true) => m.clone(),
        _ => config
            .model
            .build(data.train.features().cols(), data.classes, derive_seed(config.seed, "stage2-init"))?,
    };
    let loss = PairLoss {
        transition: layer.as_ref(),
        pos_weight: config.training.pos_weight,
    };
    let tc = config.train_config(data.classes, Stage::Classifier, Selection::ValidationPairError);
    let outcome = train_pairwise(init, &data.train, &data.validation, loss, &tc, derive_seed(config.seed, "stage2"))?;
    let test = evaluate_classifier(&outcome.model, &data.test)?;

    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        method: config.method,
        seed: config.seed,
        config: config.clone(),
        stage1,
        estimation,
        true_transition: data.truth.clone(),
        transition_layer: layer,
        stage2: StageReport {
            history: outcome.history,
            selected_epoch: outcome.selected_epoch,
        },
        test,
        frobenius_norms: frobenius_norms(&outcome.model),
        warnings,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(ExperimentRun {
        report,
        classifier: outcome.model,
        stage1_model,
    })
}

pub fn run_algorithm1(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_experiment(config)?.report)
}

/// Clean-label accuracy of `argmax g(x)`.
///
/// Pairwise supervision identifies classes only up to a relabeling, so the
/// headline accuracy matches predicted indices to classes with a maximum
/// weight assignment on the confusion matrix; the unmatched accuracy is kept
/// alongside.
pub fn evaluate_classifier<M: PosteriorModel + ?Sized>(model: &M, test: &LabeledDataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let c = model.num_classes();
    if c != test.num_classes {
        return Err(Error::invalid(format!(
            "model has {c} outputs but test set has {} classes",
            test.num_classes
        )));
    }
    let probs = model.posteriors(&test.features)?;
    let mut confusion = vec![vec![0u64; c]; c];
    for (r, &y) in test.labels.iter().enumerate() {
        let row = probs.row(r);
        let mut pred = 0;
        for j in 1..c {
            if row[j] > row[pred] {
                pred = j;
            }
        }
        confusion[y][pred] += 1;
    }
    let n = test.len() as f64;
    let raw = (0..c).map(|i| confusion[i][i]).sum::<u64>() as f64 / n;
    let weights = WeightMatrix::from_fn(c, c, |(p, y)| confusion[y][p] as i64);
    let (matched, assignment) = kuhn_munkres(&weights);
    Ok(Evaluation {
        accuracy: matched as f64 / n,
        raw_accuracy: raw,
        confusion,
        assignment,
    })
}

pub fn frobenius_norms(model: &MlpModel) -> Vec<f64> {
    model.frobenius_norms()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Bound on the Euclidean norm of every input.
    pub input_bound: f64,
    pub classes: usize,
    pub depth: usize,
    /// Frobenius-norm bound per weight matrix; length equals `depth`.
    pub frobenius: Vec<f64>,
    /// Upper bound on the pair loss.
    pub loss_bound: f64,
    pub delta: f64,
    /// Number of training pairs.
    pub pairs: u64,
}

/// `2BC(√(2d ln 2) + 1) Π Mᵢ / √n` and `M √(ln(1/δ) / 2n)`.
pub fn bound_terms(b: &BoundInputs) -> Result<(f64, f64)> {
    if !(b.delta > 0.0 && b.delta < 1.0) {
        return Err(Error::invalid(format!("delta {} outside (0, 1)", b.delta)));
    }
    if b.classes == 0 || b.depth == 0 || b.pairs == 0 {
        return Err(Error::invalid("classes, depth and pair count must be positive"));
    }
    if b.frobenius.len() != b.depth {
        return Err(Error::invalid(format!(
            "{} Frobenius bounds for depth {}",
            b.frobenius.len(),
            b.depth
        )));
    }
    let reals = std::iter::once(b.input_bound)
        .chain(std::iter::once(b.loss_bound))
        .chain(b.frobenius.iter().copied());
    for v in reals {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid("norm and loss bounds must be finite and non-negative"));
        }
    }
    let n = b.pairs as f64;
    let product: f64 = b.frobenius.iter().product();
    let depth_factor = (2.0 * b.depth as f64 * std::f64::consts::LN_2).sqrt() + 1.0;
    let complexity = 2.0 * b.input_bound * b.classes as f64 * depth_factor * product / n.sqrt();
    let confidence = b.loss_bound * ((1.0 / b.delta).ln() / (2.0 * n)).sqrt();
    Ok((complexity, confidence))
}

pub fn generalization_bound(b: &BoundInputs) -> Result<f64> {
    let (a, c) = bound_terms(b)?;
    Ok(a + c)
}

/// Largest pair loss attainable under the similarity clamp.
pub fn clamped_loss_bound(pos_weight: f64) -> f64 {
    -(CLAMP_EPS.ln()) * pos_weight.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub train_risk: f64,
    pub fresh_risk: f64,
    pub gap: f64,
    pub bound: f64,
    pub inputs: BoundInputs,
}

/// Train with the true transition layer, then compare the empirical pair risk
/// on `pairs` training pairs with the risk on as many pairs from a fresh draw
/// of the same distribution. Blob data only.
pub fn measure_generalization_gap(config: &ExperimentConfig, pairs: usize, delta: f64) -> Result<GapReport> {
    let DataConfig::Blobs {
        classes,
        per_class,
        dim,
        separation,
        spread,
        ..
    } = config.data
    else {
        return Err(Error::invalid("gap measurement needs a blob data source"));
    };
    let cfg = ExperimentConfig {
        method: Method::MnsTrueT,
        ..config.clone()
    };
    let data = prepare_data(&cfg)?;
    let run = run_on_data(&cfg, &data, Instant::now())?;
    let loss = PairLoss {
        transition: Some(&data.truth),
        pos_weight: cfg.training.pos_weight,
    };

    let train_pairs = data.train.pair_set(PairStrategy::Sampled(pairs), derive_seed(cfg.seed, "gap-train"))?;
    let train_risk = evaluate_pairs(&run.classifier, data.train.features(), train_pairs.pairs(), loss, 0.5)?.mean_loss;

    let fresh = gaussian_blobs(classes, per_class, dim, separation, spread, derive_seed(cfg.seed, "gap-fresh"))?;
    let fresh_noisy = corrupt_labels(&fresh.labels, &data.truth, derive_seed(cfg.seed, "gap-fresh-corrupt"))?;
    let fresh_data = SimilarityData::new(fresh.features.clone(), fresh_noisy)?;
    let fresh_pairs = fresh_data.pair_set(PairStrategy::Sampled(pairs), derive_seed(cfg.seed, "gap-fresh-pairs"))?;
    let fresh_risk = evaluate_pairs(&run.classifier, &fresh.features, fresh_pairs.pairs(), loss, 0.5)?.mean_loss;

    let train_norm = row_norm_max(data.train.features());
    let inputs = BoundInputs {
        input_bound: train_norm.max(fresh.max_feature_norm()),
        classes: data.classes,
        depth: run.classifier.depth(),
        frobenius: run.classifier.frobenius_norms(),
        loss_bound: clamped_loss_bound(cfg.training.pos_weight),
        delta,
        pairs: pairs as u64,
    };
    Ok(GapReport {
        train_risk,
        fresh_risk,
        gap: fresh_risk - train_risk,
        bound: generalization_bound(&inputs)?,
        inputs,
    })
}

fn row_norm_max(m: &Matrix) -> f64 {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Matrix);

    impl PosteriorModel for Fixed {
        fn num_classes(&self) -> usize {
            self.0.cols()
        }
        fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
            Ok(self.0.select_rows(&(0..x.rows()).collect::<Vec<_>>()))
        }
    }

    fn balanced_test(c: usize, per: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..c * per).map(|i| i % c).collect();
        LabeledDataset::new(Matrix::zeros(c * per, 1), labels, c, Split::Test).unwrap()
    }

    #[test]
    fn one_hot_oracle_scores_perfectly() {
        let test = balanced_test(3, 4);
        let mut p = Matrix::zeros(12, 3);
        for (r, &y) in test.labels.iter().enumerate() {
            p.set(r, y, 1.0);
        }
        let e = evaluate_classifier(&Fixed(p), &test).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.raw_accuracy, 1.0);
    }

    #[test]
    fn permuted_clusters_are_matched() {
        let test = balanced_test(3, 5);
        let mut p = Matrix::zeros(15, 3);
        for (r, &y) in test.labels.iter().enumerate() {
            p.set(r, (y + 1) % 3, 1.0);
        }
        let e = evaluate_classifier(&Fixed(p), &test).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.raw_accuracy, 0.0);
        assert_eq!(e.assignment, vec![2, 0, 1]);
    }

    #[test]
    fn uniform_model_is_at_chance() {
        let test = balanced_test(4, 250);
        let p = Matrix::from_vec(1000, 4, vec![0.25; 4000]).unwrap();
        let e = evaluate_classifier(&Fixed(p), &test).unwrap();
        assert!((e.accuracy - 0.25).abs() < 1e-12);
        let empty = LabeledDataset {
            features: Matrix::zeros(0, 1),
            labels: vec![],
            num_classes: 4,
            split: Split::Test,
        };
        assert!(evaluate_classifier(&Fixed(Matrix::zeros(0, 4)), &empty).is_err());
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            input_bound: 1.0,
            classes: 2,
            depth: 1,
            frobenius: vec![1.0],
            loss_bound: 1.0,
            delta: (-2.0f64).exp(),
            pairs: 100,
        }
    }

    #[test]
    fn bound_reference_value() {
        // 40-digit evaluation of the closed form.
        let v = generalization_bound(&inputs()).unwrap();
        assert!((v - 0.970964009006189876404627730583879855099).abs() < 1e-12);
    }

    #[test]
    fn bound_scaling() {
        let (a, c) = bound_terms(&inputs()).unwrap();
        let (a4, c4) = bound_terms(&BoundInputs { pairs: 400, ..inputs() }).unwrap();
        assert!((a / 2.0 - a4).abs() < 1e-15 && (c / 2.0 - c4).abs() < 1e-15);
        let mut two = inputs();
        two.depth = 2;
        two.frobenius = vec![1.0, 1.5];
        let (base, _) = bound_terms(&two).unwrap();
        two.frobenius[1] = 3.0;
        assert!((bound_terms(&two).unwrap().0 - 2.0 * base).abs() < 1e-14);
    }

    #[test]
    fn bound_rejects_bad_delta() {
        for d in [0.0, 1.0, -0.5, 2.0] {
            assert!(generalization_bound(&BoundInputs { delta: d, ..inputs() }).is_err());
        }
        assert!(generalization_bound(&BoundInputs { frobenius: vec![], ..inputs() }).is_err());
    }

    #[test]
    fn seeds_are_distinct_per_tag() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }
}
