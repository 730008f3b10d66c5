//! Minibatch training on noisy similarity labels with within-batch pair
//! enumeration and checkpoint selection on a fixed validation pair set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::matrix::Matrix;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, MlpModel};
use crate::noise::{make_similarity_pairs, PairStrategy, SimilarityPair, SimilarityPairBatch};
use crate::objective::{batch_pair_loss, evaluate_pairs, PairLoss};

/// Training examples whose only supervision is pairwise similarity.
///
/// The latent noisy class labels are private: a learner can ask whether two
/// examples are similar but never sees a class label.
#[derive(Debug, Clone)]
pub struct SimilarityData {
    features: Matrix,
    latent: Vec<usize>,
}

impl SimilarityData {
    pub fn new(features: Matrix, noisy_labels: Vec<usize>) -> Result<Self> {
        if features.rows() != noisy_labels.len() {
            return Err(Error::invalid("feature rows and label count differ"));
        }
        if features.rows() < 2 {
            return Err(Error::invalid("need at least two examples"));
        }
        Ok(SimilarityData {
            features,
            latent: noisy_labels,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    pub fn similar(&self, i: usize, j: usize) -> bool {
        self.latent[i] == self.latent[j]
    }

    /// Pairs among the rows `batch`, indexed by position within the batch.
    pub fn batch_pairs(&self, batch: &[usize], strategy: PairStrategy, seed: u64) -> Result<Vec<SimilarityPair>> {
        let local: Vec<usize> = batch.iter().map(|&i| self.latent[i]).collect();
        Ok(make_similarity_pairs(&local, strategy, seed)?
            .into_training_view()
            .pairs()
            .to_vec())
    }

    /// A fixed pair set over all rows, in the training view.
    pub fn pair_set(&self, strategy: PairStrategy, seed: u64) -> Result<SimilarityPairBatch> {
        Ok(make_similarity_pairs(&self.latent, strategy, seed)?.into_training_view())
    }
}

/// Pre-materialized validation pairs over `features`.
#[derive(Debug, Clone)]
pub struct ValidationPairs {
    pub features: Matrix,
    pub pairs: SimilarityPairBatch,
}

impl ValidationPairs {
    /// All pairs when there are at most `max_pairs` of them, else a seeded sample.
    pub fn from_data(data: &SimilarityData, max_pairs: usize, seed: u64) -> Result<Self> {
        let total = crate::noise::unordered_pair_count(data.len());
        let strategy = if total <= max_pairs {
            PairStrategy::AllPairs
        } else {
            PairStrategy::Sampled(max_pairs)
        };
        Ok(ValidationPairs {
            features: data.features().clone(),
            pairs: data.pair_set(strategy, seed)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Minimum mean validation pair loss.
    ValidationLoss,
    /// Minimum thresholded validation pair error; ties broken by loss.
    ValidationPairError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, input_dim: usize, classes: usize, seed: u64) -> Result<MlpModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel::init(input_dim, &self.hidden, classes, self.activation, self.bias, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub pairing: PairStrategy,
    pub pos_weight: f64,
    /// Decision threshold τ on `ŝ` for the validation pair error.
    pub threshold: f64,
    pub selection: Selection,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_pair_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    /// One-based epoch whose checkpoint was kept.
    pub selected_epoch: usize,
}

/// Minimize the mean pair loss over within-batch pairs with Adam, keeping the
/// checkpoint that is best on the validation pairs.
pub fn train_pairwise(
    mut model: MlpModel,
    train: &SimilarityData,
    validation: &ValidationPairs,
    loss: PairLoss<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if config.epochs == 0 || config.batch_size < 2 {
        return Err(Error::invalid("need at least one epoch and a batch size of at least 2"));
    }
    if validation.pairs.is_empty() {
        return Err(Error::invalid("validation pair set is empty"));
    }
    config.optimizer.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&model, &config.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, MlpModel)> = None;
    let diverged = |epoch: usize, message: String| Error::Diverged {
        stage: config.stage,
        epoch,
        message,
    };

    for epoch in 1..=config.epochs {
        state.learning_rate = config.optimizer.learning_rate_at(epoch - 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let pair_seed = rand::Rng::gen::<u64>(&mut rng);
            let pairs = train.batch_pairs(batch, config.pairing, pair_seed)?;
            let x = train.features().select_rows(batch);
            // once steps have been taken, a failed forward pass means the
            // parameters blew up
            let out = batch_pair_loss(&model, &x, &pairs, loss)
                .map_err(|e| if batches > 0 || epoch > 1 { diverged(epoch, e.to_string()) } else { e })?;
            if !out.loss.is_finite() || !out.grads.is_finite() {
                return Err(diverged(epoch, format!("non-finite loss {}", out.loss)));
            }
            adam_step(&mut model, &out.grads, &mut state)?;
            loss_sum += out.loss;
            batches += 1;
        }
        let metrics = evaluate_pairs(
            &model,
            &validation.features,
            validation.pairs.pairs(),
            loss,
            config.threshold,
        )
        .map_err(|e| if batches > 0 || epoch > 1 { diverged(epoch, e.to_string()) } else { e })?;
        if !metrics.mean_loss.is_finite() {
            return Err(diverged(epoch, "non-finite validation loss".into()));
        }
        history.push(EpochRecord {
            epoch,
            learning_rate: state.learning_rate,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            validation_loss: metrics.mean_loss,
            validation_pair_error: metrics.pair_error,
        });
        let key = match config.selection {
            Selection::ValidationLoss => (metrics.mean_loss, 0.0),
            Selection::ValidationPairError => (metrics.pair_error, metrics.mean_loss),
        };
        let better = match &best {
            None => true,
            Some((a, b, _, _)) => key.0 < *a || (key.0 == *a && key.1 < *b),
        };
        if better {
            best = Some((key.0, key.1, epoch, model.clone()));
        }
    }
    let (_, _, selected_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
    })
}
