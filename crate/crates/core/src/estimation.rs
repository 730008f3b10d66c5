//! Stage one: learn the noisy-class posterior without a transition layer,
//! pick anchor points, and read the transition matrix off their posteriors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::matrix::Matrix;
use crate::nn::MlpModel;
use crate::noise::TransitionMatrix;
use crate::objective::{posteriors, PairLoss};
use crate::train::{train_pairwise, ModelConfig, Selection, SimilarityData, TrainConfig, TrainOutcome, ValidationPairs};

/// Anything that maps a batch of inputs to rows of class probabilities.
pub trait PosteriorModel {
    fn num_classes(&self) -> usize;
    fn posteriors(&self, x: &Matrix) -> Result<Matrix>;
}

impl PosteriorModel for MlpModel {
    fn num_classes(&self) -> usize {
        MlpModel::num_classes(self)
    }

    fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        posteriors(&self.forward_logits(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub index: usize,
    pub score: f64,
}

/// Per-class anchors, each list sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSelection {
    pub per_class: Vec<Vec<Anchor>>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub transition: TransitionMatrix,
    /// Relative L1 error against the true matrix, when it is known.
    pub error: Option<f64>,
    pub anchors: AnchorSelection,
}

/// Train `P̂(Ȳ | X)` on noisy pairs with the plain inner-product loss and keep
/// the checkpoint with the lowest validation pair loss.
pub fn train_noisy_posterior(
    train: &SimilarityData,
    validation: &ValidationPairs,
    model: &ModelConfig,
    config: &TrainConfig,
    classes: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = model.build(train.features().cols(), classes, seed)?;
    let cfg = TrainConfig {
        selection: Selection::ValidationLoss,
        stage: Stage::Estimation,
        ..config.clone()
    };
    let loss = PairLoss::mcl().with_pos_weight(config.pos_weight);
    train_pairwise(init, train, validation, loss, &cfg, seed.wrapping_add(1))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Anchors from precomputed pool posteriors.
///
/// Each example is a candidate only for its argmax class (lowest class on
/// ties). Within a class, candidates are ranked by that class's probability,
/// lowest index first on ties, and the top `k` are kept. With `percentile`
/// set, the `k` candidates starting at that percentile of the ranking are
/// used instead of the very top.
pub fn select_anchors_from_posteriors(probs: &Matrix, k: usize, percentile: Option<f64>) -> Result<AnchorSelection> {
    let classes = probs.cols();
    if k == 0 {
        return Err(Error::invalid("need at least one anchor per class"));
    }
    if probs.rows() < k * classes {
        return Err(Error::invalid(format!(
            "pool of {} examples is smaller than {k} anchors x {classes} classes",
            probs.rows()
        )));
    }
    if let Some(p) = percentile {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::invalid(format!("anchor percentile {p} outside (0, 100]")));
        }
    }
    let mut candidates: Vec<Vec<Anchor>> = vec![Vec::new(); classes];
    for r in 0..probs.rows() {
        let row = probs.row(r);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite posterior for pool example {r}")));
        }
        let c = argmax(row);
        candidates[c].push(Anchor {
            index: r,
            score: row[c],
        });
    }
    let empty: Vec<usize> = (0..classes).filter(|&c| candidates[c].is_empty()).collect();
    if !empty.is_empty() {
        return Err(Error::DegenerateClass(empty.iter().map(|c| c + 1).collect()));
    }
    let per_class = candidates
        .into_iter()
        .map(|mut list| {
            list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
            let take = k.min(list.len());
            let start = match percentile {
                None => 0,
                Some(p) => {
                    let s = ((1.0 - p / 100.0) * list.len() as f64).floor() as usize;
                    s.min(list.len() - take)
                }
            };
            list[start..start + take].to_vec()
        })
        .collect();
    Ok(AnchorSelection { per_class, k })
}

pub fn select_anchors<M: PosteriorModel + ?Sized>(
    model: &M,
    pool: &Matrix,
    k: usize,
    percentile: Option<f64>,
) -> Result<AnchorSelection> {
    select_anchors_from_posteriors(&model.posteriors(pool)?, k, percentile)
}

/// Row `i` of T̂ is the mean posterior over class-`i` anchors, renormalized.
pub fn estimate_transition_from_posteriors(probs: &Matrix, anchors: &AnchorSelection) -> Result<TransitionMatrix> {
    let classes = probs.cols();
    if anchors.per_class.len() != classes {
        return Err(Error::invalid("anchor classes differ from posterior width"));
    }
    let mut t = Matrix::zeros(classes, classes);
    for (i, list) in anchors.per_class.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::DegenerateClass(vec![i + 1]));
        }
        let row = t.row_mut(i);
        for a in list {
            let p = probs.row(a.index);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite posterior at anchor {}", a.index)));
            }
            for (acc, &v) in row.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = list.len() as f64;
        for v in row.iter_mut() {
            *v = (*v / n).max(0.0);
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    TransitionMatrix::new(t)
}

pub fn estimate_transition<M: PosteriorModel + ?Sized>(
    model: &M,
    pool: &Matrix,
    anchors: &AnchorSelection,
) -> Result<TransitionMatrix> {
    estimate_transition_from_posteriors(&model.posteriors(pool)?, anchors)
}

/// `‖T − T̂‖₁ / ‖T‖₁` with entrywise L1 norms.
pub fn estimation_error(truth: &TransitionMatrix, estimate: &TransitionMatrix) -> Result<f64> {
    if truth.num_classes() != estimate.num_classes() {
        return Err(Error::invalid("transition matrices differ in size"));
    }
    let a = truth.as_matrix().as_slice();
    let b = estimate.as_matrix().as_slice();
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = a.iter().map(|x| x.abs()).sum();
    Ok(num / den)
}

/// True when some row of T̂ is barely above uniform.
pub fn is_degenerate(t: &TransitionMatrix) -> bool {
    let c = t.num_classes() as f64;
    (0..t.num_classes()).any(|i| t.row(i).iter().copied().fold(f64::MIN, f64::max) < 1.0 / c + 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::symmetric_transition;

    #[test]
    fn error_of_identical_is_zero() {
        let t = symmetric_transition(4, 0.3).unwrap();
        assert_eq!(estimation_error(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn error_direct_arithmetic() {
        let t = TransitionMatrix::identity(2);
        let e = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        assert!((estimation_error(&t, &e).unwrap() - 0.2).abs() < 1e-15);
        assert!(estimation_error(&t, &TransitionMatrix::identity(3)).is_err());
    }

    #[test]
    fn one_hot_pool_anchors_score_one() {
        let probs = Matrix::from_rows(&[
            vec![0.5, 0.5],
            vec![1.0, 0.0],
            vec![0.2, 0.8],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let a = select_anchors_from_posteriors(&probs, 1, None).unwrap();
        assert_eq!(a.per_class[0], vec![Anchor { index: 1, score: 1.0 }]);
        assert_eq!(a.per_class[1], vec![Anchor { index: 3, score: 1.0 }]);
    }

    #[test]
    fn highest_score_wins_and_ties_prefer_low_index() {
        let probs = Matrix::from_rows(&[
            vec![0.6, 0.4],
            vec![0.9, 0.1],
            vec![0.3, 0.7],
            vec![0.9, 0.1],
        ])
        .unwrap();
        let a = select_anchors_from_posteriors(&probs, 1, None).unwrap();
        assert_eq!(a.per_class[0][0].index, 1);
        let two = select_anchors_from_posteriors(&probs, 2, None).unwrap();
        assert_eq!(two.per_class[0].iter().map(|a| a.index).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(two.per_class[1].len(), 1);
    }

    #[test]
    fn degenerate_class_reported() {
        let probs = Matrix::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.1, 0.8, 0.1], vec![0.7, 0.3, 0.0]]).unwrap();
        match select_anchors_from_posteriors(&probs, 1, None) {
            Err(Error::DegenerateClass(c)) => assert_eq!(c, vec![3]),
            other => panic!("{other:?}"),
        }
        assert!(select_anchors_from_posteriors(&probs, 2, None).is_err());
    }

    #[test]
    fn percentile_skips_the_top() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let p = 0.5 + 0.005 * i as f64;
                if i % 2 == 0 {
                    vec![p, 1.0 - p]
                } else {
                    vec![1.0 - p, p]
                }
            })
            .collect();
        let probs = Matrix::from_rows(&rows).unwrap();
        let top = select_anchors_from_posteriors(&probs, 1, None).unwrap();
        let p90 = select_anchors_from_posteriors(&probs, 1, Some(90.0)).unwrap();
        assert_eq!(top.per_class[0][0].index, 98);
        assert!(p90.per_class[0][0].score < top.per_class[0][0].score);
        assert!(select_anchors_from_posteriors(&probs, 1, Some(0.0)).is_err());
    }

    #[test]
    fn uniform_posteriors_give_uniform_rows() {
        let probs = Matrix::from_vec(9, 3, vec![1.0 / 3.0; 27]).unwrap();
        let anchors = AnchorSelection {
            per_class: (0..3).map(|c| vec![Anchor { index: c, score: 1.0 / 3.0 }]).collect(),
            k: 1,
        };
        let t = estimate_transition_from_posteriors(&probs, &anchors).unwrap();
        for i in 0..3 {
            assert!(t.row(i).iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        assert!(is_degenerate(&t));
        assert!(!is_degenerate(&symmetric_transition(3, 0.3).unwrap()));
    }
}
