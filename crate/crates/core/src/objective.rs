//! Pairwise similarity losses: the inner-product likelihood on class posteriors
//! (MCL) and its forward-corrected form through a transition layer (MNS).
//!
//! Both are binary cross-entropy of a predicted similarity `ŝ = p_i · p_i'`
//! against a binary similarity label. For MCL `p = g = softmax(h)`; for MNS
//! `p = f = Tᵀ g`. Gradients are returned with respect to the logits `h`.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{softmax, GradientBundle, MlpModel};
use crate::noise::{SimilarityPair, TransitionMatrix};

/// `ŝ` is clamped into `[CLAMP_EPS, 1 - CLAMP_EPS]` before the logarithm.
pub const CLAMP_EPS: f64 = 1e-7;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PairLossOutput {
    pub loss: f64,
    /// Unclamped predicted similarity.
    pub similarity: f64,
    /// `∂ℓ/∂h` for the first example.
    pub grad_first: Vec<f64>,
    /// `∂ℓ/∂h` for the second example.
    pub grad_second: Vec<f64>,
    pub clamped: bool,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{what} must be a finite non-negative vector")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn check_label(s: f64) -> Result<()> {
    if s == 0.0 || s == 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("similarity label must be 0 or 1, got {s}")))
    }
}

/// `f = Tᵀ g`: noisy-class posterior from a clean-class posterior.
pub fn corrected_posterior(g: &[f64], t: &TransitionMatrix) -> Result<Vec<f64>> {
    if g.len() != t.num_classes() {
        return Err(Error::invalid(format!(
            "posterior has {} classes, transition matrix {}",
            g.len(),
            t.num_classes()
        )));
    }
    check_simplex(g, "posterior")?;
    Ok(t.as_matrix().tr_matvec(g))
}

/// Inner product of two categorical distributions.
pub fn predicted_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("distributions differ in length"));
    }
    check_simplex(a, "first distribution")?;
    check_simplex(b, "second distribution")?;
    Ok(dot(a, b))
}

/// Weighted binary cross-entropy of `ŝ` against `s`, with `∂ℓ/∂ŝ`.
/// Returns `(loss, dloss, clamped)`; the gradient is zero once `ŝ` is clamped.
pub fn similarity_bce(s_hat: f64, s: f64, pos_weight: f64) -> (f64, f64, bool) {
    let clamped = !(CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&s_hat);
    let c = s_hat.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    let loss = -(pos_weight * s * c.ln() + (1.0 - s) * (1.0 - c).ln());
    let d = if clamped {
        0.0
    } else {
        -pos_weight * s / s_hat + (1.0 - s) / (1.0 - s_hat)
    };
    (loss, d, clamped)
}

/// `∂ℓ/∂h = J_softmax(g)ᵀ · ∂ℓ/∂g = g ⊙ (v − g·v)`.
fn softmax_backward(g: &[f64], v: &[f64]) -> Vec<f64> {
    let gv = dot(g, v);
    g.iter().zip(v).map(|(gi, vi)| gi * (vi - gv)).collect()
}

struct CoreOut {
    loss: f64,
    similarity: f64,
    d_first: Vec<f64>,
    d_second: Vec<f64>,
    clamped: bool,
}

/// Loss and `∂ℓ/∂p` for both distributions entering the inner product.
fn core(p1: &[f64], p2: &[f64], s: f64, pos_weight: f64) -> CoreOut {
    let similarity = dot(p1, p2);
    let (loss, d, clamped) = similarity_bce(similarity, s, pos_weight);
    CoreOut {
        loss,
        similarity,
        d_first: p2.iter().map(|v| d * v).collect(),
        d_second: p1.iter().map(|v| d * v).collect(),
        clamped,
    }
}

/// Pair loss on posteriors `g1`, `g2`, optionally forward-corrected through `t`.
#[derive(Debug, Clone, Copy)]
pub struct PairLoss<'a> {
    pub transition: Option<&'a TransitionMatrix>,
    /// Weight on the `s = 1` term; 1.0 is plain binary cross-entropy.
    pub pos_weight: f64,
}

impl<'a> PairLoss<'a> {
    pub fn mcl() -> Self {
        PairLoss {
            transition: None,
            pos_weight: 1.0,
        }
    }

    pub fn mns(t: &'a TransitionMatrix) -> Self {
        PairLoss {
            transition: Some(t),
            pos_weight: 1.0,
        }
    }

    pub fn with_pos_weight(mut self, w: f64) -> Self {
        self.pos_weight = w;
        self
    }

    pub fn evaluate(&self, g1: &[f64], g2: &[f64], s: f64) -> Result<PairLossOutput> {
        check_label(s)?;
        if g1.len() != g2.len() {
            return Err(Error::invalid("posteriors differ in length"));
        }
        check_simplex(g1, "first posterior")?;
        check_simplex(g2, "second posterior")?;
        Ok(self.evaluate_unchecked(g1, g2, s))
    }

    /// Skips input validation; callers guarantee simplex inputs and a binary label.
    pub(crate) fn evaluate_unchecked(&self, g1: &[f64], g2: &[f64], s: f64) -> PairLossOutput {
        let (out, dg1, dg2) = match self.transition {
            None => {
                let out = core(g1, g2, s, self.pos_weight);
                let (a, b) = (out.d_first.clone(), out.d_second.clone());
                (out, a, b)
            }
            Some(t) => {
                let m = t.as_matrix();
                let f1 = m.tr_matvec(g1);
                let f2 = m.tr_matvec(g2);
                let out = core(&f1, &f2, s, self.pos_weight);
                // ∂ŝ/∂g = T ∂ŝ/∂f
                let a = m.matvec(&out.d_first);
                let b = m.matvec(&out.d_second);
                (out, a, b)
            }
        };
        PairLossOutput {
            loss: out.loss,
            similarity: out.similarity,
            grad_first: softmax_backward(g1, &dg1),
            grad_second: softmax_backward(g2, &dg2),
            clamped: out.clamped,
        }
    }
}

/// Binary cross-entropy of `g1 · g2` against `s`.
pub fn mcl_loss(g1: &[f64], g2: &[f64], s: f64) -> Result<PairLossOutput> {
    PairLoss::mcl().evaluate(g1, g2, s)
}

/// Binary cross-entropy of `(Tᵀg1) · (Tᵀg2)` against `s`.
pub fn mns_loss(g1: &[f64], g2: &[f64], t: &TransitionMatrix, s: f64) -> Result<PairLossOutput> {
    if g1.len() != t.num_classes() {
        return Err(Error::invalid("posterior width differs from transition matrix"));
    }
    PairLoss::mns(t).evaluate(g1, g2, s)
}

#[derive(Debug, Clone)]
pub struct BatchLossOutput {
    pub loss: f64,
    pub grads: GradientBundle,
}

fn check_pairs(pairs: &[SimilarityPair], n: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty pair list"));
    }
    if pairs.iter().any(|p| p.first >= n || p.second >= n || p.first == p.second) {
        return Err(Error::invalid("pair index outside the batch"));
    }
    Ok(())
}

/// Mean pair loss over `pairs` (indices into the rows of `x`) and its full
/// gradient with respect to the model parameters.
pub fn batch_pair_loss(
    model: &MlpModel,
    x: &Matrix,
    pairs: &[SimilarityPair],
    loss: PairLoss<'_>,
) -> Result<BatchLossOutput> {
    check_pairs(pairs, x.rows())?;
    if let Some(t) = loss.transition {
        if t.num_classes() != model.num_classes() {
            return Err(Error::invalid("transition matrix size differs from model classes"));
        }
    }
    let cache = model.forward_cached(x)?;
    let probs = posteriors(&cache.logits)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut dlogits = Matrix::zeros(x.rows(), model.num_classes());
    let mut total = 0.0;
    for p in pairs {
        let out = loss.evaluate_unchecked(probs.row(p.first), probs.row(p.second), p.label());
        total += out.loss;
        for (d, g) in dlogits.row_mut(p.first).iter_mut().zip(&out.grad_first) {
            *d += scale * g;
        }
        for (d, g) in dlogits.row_mut(p.second).iter_mut().zip(&out.grad_second) {
            *d += scale * g;
        }
    }
    let grads = model.backward(&cache, &dlogits);
    Ok(BatchLossOutput {
        loss: total * scale,
        grads,
    })
}

/// Mean loss only (no backward pass).
pub fn batch_pair_loss_value(model: &MlpModel, x: &Matrix, pairs: &[SimilarityPair], loss: PairLoss<'_>) -> Result<f64> {
    Ok(evaluate_pairs(model, x, pairs, loss, 0.5)?.mean_loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    pub mean_loss: f64,
    /// Fraction of pairs where `ŝ > threshold` disagrees with the label.
    pub pair_error: f64,
}

/// Validation metrics over a fixed pair set.
pub fn evaluate_pairs(
    model: &MlpModel,
    x: &Matrix,
    pairs: &[SimilarityPair],
    loss: PairLoss<'_>,
    threshold: f64,
) -> Result<PairMetrics> {
    check_pairs(pairs, x.rows())?;
    let mut probs = posteriors(&model.forward_logits(x)?)?;
    if let Some(t) = loss.transition {
        for r in 0..probs.rows() {
            let f = t.as_matrix().tr_matvec(probs.row(r));
            probs.row_mut(r).copy_from_slice(&f);
        }
    }
    let mut total = 0.0;
    let mut wrong = 0usize;
    for p in pairs {
        let s_hat = dot(probs.row(p.first), probs.row(p.second));
        total += similarity_bce(s_hat, p.label(), loss.pos_weight).0;
        if (s_hat > threshold) != p.similar {
            wrong += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok(PairMetrics {
        mean_loss: total / n,
        pair_error: wrong as f64 / n,
    })
}

pub(crate) fn posteriors(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let p = softmax(logits.row(r))?;
        out.row_mut(r).copy_from_slice(&p);
    }
    Ok(out)
}
