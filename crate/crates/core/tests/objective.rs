use proptest::prelude::*;

use mns_core::nn::softmax;
use mns_core::noise::{symmetric_transition, TransitionMatrix};
use mns_core::objective::{corrected_posterior, mcl_loss, mns_loss, predicted_similarity, similarity_bce, CLAMP_EPS};

fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, c).prop_map(|h| softmax(&h).unwrap())
}

fn transition(c: usize) -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), c).prop_map(|rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    })
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, TransitionMatrix, f64)> {
    (2usize..8).prop_flat_map(|c| (simplex(c), simplex(c), transition(c), prop::bool::ANY.prop_map(f64::from)))
}

proptest! {
    #[test]
    fn transition_layer_keeps_posteriors_on_the_simplex((g, _, t, _) in case()) {
        let f = corrected_posterior(&g, &t).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn loss_is_symmetric_in_the_pair((g1, g2, t, s) in case()) {
        let a = mns_loss(&g1, &g2, &t, s).unwrap();
        let b = mns_loss(&g2, &g1, &t, s).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0));
        for (x, y) in a.grad_first.iter().zip(&b.grad_second) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_gradients_sum_to_zero((g1, g2, t, s) in case()) {
        // softmax is invariant to adding a constant to every logit
        let out = mns_loss(&g1, &g2, &t, s).unwrap();
        prop_assert!(out.grad_first.iter().sum::<f64>().abs() < 1e-10);
        prop_assert!(out.grad_second.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn similarity_is_a_probability((g1, g2, t, _) in case()) {
        let f1 = corrected_posterior(&g1, &t).unwrap();
        let f2 = corrected_posterior(&g2, &t).unwrap();
        let s = predicted_similarity(&f1, &f2).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn identity_layer_reduces_to_uncorrected_loss((g1, g2, _, s) in case()) {
        let eye = TransitionMatrix::identity(g1.len());
        let a = mcl_loss(&g1, &g2, s).unwrap();
        let b = mns_loss(&g1, &g2, &eye, s).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        prop_assert_eq!(a.grad_first, b.grad_first);
    }
}

#[test]
fn uniform_posteriors_give_known_losses() {
    // ŝ = 1/C for two uniform posteriors
    for c in 2..6 {
        let g = vec![1.0 / c as f64; c];
        let sim = mcl_loss(&g, &g, 1.0).unwrap();
        assert!((sim.loss - (c as f64).ln()).abs() < 1e-12);
        let dis = mcl_loss(&g, &g, 0.0).unwrap();
        assert!((dis.loss + (1.0 - 1.0 / c as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn symmetric_noise_pulls_similarity_towards_chance() {
    let t = symmetric_transition(3, 0.3).unwrap();
    let a = [1.0, 0.0, 0.0];
    let out = mns_loss(&a, &a, &t, 1.0).unwrap();
    // f = (0.7, 0.15, 0.15), ŝ = 0.49 + 2 * 0.0225
    assert!((out.similarity - 0.535).abs() < 1e-12);
    assert!((out.loss + 0.535f64.ln()).abs() < 1e-12);
}

#[test]
fn clamped_similarity_has_zero_gradient() {
    let (loss, d, clamped) = similarity_bce(0.0, 1.0, 1.0);
    assert!(clamped);
    assert_eq!(d, 0.0);
    assert!((loss + CLAMP_EPS.ln()).abs() < 1e-12);
    let out = mcl_loss(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
    assert!(out.clamped);
    assert!(out.grad_first.iter().all(|v| *v == 0.0));
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(mcl_loss(&[0.5, 0.5], &[0.5, 0.5], 0.5).is_err());
    assert!(mcl_loss(&[0.5, 0.5], &[0.2, 0.3, 0.5], 1.0).is_err());
    assert!(mcl_loss(&[0.7, 0.7], &[0.5, 0.5], 1.0).is_err());
    assert!(mcl_loss(&[f64::NAN, 1.0], &[0.5, 0.5], 1.0).is_err());
    let t = symmetric_transition(3, 0.2).unwrap();
    assert!(mns_loss(&[0.5, 0.5], &[0.5, 0.5], &t, 1.0).is_err());
}
