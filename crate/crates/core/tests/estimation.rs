use proptest::prelude::*;

use mns_core::estimation::{
    estimate_transition_from_posteriors, estimation_error, is_degenerate, select_anchors_from_posteriors,
};
use mns_core::matrix::Matrix;
use mns_core::noise::{symmetric_transition, TransitionMatrix};
use mns_core::Error;

fn posteriors(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

#[test]
fn anchors_take_the_highest_scores_per_argmax_class() {
    let p = posteriors(&[
        vec![0.6, 0.3, 0.1],
        vec![0.9, 0.05, 0.05],
        vec![0.1, 0.8, 0.1],
        vec![0.2, 0.2, 0.6],
        vec![0.3, 0.35, 0.35],
        vec![0.9, 0.05, 0.05],
    ]);
    let a = select_anchors_from_posteriors(&p, 2, None).unwrap();
    let idx: Vec<Vec<usize>> = a.per_class.iter().map(|l| l.iter().map(|x| x.index).collect()).collect();
    // ties in score go to the lower index; class 1 vs 2 tie at row 4 goes to class 1
    assert_eq!(idx, vec![vec![1, 5], vec![2, 4], vec![3]]);
}

#[test]
fn estimate_averages_and_renormalizes() {
    let p = posteriors(&[vec![0.8, 0.2], vec![0.6, 0.4], vec![0.1, 0.9], vec![0.3, 0.7]]);
    let a = select_anchors_from_posteriors(&p, 2, None).unwrap();
    let t = estimate_transition_from_posteriors(&p, &a).unwrap();
    assert!((t.get(0, 0) - 0.7).abs() < 1e-15);
    assert!((t.get(1, 1) - 0.8).abs() < 1e-15);
}

#[test]
fn percentile_skips_the_extreme_tail() {
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|i| {
            let p = 0.5 + 0.004 * i as f64;
            vec![p, 1.0 - p]
        })
        .chain((0..10).map(|_| vec![0.2, 0.8]))
        .collect();
    let p = posteriors(&rows);
    let top = select_anchors_from_posteriors(&p, 1, None).unwrap();
    assert_eq!(top.per_class[0][0].index, 99);
    let pct = select_anchors_from_posteriors(&p, 1, Some(97.0)).unwrap();
    assert_eq!(pct.per_class[0][0].index, 96);
    assert!(select_anchors_from_posteriors(&p, 1, Some(0.0)).is_err());
    assert!(select_anchors_from_posteriors(&p, 1, Some(101.0)).is_err());
}

#[test]
fn missing_class_is_degenerate() {
    let p = posteriors(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.7, 0.1], vec![0.6, 0.3, 0.1]]);
    assert!(matches!(select_anchors_from_posteriors(&p, 1, None), Err(Error::DegenerateClass(c)) if c == vec![3]));
}

#[test]
fn non_finite_posteriors_are_rejected() {
    let p = posteriors(&[vec![f64::NAN, 0.5], vec![0.5, 0.5]]);
    assert!(select_anchors_from_posteriors(&p, 1, None).is_err());
}

#[test]
fn error_metric() {
    let t = symmetric_transition(3, 0.3).unwrap();
    assert_eq!(estimation_error(&t, &t).unwrap(), 0.0);
    let eye = TransitionMatrix::identity(3);
    // |0.3| * 3 on the diagonal + 0.15 * 6 off it, over a total of 3
    assert!((estimation_error(&t, &eye).unwrap() - 0.6).abs() < 1e-12);
    assert!(estimation_error(&t, &TransitionMatrix::identity(2)).is_err());
    assert!(!is_degenerate(&t));
    assert!(is_degenerate(&TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap()));
}

fn transition(c: usize) -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), c).prop_map(move |rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r[i] = c as f64;
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    })
}

fn simplex_rows(c: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, c), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn estimate_is_row_stochastic(rows in (2usize..6).prop_flat_map(|c| simplex_rows(c, 60))) {
        let p = posteriors(&rows);
        if let Ok(a) = select_anchors_from_posteriors(&p, 3, None) {
            let t = estimate_transition_from_posteriors(&p, &a).unwrap();
            for i in 0..t.num_classes() {
                prop_assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(t.row(i).iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn exact_posteriors_with_true_anchors_recover_t(
        (t, mix) in (2usize..7).prop_flat_map(|c| (transition(c), simplex_rows(c, 40)))
    ) {
        let c = t.num_classes();
        let mut rows: Vec<Vec<f64>> = mix.iter().map(|g| t.as_matrix().tr_matvec(g)).collect();
        for i in 0..c {
            let mut e = vec![0.0; c];
            e[i] = 1.0;
            rows.push(t.as_matrix().tr_matvec(&e));
        }
        let p = posteriors(&rows);
        let a = select_anchors_from_posteriors(&p, 1, None).unwrap();
        let est = estimate_transition_from_posteriors(&p, &a).unwrap();
        prop_assert!(estimation_error(&t, &est).unwrap() < 1e-10);
    }

    #[test]
    fn anchors_do_not_depend_on_pool_order(
        (rows, perm_seed) in (2usize..5).prop_flat_map(|c| (simplex_rows(c, 30), any::<u64>()))
    ) {
        // distinct scores so the tie-break never applies
        let rows: Vec<Vec<f64>> = rows.into_iter().enumerate().map(|(i, mut r)| {
            r[0] += 1e-9 * i as f64;
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        }).collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut state = perm_seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let a = select_anchors_from_posteriors(&posteriors(&rows), 2, None);
        let b = select_anchors_from_posteriors(&posteriors(&shuffled), 2, None);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (la, lb) in a.per_class.iter().zip(&b.per_class) {
                    let ia: Vec<usize> = la.iter().map(|x| x.index).collect();
                    let ib: Vec<usize> = lb.iter().map(|x| order[x.index]).collect();
                    prop_assert_eq!(ia, ib);
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "selection succeeded for only one ordering"),
        }
    }
}
