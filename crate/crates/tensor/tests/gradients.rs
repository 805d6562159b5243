use posterforge_tensor::gradcheck::{check_all_ops, rel_err};
use posterforge_tensor::{softmax_in_place, Graph, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let results = check_all_ops(11, 5, 1e-5).unwrap();
    let mut ops: Vec<&str> = results.iter().map(|r| r.op).collect();
    ops.dedup();
    assert!(ops.len() >= 20);
    for r in &results {
        assert!(r.report.max_rel_err <= 1e-4, "{} {:?}: rel err {}", r.op, r.shape, r.report.max_rel_err);
    }
}

#[test]
fn focal_gamma_zero_is_cross_entropy() {
    let logits = vec![0.3, -1.2, 2.5, 0.0, 0.7];
    for target in 0..logits.len() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![1, 5], logits.clone()).unwrap(), true);
        let fl = g.focal_loss(z, target, 0.0).unwrap();
        let mut p = logits.clone();
        softmax_in_place(&mut p);
        let ce = -p[target].ln();
        assert!((g.value(fl).data()[0] - ce).abs() < 1e-10);

        g.backward(fl).unwrap();
        let grad = g.grad(z).unwrap();
        for (k, (&gk, &pk)) in grad.iter().zip(&p).enumerate() {
            let expect = pk - if k == target { 1.0 } else { 0.0 };
            assert!(rel_err(gk, expect) < 1e-9);
        }
    }
}

#[test]
fn focal_two_class_uniform() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 2]));
    let fl = g.focal_loss(z, 1, 2.0).unwrap();
    assert!((g.value(fl).data()[0] - 0.25 * std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn focal_decreases_toward_zero_as_target_dominates() {
    let mut prev = f64::INFINITY;
    for step in 0..30 {
        let mut g = Graph::inference();
        let z = g.constant(Tensor::new(vec![1, 3], vec![step as f64 * 0.5, 0.0, 0.0]).unwrap());
        let fl = g.focal_loss(z, 0, 2.0).unwrap();
        let v = g.value(fl).data()[0];
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-12);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            row in proptest::collection::vec(-30.0f64..30.0, 2..12),
            shift in -50.0f64..50.0,
        ) {
            let n = row.len();
            let mut g = Graph::inference();
            let a = g.constant(Tensor::new(vec![1, n], row.clone()).unwrap());
            let b = g.constant(Tensor::new(vec![1, n], row.iter().map(|x| x + shift).collect()).unwrap());
            let sa = g.softmax_lastdim(a).unwrap();
            let sb = g.softmax_lastdim(b).unwrap();
            let total: f64 = g.value(sa).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
