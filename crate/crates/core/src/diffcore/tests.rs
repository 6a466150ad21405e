use super::*;

fn arr(rows: &[Vec<f64>]) -> Array {
    Array::from_rows(rows).unwrap()
}

#[test]
fn matmul_hand_product() {
    let a = arr(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let b = arr(&[vec![1.0], vec![1.0]]);
    let c = matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_identity() {
    let a = arr(&[vec![1.5, -2.0, 0.25], vec![3.0, 4.0, 9.0]]);
    let eye = arr(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    assert_eq!(matmul(&a, &eye).unwrap(), a);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let a = Array::zeros(&[2, 3]);
    let b = Array::zeros(&[2, 3]);
    let err = matmul(&a, &b).unwrap_err();
    assert_eq!(
        err,
        DiffError::DimensionMismatch {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn softmax_examples() {
    let s = softmax(&arr(&[vec![0.0, 0.0]]), 1.0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
    let s = softmax(&arr(&[vec![2f64.ln(), 0.0]]), 1.0).unwrap();
    assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    let s = softmax(&arr(&[vec![10.0, 0.0]]), 1e6).unwrap();
    assert!(s.data().iter().all(|p| (p - 0.5).abs() < 1e-5));
}

#[test]
fn softmax_rejects_nonpositive_temperature() {
    let x = arr(&[vec![1.0, 2.0]]);
    assert_eq!(softmax(&x, 0.0).unwrap_err(), DiffError::Temperature(0.0));
    assert!(log_softmax(&x, -1.0).is_err());
}

#[test]
fn log_softmax_examples() {
    let l = log_softmax(&arr(&[vec![0.0, 0.0]]), 1.0).unwrap();
    let ln2 = 2f64.ln();
    assert!(l.data().iter().all(|v| (v + ln2).abs() < 1e-15));
    let l = log_softmax(&arr(&[vec![ln2, 0.0]]), 1.0).unwrap();
    assert!((l.data()[0] - (2.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((l.data()[1] - (1.0f64 / 3.0).ln()).abs() < 1e-15);
}

#[test]
fn log_softmax_agrees_with_softmax() {
    let mut rng = seeded_rng(11);
    for _ in 0..50 {
        let row: Vec<f64> = (0..17).map(|_| 20.0 * (rng.uniform() - 0.5)).collect();
        let x = Array::from_rows(&[row]).unwrap();
        let t = 0.1 + 3.0 * rng.uniform();
        let s = softmax(&x, t).unwrap();
        let l = log_softmax(&x, t).unwrap();
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((l.data().iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in s.data().iter().zip(l.data()) {
            assert!((a - b.exp()).abs() <= 1e-12);
        }
    }
}

#[test]
fn backward_linear_case() {
    let mut g = Graph::new();
    let x = g.leaf(Array::vector(vec![1.0, 2.0]), true);
    let y = g.scale(x, 2.0).unwrap();
    let f = g.sum(y).unwrap();
    g.backward(f).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn stop_gradient_blocks_teacher_side() {
    let mut g = Graph::new();
    let s = g.leaf(arr(&[vec![0.3, -1.0, 2.0]]), true);
    let t = g.leaf(arr(&[vec![1.0, 0.5, -0.5]]), true);
    let ls = g.log_softmax(s, 1.0).unwrap();
    let lt = g.log_softmax(t, 1.0).unwrap();
    let lt = g.stop_gradient(lt).unwrap();
    let kl = g.kl_rows(ls, lt).unwrap();
    let f = g.sum(kl).unwrap();
    g.backward(f).unwrap();
    assert!(g.grad(t).is_none());
    assert!(g.grad_or_zeros(t).data().iter().all(|&v| v == 0.0));
    assert!(g.grad(s).unwrap().data().iter().any(|&v| v != 0.0));
}

#[test]
fn kl_gradient_is_exactly_zero_at_equality() {
    let mut g = Graph::new();
    let row = arr(&[vec![0.1, 0.7, -0.4, 2.0], vec![1.0, 1.0, 0.0, -3.0]]);
    let s = g.leaf(row.clone(), true);
    let t = g.leaf(row, true);
    let ls = g.log_softmax(s, 1.0).unwrap();
    let lt = g.log_softmax(t, 1.0).unwrap();
    let kl = g.kl_rows(ls, lt).unwrap();
    let f = g.mean(kl).unwrap();
    assert_eq!(g.value(f).item(), 0.0);
    g.backward(f).unwrap();
    assert!(g.grad(s).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(g.grad(t).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(Array::vector(vec![1.0, 2.0]), true);
    let y = g.scale(x, 3.0).unwrap();
    assert_eq!(g.backward(y).unwrap_err(), DiffError::NonScalarRoot(vec![2]));
}

#[test]
fn foreign_node_is_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(Array::scalar(1.0), true);
    let mut other = Graph::new();
    assert_eq!(other.sum(x).unwrap_err(), DiffError::UnknownNode(0));
}

#[test]
fn attention_is_causal() {
    let mut rng = seeded_rng(5);
    let data: Vec<f64> = (0..5 * 12).map(|_| rng.normal()).collect();
    let base = Array::new(vec![5, 12], data.clone()).unwrap();
    let mut perturbed = data;
    for v in &mut perturbed[3 * 12..] {
        *v += 1.0;
    }
    let perturbed = Array::new(vec![5, 12], perturbed).unwrap();
    let run = |x: Array| {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = g.causal_attention(v, 2).unwrap();
        g.value(y).clone()
    };
    let (a, b) = (run(base), run(perturbed));
    assert_eq!(a.data()[..3 * 4], b.data()[..3 * 4]);
    assert_ne!(a.data()[3 * 4..], b.data()[3 * 4..]);
}
