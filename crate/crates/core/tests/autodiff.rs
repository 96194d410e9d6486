use biasguard::diffcore::{
    adam_step, evaluate_with_gradients, finite_difference_check, AdamConfig, AdamState, Axis, Tape,
    Tensor,
};
use biasguard::Error;

fn t(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::matrix(r, c, v.to_vec()).unwrap()
}

#[test]
fn library_oracle_agrees_on_a_small_network() {
    let mut tape = Tape::new();
    let x = tape.constant(t(3, 2, &[0.3, -1.2, 0.8, 0.5, -0.4, 2.0]));
    let w = tape.leaf(t(2, 4, &[0.1, -0.7, 0.4, 0.9, -0.3, 0.2, 0.6, -0.5]));
    let b = tape.leaf(t(1, 4, &[0.05, -0.1, 0.2, 0.15]));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add(h, b).unwrap();
    let h = tape.softplus(h).unwrap();
    let l = tape.log(h).unwrap();
    let loss = tape.mean(l).unwrap();
    let err = finite_difference_check(&tape, &tape.leaf_values(), loss, 1e-5).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn gradients_match_hand_derivation() {
    // loss = sum((a * b)^2) with a, b 1x2 gives d/da = 2 a b^2
    let mut tape = Tape::new();
    let a = tape.leaf(t(1, 2, &[1.5, -2.0]));
    let b = tape.leaf(t(1, 2, &[0.5, 3.0]));
    let p = tape.mul(a, b).unwrap();
    let q = tape.square(p).unwrap();
    let loss = tape.sum(q).unwrap();
    let (value, grads) = evaluate_with_gradients(&tape, &tape.leaf_values(), loss).unwrap();
    assert_eq!(value, 0.5625 + 36.0);
    assert_eq!(grads[0].data(), &[2.0 * 1.5 * 0.25, 2.0 * -2.0 * 9.0]);
    assert_eq!(grads[1].data(), &[2.0 * 0.5 * 2.25, 2.0 * 3.0 * 4.0]);
}

#[test]
fn column_and_row_reductions_route_gradients() {
    let mut tape = Tape::new();
    let a = tape.leaf(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let cols = tape.mean_axis(a, Axis::Cols).unwrap();
    assert_eq!(tape.value(cols).data(), &[2.0, 5.0]);
    let rows = tape.sum_axis(a, Axis::Rows).unwrap();
    assert_eq!(tape.value(rows).data(), &[5.0, 7.0, 9.0]);
    let s1 = tape.sum(cols).unwrap();
    let s2 = tape.sum(rows).unwrap();
    let loss = tape.add(s1, s2).unwrap();
    let g = tape.backward(loss).unwrap().wrt(a);
    let expected = 1.0 + 1.0 / 3.0;
    assert!(g.data().iter().all(|&v| (v - expected).abs() < 1e-15));
}

#[test]
fn slice_and_concat_invert_each_other() {
    let mut tape = Tape::new();
    let a = tape.leaf(t(2, 5, &[0., 1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let left = tape.slice(a, Axis::Cols, 0, 2).unwrap();
    let right = tape.slice(a, Axis::Cols, 2, 3).unwrap();
    let back = tape.concat(&[left, right], Axis::Cols).unwrap();
    assert_eq!(tape.value(back), tape.value(a));
    assert!(tape.slice(a, Axis::Rows, 1, 2).is_err());
}

#[test]
fn quad_form_matches_explicit_products() {
    let mut tape = Tape::new();
    let d = tape.leaf(t(2, 2, &[1.0, 2.0, -1.0, 0.5]));
    let m = tape.leaf(t(2, 2, &[2.0, 0.5, 0.5, 1.0]));
    let q = tape.quad_form(d, m).unwrap();
    // [1,2] M [1,2]^T = 2 + 2*0.5*2 + 4 = 8; [-1,.5]: 2 - 0.5 + 0.25 = 1.75
    assert_eq!(tape.value(q).data(), &[8.0, 1.75]);
}

#[test]
fn non_finite_forward_names_the_primitive() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(800.0));
    match tape.exp(a) {
        Err(Error::Numerical { primitive, .. }) => assert_eq!(primitive, "exp"),
        other => panic!("expected numerical error, got {other:?}"),
    }
    let z = tape.leaf(Tensor::scalar(0.0));
    assert!(matches!(tape.log(z), Err(Error::Numerical { primitive: "log", .. })));
}

#[test]
fn mismatched_shapes_are_dimension_errors() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    let c = tape.leaf(Tensor::zeros(3, 2));
    assert!(matches!(tape.add(a, c), Err(Error::Dimension(_))));
}

#[test]
fn replay_with_new_leaves_recomputes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(2.0));
    let b = tape.mul(a, a).unwrap();
    let replayed = tape.replay(&[Tensor::scalar(3.0)]).unwrap();
    assert_eq!(replayed.value(b).item().unwrap(), 9.0);
    assert!(tape.replay(&[]).is_err());
}

#[test]
fn adam_follows_the_reference_recurrence() {
    let cfg = AdamConfig::default();
    let mut p = t(1, 2, &[0.5, -0.25]);
    let mut st = AdamState::new(cfg, [&p]);
    let grads = [[0.3, -1.0], [0.1, 0.4], [-0.2, 0.0]];
    let (mut m, mut v, mut x) = ([0.0; 2], [0.0; 2], [0.5, -0.25]);
    for (step, g) in grads.iter().enumerate() {
        adam_step(&mut [&mut p], &[t(1, 2, g)], &mut st).unwrap();
        let k = (step + 1) as i32;
        for j in 0..2 {
            m[j] = 0.9 * m[j] + 0.1 * g[j];
            v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
            let mh = m[j] / (1.0 - 0.9f64.powi(k));
            let vh = v[j] / (1.0 - 0.999f64.powi(k));
            x[j] -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
    }
    for j in 0..2 {
        assert!((p.data()[j] - x[j]).abs() < 1e-15);
    }
    assert_eq!(st.step_count(), 3);
}

#[test]
fn single_precision_core_works() {
    let mut tape = Tape::<f32>::new();
    let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0f32, -2.0]).unwrap());
    let s = tape.softplus(a).unwrap();
    let loss = tape.sum(s).unwrap();
    let g = tape.backward(loss).unwrap().wrt(a);
    let sig = |x: f32| 1.0 / (1.0 + (-x).exp());
    assert!((g.data()[0] - sig(1.0)).abs() < 1e-6);
    assert!((g.data()[1] - sig(-2.0)).abs() < 1e-6);
}
