use proptest::prelude::*;
use tensorcore::{Graph, Padding, Tensor, TensorError};

fn t(shape: &[usize], data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(shape, data).unwrap()
}

#[test]
fn identity_1x1_kernel_reproduces_input() {
    let mut g = Graph::<f32>::new();
    let data: Vec<f32> = (0..20).map(|i| i as f32 * 0.37 - 2.0).collect();
    let x = g.constant(t(&[1, 4, 5], data.clone()));
    let k = g.constant(t(&[1, 1, 1, 1], vec![1.0]));
    let b = g.constant(t(&[1], vec![0.0]));
    let y = g.conv2d(x, k, b, Padding::Same).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
}

#[test]
fn averaging_kernel_preserves_constant_interior() {
    let mut g = Graph::<f32>::new();
    let c = 0.375f32;
    let x = g.constant(Tensor::full([1, 6, 6], c));
    let k = g.constant(Tensor::full([1, 1, 3, 3], 1.0 / 9.0));
    let b = g.constant(Tensor::zeros([1]));
    let y = g.conv2d(x, k, b, Padding::Same).unwrap();
    let v = g.value(y);
    assert_eq!(v.shape(), &[1, 6, 6]);
    for yy in 1..5 {
        for xx in 1..5 {
            assert!((v.data()[yy * 6 + xx] - c).abs() < 1e-6);
        }
    }
}

#[test]
fn conv_errors_name_the_axis() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([2, 4, 4]));
    let k = g.constant(Tensor::zeros([1, 3, 3, 3]));
    let b = g.constant(Tensor::zeros([1]));
    match g.conv2d(x, k, b, Padding::Same).unwrap_err() {
        TensorError::Dimension { axis, expected: 3, found: 2, .. } => assert_eq!(axis, "input channels"),
        e => panic!("unexpected {e:?}"),
    }
    let k = g.constant(Tensor::zeros([1, 2, 5, 3]));
    match g.conv2d(x, k, b, Padding::Valid).unwrap_err() {
        TensorError::Dimension { axis, .. } => assert_eq!(axis, "kernel height"),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn maxpool_block_and_argmax_routing() {
    let mut g = Graph::<f32>::new();
    let x = g.param(t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn maxpool_ties_choose_first_in_row_major_order() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::full([1, 2, 2], 0.5));
    let y = g.maxpool2(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_needs_two_pixels() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([1, 1, 4]));
    assert!(matches!(g.maxpool2(x), Err(TensorError::Dimension { axis: "height", .. })));
}

#[test]
fn maxpool_of_constant_is_half_size_constant() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full([2, 6, 5], 0.25));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 3, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.25));
}

#[test]
fn upsample_replicates_blocks() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t(&[1, 1, 1], vec![5.0]));
    let y = g.upsample2_nearest(x).unwrap();
    assert_eq!(g.value(y).data(), &[5.0; 4]);
}

#[test]
fn concat_orders_channels() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::full([1, 4, 4], 1.0));
    let b = g.constant(Tensor::full([2, 4, 4], 2.0));
    let c = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[3, 4, 4]);
    assert_eq!(&g.value(c).data()[..16], g.value(a).data());
    let bad = g.constant(Tensor::zeros([1, 4, 3]));
    assert!(matches!(g.concat_channels(a, bad), Err(TensorError::Dimension { axis: "width", .. })));
}

#[test]
fn relu_linear_mse_basics() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t(&[2], vec![-3.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);

    let v = g.constant(t(&[3], vec![0.5, -1.0, 2.0]));
    let w = g.constant(t(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
    let b = g.constant(Tensor::zeros([3]));
    let y = g.linear(v, w, b).unwrap();
    assert_eq!(g.value(y).data(), g.value(v).data());

    let p = g.param(t(&[3], vec![0.1, 0.2, 0.3]));
    let target = g.constant(t(&[3], vec![0.1, 0.2, 0.3]));
    let l = g.mse_loss(p, target).unwrap();
    assert_eq!(g.value(l).data(), &[0.0]);
    g.backward(l).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[0.0; 3]);

    let wrong = g.constant(Tensor::zeros([2]));
    assert!(g.mse_loss(p, wrong).is_err());
    assert!(matches!(g.linear(wrong, w, b), Err(TensorError::Dimension { axis: "input features", .. })));
}

#[test]
fn l2_normalize_cases() {
    let mut g = Graph::<f32>::new();
    let v = g.constant(t(&[2], vec![3.0, 4.0]));
    let n = g.l2_normalize(v).unwrap();
    assert_eq!(g.value(n).data(), &[0.6, 0.8]);
    let u = g.constant(t(&[3], vec![0.0, 1.0, 0.0]));
    let nu = g.l2_normalize(u).unwrap();
    assert_eq!(g.value(nu).data(), g.value(u).data());
    let z = g.constant(Tensor::zeros([4]));
    assert!(matches!(g.l2_normalize(z), Err(TensorError::DegenerateVector { .. })));
}

#[test]
fn backward_of_sum_gives_unit_gradients() {
    let mut g = Graph::<f32>::new();
    let w = g.param(t(&[5], vec![0.3, -1.0, 2.0, 0.0, 7.0]));
    let s = g.sum(w);
    g.backward(s).unwrap();
    assert_eq!(g.grad(s).unwrap(), &[1.0]);
    assert_eq!(g.grad(w).unwrap(), &[1.0; 5]);
}

#[test]
fn backward_rejects_non_scalar_and_leaves_unreachable_untouched() {
    let mut g = Graph::<f32>::new();
    let w = g.param(Tensor::full([3], 1.0));
    let unused = g.param(Tensor::full([3], 1.0));
    assert!(matches!(g.backward(w), Err(TensorError::Contract(_))));
    let s = g.sum(w);
    g.backward(s).unwrap();
    assert!(g.grad(unused).is_none());
}

#[test]
fn clamp_passes_gradient_inside_closed_interval() {
    let mut g = Graph::<f32>::new();
    let x = g.param(t(&[4], vec![-0.5, 0.0, 0.7, 1.5]));
    let c = g.clamp_unit(x);
    assert_eq!(g.value(c).data(), &[0.0, 0.0, 0.7, 1.0]);
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn zero_rate_dropout_is_identity() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t(&[3], vec![1.0, 2.0, 3.0]));
    let d = g.dropout(x, 0.0, 9).unwrap();
    assert_eq!(g.value(d).data(), g.value(x).data());
}

fn tensor_strategy() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..3, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-10.0f32..10.0, c * h * w).prop_map(move |d| Tensor::new([c, h, w], d).unwrap())
    })
}

proptest! {
    #[test]
    fn same_padding_preserves_dims_for_odd_kernels(k in 0usize..5, h in 1usize..12, w in 1usize..12) {
        let ks = 2 * k + 1;
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([1, h, w], 0.5));
        let kern = g.constant(Tensor::full([2, 1, ks, ks], 0.1));
        let b = g.constant(Tensor::zeros([2]));
        let y = g.conv2d(x, kern, b, Padding::Same).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[2, h, w]);
    }

    #[test]
    fn maxpool_inverts_nearest_upsample(x in tensor_strategy()) {
        let mut g = Graph::<f32>::new();
        let v = g.constant(x.clone());
        let u = g.upsample2_nearest(v).unwrap();
        let p = g.maxpool2(u).unwrap();
        prop_assert_eq!(g.value(p), &x);
    }

    #[test]
    fn ops_are_bitwise_deterministic(x in tensor_strategy()) {
        let run = || {
            let mut g = Graph::<f32>::new();
            let v = g.param(x.clone());
            let (c, _, _) = x.chw("test").unwrap();
            let k = g.param(Tensor::new([2, c, 3, 3], (0..18 * c).map(|i| (i as f32 * 0.01).sin()).collect()).unwrap());
            let b = g.param(Tensor::full([2], 0.1));
            let y = g.conv2d(v, k, b, Padding::Same).unwrap();
            let r = g.relu(y);
            let s = g.sum(r);
            g.backward(s).unwrap();
            (g.value(r).clone(), g.grad(k).unwrap().to_vec())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn loss_independent_of_param_leaves_zero_grad(x in tensor_strategy()) {
        let mut g = Graph::<f32>::new();
        let v = g.param(x.clone());
        let other = g.param(x);
        let s = g.sum(v);
        g.backward(s).unwrap();
        let grads = g.grad(other).map(|d| d.to_vec()).unwrap_or_default();
        prop_assert!(grads.iter().all(|&v| v == 0.0));
    }
}
