use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiming-uniform weights for ReLU nets: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("kaiming_uniform: invalid shape")
}

/// Conv kernel `[c_out, c_in, kh, kw]` with zero bias `[c_out]`.
pub fn conv_params<T: Scalar, R: Rng + ?Sized>(
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    rng: &mut R,
) -> (Tensor<T>, Tensor<T>) {
    (kaiming_uniform(&[c_out, c_in, kh, kw], c_in * kh * kw, rng), Tensor::zeros([c_out]))
}

/// Linear weight `[out, in]` with zero bias `[out]`.
pub fn linear_params<T: Scalar, R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> (Tensor<T>, Tensor<T>) {
    (kaiming_uniform(&[out, inp], inp, rng), Tensor::zeros([out]))
}
