//! Weight initialization policies.

use rand::Rng;

use super::Tensor;

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Glorot-uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    uniform(rng, shape, limit)
}

/// Dense weight `[in, out]`.
pub fn dense<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Tensor {
    glorot_uniform(rng, &[inputs, outputs], inputs, outputs)
}

/// Convolution weight `[c_out, c_in, taps]`.
pub fn conv<R: Rng + ?Sized>(rng: &mut R, c_out: usize, c_in: usize, taps: usize) -> Tensor {
    glorot_uniform(rng, &[c_out, c_in, taps], c_in * taps, c_out * taps)
}

/// Recurrent weight `[h, 4h]`, uniform in `±1/sqrt(h)` so each gate block is
/// roughly norm-preserving.
pub fn recurrent<R: Rng + ?Sized>(rng: &mut R, hidden: usize) -> Tensor {
    uniform(rng, &[hidden, 4 * hidden], 1.0 / (hidden as f32).sqrt())
}

/// LSTM bias `[4h]`: zero except the forget-gate block, which is 1.
pub fn lstm_bias(hidden: usize) -> Tensor {
    let mut t = Tensor::zeros(&[4 * hidden]);
    t.data_mut()[hidden..2 * hidden].fill(1.0);
    t
}
