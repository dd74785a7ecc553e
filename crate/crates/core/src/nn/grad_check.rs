//! Gradient verification: compares analytic backprop against central finite
//! differences. Used by the test suite but exposed publicly so downstream
//! changes to layer math can be re-checked cheaply.

use crate::error::Result;
use crate::nn::{Network, Tensor};

/// Scalar losses a check can drive the network with.
#[derive(Debug, Clone, Copy)]
pub enum CheckLoss {
    /// `L = 0.5 * sum(out^2)` - defined for any output, so it exercises any
    /// layer stack.
    HalfSumSquares,
    /// `L = -ln(out[target])` - for softmax-terminated stacks; matches the
    /// training objective.
    CrossEntropy(usize),
}

impl CheckLoss {
    fn value(self, output: &[f64]) -> f64 {
        match self {
            CheckLoss::HalfSumSquares => 0.5 * output.iter().map(|v| v * v).sum::<f64>(),
            CheckLoss::CrossEntropy(target) => -output[target].ln(),
        }
    }

    fn output_grad(self, output: &[f64]) -> Vec<f64> {
        match self {
            CheckLoss::HalfSumSquares => output.to_vec(),
            CheckLoss::CrossEntropy(target) => {
                let mut g = vec![0.0; output.len()];
                g[target] = -1.0 / output[target];
                g
            }
        }
    }
}

/// Loss of one forward pass.
pub fn loss(net: &Network, input: &Tensor, check: CheckLoss) -> Result<f64> {
    Ok(check.value(net.forward(input)?.as_slice()))
}

/// Backprop gradients: `(d loss / d params, d loss / d input)`.
pub fn analytic_grads(
    net: &Network,
    input: &Tensor,
    check: CheckLoss,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = net.forward_cached(input)?;
    let grad_out = check.output_grad(cache.output().as_slice());
    Ok(net.backward(&cache, &grad_out))
}

/// Central-difference estimate of `d loss / d params[index]`.
pub fn numeric_param_grad(
    net: &mut Network,
    input: &Tensor,
    check: CheckLoss,
    index: usize,
    eps: f64,
) -> Result<f64> {
    let base = net.params();
    let mut probe = base.clone();
    probe[index] = base[index] + eps;
    net.set_params(&probe)?;
    let plus = loss(net, input, check)?;
    probe[index] = base[index] - eps;
    net.set_params(&probe)?;
    let minus = loss(net, input, check)?;
    net.set_params(&base)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Central-difference estimate of `d loss / d input[index]`.
pub fn numeric_input_grad(
    net: &Network,
    input: &Tensor,
    check: CheckLoss,
    index: usize,
    eps: f64,
) -> Result<f64> {
    let mut probe = input.clone();
    probe.as_mut_slice()[index] += eps;
    let plus = loss(net, &probe, check)?;
    probe.as_mut_slice()[index] = input.as_slice()[index] - eps;
    let minus = loss(net, &probe, check)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Relative error with an absolute floor: tiny gradients (for example
/// through inactive ReLU units) only differ by finite-difference noise, which
/// the floor keeps from being amplified into a spurious relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks `sample_every`-strided parameter gradients of `net` at `input` and
/// returns the worst relative error observed.
pub fn max_param_grad_error(
    net: &mut Network,
    input: &Tensor,
    check: CheckLoss,
    sample_every: usize,
    eps: f64,
) -> Result<f64> {
    let (analytic, _) = analytic_grads(net, input, check)?;
    let mut worst = 0.0f64;
    let stride = sample_every.max(1);
    let mut index = 0;
    while index < analytic.len() {
        let numeric = numeric_param_grad(net, input, check, index, eps)?;
        worst = worst.max(relative_error(analytic[index], numeric));
        index += stride;
    }
    Ok(worst)
}

/// Checks `sample_every`-strided input gradients of `net` at `input` and
/// returns the worst relative error observed.
pub fn max_input_grad_error(
    net: &Network,
    input: &Tensor,
    check: CheckLoss,
    sample_every: usize,
    eps: f64,
) -> Result<f64> {
    let (_, analytic) = analytic_grads(net, input, check)?;
    let mut worst = 0.0f64;
    let stride = sample_every.max(1);
    let mut index = 0;
    while index < analytic.len() {
        let numeric = numeric_input_grad(net, input, check, index, eps)?;
        worst = worst.max(relative_error(analytic[index], numeric));
        index += stride;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Shape};

    fn smooth_input(shape: Shape, seed: u64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(12345);
        for v in t.as_mut_slice() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 11) as f64) / (1u64 << 53) as f64 + 0.1;
        }
        t
    }

    fn check_layer(spec: LayerSpec, input_shape: Shape, seed: u64) {
        let mut net = Network::new(input_shape, &[spec]).unwrap();
        net.randomize(seed);
        let input = smooth_input(input_shape, seed);
        let eps = 1e-5;
        if net.param_count() > 0 {
            let err = max_param_grad_error(&mut net, &input, CheckLoss::HalfSumSquares, 7, eps)
                .unwrap();
            assert!(err < 1e-6, "{spec:?} param grad error {err}");
        }
        let err = max_input_grad_error(&net, &input, CheckLoss::HalfSumSquares, 5, eps).unwrap();
        assert!(err < 1e-6, "{spec:?} input grad error {err}");
    }

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        let relu = Activation::Relu;
        let linear = Activation::Linear;
        let hwc = Shape::Hwc { h: 8, w: 8, c: 2 };
        check_layer(LayerSpec::Conv2d { kh: 3, kw: 3, filters: 4, activation: linear }, hwc, 1);
        check_layer(LayerSpec::Conv2d { kh: 3, kw: 3, filters: 4, activation: relu }, hwc, 2);
        check_layer(
            LayerSpec::SepConv2d { kh: 3, kw: 3, filters: 4, activation: linear },
            hwc,
            3,
        );
        check_layer(LayerSpec::SepConv2d { kh: 3, kw: 3, filters: 4, activation: relu }, hwc, 4);
        check_layer(LayerSpec::AvgPool, hwc, 5);
        check_layer(LayerSpec::GlobalAvgPool, hwc, 6);
        check_layer(LayerSpec::Flatten, hwc, 7);
        check_layer(LayerSpec::Dense { units: 5, activation: linear }, Shape::Flat(12), 8);
        check_layer(LayerSpec::Dense { units: 5, activation: relu }, Shape::Flat(12), 9);
        check_layer(LayerSpec::Softmax, Shape::Flat(6), 10);
    }

    #[test]
    fn cross_entropy_gradients_match_through_a_small_stack() {
        let shape = Shape::Hwc { h: 6, w: 6, c: 1 };
        let mut net = Network::new(
            shape,
            &[
                LayerSpec::Conv2d { kh: 3, kw: 3, filters: 3, activation: Activation::Relu },
                LayerSpec::AvgPool,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4, activation: Activation::Linear },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        net.randomize(77);
        let input = smooth_input(shape, 78);
        for target in 0..4 {
            let err = max_param_grad_error(
                &mut net,
                &input,
                CheckLoss::CrossEntropy(target),
                3,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "target {target}: {err}");
        }
    }

    #[test]
    fn relative_error_floor_absorbs_difference_noise_near_zero() {
        assert!(relative_error(0.0, 3e-12) < 1e-4);
        assert!(relative_error(1.0, 1.0) == 0.0);
        assert!(relative_error(1.0, 0.9) > 0.05);
    }
}
