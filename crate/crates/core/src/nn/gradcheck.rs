//! Finite-difference gradient verification.
//!
//! The numerical side only ever calls `forward` + `mse_loss`, so it stays
//! independent of the analytic backward pass it is checking.

use crate::error::Result;
use crate::nn::{mse_loss, Network};
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error over all compared elements.
    pub max_rel_err: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements skipped because both magnitudes sat below the floor.
    pub skipped: usize,
}

fn loss_at(net: &Network, input: &Tensor, target: &Tensor) -> Result<f64> {
    let (out, _) = net.forward(input)?;
    Ok(mse_loss(&out, target)?.0)
}

/// Central-difference gradient of the MSE loss with respect to every network
/// parameter, in [`Network::params`] order.
pub fn numerical_param_gradients(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    eps: f32,
) -> Result<Vec<Tensor>> {
    let mut work = net.clone();
    let n_params = work.params().len();
    let mut out = Vec::with_capacity(n_params);
    for pi in 0..n_params {
        let len = work.params()[pi].len();
        let shape = work.params()[pi].shape().to_vec();
        let mut grad = vec![0.0f32; len];
        for ei in 0..len {
            let orig = work.params()[pi].data()[ei];
            work.params_mut()[pi].data_mut()[ei] = orig + eps;
            let plus = loss_at(&work, input, target)?;
            work.params_mut()[pi].data_mut()[ei] = orig - eps;
            let minus = loss_at(&work, input, target)?;
            work.params_mut()[pi].data_mut()[ei] = orig;
            grad[ei] = ((plus - minus) / (2.0 * eps as f64)) as f32;
        }
        out.push(Tensor::new(shape, grad)?);
    }
    Ok(out)
}

/// Central-difference gradient with respect to the network input.
pub fn numerical_input_gradient(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let mut x = input.clone();
    let mut grad = vec![0.0f32; input.len()];
    for ei in 0..input.len() {
        let orig = x.data()[ei];
        x.data_mut()[ei] = orig + eps;
        let plus = loss_at(net, &x, target)?;
        x.data_mut()[ei] = orig - eps;
        let minus = loss_at(net, &x, target)?;
        x.data_mut()[ei] = orig;
        grad[ei] = ((plus - minus) / (2.0 * eps as f64)) as f32;
    }
    Tensor::new(input.shape().to_vec(), grad)
}

fn compare(analytic: &[f32], numerical: &[f32], floor: f64, report: &mut GradCheckReport) {
    for (&a, &n) in analytic.iter().zip(numerical) {
        let (a, n) = (a as f64, n as f64);
        if a.abs() < floor && n.abs() < floor {
            report.skipped += 1;
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
        }
    }
}

/// Compare the analytic backward pass against central differences for every
/// parameter and the input. `floor` is the both-magnitudes-below cutoff.
pub fn check_network_gradients(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    eps: f32,
    floor: f64,
) -> Result<GradCheckReport> {
    let (out, cache) = net.forward(input)?;
    let (_, lgrad) = mse_loss(&out, target)?;
    let analytic = net.backward(&cache, &lgrad)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let numeric = numerical_param_gradients(net, input, target, eps)?;
    for (a, n) in analytic.param_grads().iter().zip(&numeric) {
        compare(a.data(), n.data(), floor, &mut report);
    }
    let n_input = numerical_input_gradient(net, input, target, eps)?;
    compare(analytic.input.data(), n_input.data(), floor, &mut report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn assert_passes(specs: &[LayerSpec], in_shape: Vec<usize>, out_shape: Vec<usize>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(specs, &mut rng);
        assert!(net.param_count() <= 500, "keep gradcheck nets small");
        let input = random_tensor(in_shape, &mut rng);
        let target = random_tensor(out_shape, &mut rng);
        let report = check_network_gradients(&net, &input, &target, 1e-3, 1e-8).unwrap();
        assert!(report.checked > 0);
        assert!(
            report.max_rel_err < 1e-3,
            "gradcheck failed: max rel err {} over {} elements",
            report.max_rel_err,
            report.checked
        );
    }

    #[test]
    fn dense_relu_chain_passes() {
        assert_passes(
            &[
                LayerSpec::Dense { in_dim: 6, out_dim: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 8, out_dim: 3 },
            ],
            vec![6],
            vec![3],
            41,
        );
    }

    #[test]
    fn conv_stack_passes() {
        assert_passes(
            &[
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kh: 3,
                    kw: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 2,
                    kh: 3,
                    kw: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 2 * 3 * 3, out_dim: 4 },
            ],
            vec![2, 6, 6],
            vec![4],
            42,
        );
    }

    #[test]
    fn sigmoid_and_reshape_pass() {
        assert_passes(
            &[
                LayerSpec::Dense { in_dim: 4, out_dim: 8 },
                LayerSpec::Sigmoid,
                LayerSpec::Reshape { shape: vec![2, 2, 2] },
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 1,
                    kh: 2,
                    kw: 2,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::Flatten,
            ],
            vec![4],
            vec![1],
            43,
        );
    }
}
