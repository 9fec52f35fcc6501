//! Layer-level forward and backward math.
//!
//! Each layer kind gets a pair of free functions operating on flat row-major
//! buffers. The [`crate::nn::Network`] struct owns parameters and dispatch;
//! these functions own the arithmetic. Backward passes implement the exact
//! analytic gradients for the forward definitions, which the test suite pins
//! against central finite differences.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon added to the variance before the batch-norm square root.
///
/// Small enough (in f64) that a unit-variance batch leaves the layer with
/// variance within 1e-6 of 1, large enough to keep dead channels finite.
pub const BN_EPS: f64 = 1e-8;

/// Momentum of the running-statistics update in train mode.
pub const BN_MOMENTUM: f64 = 0.1;

/// Values cached by a train-mode batch-norm forward, needed for backward.
#[derive(Debug, Clone)]
pub struct BnCache {
    /// Normalized activations, same shape as the input.
    pub x_hat: Tensor,
    /// Per-channel batch mean (biased statistics).
    pub mean: Vec<f64>,
    /// Per-channel batch variance (biased, divisor `n`).
    pub var: Vec<f64>,
    /// Per-channel `1 / sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
    /// Elements per channel (`batch * spatial_len`).
    pub n: usize,
}

/// 1-D convolution with zero padding.
///
/// `input` is `[B, C_in, L]`, `weight` is `[C_out, C_in, K]`, `bias` is
/// `[C_out]`; the output is `[B, C_out, L + 2*padding - K + 1]`.
#[allow(clippy::needless_range_loop)] // explicit indices mirror the math
pub fn conv1d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Tensor {
    let (b, c_in, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let l_out = l + 2 * padding - k + 1;
    let x = input.data();
    let w = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; b * c_out * l_out];
    for bi in 0..b {
        for oc in 0..c_out {
            let o_base = (bi * c_out + oc) * l_out;
            for pos in 0..l_out {
                let mut acc = bs[oc];
                for ic in 0..c_in {
                    let i_base = (bi * c_in + ic) * l;
                    let w_base = (oc * c_in + ic) * k;
                    for j in 0..k {
                        let src = pos + j;
                        if src >= padding && src - padding < l {
                            acc += w[w_base + j] * x[i_base + src - padding];
                        }
                    }
                }
                out[o_base + pos] = acc;
            }
        }
    }
    Tensor::new(vec![b, c_out, l_out], out).expect("conv output shape")
}

/// Gradients of [`conv1d_forward`] with respect to input, weight, and bias.
#[allow(clippy::needless_range_loop)] // explicit indices mirror the math
pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, c_in, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let l_out = dout.shape()[2];
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; c_out];
    for bi in 0..b {
        for oc in 0..c_out {
            let o_base = (bi * c_out + oc) * l_out;
            for pos in 0..l_out {
                let g = dy[o_base + pos];
                db[oc] += g;
                for ic in 0..c_in {
                    let i_base = (bi * c_in + ic) * l;
                    let w_base = (oc * c_in + ic) * k;
                    for j in 0..k {
                        let src = pos + j;
                        if src >= padding && src - padding < l {
                            dw[w_base + j] += g * x[i_base + src - padding];
                            dx[i_base + src - padding] += g * w[w_base + j];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![b, c_in, l], dx).expect("conv dx shape"),
        Tensor::new(vec![c_out, c_in, k], dw).expect("conv dw shape"),
        Tensor::from_vec(db),
    )
}

/// Train-mode batch normalization over `[B, C, L]`.
///
/// Normalizes each channel with the biased batch statistics and returns the
/// cache needed for backward. Running-statistics bookkeeping is left to the
/// caller, which owns those buffers.
pub fn batchnorm_forward_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, BnCache)> {
    let (b, c, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let n = b * l;
    if n < 2 {
        return Err(Error::DegenerateBatch);
    }
    let x = input.data();
    let g = gamma.data();
    let bt = beta.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut sum = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * l;
            for pos in 0..l {
                sum += x[base + pos];
            }
        }
        let m = sum / n as f64;
        let mut sq = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * l;
            for pos in 0..l {
                let d = x[base + pos] - m;
                sq += d * d;
            }
        }
        mean[ci] = m;
        var[ci] = sq / n as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for pos in 0..l {
                let h = (x[base + pos] - mean[ci]) * inv_std[ci];
                x_hat[base + pos] = h;
                out[base + pos] = g[ci] * h + bt[ci];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out).expect("bn output shape"),
        BnCache {
            x_hat: Tensor::new(shape, x_hat).expect("bn cache shape"),
            mean,
            var,
            inv_std,
            n,
        },
    ))
}

/// Eval-mode batch normalization using running statistics.
pub fn batchnorm_forward_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor {
    let (b, c, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let x = input.data();
    let g = gamma.data();
    let bt = beta.data();
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for pos in 0..l {
                out[base + pos] = g[ci] * (x[base + pos] - running_mean[ci]) * inv_std[ci] + bt[ci];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out).expect("bn eval shape")
}

/// Gradients of train-mode batch norm with respect to input, gamma, beta.
pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, c, l) = (dout.shape()[0], dout.shape()[1], dout.shape()[2]);
    let n = cache.n as f64;
    let dy = dout.data();
    let xh = cache.x_hat.data();
    let g = gamma.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for pos in 0..l {
                let d = dy[base + pos];
                dbeta[ci] += d;
                dgamma[ci] += d * xh[base + pos];
                let dxh = d * g[ci];
                sum_dxhat[ci] += dxh;
                sum_dxhat_xhat[ci] += dxh * xh[base + pos];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            let scale = cache.inv_std[ci] / n;
            for pos in 0..l {
                let dxh = dy[base + pos] * g[ci];
                dx[base + pos] =
                    scale * (n * dxh - sum_dxhat[ci] - xh[base + pos] * sum_dxhat_xhat[ci]);
            }
        }
    }
    (
        Tensor::new(dout.shape().to_vec(), dx).expect("bn dx shape"),
        Tensor::from_vec(dgamma),
        Tensor::from_vec(dbeta),
    )
}

/// Elementwise rectifier.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of the rectifier; zero at and below the kink.
pub fn relu_backward(input: &Tensor, dout: &Tensor) -> Tensor {
    let mut dx = dout.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Fully connected layer: `out = input * weight^T + bias`.
///
/// `input` is `[B, F]`, `weight` is `[O, F]`, `bias` is `[O]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (b, f) = (input.shape()[0], input.shape()[1]);
    let o = weight.shape()[0];
    let x = input.data();
    let w = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; b * o];
    for bi in 0..b {
        let x_base = bi * f;
        for oi in 0..o {
            let w_base = oi * f;
            let mut acc = bs[oi];
            for fi in 0..f {
                acc += w[w_base + fi] * x[x_base + fi];
            }
            out[bi * o + oi] = acc;
        }
    }
    Tensor::new(vec![b, o], out).expect("dense output shape")
}

/// Gradients of [`dense_forward`] with respect to input, weight, and bias.
pub fn dense_backward(input: &Tensor, weight: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, f) = (input.shape()[0], input.shape()[1]);
    let o = weight.shape()[0];
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    let mut dx = vec![0.0; b * f];
    let mut dw = vec![0.0; o * f];
    let mut db = vec![0.0; o];
    for bi in 0..b {
        let x_base = bi * f;
        for oi in 0..o {
            let g = dy[bi * o + oi];
            db[oi] += g;
            let w_base = oi * f;
            for fi in 0..f {
                dw[w_base + fi] += g * x[x_base + fi];
                dx[x_base + fi] += g * w[w_base + fi];
            }
        }
    }
    (
        Tensor::new(vec![b, f], dx).expect("dense dx shape"),
        Tensor::new(vec![o, f], dw).expect("dense dw shape"),
        Tensor::from_vec(db),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(b: usize, c: usize, l: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![b, c, l], data).unwrap()
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        // Kernel [0, 1, 0] with padding 1 is the identity on each channel.
        let input = seq(1, 1, 4, vec![1.0, -2.0, 3.0, 0.5]);
        let w = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0]);
        let out = conv1d_forward(&input, &w, &b, 1);
        assert_eq!(out.shape(), &[1, 1, 4]);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_averaging_kernel_on_constant_input_keeps_interior_constant() {
        let input = seq(1, 1, 5, vec![3.0; 5]);
        let w = Tensor::new(vec![1, 1, 3], vec![1.0 / 3.0; 3]).unwrap();
        let b = Tensor::from_vec(vec![0.0]);
        let out = conv1d_forward(&input, &w, &b, 1);
        // Interior positions average three 3s; the edges see one zero pad.
        let d = out.data();
        for &v in &d[1..4] {
            assert!((v - 3.0).abs() < 1e-12);
        }
        assert!((d[0] - 2.0).abs() < 1e-12);
        assert!((d[4] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conv_output_length_follows_padding_and_kernel() {
        let input = seq(2, 3, 6, vec![0.25; 2 * 3 * 6]);
        let w = Tensor::new(vec![4, 3, 3], vec![0.1; 36]).unwrap();
        let b = Tensor::from_vec(vec![0.0; 4]);
        assert_eq!(conv1d_forward(&input, &w, &b, 1).shape(), &[2, 4, 6]);
        assert_eq!(conv1d_forward(&input, &w, &b, 0).shape(), &[2, 4, 4]);
    }

    #[test]
    fn batchnorm_train_standardizes_each_channel() {
        let input = seq(4, 2, 1, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let gamma = Tensor::from_vec(vec![1.0, 1.0]);
        let beta = Tensor::from_vec(vec![0.0, 0.0]);
        let (out, cache) = batchnorm_forward_train(&input, &gamma, &beta).unwrap();
        assert_eq!(cache.mean, vec![2.5, 25.0]);
        for ci in 0..2 {
            let vals: Vec<f64> = (0..4).map(|bi| out.data()[bi * 2 + ci]).collect();
            let m: f64 = vals.iter().sum::<f64>() / 4.0;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-8, "channel {ci} mean {m}");
            assert!((v - 1.0).abs() < 1e-6, "channel {ci} variance {v}");
        }
    }

    #[test]
    fn batchnorm_rejects_single_element_statistics() {
        let input = seq(1, 2, 1, vec![1.0, 2.0]);
        let gamma = Tensor::from_vec(vec![1.0, 1.0]);
        let beta = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            batchnorm_forward_train(&input, &gamma, &beta),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let input = seq(1, 1, 2, vec![5.0, 7.0]);
        let gamma = Tensor::from_vec(vec![2.0]);
        let beta = Tensor::from_vec(vec![1.0]);
        let out = batchnorm_forward_eval(&input, &gamma, &beta, &[5.0], &[4.0]);
        // (5-5)/2 * 2 + 1 = 1, (7-5)/2 * 2 + 1 = 3 (up to eps in the sqrt).
        assert!((out.data()[0] - 1.0).abs() < 1e-8);
        assert!((out.data()[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relu_clamps_and_masks_gradient() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dy = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
        let dx = relu_backward(&x, &dy);
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dense_matches_hand_computed_product() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Tensor::from_vec(vec![0.5, -0.5]);
        let y = dense_forward(&x, &w, &b);
        assert_eq!(y.data(), &[11.5, 16.5]);
    }

    #[test]
    fn dense_backward_matches_hand_computed_gradients() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let dy = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let (dx, dw, db) = dense_backward(&x, &w, &dy);
        assert_eq!(db.data(), &[3.0]);
        assert_eq!(dw.data(), &[7.0, 10.0]); // [1*1+2*3, 1*2+2*4]
        assert_eq!(dx.data(), &[0.5, -1.0, 1.0, -2.0]);
    }
}
