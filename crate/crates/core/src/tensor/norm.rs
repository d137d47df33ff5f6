use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state for the batch-statistics backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch statistics `(mean, biased variance)` over N, H, W.
pub fn channel_stats(input: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for ni in 0..n {
            s += x[(ni * c + ci) * plane..(ni * c + ci + 1) * plane].iter().sum::<f64>();
        }
        let m = s / count;
        let mut q = 0.0;
        for ni in 0..n {
            q += x[(ni * c + ci) * plane..(ni * c + ci + 1) * plane]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = q / count;
    }
    Ok((mean, var))
}

fn check_affine(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    for p in [gamma, beta] {
        if p.len() != c {
            return Err(Error::ChannelMismatch {
                expected: p.len(),
                got: c,
            });
        }
    }
    Ok((n, c, h * w))
}

fn apply_affine(input: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], inv_std: &[f64]) -> Result<(Tensor, Tensor)> {
    let (n, c, plane) = check_affine(input, gamma, beta)?;
    let mut normalized = Tensor::zeros(input.shape().to_vec());
    let mut out = Tensor::zeros(input.shape().to_vec());
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * plane..(ni * c + ci + 1) * plane;
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for ((&x, xh), y) in input.data()[r.clone()]
                .iter()
                .zip(&mut normalized.data_mut()[r.clone()])
                .zip(&mut out.data_mut()[r])
            {
                *xh = (x - mean[ci]) * inv_std[ci];
                *y = g * *xh + b;
            }
        }
    }
    Ok((out, normalized))
}

/// Training-mode batch norm. Returns the output, the cache for backward and
/// the batch statistics `(mean, unbiased variance)` for the running update.
pub fn batch_norm_train(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, BatchNormCache, Vec<f64>, Vec<f64>)> {
    let (n, _, plane) = check_affine(input, gamma, beta)?;
    let count = n * plane;
    if count < 2 {
        return Err(Error::shape("batch norm in train mode needs N*H*W >= 2 per channel"));
    }
    let (mean, var) = channel_stats(input)?;
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let (out, normalized) = apply_affine(input, gamma, beta, &mean, &inv_std)?;
    let unbiased = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
    Ok((out, BatchNormCache { normalized, inv_std }, mean, unbiased))
}

/// Inference-mode batch norm from running statistics.
pub fn batch_norm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<(Tensor, BatchNormCache)> {
    let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let (out, normalized) = apply_affine(input, gamma, beta, running_mean.data(), &inv_std)?;
    Ok((out, BatchNormCache { normalized, inv_std }))
}

/// Exponential moving average of running statistics.
pub fn update_running(running: &mut Tensor, batch: &[f64], momentum: f64) {
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`. When `batch_stats` is false
/// the statistics are treated as constants (inference mode).
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
    batch_stats: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let xh = cache.normalized.data();
    let dy = grad_out.data();
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * plane..(ni * c + ci + 1) * plane;
            for (&d, &x) in dy[r.clone()].iter().zip(&xh[r]) {
                g_beta[ci] += d;
                g_gamma[ci] += d * x;
            }
        }
    }
    let mut gx = Tensor::zeros(grad_out.shape().to_vec());
    let out = gx.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * plane..(ni * c + ci + 1) * plane;
            let scale = gamma.data()[ci] * cache.inv_std[ci];
            for ((o, &d), &x) in out[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                *o = if batch_stats {
                    scale * (d - g_beta[ci] / count - x * g_gamma[ci] / count)
                } else {
                    scale * d
                };
            }
        }
    }
    Ok((gx, Tensor::new([c], g_gamma)?, Tensor::new([c], g_beta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_of(t: &Tensor, channel: usize) -> (f64, f64) {
        let (m, v) = channel_stats(t).unwrap();
        (m[channel], v[channel])
    }

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // mean 5, std 2
        let x = Tensor::randn([4, 2, 8, 8], 1.0, &mut rng);
        let (m, v) = channel_stats(&x).unwrap();
        let mut shifted = x.clone();
        for ni in 0..4 {
            for ci in 0..2 {
                for p in 0..64 {
                    let i = (ni * 2 + ci) * 64 + p;
                    shifted.data_mut()[i] = 5.0 + 2.0 * (x.data()[i] - m[ci]) / v[ci].sqrt();
                }
            }
        }
        let (out, ..) = batch_norm_train(&shifted, &Tensor::full([2], 1.0), &Tensor::zeros([2])).unwrap();
        for c in 0..2 {
            let (mean, var) = stats_of(&out, c);
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn affine_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn([2, 1, 16, 16], 3.0, &mut rng);
        let (out, ..) = batch_norm_train(&x, &Tensor::full([1], 2.0), &Tensor::full([1], 3.0)).unwrap();
        let (mean, var) = stats_of(&out, 0);
        assert!((mean - 3.0).abs() < 1e-6);
        assert!((var.sqrt() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn([3, 4, 5, 5], 2.0, &mut rng);
        let gamma = Tensor::randn([4], 1.0, &mut rng);
        let beta = Tensor::randn([4], 1.0, &mut rng);
        let (train, ..) = batch_norm_train(&x, &gamma, &beta).unwrap();
        let (m, v) = channel_stats(&x).unwrap();
        let (eval, _) = batch_norm_eval(
            &x,
            &gamma,
            &beta,
            &Tensor::new([4], m).unwrap(),
            &Tensor::new([4], v).unwrap(),
        )
        .unwrap();
        assert!(train.max_abs_diff(&eval).unwrap() < 1e-6);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros([2, 3, 2, 2]);
        assert!(matches!(
            batch_norm_train(&x, &Tensor::zeros([2]), &Tensor::zeros([2])),
            Err(Error::ChannelMismatch { .. })
        ));
    }
}
