use super::{Real, Tensor};

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.01;

/// Which statistics normalize activations outside of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStats {
    /// Statistics of the batch being processed, as in training.
    Batch,
    /// Running averages accumulated during training.
    Running,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
}

/// Per-channel batch statistics `(mean, biased variance)`.
fn channel_stats<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let plane = x.h * x.w;
    let count = T::of((x.n * plane) as f64);
    let mut mean = vec![T::zero(); x.c];
    let mut var = vec![T::zero(); x.c];
    for ch in 0..x.c {
        let mut s = T::zero();
        for i in 0..x.n {
            s += x.item(i)[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for i in 0..x.n {
            for &e in &x.item(i)[ch * plane..(ch + 1) * plane] {
                v += (e - m) * (e - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

/// Normalizes with batch statistics and folds them into the running averages.
pub fn batchnorm_forward_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> (Tensor<T>, BatchNormCache<T>) {
    let (mean, var) = channel_stats(x);
    let mom = T::of(BN_MOMENTUM);
    for ch in 0..x.c {
        running_mean[ch] = running_mean[ch] * (T::one() - mom) + mean[ch] * mom;
        running_var[ch] = running_var[ch] * (T::one() - mom) + var[ch] * mom;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| (v + T::of(BN_EPS)).sqrt().recip()).collect();
    let plane = x.h * x.w;
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
    for i in 0..x.n {
        let base = i * x.item_len();
        for ch in 0..x.c {
            let r = base + ch * plane..base + (ch + 1) * plane;
            for ((xh, out), &e) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut y.data[r.clone()])
                .zip(&x.data[r])
            {
                *xh = (e - mean[ch]) * inv_std[ch];
                *out = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    (
        y,
        BatchNormCache {
            xhat,
            inv_std,
            shape: x.shape(),
        },
    )
}

/// Normalizes with fixed statistics; no cache, inference only.
pub fn batchnorm_forward_frozen<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> Tensor<T> {
    let plane = x.h * x.w;
    let mut y = x.clone();
    for i in 0..x.n {
        let item = y.item_mut(i);
        for ch in 0..x.c {
            let scale = gamma[ch] / (var[ch] + T::of(BN_EPS)).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for v in &mut item[ch * plane..(ch + 1) * plane] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

/// Batch-statistics normalization without touching running averages.
pub fn batchnorm_forward_batch_stats<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let (mean, var) = channel_stats(x);
    batchnorm_forward_frozen(x, gamma, beta, &mean, &var)
}

pub fn batchnorm_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let [n, c, h, w] = cache.shape;
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let item = c * plane;
    let mut dx = Tensor::zeros(n, c, h, w);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let r = i * item + ch * plane..i * item + (ch + 1) * plane;
            for (&g, &xh) in dy.data[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / count;
        for i in 0..n {
            let r = i * item + ch * plane..i * item + (ch + 1) * plane;
            for ((d, &g), &xh) in dx.data[r.clone()]
                .iter_mut()
                .zip(&dy.data[r.clone()])
                .zip(&cache.xhat[r])
            {
                *d = k * (count * g - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_channels_have_zero_mean_unit_variance() {
        let x = Tensor::from_vec(2, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0f64]);
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        let (y, _) = batchnorm_forward_train(&x, &[1.0], &[0.0], &mut rm, &mut rv);
        let mean: f64 = y.data.iter().sum::<f64>() / 8.0;
        let var: f64 = y.data.iter().map(|v| v * v).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 5.25 / (5.25 + BN_EPS)).abs() < 1e-9);
        assert!((rm[0] - 4.5 * BN_MOMENTUM).abs() < 1e-12);
    }

    #[test]
    fn single_element_channel_collapses_to_beta() {
        let x = Tensor::from_vec(1, 2, 1, 1, vec![3.0, -7.0f64]);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (y, _) = batchnorm_forward_train(&x, &[2.0, 2.0], &[0.5, -0.5], &mut rm, &mut rv);
        assert_eq!(y.data, vec![0.5, -0.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Tensor::from_vec(
            2,
            2,
            1,
            3,
            vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 1.5, -0.9, 0.2, 0.0, 1.1, -2.2f64],
        );
        let gamma = [1.3, 0.7];
        let beta = [0.1, -0.2];
        let weights: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |x: &Tensor<f64>| {
            let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
            let (y, _) = batchnorm_forward_train(x, &gamma, &beta, &mut rm, &mut rv);
            y.data.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (_, cache) = batchnorm_forward_train(&x, &gamma, &beta, &mut rm, &mut rv);
        let dy = x.with_data(weights.clone());
        let (mut dg, mut db) = (vec![0.0; 2], vec![0.0; 2]);
        let dx = batchnorm_backward(&dy, &cache, &gamma, &mut dg, &mut db);
        let eps = 1e-6;
        for i in 0..12 {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data[i]);
        }
    }
}
