use rand::Rng;

use super::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Abs,
}

impl Activation {
    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::of(LEAKY_SLOPE);
        match self {
            Activation::LeakyRelu => x.map(|v| if v > T::zero() { v } else { v * slope }),
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Tanh => x.map(|v| v.tanh()),
            Activation::Abs => x.map(|v| v.abs()),
        }
    }

    /// Gradient through the activation. `x` is the pre-activation input and
    /// `y` the output; each variant reads whichever is convenient.
    pub fn backward<T: Real>(self, dy: &Tensor<T>, x: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
        let slope = T::of(LEAKY_SLOPE);
        let data = match self {
            Activation::LeakyRelu => dy
                .data
                .iter()
                .zip(&x.data)
                .map(|(&g, &v)| if v > T::zero() { g } else { g * slope })
                .collect(),
            Activation::Relu => dy
                .data
                .iter()
                .zip(&x.data)
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Tanh => dy
                .data
                .iter()
                .zip(&y.data)
                .map(|(&g, &t)| g * (T::one() - t * t))
                .collect(),
            Activation::Abs => dy
                .data
                .iter()
                .zip(&x.data)
                .map(|(&g, &v)| if v >= T::zero() { g } else { -g })
                .collect(),
        };
        dy.with_data(data)
    }
}

/// Inverted-dropout mask: each entry is `0` or `1/(1-rate)`.
pub fn dropout_mask<T: Real, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub fn apply_mask<T: Real>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    x.with_data(x.data.iter().zip(mask).map(|(&v, &m)| v * m).collect())
}
