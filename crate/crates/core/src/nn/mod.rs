//! Minimal CPU tensor engine: layers with explicit forward/backward passes.

mod act;
mod adam;
mod conv;
mod norm;
mod real;
mod tensor;

pub use act::{apply_mask, dropout_mask, Activation, LEAKY_SLOPE};
pub use adam::{Adam, ADAM_EPS};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    ConvCache, ConvGeom, ConvTransposeCache,
};
pub use norm::{
    batchnorm_backward, batchnorm_forward_batch_stats, batchnorm_forward_frozen,
    batchnorm_forward_train, BatchNormCache, NormStats, BN_EPS, BN_MOMENTUM,
};
pub use real::{gemm, Mat, Real};
pub use tensor::Tensor;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored alongside weights but never optimized.
    pub trainable: bool,
}

impl<T> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> Self {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name} shape");
        Param {
            name,
            shape,
            data,
            trainable,
        }
    }
}

/// Ordered parameter list; layers address entries by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, p: Param<T>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|p| vec![T::zero(); p.data.len()])
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| U::of(v.as_f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}
