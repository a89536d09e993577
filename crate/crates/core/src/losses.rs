//! Loss terms of the joint objective.
//!
//! Every distance is a mean over the elements of the target (`‖·‖/M`), with
//! either absolute (`l1`) or squared (`l2`) element errors.

use serde::{Deserialize, Serialize};

use crate::image_model::ImageTensor;
use crate::message::MessagePlane;
use crate::nn::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the extraction term inside the hiding loss.
    pub alpha1: f64,
    /// Weight of the hiding loss in the joint loss.
    pub alpha2: f64,
    pub norm: Norm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha1: 1.0,
            alpha2: 1.0,
            norm: Norm::L1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return Err(Error::Config(format!("alpha1 must be > 0, got {}", self.alpha1)));
        }
        if !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!("alpha2 must be > 0, got {}", self.alpha2)));
        }
        Ok(())
    }
}

/// Mean element distance between equally sized slices.
pub fn distance<T: Real>(pred: &[T], target: &[T], norm: Norm) -> T {
    assert_eq!(pred.len(), target.len(), "distance operands differ in length");
    let m = T::of(target.len() as f64);
    let total: T = match norm {
        Norm::L1 => pred.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum(),
        Norm::L2 => pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum(),
    };
    total / m
}

/// Gradient of `scale · distance(pred, target)` with respect to `pred`.
pub fn distance_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, norm: Norm, scale: f64) -> Tensor<T> {
    assert_eq!(pred.shape(), target.shape(), "distance operands differ in shape");
    let k = T::of(scale / target.len() as f64);
    let two = T::of(2.0);
    let data = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = p - t;
            match norm {
                Norm::L1 => {
                    if d > T::zero() {
                        k
                    } else if d < T::zero() {
                        -k
                    } else {
                        T::zero()
                    }
                }
                Norm::L2 => two * k * d,
            }
        })
        .collect();
    pred.with_data(data)
}

fn same_shape(a: &ImageTensor, b: &ImageTensor, what: &str) -> Result<()> {
    if a.size() != b.size() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.size(),
            a.size(),
            a.channels(),
            b.size(),
            b.size(),
            b.channels()
        )));
    }
    Ok(())
}

/// Distance of a style-transfer output from its ground truth.
pub fn style_loss(z_pred: &ImageTensor, z_g: &ImageTensor, norm: Norm) -> Result<f64> {
    same_shape(z_pred, z_g, "style loss")?;
    Ok(distance(z_pred.values(), z_g.values(), norm) as f64)
}

/// Stego fidelity plus `alpha1` × extraction error.
pub fn hiding_loss(
    s: &ImageTensor,
    c: &ImageTensor,
    m_hat: &ImageTensor,
    m: &MessagePlane,
    cfg: &LossConfig,
) -> Result<f64> {
    same_shape(s, c, "hiding loss (stego vs cover)")?;
    same_shape(m_hat, &m.tensor, "hiding loss (extracted vs message)")?;
    let fidelity = distance(s.values(), c.values(), cfg.norm) as f64;
    let extraction = distance(m_hat.values(), m.tensor.values(), cfg.norm) as f64;
    Ok(fidelity + cfg.alpha1 * extraction)
}

pub fn joint_loss(style: f64, hiding: f64, cfg: &LossConfig) -> f64 {
    style + cfg.alpha2 * hiding
}
