#![allow(dead_code)]

use hdh::losses::{LossConfig, Norm};
use hdh::network::{NetworkSpec, WeightSet};
use hdh::nn::Tensor;
use hdh::trainer::{joint_objective, step_rng, StepInputs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradCheck {
    pub sampled: usize,
    /// Samples whose analytic gradient exceeds 1e-6 in magnitude.
    pub nonzero: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Tensor<f64> {
    let data = (0..3 * size * size).map(|_| rng.random_range(-0.9..0.9)).collect();
    Tensor::from_vec(1, 3, size, size, data)
}

fn signed_plane(rng: &mut ChaCha8Rng, size: usize, block: usize) -> Tensor<f64> {
    let per = size / block;
    let bits: Vec<f64> = (0..per * per).map(|_| if rng.random() { 1.0 } else { -1.0 }).collect();
    let mut data = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                data[(c * size + y) * size + x] = bits[(y / block) * per + x / block];
            }
        }
    }
    Tensor::from_vec(1, 3, size, size, data)
}

/// Compares analytic gradients of the joint loss against central differences
/// on `samples` random trainable parameters of a 16x16 network.
pub fn joint_loss_gradient_check(norm: Norm, sigma: f64, samples: usize, seed: u64) -> GradCheck {
    let spec = NetworkSpec::with_widths(16, &[8, 8, 8, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightSet::<f64>::build(&spec, &mut rng).unwrap();
    // Larger weights than the training init keep activations away from zero.
    for p in w.params.params.iter_mut().filter(|p| p.name.ends_with(".weight")) {
        for v in &mut p.data {
            *v *= 5.0;
        }
    }
    let inp = StepInputs {
        x: random_image(&mut rng, 16),
        y: random_image(&mut rng, 16),
        z_g: random_image(&mut rng, 16),
        c: random_image(&mut rng, 16),
        m: signed_plane(&mut rng, 16, 4),
        r: Tensor::from_vec(1, 3, 16, 16, vec![-1.0; 768]),
        sigma,
    };
    let cfg = LossConfig { norm, ..LossConfig::default() };
    let loss_at = |w: &mut WeightSet<f64>| joint_objective(w, &inp, &cfg, &mut step_rng(seed, 0), None).unwrap().total;

    let mut grads = w.params.zero_grads();
    joint_objective(&mut w, &inp, &cfg, &mut step_rng(seed, 0), Some(&mut grads)).unwrap();

    let candidates: Vec<(usize, usize)> = w
        .params
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(i, p)| (0..p.data.len()).map(move |j| (i, j)))
        .collect();
    let h = 1e-6;
    let mut out = GradCheck { sampled: 0, nonzero: 0, max_rel_err: 0.0, worst: String::new() };
    for _ in 0..samples {
        let (i, j) = candidates[rng.random_range(0..candidates.len())];
        let orig = w.params.params[i].data[j];
        w.params.params[i].data[j] = orig + h;
        let up = loss_at(&mut w);
        w.params.params[i].data[j] = orig - h;
        let down = loss_at(&mut w);
        w.params.params[i].data[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[i][j];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.sampled += 1;
        out.nonzero += usize::from(analytic.abs() > 1e-6);
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst = format!("{}[{j}]: analytic {analytic:e}, numeric {numeric:e}", w.params.params[i].name);
        }
    }
    out
}
