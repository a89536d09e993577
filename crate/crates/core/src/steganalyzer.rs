//! Cover-versus-stego classifier working on high-pass residuals.
//!
//! A fixed 5×5 high-pass kernel is applied to each colour channel. Four 4×4
//! stride-2 convolutions follow (absolute value after the first, ReLU after
//! the rest) before global average pooling feeds a logistic output.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::{hider_for, EvalData};
use crate::image_model::{denormalize, RawImage};
use crate::network::WeightSet;
use crate::nn::{conv2d_backward, conv2d_forward, Activation, Adam, ConvCache, ConvGeom, Param, ParamStore, Tensor};
use crate::{Error, Result};

/// Second-order "KV" residual kernel, scaled by 1/12.
pub const HIGH_PASS: [[f32; 5]; 5] = [
    [-1.0, 2.0, -2.0, 2.0, -1.0],
    [2.0, -6.0, 8.0, -6.0, 2.0],
    [-2.0, 8.0, -12.0, 8.0, -2.0],
    [2.0, -6.0, 8.0, -6.0, 2.0],
    [-1.0, 2.0, -2.0, 2.0, -1.0],
];

/// Keeps initial logits small so training does not start saturated.
pub const RESIDUAL_SCALE: f32 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            widths: vec![8, 16, 32, 32],
            learning_rate: 1e-3,
            epochs: 6,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "detector needs four positive stage widths, got {:?}",
                self.widths
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("detector learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// High-pass residual of each channel, "same" size with zero padding, in
/// 8-bit units.
pub fn residual(img: &RawImage) -> Tensor<f32> {
    let (w, h) = (img.width(), img.height());
    let mut out = Tensor::zeros(1, 3, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (dy, row) in HIGH_PASS.iter().enumerate() {
                    let yy = y as isize + dy as isize - 2;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for (dx, &k) in row.iter().enumerate() {
                        let xx = x as isize + dx as isize - 2;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += k * img.get(yy as usize, xx as usize, c) as f32;
                    }
                }
                out.data[(c * h + y) * w + x] = acc / 12.0 * RESIDUAL_SCALE;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: RawImage,
    /// `true` for stego.
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct DetectorSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn check_balance(samples: &[Sample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} set is empty")));
    }
    let pos = samples.iter().filter(|s| s.label).count() as f64 / samples.len() as f64;
    if !(0.4..=0.6).contains(&pos) {
        return Err(Error::InvalidArgument(format!(
            "{what} set is {:.0}% stego; classes must be within 60/40",
            pos * 100.0
        )));
    }
    Ok(())
}

impl DetectorSplit {
    /// Pairs stay together: 72% train, 8% validation, 20% test.
    pub fn from_pairs(covers: Vec<RawImage>, stegos: Vec<RawImage>, seed: u64) -> Result<Self> {
        let n = covers.len().max(stegos.len());
        let balance: Vec<Sample> = covers
            .iter()
            .map(|c| Sample { image: c.clone(), label: false })
            .chain(stegos.iter().map(|s| Sample { image: s.clone(), label: true }))
            .collect();
        check_balance(&balance, "detector")?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (n as f64 * 0.2).round() as usize;
        let n_val = (n as f64 * 0.08).round() as usize;
        let mut split = DetectorSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (rank, &i) in order.iter().enumerate() {
            let dest = if rank < n_test {
                &mut split.test
            } else if rank < n_test + n_val {
                &mut split.validation
            } else {
                &mut split.train
            };
            if let Some(c) = covers.get(i) {
                dest.push(Sample { image: c.clone(), label: false });
            }
            if let Some(s) = stegos.get(i) {
                dest.push(Sample { image: s.clone(), label: true });
            }
        }
        Ok(split)
    }

    /// Randomly permutes labels within each part: the no-signal control.
    pub fn shuffle_labels(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for part in [&mut self.train, &mut self.validation, &mut self.test] {
            let mut labels: Vec<bool> = part.iter().map(|s| s.label).collect();
            labels.shuffle(&mut rng);
            for (s, l) in part.iter_mut().zip(labels) {
                s.label = l;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub spec: DetectorSpec,
    pub params: ParamStore<f32>,
}

fn geom(cin: usize, cout: usize) -> ConvGeom {
    ConvGeom { cin, cout, k: 4, stride: 2, pad: 1 }
}

struct Trace {
    caches: Vec<ConvCache<f32>>,
    pre: Vec<Tensor<f32>>,
    post: Vec<Tensor<f32>>,
    pooled: Vec<f32>,
}

impl Detector {
    pub fn new(spec: &DetectorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamStore::default();
        let mut cin = 3;
        for (i, &w) in spec.widths.iter().enumerate() {
            let fan_in = (cin * 16) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let data = (0..w * cin * 16).map(|_| normal.sample(&mut rng) as f32).collect();
            params.push(Param::new(format!("conv{i}.weight"), vec![w, cin, 4, 4], data, true));
            params.push(Param::new(format!("conv{i}.bias"), vec![w], vec![0.0; w], true));
            cin = w;
        }
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).expect("positive std");
        let data = (0..cin).map(|_| normal.sample(&mut rng) as f32).collect();
        params.push(Param::new("head.weight", vec![cin], data, true));
        params.push(Param::new("head.bias", vec![1], vec![0.0], true));
        Ok(Detector { spec: spec.clone(), params })
    }

    fn act(stage: usize) -> Activation {
        if stage == 0 {
            Activation::Abs
        } else {
            Activation::Relu
        }
    }

    fn forward(&self, x: &Tensor<f32>) -> (Vec<f32>, Trace) {
        let mut h = x.clone();
        let mut cin = 3;
        let mut trace = Trace { caches: Vec::new(), pre: Vec::new(), post: Vec::new(), pooled: Vec::new() };
        for (i, &w) in self.spec.widths.iter().enumerate() {
            let p = &self.params.params;
            let (y, cache) = conv2d_forward(&h, &p[2 * i].data, Some(&p[2 * i + 1].data), geom(cin, w));
            let out = Self::act(i).forward(&y);
            trace.caches.push(cache);
            trace.pre.push(y);
            trace.post.push(out.clone());
            h = out;
            cin = w;
        }
        let plane = (h.h * h.w) as f32;
        let head = &self.params.params[2 * self.spec.widths.len()].data;
        let bias = self.params.params[2 * self.spec.widths.len() + 1].data[0];
        let mut logits = Vec::with_capacity(h.n);
        for i in 0..h.n {
            let item = h.item(i);
            let pooled: Vec<f32> = item.chunks(h.h * h.w).map(|ch| ch.iter().sum::<f32>() / plane).collect();
            logits.push(pooled.iter().zip(head).map(|(a, b)| a * b).sum::<f32>() + bias);
            trace.pooled.extend(pooled);
        }
        (logits, trace)
    }

    fn batch_input(samples: &[&Sample]) -> Tensor<f32> {
        let res: Vec<Tensor<f32>> = samples.iter().map(|s| residual(&s.image)).collect();
        let (c, h, w) = (res[0].c, res[0].h, res[0].w);
        let data = res.into_iter().flat_map(|t| t.data).collect();
        Tensor::from_vec(samples.len(), c, h, w, data)
    }

    /// Stego probability of each image.
    pub fn predict(&self, images: &[&RawImage]) -> Vec<f32> {
        let samples: Vec<Sample> = images.iter().map(|&i| Sample { image: i.clone(), label: false }).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        refs.chunks(32)
            .flat_map(|chunk| {
                let (logits, _) = self.forward(&Self::batch_input(chunk));
                logits.into_iter().map(|z| 1.0 / (1.0 + (-z).exp()))
            })
            .collect()
    }

    /// Binary cross-entropy over the batch; returns mean loss, accumulating
    /// gradients into `grads`.
    fn loss_and_grads(&self, batch: &[&Sample], grads: &mut [Vec<f32>]) -> f32 {
        let x = Self::batch_input(batch);
        let (logits, trace) = self.forward(&x);
        let n = batch.len() as f32;
        let k = self.spec.widths.len();
        let cl = *self.spec.widths.last().expect("four stages");
        let last = &trace.post[k - 1];
        let plane = (last.h * last.w) as f32;
        let mut loss = 0.0;
        let mut d_last = Tensor::zeros(last.n, last.c, last.h, last.w);
        for (i, (&z, s)) in logits.iter().zip(batch).enumerate() {
            let t = if s.label { 1.0 } else { 0.0 };
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            let dz = (1.0 / (1.0 + (-z).exp()) - t) / n;
            grads[2 * k + 1][0] += dz;
            for c in 0..cl {
                grads[2 * k][c] += dz * trace.pooled[i * cl + c];
                let g = dz * self.params.params[2 * k].data[c] / plane;
                let off = (i * cl + c) * last.h * last.w;
                d_last.data[off..off + last.h * last.w].iter_mut().for_each(|v| *v = g);
            }
        }
        let mut g = d_last;
        let mut cin_of = vec![3usize];
        cin_of.extend(&self.spec.widths[..k - 1]);
        for i in (0..k).rev() {
            let dy = Self::act(i).backward(&g, &trace.pre[i], &trace.post[i]);
            let (mut dw, mut db) = (std::mem::take(&mut grads[2 * i]), std::mem::take(&mut grads[2 * i + 1]));
            g = conv2d_backward(
                &dy,
                &trace.caches[i],
                &self.params.params[2 * i].data,
                &mut dw,
                Some(&mut db),
                geom(cin_of[i], self.spec.widths[i]),
            );
            grads[2 * i] = dw;
            grads[2 * i + 1] = db;
        }
        loss / n
    }
}

/// Covers of `data` and their 8-bit stegos carrying random payloads.
pub fn stego_pairs(weights: &WeightSet<f32>, data: &EvalData, block_size: usize) -> Result<(Vec<RawImage>, Vec<RawImage>)> {
    let hider = hider_for(weights, data, block_size)?;
    let mut covers = Vec::with_capacity(data.ids.len());
    let mut stegos = Vec::with_capacity(data.ids.len());
    for i in 0..data.ids.len() {
        let (cover, raw) = data.cover(i)?;
        let bits = data.payload(0x5354_4547 ^ block_size as u64, i, hider.capacity());
        stegos.push(denormalize(&hider.embed(&cover, &bits)?));
        covers.push(raw.clone());
    }
    Ok((covers, stegos))
}

/// Fraction of samples classified correctly at threshold 0.5.
pub fn detector_accuracy(detector: &Detector, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty test set".into()));
    }
    let images: Vec<&RawImage> = samples.iter().map(|s| &s.image).collect();
    let probs = detector.predict(&images);
    let correct = probs.iter().zip(samples).filter(|(&p, s)| (p > 0.5) == s.label).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains on `split.train`, keeping the epoch with the best validation
/// accuracy.
pub fn train_detector(split: &DetectorSplit, spec: &DetectorSpec) -> Result<Detector> {
    check_balance(&split.train, "training")?;
    let mut det = Detector::new(spec)?;
    let mut adam = Adam::new(&det.params, spec.learning_rate, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xde7e);
    let mut best: Option<(f64, Detector)> = None;
    for epoch in 0..spec.epochs {
        let mut order: Vec<&Sample> = split.train.iter().collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut grads = det.params.zero_grads();
            total += det.loss_and_grads(batch, &mut grads) as f64 * batch.len() as f64;
            adam.update(&mut det.params, &grads);
        }
        let val = if split.validation.is_empty() {
            0.0
        } else {
            detector_accuracy(&det, &split.validation)?
        };
        log::info!(
            "detector epoch {epoch}: train loss {:.4}, validation accuracy {val:.3}",
            total / split.train.len() as f64
        );
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, det.clone()));
        }
    }
    Ok(best.map(|(_, d)| d).unwrap_or(det))
}
