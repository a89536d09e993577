//! Joint training of the style-transfer and hiding tasks.
//!
//! Every step runs three passes through one network, `z = F(x, y)`,
//! `s = F(c, m)` and `m̂ = F(noise(s), r)`, then applies one Adam update to
//! the weighted sum of their losses. Randomness for step `k` (payload bits, noise
//! level, noise samples, dropout masks) comes from a generator seeded by
//! `(seed, k)`, so a resumed run needs only the step counter.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::eval::{hiding_quality, EvalData};
use crate::image_model::{Dataset, ImageTensor};
use crate::losses::{distance, distance_grad, LossConfig};
use crate::message::{actual_length, encode_plane, BitString, BitSymbols};
use crate::network::{add_gaussian_noise, NetworkSpec, WeightSet};
use crate::nn::{Adam, Real, Tensor};
use crate::style::StyleGroundTruthSource;
use crate::{Error, Result};

pub use crate::hider::make_trigger;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub block_size: usize,
    pub loss: LossConfig,
    /// Noise levels for the extraction input; empty disables noise.
    pub noise_sigmas: Vec<f64>,
    pub seed: u64,
    /// Steps between saved training states; 0 saves none.
    pub checkpoint_interval: u64,
    /// Validation images scored per epoch; 0 scores the whole split.
    pub validation_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 1,
            epochs: 1,
            block_size: 8,
            loss: LossConfig::default(),
            noise_sigmas: Vec::new(),
            seed: 0,
            checkpoint_interval: 0,
            validation_images: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("{name} {b} must lie in (0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if image_size % self.block_size.max(1) != 0 || self.block_size == 0 {
            return fail(format!(
                "block_size N={} must divide image_size {image_size}",
                self.block_size
            ));
        }
        if let Some(s) = self.noise_sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return fail(format!("noise sigma {s} must be >= 0"));
        }
        self.loss.validate()
    }

    /// Digest of every field; a saved state only resumes under the same one.
    pub fn digest(&self) -> String {
        hex::encode(&Sha256::digest(format!("{self:?}").as_bytes())[..8])
    }
}

/// Loss terms of one step: `total = style + α₂ (fidelity + α₁ extraction)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub style: f64,
    pub fidelity: f64,
    pub extraction: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [self.style, self.fidelity, self.extraction, self.total].iter().all(|v| v.is_finite())
    }
}

/// Network inputs and targets of one step.
#[derive(Debug, Clone)]
pub struct StepInputs<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
    pub z_g: Tensor<T>,
    pub c: Tensor<T>,
    pub m: Tensor<T>,
    pub r: Tensor<T>,
    /// Standard deviation of the noise on the extraction input.
    pub sigma: f64,
}

/// Evaluates the joint loss and, when `grads` is given, accumulates its
/// gradient. Dropout masks and noise are drawn from `rng` in a fixed order.
pub fn joint_objective<T: Real>(
    w: &mut WeightSet<T>,
    inp: &StepInputs<T>,
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
    grads: Option<&mut [Vec<T>]>,
) -> Result<LossBreakdown> {
    let (z, cache_z) = w.forward_train(&inp.x, &inp.y, rng)?;
    let (s, cache_s) = w.forward_train(&inp.c, &inp.m, rng)?;
    let s_in = if inp.sigma > 0.0 {
        add_gaussian_noise(&s, inp.sigma, rng)
    } else {
        s.clone()
    };
    let (m_hat, cache_e) = w.forward_train(&s_in, &inp.r, rng)?;

    let style = distance(&z, &inp.z_g, cfg.norm).as_f64();
    let fidelity = distance(&s, &inp.c, cfg.norm).as_f64();
    let extraction = distance(&m_hat, &inp.m, cfg.norm).as_f64();
    let out = LossBreakdown {
        style,
        fidelity,
        extraction,
        total: style + cfg.alpha2 * (fidelity + cfg.alpha1 * extraction),
    };

    if let Some(grads) = grads {
        let d_z = distance_grad(&z, &inp.z_g, cfg.norm, 1.0);
        w.backward(&cache_z, &d_z, grads);
        let d_mhat = distance_grad(&m_hat, &inp.m, cfg.norm, cfg.alpha2 * cfg.alpha1);
        let (d_s_in, _) = w.backward(&cache_e, &d_mhat, grads);
        // Noise is additive, so it passes the gradient through unchanged.
        let mut d_s = distance_grad(&s, &inp.c, cfg.norm, cfg.alpha2);
        d_s.add_assign(&d_s_in);
        w.backward(&cache_s, &d_s, grads);
    }
    Ok(out)
}

/// Generator for step `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One training batch: style pairs `(x, z_g)` and covers `c`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Vec<ImageTensor>,
    pub z_g: Vec<ImageTensor>,
    pub c: Vec<ImageTensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningLoss {
    pub sum: LossBreakdown,
    pub count: u64,
}

impl RunningLoss {
    fn add(&mut self, l: &LossBreakdown) {
        self.sum.style += l.style;
        self.sum.fidelity += l.fidelity;
        self.sum.extraction += l.extraction;
        self.sum.total += l.total;
        self.count += 1;
    }

    pub fn mean(&self) -> LossBreakdown {
        let n = self.count.max(1) as f64;
        LossBreakdown {
            style: self.sum.style / n,
            fidelity: self.sum.fidelity / n,
            extraction: self.sum.extraction / n,
            total: self.sum.total / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestWeights {
    pub weights: WeightSet<f32>,
    pub epoch: usize,
    pub val_ber: f64,
    pub val_psnr: f64,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub weights: WeightSet<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    /// Loss means over the current epoch.
    pub running: RunningLoss,
    pub best: Option<BestWeights>,
    pub config_digest: String,
}

impl TrainState {
    pub fn new(spec: &NetworkSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(spec.image_size)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(u64::MAX);
        let weights = WeightSet::build(spec, &mut init_rng)?;
        let adam = Adam::new(&weights.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        Ok(TrainState {
            weights,
            adam,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            running: RunningLoss::default(),
            best: None,
            config_digest: cfg.digest(),
        })
    }

    /// Writes the state directory read back by [`TrainState::load`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.weights.save(&dir.join("weights"))?;
        let mut blob = Vec::new();
        for moment in self.adam.m.iter().chain(&self.adam.v) {
            for &v in moment {
                v.write_le(&mut blob);
            }
        }
        let opt_path = dir.join("optimizer.bin");
        std::fs::write(&opt_path, &blob).map_err(|e| Error::io(&opt_path, e))?;
        let mut text = String::from("format hdh-train-state-1\n");
        let r = &self.running;
        let _ = write!(
            text,
            "config {}\nstep {}\nepoch {}\nbatch_in_epoch {}\nadam_step {}\n\
             running_style {:?}\nrunning_fidelity {:?}\nrunning_extraction {:?}\nrunning_total {:?}\nrunning_count {}\n",
            self.config_digest,
            self.step,
            self.epoch,
            self.batch_in_epoch,
            self.adam.step,
            r.sum.style,
            r.sum.fidelity,
            r.sum.extraction,
            r.sum.total,
            r.count
        );
        if let Some(b) = &self.best {
            b.weights.save(&dir.join("best"))?;
            let _ = write!(text, "best_epoch {}\nbest_ber {:?}\nbest_psnr {:?}\n", b.epoch, b.val_ber, b.val_psnr);
        }
        let state_path = dir.join("state.txt");
        std::fs::write(&state_path, text).map_err(|e| Error::io(&state_path, e))
    }

    pub fn load(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptCheckpoint(format!("{}: {msg}", dir.display()));
        let state_path = dir.join("state.txt");
        let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let mut kv = std::collections::BTreeMap::new();
        let mut lines = text.lines();
        if lines.next() != Some("format hdh-train-state-1") {
            return Err(corrupt("unknown training-state format".into()));
        }
        for line in lines {
            let (k, v) = line.split_once(' ').ok_or_else(|| corrupt(format!("bad line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| corrupt(format!("missing {k}")));
        fn num<V: std::str::FromStr>(s: &str, k: &str, dir: &Path) -> Result<V> {
            s.parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("{}: bad {k} {s:?}", dir.display())))
        }
        let digest = get("config")?.clone();
        if digest != cfg.digest() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "training state was written under config {digest}, current config is {}",
                cfg.digest()
            )));
        }
        let weights = WeightSet::<f32>::load(&dir.join("weights"))?;
        let mut adam = Adam::new(&weights.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        adam.step = num(get("adam_step")?, "adam_step", dir)?;
        let opt_path = dir.join("optimizer.bin");
        let blob = std::fs::read(&opt_path).map_err(|e| Error::io(&opt_path, e))?;
        let total: usize = adam.m.iter().map(|m| m.len()).sum::<usize>() * 2;
        if blob.len() != total * 4 {
            return Err(corrupt(format!("optimizer.bin has {} bytes, expected {}", blob.len(), total * 4)));
        }
        let mut chunks = blob.chunks_exact(4);
        for moment in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            for v in moment.iter_mut() {
                *v = f32::read_le(chunks.next().expect("length checked"));
            }
        }
        let running = RunningLoss {
            sum: LossBreakdown {
                style: num(get("running_style")?, "running_style", dir)?,
                fidelity: num(get("running_fidelity")?, "running_fidelity", dir)?,
                extraction: num(get("running_extraction")?, "running_extraction", dir)?,
                total: num(get("running_total")?, "running_total", dir)?,
            },
            count: num(get("running_count")?, "running_count", dir)?,
        };
        let best = match kv.get("best_epoch") {
            Some(e) => Some(BestWeights {
                weights: WeightSet::load(&dir.join("best"))?,
                epoch: num(e, "best_epoch", dir)?,
                val_ber: num(get("best_ber")?, "best_ber", dir)?,
                val_psnr: num(get("best_psnr")?, "best_psnr", dir)?,
            }),
            None => None,
        };
        Ok(TrainState {
            weights,
            adam,
            step: num(get("step")?, "step", dir)?,
            epoch: num(get("epoch")?, "epoch", dir)?,
            batch_in_epoch: num(get("batch_in_epoch")?, "batch_in_epoch", dir)?,
            running,
            best,
            config_digest: digest,
        })
    }
}

/// Runs the three passes for `batch` and applies one update. On a non-finite
/// loss the state is left untouched and the error carries the loss terms.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    style_image: &ImageTensor,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() || batch.z_g.len() != batch.len() || batch.c.len() != batch.len() {
        return Err(Error::InvalidArgument("batch needs equally many x, z_g and c".into()));
    }
    let size = state.weights.spec().image_size;
    let al = actual_length(size, cfg.block_size)?;
    let mut rng = step_rng(cfg.seed, state.step);
    let planes: Vec<ImageTensor> = (0..batch.len())
        .map(|_| {
            let bits = BitString::random(al, &mut rng);
            encode_plane(&bits, size, cfg.block_size, BitSymbols::Signed).map(|p| p.tensor)
        })
        .collect::<Result<_>>()?;
    let sigma = if cfg.noise_sigmas.is_empty() {
        0.0
    } else {
        cfg.noise_sigmas[rng.random_range(0..cfg.noise_sigmas.len())]
    };
    let trigger = make_trigger(size).tensor;
    let refs = |v: &[ImageTensor]| -> Tensor<f32> { ImageTensor::batch(&v.iter().collect::<Vec<_>>()) };
    let repeated = |t: &ImageTensor| -> Tensor<f32> { ImageTensor::batch(&vec![t; batch.len()]) };
    let inputs = StepInputs {
        x: refs(&batch.x),
        y: repeated(style_image),
        z_g: refs(&batch.z_g),
        c: refs(&batch.c),
        m: refs(&planes),
        r: repeated(&trigger),
        sigma,
    };

    let mut trial = state.weights.clone();
    let mut grads = trial.params.zero_grads();
    let losses = joint_objective(&mut trial, &inputs, &cfg.loss, &mut rng, Some(&mut grads))?;
    let grads_finite = grads.iter().flatten().all(|g| g.is_finite());
    if !losses.is_finite() || !grads_finite {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            detail: format!(
                "style {} fidelity {} extraction {} total {} (gradients finite: {grads_finite})",
                losses.style, losses.fidelity, losses.extraction, losses.total
            ),
        });
    }
    state.adam.update(&mut trial.params, &grads);
    state.weights = trial;
    state.step += 1;
    state.running.add(&losses);
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub losses: LossBreakdown,
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "step,L_style,L_fidelity,L_extract,L_total,wall_time";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.3}",
            self.step, l.style, l.fidelity, l.extraction, l.total, self.wall_time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub epoch: usize,
    pub step: u64,
    pub ber: f64,
    pub stego_psnr: f64,
}

/// Inputs to [`train`] and [`resume`].
#[derive(Debug, Clone, Copy)]
pub struct TrainRun<'a> {
    pub dataset: &'a Dataset,
    pub source: &'a StyleGroundTruthSource,
    pub network: &'a NetworkSpec,
    pub config: &'a TrainConfig,
    /// Receives the CSV logs and every saved state.
    pub out_dir: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation weights, or the final weights when no epoch finished.
    pub best: WeightSet<f32>,
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub validation: Vec<ValidationRow>,
}

pub fn train(run: &TrainRun) -> Result<TrainOutcome> {
    resume(run, TrainState::new(run.network, run.config)?, None)
}

fn epoch_order(ids: &[String], seed: u64, epoch: usize, salt: u64) -> Vec<String> {
    let mut order = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(line);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Continues `state` to the configured epoch count. `stop_after` ends the run
/// early once the step counter reaches it.
pub fn resume(run: &TrainRun, mut state: TrainState, stop_after: Option<u64>) -> Result<TrainOutcome> {
    let cfg = run.config;
    let spec = run.network;
    cfg.validate(spec.image_size)?;
    if run.dataset.size != spec.image_size || run.source.size() != spec.image_size {
        return Err(Error::Config(format!(
            "dataset ({0}), style source ({1}) and network ({2}) sizes differ",
            run.dataset.size,
            run.source.size(),
            spec.image_size
        )));
    }
    if state.config_digest != cfg.digest() {
        return Err(Error::IncompatibleCheckpoint("training state belongs to a different config".into()));
    }
    let train_ids = &run.dataset.split.train;
    if cfg.epochs > 0 && train_ids.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    run.source.check_complete(train_ids)?;
    let mut val_ids = run.dataset.split.validation.clone();
    if cfg.validation_images > 0 {
        val_ids.truncate(cfg.validation_images);
    }
    if let Some(dir) = run.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let start = Instant::now();
    let batches_per_epoch = train_ids.len().div_ceil(cfg.batch_size);
    let mut log = Vec::new();
    let mut validation = Vec::new();
    while state.epoch < cfg.epochs {
        let xs = epoch_order(train_ids, cfg.seed, state.epoch, 0x5859);
        let cs = epoch_order(train_ids, cfg.seed, state.epoch, 0x4353);
        while state.batch_in_epoch < batches_per_epoch {
            if stop_after.is_some_and(|s| state.step >= s) {
                return Ok(finish(state, log, validation));
            }
            let lo = state.batch_in_epoch * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(train_ids.len());
            let mut batch = Batch {
                x: Vec::new(),
                z_g: Vec::new(),
                c: Vec::new(),
            };
            for k in lo..hi {
                let x = run.dataset.tensor(&xs[k])?;
                batch.z_g.push(run.source.ground_truth_for(&xs[k], &x)?);
                batch.x.push(x);
                batch.c.push(run.dataset.tensor(&cs[k])?);
            }
            let losses = match train_step(&mut state, &batch, &run.source.style_image, cfg) {
                Ok(l) => l,
                Err(e) => {
                    if let (Some(dir), Error::NonFiniteLoss { .. }) = (run.out_dir, &e) {
                        state.save(&dir.join("abort_snapshot"))?;
                    }
                    return Err(e);
                }
            };
            state.batch_in_epoch += 1;
            let row = LogRow {
                step: state.step,
                losses,
                wall_time: start.elapsed().as_secs_f64(),
            };
            if let Some(dir) = run.out_dir {
                append_line(&dir.join("train_log.csv"), LOG_HEADER, &row.to_csv())?;
            }
            log.push(row);
            if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
                if let Some(dir) = run.out_dir {
                    state.save(&dir.join("checkpoints").join(format!("step_{:08}", state.step)))?;
                }
            }
        }

        let data = EvalData {
            dataset: run.dataset,
            ids: &val_ids,
            source: run.source,
            seed: cfg.seed,
        };
        let row = if val_ids.is_empty() {
            ValidationRow {
                epoch: state.epoch,
                step: state.step,
                ber: f64::NAN,
                stego_psnr: f64::NAN,
            }
        } else {
            let (psnr, ber) = hiding_quality(&state.weights, &data, cfg.block_size)?;
            ValidationRow {
                epoch: state.epoch,
                step: state.step,
                ber,
                stego_psnr: psnr,
            }
        };
        let better = match &state.best {
            None => true,
            Some(b) => row.ber < b.val_ber || (row.ber == b.val_ber && row.stego_psnr > b.val_psnr),
        };
        if better || row.ber.is_nan() {
            state.best = Some(BestWeights {
                weights: state.weights.clone(),
                epoch: state.epoch,
                val_ber: row.ber,
                val_psnr: row.stego_psnr,
            });
        }
        if let Some(dir) = run.out_dir {
            let mean = state.running.mean();
            append_line(
                &dir.join("validation.csv"),
                "epoch,step,val_ber,val_stego_psnr,mean_L_total",
                &format!("{},{},{:.6},{:.4},{:.8}", row.epoch, row.step, row.ber, row.stego_psnr, mean.total),
            )?;
        }
        log::info!(
            "epoch {} step {}: val BER {:.5}, stego PSNR {:.2} dB",
            row.epoch,
            row.step,
            row.ber,
            row.stego_psnr
        );
        validation.push(row);
        state.epoch += 1;
        state.batch_in_epoch = 0;
        state.running = RunningLoss::default();
    }
    let outcome = finish(state, log, validation);
    if let Some(dir) = run.out_dir {
        outcome.state.save(&dir.join("final"))?;
        outcome.best.save(&dir.join("best"))?;
    }
    Ok(outcome)
}

fn finish(state: TrainState, log: Vec<LogRow>, validation: Vec<ValidationRow>) -> TrainOutcome {
    let best = state
        .best
        .as_ref()
        .map(|b| b.weights.clone())
        .unwrap_or_else(|| state.weights.clone());
    TrainOutcome {
        best,
        state,
        log,
        validation,
    }
}
