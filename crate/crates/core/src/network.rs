//! Two-input encoder–decoder with skip connections.
//!
//! The two `S×S×3` inputs are concatenated to six channels, halved `log2 S`
//! times by 4×4 stride-2 convolutions down to a 1×1 bottleneck, then doubled
//! back by 4×4 stride-2 transposed convolutions. Every decoder stage except
//! the last is concatenated with the encoder output of matching resolution.
//! The last stage maps to three channels followed by `tanh`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{
    apply_mask, batchnorm_backward, batchnorm_forward_batch_stats, batchnorm_forward_frozen,
    batchnorm_forward_train, conv2d_backward, conv2d_forward, conv_transpose2d_backward,
    conv_transpose2d_forward, dropout_mask, Activation, BatchNormCache, ConvCache, ConvGeom,
    ConvTransposeCache, NormStats, Param, ParamStore, Real, Tensor,
};
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub image_size: usize,
    pub input_channels: usize,
    pub down_channels: Vec<usize>,
    pub up_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub dropout_stages: Vec<usize>,
    pub dropout_rate: f64,
    pub norm_down: Vec<bool>,
    pub norm_up: Vec<bool>,
    pub inference_norm: NormStats,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::with_widths(128, &[64, 128, 256, 512, 512, 512, 512])
    }
}

impl NetworkSpec {
    /// Standard layout for `size` with the given encoder widths; decoder
    /// widths mirror the encoder.
    pub fn with_widths(size: usize, down: &[usize]) -> Self {
        let n = down.len();
        let up: Vec<usize> = down[..n.saturating_sub(1)].iter().rev().copied().collect();
        NetworkSpec {
            image_size: size,
            input_channels: 3,
            down_channels: down.to_vec(),
            dropout_stages: (0..up.len().min(2)).collect(),
            norm_down: (0..n).map(|i| i > 0).collect(),
            norm_up: vec![true; up.len()],
            up_channels: up,
            kernel_size: 4,
            stride: 2,
            dropout_rate: 0.5,
            inference_norm: NormStats::Batch,
        }
    }

    /// Encoder widths doubling from 64 and capped at 512, one stage per halving.
    pub fn for_size(size: usize) -> Self {
        let stages = size.max(1).trailing_zeros() as usize;
        let down: Vec<usize> = (0..stages).map(|i| (64usize << i).min(512)).collect();
        NetworkSpec::with_widths(size, &down)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("network spec: {msg}")));
        let s = self.image_size;
        if s < 2 || !s.is_power_of_two() {
            return fail(format!("image_size {s} must be a power of two"));
        }
        let stages = s.trailing_zeros() as usize;
        if self.down_channels.len() != stages {
            return fail(format!(
                "down_channels has {} stages, log2({s}) = {stages} are needed to reach 1x1",
                self.down_channels.len()
            ));
        }
        if self.up_channels.len() + 1 != stages {
            return fail(format!(
                "up_channels has {} stages, expected {}",
                self.up_channels.len(),
                stages - 1
            ));
        }
        if self.down_channels.iter().chain(&self.up_channels).any(|&c| c == 0) {
            return fail("channel widths must be positive".into());
        }
        if self.input_channels != 3 {
            return fail(format!("input_channels {} must be 3", self.input_channels));
        }
        if self.kernel_size != 4 || self.stride != 2 {
            return fail(format!(
                "kernel {} stride {}: every stage uses kernel 4, stride 2",
                self.kernel_size, self.stride
            ));
        }
        let expected_dropout: Vec<usize> = (0..self.up_channels.len().min(2)).collect();
        if self.dropout_stages != expected_dropout {
            return fail(format!(
                "dropout_stages {:?}: dropout belongs on exactly the first two up stages",
                self.dropout_stages
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.norm_down.len() != stages || self.norm_up.len() != self.up_channels.len() {
            return fail("norm flags must cover every stage".into());
        }
        if self.norm_down[0] || !self.norm_down[1..].iter().all(|&b| b) || !self.norm_up.iter().all(|&b| b) {
            return fail("normalization on every stage except the first down stage".into());
        }
        Ok(())
    }

    /// Canonical `key value` lines; the fingerprint hashes exactly these.
    pub fn to_lines(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let flags = |v: &[bool]| {
            v.iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "spec.image_size {}", self.image_size);
        let _ = writeln!(out, "spec.input_channels {}", self.input_channels);
        let _ = writeln!(out, "spec.down_channels {}", join(&self.down_channels));
        let _ = writeln!(out, "spec.up_channels {}", join(&self.up_channels));
        let _ = writeln!(out, "spec.kernel_size {}", self.kernel_size);
        let _ = writeln!(out, "spec.stride {}", self.stride);
        let _ = writeln!(out, "spec.dropout_stages {}", join(&self.dropout_stages));
        let _ = writeln!(out, "spec.dropout_rate {}", self.dropout_rate);
        let _ = writeln!(out, "spec.norm_down {}", flags(&self.norm_down));
        let _ = writeln!(out, "spec.norm_up {}", flags(&self.norm_up));
        let _ = writeln!(
            out,
            "spec.inference_norm {}",
            match self.inference_norm {
                NormStats::Batch => "batch",
                NormStats::Running => "running",
            }
        );
        out
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_lines().as_bytes());
        hex::encode(&digest[..16])
    }

    /// Spatial size and channel count after each stage, encoder first.
    pub fn stage_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut size = self.image_size;
        for &c in &self.down_channels {
            size /= 2;
            shapes.push((size, c));
        }
        for &c in &self.up_channels {
            size *= 2;
            shapes.push((size, c));
        }
        shapes.push((size * 2, self.input_channels));
        shapes
    }
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Stage {
    geom: ConvGeom,
    transposed: bool,
    weight: usize,
    bias: Option<usize>,
    norm: Option<NormIdx>,
    dropout: bool,
    act: Activation,
}

/// Stage schedule with parameter indices, in parameter-store order.
fn layout(spec: &NetworkSpec) -> (Vec<Stage>, Vec<(String, Vec<usize>, bool)>) {
    let mut params = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, trainable: bool| {
        params.push((name, shape, trainable));
        params.len() - 1
    };
    let k = spec.kernel_size;
    let mut stages = Vec::new();
    let mut push_stage = |prefix: String,
                          geom: ConvGeom,
                          transposed: bool,
                          norm: bool,
                          dropout: bool,
                          act: Activation,
                          add: &mut dyn FnMut(String, Vec<usize>, bool) -> usize| {
        let wshape = if transposed {
            vec![geom.cin, geom.cout, k, k]
        } else {
            vec![geom.cout, geom.cin, k, k]
        };
        let weight = add(format!("{prefix}.weight"), wshape, true);
        let bias = (!norm).then(|| add(format!("{prefix}.bias"), vec![geom.cout], true));
        let norm = norm.then(|| NormIdx {
            gamma: add(format!("{prefix}.bn.gamma"), vec![geom.cout], true),
            beta: add(format!("{prefix}.bn.beta"), vec![geom.cout], true),
            mean: add(format!("{prefix}.bn.running_mean"), vec![geom.cout], false),
            var: add(format!("{prefix}.bn.running_var"), vec![geom.cout], false),
        });
        stages.push(Stage {
            geom,
            transposed,
            weight,
            bias,
            norm,
            dropout,
            act,
        });
    };
    let geom = |cin, cout| ConvGeom {
        cin,
        cout,
        k,
        stride: spec.stride,
        pad: (k - spec.stride) / 2,
    };
    let mut cin = 2 * spec.input_channels;
    for (i, &c) in spec.down_channels.iter().enumerate() {
        push_stage(
            format!("down{i}"),
            geom(cin, c),
            false,
            spec.norm_down[i],
            false,
            Activation::LeakyRelu,
            &mut add,
        );
        cin = c;
    }
    let n = spec.down_channels.len();
    for (i, &c) in spec.up_channels.iter().enumerate() {
        push_stage(
            format!("up{i}"),
            geom(cin, c),
            true,
            spec.norm_up[i],
            spec.dropout_stages.contains(&i),
            Activation::Relu,
            &mut add,
        );
        cin = c + spec.down_channels[n - 2 - i];
    }
    push_stage(
        "final".into(),
        geom(cin, spec.input_channels),
        true,
        false,
        false,
        Activation::Tanh,
        &mut add,
    );
    (stages, params)
}

/// Trained (or freshly initialized) parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    spec: NetworkSpec,
    fingerprint: String,
    pub params: ParamStore<T>,
    stages: Vec<StageSlot>,
}

// `Stage` holds no floats; wrap it so `WeightSet` can derive `PartialEq`.
#[derive(Debug, Clone, Copy)]
struct StageSlot(Stage);

impl PartialEq for StageSlot {
    fn eq(&self, other: &Self) -> bool {
        self.0.weight == other.0.weight && self.0.geom == other.0.geom
    }
}

#[derive(Debug, Clone)]
enum ConvState<T> {
    Conv(ConvCache<T>),
    Transposed(ConvTransposeCache<T>),
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    conv: ConvState<T>,
    bn: Option<BatchNormCache<T>>,
    mask: Option<Vec<T>>,
    pre_act: Tensor<T>,
    out: Tensor<T>,
}

/// Activations saved by [`WeightSet::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stages: Vec<StageCache<T>>,
    a_channels: usize,
}

impl<T: Real> WeightSet<T> {
    /// Fresh weights: kernels ~ N(0, 0.02²); norm scales start at 1, the rest at 0.
    pub fn build(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let (stages, shapes) = layout(spec);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::default();
        for (name, shape, trainable) in shapes {
            let len: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".weight") {
                (0..len).map(|_| T::of(normal.sample(rng))).collect()
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                vec![T::one(); len]
            } else {
                vec![T::zero(); len]
            };
            params.push(Param::new(name, shape, data, trainable));
        }
        Ok(WeightSet {
            fingerprint: spec.fingerprint(),
            spec: spec.clone(),
            params,
            stages: stages.into_iter().map(StageSlot).collect(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Real>(&self) -> WeightSet<U> {
        WeightSet {
            spec: self.spec.clone(),
            fingerprint: self.fingerprint.clone(),
            params: self.params.cast(),
            stages: self.stages.clone(),
        }
    }

    fn check_inputs(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
        let s = self.spec.image_size;
        let c = self.spec.input_channels;
        for (name, t) in [("first", a), ("second", b)] {
            if t.c != c || t.h != s || t.w != s {
                return Err(Error::Shape(format!(
                    "{name} input is {}x{}x{}, network expects {s}x{s}x{c}",
                    t.h, t.w, t.c
                )));
            }
        }
        if a.n != b.n || a.n == 0 {
            return Err(Error::Shape(format!("batch sizes {} and {}", a.n, b.n)));
        }
        Ok(())
    }

    fn p(&self, idx: usize) -> &[T] {
        &self.params.params[idx].data
    }

    fn conv(&self, st: &Stage, x: &Tensor<T>) -> (Tensor<T>, ConvState<T>) {
        let bias = st.bias.map(|i| self.p(i));
        if st.transposed {
            let (y, c) = conv_transpose2d_forward(x, self.p(st.weight), bias, st.geom);
            (y, ConvState::Transposed(c))
        } else {
            let (y, c) = conv2d_forward(x, self.p(st.weight), bias, st.geom);
            (y, ConvState::Conv(c))
        }
    }

    /// Inference pass: dropout off, normalization per `spec.inference_norm`.
    pub fn forward(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(a, b).map(|(y, _)| y)
    }

    /// Inference pass that also reports each stage's output shape `[c, h, w]`.
    pub fn forward_traced(
        &self,
        a: &Tensor<T>,
        b: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<[usize; 3]>)> {
        self.check_inputs(a, b)?;
        let mut trace = Vec::new();
        let y = self.run(Tensor::concat_channels(a, b), |st, x, _| {
            let (mut y, _) = self.conv(st, x);
            if let Some(n) = st.norm {
                let (g, bt) = (self.p(n.gamma), self.p(n.beta));
                y = match self.spec.inference_norm {
                    NormStats::Batch => batchnorm_forward_batch_stats(&y, g, bt),
                    NormStats::Running => {
                        batchnorm_forward_frozen(&y, g, bt, self.p(n.mean), self.p(n.var))
                    }
                };
            }
            let out = st.act.forward(&y);
            trace.push([out.c, out.h, out.w]);
            out
        });
        Ok((y, trace))
    }

    /// Shared stage wiring; `stage_fn` runs one stage and returns its output.
    fn run(
        &self,
        input: Tensor<T>,
        mut stage_fn: impl FnMut(&Stage, &Tensor<T>, usize) -> Tensor<T>,
    ) -> Tensor<T> {
        let n_down = self.spec.down_channels.len();
        let mut downs: Vec<Tensor<T>> = Vec::with_capacity(n_down);
        let mut x = input;
        for (i, slot) in self.stages[..n_down].iter().enumerate() {
            x = stage_fn(&slot.0, &x, i);
            downs.push(x.clone());
        }
        let n_up = self.spec.up_channels.len();
        for (i, slot) in self.stages[n_down..n_down + n_up].iter().enumerate() {
            let out = stage_fn(&slot.0, &x, n_down + i);
            x = Tensor::concat_channels(&out, &downs[n_down - 2 - i]);
        }
        stage_fn(&self.stages[n_down + n_up].0, &x, n_down + n_up)
    }

    /// Training pass: batch statistics (running averages updated), dropout
    /// masks drawn from `rng`. Returns the output and the backward cache.
    pub fn forward_train(
        &mut self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_inputs(a, b)?;
        let rate = self.spec.dropout_rate;
        let mut caches: Vec<StageCache<T>> = Vec::with_capacity(self.stages.len());
        let stages: Vec<Stage> = self.stages.iter().map(|s| s.0).collect();
        let input = Tensor::concat_channels(a, b);
        // Running statistics are written after the pass so `run` can borrow
        // `self` immutably.
        let mut stat_updates: Vec<(usize, usize, Vec<T>, Vec<T>)> = Vec::new();
        let y = self.run(input, |_, x, idx| {
            let st = &stages[idx];
            let (y, conv) = self.conv(st, x);
            let (y, bn) = match st.norm {
                Some(n) => {
                    let mut rm = self.p(n.mean).to_vec();
                    let mut rv = self.p(n.var).to_vec();
                    let (y, cache) =
                        batchnorm_forward_train(&y, self.p(n.gamma), self.p(n.beta), &mut rm, &mut rv);
                    stat_updates.push((n.mean, n.var, rm, rv));
                    (y, Some(cache))
                }
                None => (y, None),
            };
            let (pre_act, mask) = if st.dropout && rate > 0.0 {
                let mask = dropout_mask::<T, _>(y.len(), rate, rng);
                (apply_mask(&y, &mask), Some(mask))
            } else {
                (y, None)
            };
            let out = st.act.forward(&pre_act);
            caches.push(StageCache {
                conv,
                bn,
                mask,
                pre_act,
                out: out.clone(),
            });
            out
        });
        for (mi, vi, rm, rv) in stat_updates {
            self.params.params[mi].data = rm;
            self.params.params[vi].data = rv;
        }
        Ok((
            y,
            ForwardCache {
                stages: caches,
                a_channels: a.c,
            },
        ))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output) through a
    /// cached pass, accumulating parameter gradients into `grads`. Returns the
    /// gradients with respect to both inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_out: &Tensor<T>,
        grads: &mut [Vec<T>],
    ) -> (Tensor<T>, Tensor<T>) {
        let n_down = self.spec.down_channels.len();
        let n_up = self.spec.up_channels.len();
        let mut d_down: Vec<Option<Tensor<T>>> = vec![None; n_down];
        let add_to = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        };

        // Final stage, then decoder stages in reverse.
        let mut g = d_out.clone();
        for idx in (n_down..n_down + n_up + 1).rev() {
            let d_in = self.stage_backward(idx, &cache.stages[idx], &g, grads);
            let up_i = idx - n_down;
            if up_i == 0 {
                add_to(&mut d_down[n_down - 1], d_in);
                break;
            }
            // Input of decoder stage `up_i` is [out of stage up_i-1 | skip].
            let prev_c = self.spec.up_channels[up_i - 1];
            let (d_prev, d_skip) = d_in.split_channels(prev_c);
            add_to(&mut d_down[n_down - 1 - up_i], d_skip);
            g = d_prev;
        }
        for idx in (0..n_down).rev() {
            let g = d_down[idx].take().expect("every encoder output receives gradient");
            let d_in = self.stage_backward(idx, &cache.stages[idx], &g, grads);
            if idx == 0 {
                return d_in.split_channels(cache.a_channels);
            }
            add_to(&mut d_down[idx - 1], d_in);
        }
        unreachable!("encoder has at least one stage")
    }

    fn stage_backward(
        &self,
        idx: usize,
        c: &StageCache<T>,
        d_out: &Tensor<T>,
        grads: &mut [Vec<T>],
    ) -> Tensor<T> {
        let st = self.stages[idx].0;
        let mut g = st.act.backward(d_out, &c.pre_act, &c.out);
        if let Some(mask) = &c.mask {
            g = apply_mask(&g, mask);
        }
        if let (Some(n), Some(bn)) = (st.norm, &c.bn) {
            let (mut dg, mut db) = (
                std::mem::take(&mut grads[n.gamma]),
                std::mem::take(&mut grads[n.beta]),
            );
            g = batchnorm_backward(&g, bn, self.p(n.gamma), &mut dg, &mut db);
            grads[n.gamma] = dg;
            grads[n.beta] = db;
        }
        let mut dw = std::mem::take(&mut grads[st.weight]);
        let mut db = st.bias.map(|i| std::mem::take(&mut grads[i]));
        let d_in = match &c.conv {
            ConvState::Conv(cc) => {
                conv2d_backward(&g, cc, self.p(st.weight), &mut dw, db.as_deref_mut(), st.geom)
            }
            ConvState::Transposed(cc) => conv_transpose2d_backward(
                &g,
                cc,
                self.p(st.weight),
                &mut dw,
                db.as_deref_mut(),
                st.geom,
            ),
        };
        grads[st.weight] = dw;
        if let (Some(i), Some(db)) = (st.bias, db) {
            grads[i] = db;
        }
        d_in
    }

    /// Writes `manifest.txt` and `weights.bin` into directory `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let mut blob = Vec::new();
        for p in &self.params.params {
            for &v in &p.data {
                v.write_le(&mut blob);
            }
        }
        let mut manifest = String::new();
        let _ = writeln!(manifest, "format {CHECKPOINT_FORMAT}");
        let _ = writeln!(manifest, "fingerprint {}", self.fingerprint);
        let _ = writeln!(manifest, "dtype {}", T::DTYPE);
        let _ = writeln!(manifest, "created_by hdh-core {}", env!("CARGO_PKG_VERSION"));
        manifest.push_str(&self.spec.to_lines());
        for p in &self.params.params {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                manifest,
                "param {} {} {}",
                p.name,
                dims.join(","),
                if p.trainable { "trainable" } else { "frozen" }
            );
        }
        let _ = writeln!(manifest, "blob_sha256 {}", hex::encode(Sha256::digest(&blob)));
        let weights_path = path.join(WEIGHTS_FILE);
        std::fs::write(&weights_path, &blob).map_err(|e| Error::io(&weights_path, e))?;
        let manifest_path = path.join(MANIFEST_FILE);
        std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(())
    }

    /// Reads a checkpoint directory and verifies it against its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = path.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let weights_path = path.join(WEIGHTS_FILE);
        let blob = std::fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        Self::from_parts(&text, &blob)
    }

    /// Loads and additionally requires the stored spec to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &NetworkSpec) -> Result<Self> {
        let w = Self::load(path)?;
        if w.fingerprint != expected.fingerprint() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint fingerprint {} does not match configured network {}",
                w.fingerprint,
                expected.fingerprint()
            )));
        }
        Ok(w)
    }

    /// Parses an in-memory manifest and weight blob.
    pub fn from_parts(manifest: &str, blob: &[u8]) -> Result<Self> {
        let parsed = CheckpointManifest::parse(manifest)?;
        let spec = parsed.spec;
        let actual = spec.fingerprint();
        if parsed.fingerprint != actual {
            return Err(Error::IncompatibleCheckpoint(format!(
                "stored fingerprint {} but manifest spec hashes to {actual}",
                parsed.fingerprint
            )));
        }
        spec.validate()
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let (stages, shapes) = layout(&spec);
        if shapes.len() != parsed.params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} parameter tensors listed, architecture has {}",
                parsed.params.len(),
                shapes.len()
            )));
        }
        let elem = match parsed.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::CorruptCheckpoint(format!("unknown dtype {other}"))),
        };
        let total: usize = shapes.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        if blob.len() != total * elem {
            return Err(Error::CorruptCheckpoint(format!(
                "weight blob has {} bytes, expected {}",
                blob.len(),
                total * elem
            )));
        }
        if hex::encode(Sha256::digest(blob)) != parsed.blob_sha256 {
            return Err(Error::CorruptCheckpoint("weight blob checksum mismatch".into()));
        }
        let mut params = ParamStore::default();
        let mut offset = 0;
        for ((name, shape, trainable), listed) in shapes.into_iter().zip(&parsed.params) {
            if listed.0 != name || listed.1 != shape || listed.2 != trainable {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "parameter {} {:?} does not match architecture entry {name} {shape:?}",
                    listed.0, listed.1
                )));
            }
            let len: usize = shape.iter().product();
            let data = blob[offset..offset + len * elem]
                .chunks_exact(elem)
                .map(|c| {
                    if elem == 4 {
                        T::of(f32::read_le(c) as f64)
                    } else {
                        T::of(f64::read_le(c))
                    }
                })
                .collect();
            offset += len * elem;
            params.push(Param::new(name, shape, data, trainable));
        }
        Ok(WeightSet {
            fingerprint: actual,
            spec,
            params,
            stages: stages.into_iter().map(StageSlot).collect(),
        })
    }
}

pub const CHECKPOINT_FORMAT: &str = "hdh-checkpoint-1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";

struct CheckpointManifest {
    fingerprint: String,
    dtype: String,
    spec: NetworkSpec,
    params: Vec<(String, Vec<usize>, bool)>,
    blob_sha256: String,
}

impl CheckpointManifest {
    fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::CorruptCheckpoint(format!("manifest: {msg}"));
        let list = |v: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| x.parse::<usize>().map_err(|e| bad(format!("{v}: {e}"))))
                .collect()
        };
        let flags = |v: &str| -> Result<Vec<bool>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| match x {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(bad(format!("bad flag {x}"))),
                })
                .collect()
        };
        let num = |v: &str| -> Result<usize> { v.parse().map_err(|e| bad(format!("{v}: {e}"))) };

        let mut fields = std::collections::HashMap::new();
        let mut params = Vec::new();
        let mut format_seen = false;
        for line in text.lines() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "format" => {
                    if value != CHECKPOINT_FORMAT {
                        return Err(Error::IncompatibleCheckpoint(format!("format {value}")));
                    }
                    format_seen = true;
                }
                "param" => {
                    let parts: Vec<&str> = value.split(' ').collect();
                    let [name, dims, kind] = parts[..] else {
                        return Err(bad(format!("param line '{value}'")));
                    };
                    let trainable = match kind {
                        "trainable" => true,
                        "frozen" => false,
                        _ => return Err(bad(format!("param kind {kind}"))),
                    };
                    params.push((name.to_string(), list(dims)?, trainable));
                }
                "created_by" => {}
                _ => {
                    if fields.insert(key.to_string(), value.to_string()).is_some() {
                        return Err(bad(format!("duplicate key {key}")));
                    }
                }
            }
        }
        if !format_seen {
            return Err(bad("missing format line".into()));
        }
        let mut take = |k: &str| fields.remove(k).ok_or_else(|| bad(format!("missing {k}")));
        let dropout_rate: f64 = take("spec.dropout_rate")?
            .parse()
            .map_err(|e| bad(format!("dropout_rate: {e}")))?;
        let spec = NetworkSpec {
            image_size: num(&take("spec.image_size")?)?,
            input_channels: num(&take("spec.input_channels")?)?,
            down_channels: list(&take("spec.down_channels")?)?,
            up_channels: list(&take("spec.up_channels")?)?,
            kernel_size: num(&take("spec.kernel_size")?)?,
            stride: num(&take("spec.stride")?)?,
            dropout_stages: list(&take("spec.dropout_stages")?)?,
            dropout_rate,
            norm_down: flags(&take("spec.norm_down")?)?,
            norm_up: flags(&take("spec.norm_up")?)?,
            inference_norm: match take("spec.inference_norm")?.as_str() {
                "batch" => NormStats::Batch,
                "running" => NormStats::Running,
                other => return Err(bad(format!("inference_norm {other}"))),
            },
        };
        let manifest = CheckpointManifest {
            fingerprint: take("fingerprint")?,
            dtype: take("dtype")?,
            spec,
            params,
            blob_sha256: take("blob_sha256")?,
        };
        if let Some(k) = fields.keys().next() {
            return Err(bad(format!("unknown key {k}")));
        }
        Ok(manifest)
    }
}

/// Additive Gaussian noise, used as the robustness channel.
pub fn add_gaussian_noise<T: Real>(x: &Tensor<T>, sigma: f64, rng: &mut impl Rng) -> Tensor<T> {
    if sigma == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    x.with_data(x.data.iter().map(|&v| v + T::of(normal.sample(rng))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mini() -> NetworkSpec {
        NetworkSpec::with_widths(16, &[4, 4, 4, 4])
    }

    fn inputs(size: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = || {
            Tensor::from_vec(
                1,
                3,
                size,
                size,
                (0..3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        };
        (gen(), gen())
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = NetworkSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.up_channels, vec![512, 512, 512, 256, 128, 64]);
        assert_eq!(NetworkSpec::for_size(128), spec);
        assert_eq!(NetworkSpec::for_size(256).down_channels.len(), 8);
    }

    #[test]
    fn spec_violations_are_named() {
        let mut s = NetworkSpec::default();
        s.down_channels.pop();
        assert!(s.validate().unwrap_err().to_string().contains("down_channels"));
        let mut s = NetworkSpec::default();
        s.kernel_size = 3;
        assert!(s.validate().unwrap_err().to_string().contains("kernel"));
        let mut s = NetworkSpec::default();
        s.dropout_stages = vec![0, 1, 2];
        assert!(s.validate().unwrap_err().to_string().contains("dropout"));
        let mut s = NetworkSpec::default();
        s.norm_down[0] = true;
        assert!(s.validate().unwrap_err().to_string().contains("normalization"));
        let s = NetworkSpec::with_widths(96, &[8; 6]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn mini_shapes_and_bounds() {
        let w = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (a, b) = inputs(16, 2);
        let (y, trace) = w.forward_traced(&a, &b).unwrap();
        let sizes: Vec<usize> = trace.iter().map(|s| s[1]).collect();
        assert_eq!(sizes, vec![8, 4, 2, 1, 2, 4, 8, 16]);
        assert_eq!(y.shape(), [1, 3, 16, 16]);
        assert!(y.data.iter().all(|v| v.abs() < 1.0));
        assert_eq!(w.forward(&a, &b).unwrap(), y);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let w = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (a, _) = inputs(16, 2);
        let (b, _) = inputs(8, 3);
        assert!(matches!(w.forward(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        w.save(dir.path()).unwrap();
        let back = WeightSet::<f32>::load(dir.path()).unwrap();
        let (a, b) = inputs(16, 5);
        assert_eq!(w.forward(&a, &b).unwrap(), back.forward(&a, &b).unwrap());
        assert_eq!(back.params, w.params);

        let other = NetworkSpec::with_widths(16, &[4, 4, 4, 8]);
        assert!(matches!(
            WeightSet::<f32>::load_expecting(dir.path(), &other),
            Err(Error::IncompatibleCheckpoint(_))
        ));

        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let edited = manifest.replace("spec.down_channels 4,4,4,4", "spec.down_channels 4,4,4,5");
        std::fs::write(dir.path().join(MANIFEST_FILE), edited).unwrap();
        assert!(matches!(
            WeightSet::<f32>::load(dir.path()),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightSet::<f32>::build(&mini(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        w.save(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let blob = std::fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
        assert!(WeightSet::<f32>::from_parts(&manifest, &blob[..blob.len() - 4]).is_err());
        let mut flipped = blob.clone();
        flipped[0] ^= 1;
        assert!(matches!(
            WeightSet::<f32>::from_parts(&manifest, &flipped),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn train_and_inference_agree_without_dropout_at_batch_stats() {
        let mut spec = mini();
        spec.dropout_rate = 0.0;
        let mut w = WeightSet::<f64>::build(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (a, b) = inputs(16, 6);
        let (a, b) = (a.cast::<f64>(), b.cast::<f64>());
        let infer = w.forward(&a, &b).unwrap();
        let (train, _) = w
            .forward_train(&a, &b, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        for (x, y) in infer.data.iter().zip(&train.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_with_zero_sigma_is_identity() {
        let (a, _) = inputs(4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_gaussian_noise(&a, 0.0, &mut rng), a);
        assert_ne!(add_gaussian_noise(&a, 0.1, &mut rng), a);
    }
}
