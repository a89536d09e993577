//! Image representations and dataset ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Real, Tensor};
use crate::{Error, Result};

pub const CHANNELS: usize = 3;

/// 8-bit RGB image, row-major interleaved (`HWC`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != CHANNELS {
            return Err(Error::MalformedImage(format!(
                "expected {CHANNELS} channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * CHANNELS {
            return Err(Error::MalformedImage(format!(
                "{width}x{height} image with {} samples",
                pixels.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RawImage {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        match img {
            image::DynamicImage::ImageRgb8(rgb) => {
                let (w, h) = rgb.dimensions();
                RawImage::new(w as usize, h as usize, CHANNELS, rgb.into_raw())
            }
            other => Err(Error::MalformedImage(format!(
                "{}: unsupported color type {:?} (RGB8 required)",
                path.display(),
                other.color()
            ))),
        }
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        match img {
            image::DynamicImage::ImageRgb8(rgb) => {
                let (w, h) = rgb.dimensions();
                RawImage::new(w as usize, h as usize, CHANNELS, rgb.into_raw())
            }
            other => Err(Error::MalformedImage(format!(
                "unsupported color type {:?}",
                other.color()
            ))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    /// Bilinear resize to `size × size`.
    pub fn resize(&self, size: usize) -> RawImage {
        if self.width == size && self.height == size {
            return self.clone();
        }
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("dimensions validated at construction");
        let out = image::imageops::resize(&buf, size as u32, size as u32, FilterType::Triangle);
        RawImage {
            width: size,
            height: size,
            pixels: out.into_raw(),
        }
    }
}

/// Square image in the normalized domain `[-1, 1]`, stored planar (`CHW`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    size: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ImageTensor {
    /// Builds a tensor, rejecting values outside `[-1, 1]`.
    pub fn new(size: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != size * size * channels {
            return Err(Error::Shape(format!(
                "{} values for a {size}x{size}x{channels} tensor",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::MalformedImage(format!("value {v} outside [-1, 1]")));
        }
        Ok(ImageTensor {
            size,
            channels,
            values,
        })
    }

    /// Builds a tensor, clamping into `[-1, 1]` (non-finite values become 0).
    pub fn clamped(size: usize, channels: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), size * size * channels, "tensor length");
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        ImageTensor {
            size,
            channels,
            values,
        }
    }

    pub fn constant(size: usize, value: f32) -> Self {
        ImageTensor::clamped(size, CHANNELS, vec![value; size * size * CHANNELS])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(c * self.size + y) * self.size + x]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            1,
            self.channels,
            self.size,
            self.size,
            self.values.iter().map(|&v| T::of(v as f64)).collect(),
        )
    }

    /// Stacks images into one batch tensor.
    pub fn batch<T: Real>(images: &[&ImageTensor]) -> Tensor<T> {
        let first = images.first().expect("non-empty batch");
        let mut data = Vec::with_capacity(images.len() * first.values.len());
        for img in images {
            assert_eq!((img.size, img.channels), (first.size, first.channels));
            data.extend(img.values.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::from_vec(images.len(), first.channels, first.size, first.size, data)
    }

    /// Item `i` of a batch tensor, clamped into range.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, i: usize) -> ImageTensor {
        assert_eq!(t.h, t.w, "square tensor");
        ImageTensor::clamped(
            t.h,
            t.c,
            t.item(i).iter().map(|&v| v.as_f64() as f32).collect(),
        )
    }
}

/// `v ↦ v/127.5 − 1`, resizing is not performed: the raw image must be square.
pub fn normalize(raw: &RawImage) -> Result<ImageTensor> {
    if raw.width != raw.height {
        return Err(Error::MalformedImage(format!(
            "{}x{} image is not square",
            raw.width, raw.height
        )));
    }
    let s = raw.width;
    let mut values = vec![0.0f32; s * s * CHANNELS];
    for y in 0..s {
        for x in 0..s {
            for c in 0..CHANNELS {
                values[(c * s + y) * s + x] = raw.get(y, x, c) as f32 / 127.5 - 1.0;
            }
        }
    }
    Ok(ImageTensor {
        size: s,
        channels: CHANNELS,
        values,
    })
}

/// `v ↦ round((v+1)·127.5)` clamped to `[0, 255]`.
pub fn denormalize(t: &ImageTensor) -> RawImage {
    assert_eq!(t.channels, CHANNELS, "RGB tensor");
    let s = t.size;
    let mut pixels = vec![0u8; s * s * CHANNELS];
    for y in 0..s {
        for x in 0..s {
            for c in 0..CHANNELS {
                let v = ((t.get(y, x, c) + 1.0) * 127.5).round();
                pixels[(y * s + x) * CHANNELS + c] = v.clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawImage {
        width: s,
        height: s,
        pixels,
    }
}

/// Round trip through 8-bit storage, as a stego written to PNG experiences.
pub fn quantize(t: &ImageTensor) -> ImageTensor {
    normalize(&denormalize(t)).expect("square by construction")
}

/// Train/validation/test image identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

impl DatasetSplit {
    /// Deterministic permutation of `ids` (sorted first) cut by `ratios`.
    pub fn new(mut ids: Vec<String>, ratios: SplitRatios, seed: u64) -> Result<Self> {
        ratios.validate()?;
        ids.sort();
        ids.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = (((n as f64) * ratios.train).round() as usize).min(n);
        let n_val = (((n as f64) * ratios.validation).round() as usize).min(n - n_train);
        let test = ids.split_off(n_train + n_val);
        let validation = ids.split_off(n_train);
        Ok(DatasetSplit {
            train: ids,
            validation,
            test,
            seed,
        })
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}", self.seed);
        for (name, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            let _ = writeln!(out, "[{name}]");
            for id in ids {
                let _ = writeln!(out, "{id}");
            }
        }
        out
    }

    /// Parses a manifest written by [`DatasetSplit::to_manifest`].
    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("split manifest: {msg}"));
        let mut seed = None;
        let mut sections: [Vec<String>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("seed ") {
                if seed.is_some() || current.is_some() {
                    return Err(bad(format!("line {}: unexpected seed", lineno + 1)));
                }
                seed = Some(
                    rest.trim()
                        .parse::<u64>()
                        .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?,
                );
                continue;
            }
            let section = match line {
                "[train]" => Some(0),
                "[validation]" => Some(1),
                "[test]" => Some(2),
                _ => None,
            };
            if let Some(s) = section {
                if !sections[s].is_empty() || current.is_some_and(|c| c >= s) {
                    return Err(bad(format!("line {}: section out of order", lineno + 1)));
                }
                current = Some(s);
                continue;
            }
            match current {
                Some(s) => sections[s].push(line.to_string()),
                None => return Err(bad(format!("line {}: entry before any section", lineno + 1))),
            }
        }
        let seed = seed.ok_or_else(|| bad("missing seed".into()))?;
        let mut seen = HashSet::new();
        for id in sections.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(bad(format!("identifier {id} appears twice")));
            }
        }
        let [train, validation, test] = sections;
        Ok(DatasetSplit {
            train,
            validation,
            test,
            seed,
        })
    }
}

/// Images of a directory resized to `size` and split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub size: usize,
    pub split: DatasetSplit,
    images: BTreeMap<String, RawImage>,
}

impl Dataset {
    /// In-memory dataset, mainly for tests and synthetic corpora.
    pub fn from_images(
        images: BTreeMap<String, RawImage>,
        size: usize,
        ratios: SplitRatios,
        seed: u64,
    ) -> Result<Self> {
        let images: BTreeMap<_, _> = images
            .into_iter()
            .map(|(k, v)| (k, v.resize(size)))
            .collect();
        let split = DatasetSplit::new(images.keys().cloned().collect(), ratios, seed)?;
        Ok(Dataset {
            root: PathBuf::new(),
            size,
            split,
            images,
        })
    }

    pub fn raw(&self, id: &str) -> Option<&RawImage> {
        self.images.get(id)
    }

    pub fn tensor(&self, id: &str) -> Result<ImageTensor> {
        let raw = self
            .images
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image id {id}")))?;
        normalize(raw)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

const MIN_IMAGES: usize = 10;

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Loads every PNG/JPEG in `dir` at `size × size`, then splits.
pub fn ingest_dataset(dir: &Path, size: usize, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let ingest_err = |reason: String| Error::Ingestion {
        dir: dir.to_path_buf(),
        reason,
    };
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    let mut images = BTreeMap::new();
    let mut failures = Vec::new();
    for path in &paths {
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .unwrap_or_default();
        match RawImage::load(path) {
            Ok(raw) => {
                images.insert(id, raw.resize(size));
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(ingest_err(format!(
            "{} undecodable file(s): {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    if images.len() < MIN_IMAGES {
        return Err(ingest_err(format!(
            "found {} decodable images, need at least {MIN_IMAGES}",
            images.len()
        )));
    }
    let split = DatasetSplit::new(images.keys().cloned().collect(), ratios, seed)?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        size,
        split,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_from(s: usize, f: impl Fn(usize) -> u8) -> RawImage {
        RawImage::new(s, s, 3, (0..s * s * 3).map(f).collect()).unwrap()
    }

    #[test]
    fn normalize_endpoints() {
        let img = RawImage::new(2, 2, 3, vec![0, 255, 128, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let t = normalize(&img).unwrap();
        assert_eq!(t.get(0, 0, 0), -1.0);
        assert_eq!(t.get(0, 0, 1), 1.0);
        assert!((t.get(0, 0, 2) - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn denormalize_endpoints() {
        let t = ImageTensor::new(1, 3, vec![-1.0, 1.0, 0.0]).unwrap();
        let raw = denormalize(&t);
        assert_eq!(raw.pixels(), &[0, 255, 128]);
    }

    #[test]
    fn every_sample_value_round_trips() {
        let img = raw_from(16, |i| (i % 256) as u8);
        assert_eq!(denormalize(&normalize(&img).unwrap()), img);
    }

    #[test]
    fn wrong_channel_count_is_malformed() {
        assert!(matches!(
            RawImage::new(2, 2, 4, vec![0; 16]),
            Err(Error::MalformedImage(_))
        ));
    }

    #[test]
    fn out_of_range_tensor_rejected() {
        assert!(ImageTensor::new(1, 3, vec![0.0, 1.5, 0.0]).is_err());
        assert_eq!(ImageTensor::clamped(1, 3, vec![0.0, 1.5, f32::NAN]).values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let ids: Vec<String> = (0..100).map(|i| format!("img{i:03}")).collect();
        let split = DatasetSplit::new(ids.clone(), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (80, 10, 10)
        );
        assert_eq!(split, DatasetSplit::new(ids.clone(), SplitRatios::default(), 7).unwrap());
        let other = DatasetSplit::new(ids, SplitRatios::default(), 8).unwrap();
        assert_ne!(split.train, other.train);
        assert_eq!(other.train.len(), 80);
    }

    #[test]
    fn manifest_round_trip_and_rejects_duplicates() {
        let ids: Vec<String> = (0..20).map(|i| format!("{i}.png")).collect();
        let split = DatasetSplit::new(ids, SplitRatios::default(), 3).unwrap();
        let text = split.to_manifest();
        assert_eq!(DatasetSplit::from_manifest(&text).unwrap(), split);
        let dup = format!("{text}{}\n", split.train[0]);
        assert!(DatasetSplit::from_manifest(&dup).is_err());
        assert!(DatasetSplit::from_manifest("[train]\na\n").is_err());
    }

    #[test]
    fn ingest_rejects_sparse_or_broken_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_dataset(dir.path(), 16, SplitRatios::default(), 1),
            Err(Error::Ingestion { .. })
        ));
        for i in 0..10 {
            raw_from(20, |j| ((i * 7 + j) % 256) as u8)
                .save_png(&dir.path().join(format!("{i}.png")))
                .unwrap();
        }
        let ds = ingest_dataset(dir.path(), 16, SplitRatios::default(), 1).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.raw("3.png").unwrap().width(), 16);
        std::fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
        let err = ingest_dataset(dir.path(), 16, SplitRatios::default(), 1).unwrap_err();
        assert!(err.to_string().contains("junk.png"));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(pixels in proptest::collection::vec(any::<u8>(), 4 * 4 * 3)) {
            let img = RawImage::new(4, 4, 3, pixels).unwrap();
            let t = normalize(&img).unwrap();
            prop_assert!(t.values().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(denormalize(&t), img);
        }
    }
}
