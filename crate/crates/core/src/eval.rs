//! Image-quality and payload-recovery metrics, and the evaluation protocols
//! built on them.
//!
//! Stego images are rounded to 8 bits before extraction or scoring, exactly
//! as a PNG round trip would leave them.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::hider::Hider;
use crate::image_model::{denormalize, quantize, Dataset, ImageTensor, RawImage};
use crate::message::BitString;
use crate::network::WeightSet;
use crate::style::StyleGroundTruthSource;
use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

fn same_dims(a: &RawImage, b: &RawImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn psnr(a: &RawImage, b: &RawImage) -> Result<f64> {
    same_dims(a, b)?;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let mse = sse / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM (11×11, σ = 1.5), mean over valid windows and channels.
pub fn ssim(a: &RawImage, b: &RawImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = (0..w * h).map(|i| a.pixels()[i * 3 + c] as f64).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.pixels()[i * 3 + c] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = filter_valid(&pa, w, h, &taps);
        let mu_b = filter_valid(&pb, w, h, &taps);
        let aa = filter_valid(&prod(&pa, &pa), w, h, &taps);
        let bb = filter_valid(&prod(&pb, &pb), w, h, &taps);
        let ab = filter_valid(&prod(&pa, &pb), w, h, &taps);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn ber(sent: &BitString, received: &BitString) -> Result<f64> {
    if sent.is_empty() {
        return Err(Error::InvalidArgument("bit error rate of an empty payload".into()));
    }
    Ok(sent.hamming(received)? as f64 / sent.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Images and style source an evaluation runs over.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub dataset: &'a Dataset,
    pub ids: &'a [String],
    pub source: &'a StyleGroundTruthSource,
    pub seed: u64,
}

impl EvalData<'_> {
    fn require_images(&self) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::InvalidArgument("evaluation split is empty".into()));
        }
        Ok(())
    }

    pub(crate) fn cover(&self, i: usize) -> Result<(ImageTensor, &RawImage)> {
        let id = &self.ids[i];
        let raw = self
            .dataset
            .raw(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown image id {id}")))?;
        Ok((self.dataset.tensor(id)?, raw))
    }

    /// Payload for image `i` under stream `tag`; identical across models.
    pub(crate) fn payload(&self, tag: u64, i: usize, len: usize) -> BitString {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ tag.wrapping_mul(0x2545_f491_4f6c_dd1d));
        rng.set_stream(i as u64);
        BitString::random(len, &mut rng)
    }
}

pub(crate) fn hider_for(weights: &WeightSet<f32>, data: &EvalData, block_size: usize) -> Result<Hider> {
    Hider::new(weights.clone(), data.source.style_image.clone(), block_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlRecord {
    pub block_size: usize,
    pub al: usize,
    pub stego_psnr_mean: f64,
    pub style_psnr_mean: f64,
    pub style_ssim_mean: f64,
    pub ber_mean: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fingerprint: String,
    pub split_seed: u64,
    pub seed: u64,
    pub records: Vec<AlRecord>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "block_size,al,stego_psnr_mean,style_psnr_mean,style_ssim_mean,ber_mean,n_images\n",
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.5},{:.6},{}",
                r.block_size, r.al, r.stego_psnr_mean, r.style_psnr_mean, r.style_ssim_mean, r.ber_mean, r.n_images
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "checkpoint {} | split seed {} | eval seed {}\n",
            self.fingerprint, self.split_seed, self.seed
        );
        for r in &self.records {
            let side = (r.al as f64).sqrt() as usize;
            let _ = writeln!(
                out,
                "AL {side}^2 (N={}): stego PSNR {:.2} dB, BER {:.5}, style PSNR {:.2} dB, style SSIM {:.4} over {} images",
                r.block_size, r.stego_psnr_mean, r.ber_mean, r.style_psnr_mean, r.style_ssim_mean, r.n_images
            );
        }
        out
    }

    /// Appends another report's records; both must describe the same network.
    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        if other.fingerprint != self.fingerprint {
            return Err(Error::IncompatibleCheckpoint(format!(
                "cannot merge reports of checkpoints {} and {}",
                self.fingerprint, other.fingerprint
            )));
        }
        self.records.extend(other.records);
        Ok(())
    }
}

/// Style-transfer quality of `weights` over the evaluation images.
fn style_quality(hider: &Hider, data: &EvalData) -> Result<(f64, f64)> {
    let (mut p, mut s) = (Vec::new(), Vec::new());
    for (i, id) in data.ids.iter().enumerate() {
        let (x, _) = data.cover(i)?;
        let z = denormalize(&hider.style(&x)?);
        let zg = denormalize(&data.source.ground_truth_for(id, &x)?);
        p.push(psnr(&z, &zg)?);
        s.push(ssim(&z, &zg)?);
    }
    Ok((mean(&p), mean(&s)))
}

/// Mean stego PSNR and BER at one block size, trigger extraction.
pub fn hiding_quality(weights: &WeightSet<f32>, data: &EvalData, block_size: usize) -> Result<(f64, f64)> {
    data.require_images()?;
    let hider = hider_for(weights, data, block_size)?;
    let (mut p, mut b) = (Vec::new(), Vec::new());
    for i in 0..data.ids.len() {
        let (cover, raw) = data.cover(i)?;
        let bits = data.payload(block_size as u64, i, hider.capacity());
        let stego = quantize(&hider.embed(&cover, &bits)?);
        p.push(psnr(&denormalize(&stego), raw)?);
        b.push(ber(&bits, &hider.extract(&stego)?)?);
    }
    Ok((mean(&p), mean(&b)))
}

/// Embeds random payloads into every evaluation cover at each block size.
pub fn payload_distortion_sweep(
    weights: &WeightSet<f32>,
    data: &EvalData,
    block_sizes: &[usize],
) -> Result<EvalReport> {
    data.require_images()?;
    let size = weights.spec().image_size;
    for &n in block_sizes {
        crate::message::actual_length(size, n)?;
    }
    let (style_psnr, style_ssim) = style_quality(&hider_for(weights, data, 1)?, data)?;
    let mut records = Vec::new();
    for &n in block_sizes {
        let (stego_psnr, ber_mean) = hiding_quality(weights, data, n)?;
        records.push(AlRecord {
            block_size: n,
            al: (size / n) * (size / n),
            stego_psnr_mean: stego_psnr,
            style_psnr_mean: style_psnr,
            style_ssim_mean: style_ssim,
            ber_mean,
            n_images: data.ids.len(),
        });
    }
    Ok(EvalReport {
        fingerprint: weights.fingerprint().to_string(),
        split_seed: data.dataset.split.seed,
        seed: data.seed,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomTriggerResult {
    pub mean_ber: f64,
    pub bers: Vec<f64>,
}

/// Extraction with other evaluation images standing in for the trigger.
pub fn random_trigger_test(
    weights: &WeightSet<f32>,
    data: &EvalData,
    block_size: usize,
    trials: usize,
) -> Result<RandomTriggerResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("random-trigger test needs at least one trial".into()));
    }
    data.require_images()?;
    if data.ids.len() < 2 {
        return Err(Error::InvalidArgument("random-trigger test needs two distinct images".into()));
    }
    let hider = hider_for(weights, data, block_size)?;
    let n = data.ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(data.seed ^ 0x7219);
    let mut bers = Vec::with_capacity(trials);
    for t in 0..trials {
        let ci = t % n;
        let mut ti = rng.random_range(0..n - 1);
        if ti >= ci {
            ti += 1;
        }
        let (cover, _) = data.cover(ci)?;
        let (trigger, _) = data.cover(ti)?;
        let bits = data.payload(block_size as u64, ci, hider.capacity());
        let stego = quantize(&hider.embed(&cover, &bits)?);
        bers.push(ber(&bits, &hider.extract_with(&stego, &trigger)?)?);
    }
    Ok(RandomTriggerResult {
        mean_ber: mean(&bers),
        bers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleOnStego {
    pub cover_psnr_mean: f64,
    pub stego_psnr_mean: f64,
    pub gap: f64,
    pub cover_ids: Vec<String>,
    pub stego_ids: Vec<String>,
}

impl StyleOnStego {
    pub fn to_csv(&self) -> String {
        format!(
            "input,style_psnr_mean,n_images\ncover,{:.4},{}\nstego,{:.4},{}\n",
            self.cover_psnr_mean,
            self.cover_ids.len(),
            self.stego_psnr_mean,
            self.stego_ids.len()
        )
    }
}

/// Style transfer of covers and of their stegos, both scored against the
/// cover's ground truth.
pub fn style_on_stego_eval(weights: &WeightSet<f32>, data: &EvalData, block_size: usize) -> Result<StyleOnStego> {
    data.require_images()?;
    let hider = hider_for(weights, data, block_size)?;
    let (mut pc, mut ps) = (Vec::new(), Vec::new());
    let (mut cover_ids, mut stego_ids) = (Vec::new(), Vec::new());
    for (i, id) in data.ids.iter().enumerate() {
        let (cover, _) = data.cover(i)?;
        let zg = denormalize(&data.source.ground_truth_for(id, &cover)?);
        pc.push(psnr(&denormalize(&hider.style(&cover)?), &zg)?);
        cover_ids.push(id.clone());
        let bits = data.payload(block_size as u64, i, hider.capacity());
        let stego = quantize(&hider.embed(&cover, &bits)?);
        ps.push(psnr(&denormalize(&hider.style(&stego)?), &zg)?);
        stego_ids.push(id.clone());
    }
    let (c, s) = (mean(&pc), mean(&ps));
    Ok(StyleOnStego {
        cover_psnr_mean: c,
        stego_psnr_mean: s,
        gap: (c - s).abs(),
        cover_ids,
        stego_ids,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub sigma: f64,
    pub plain_ber: f64,
    pub noise_trained_ber: f64,
}

pub fn noise_rows_csv(rows: &[NoiseRow]) -> String {
    let mut out = String::from("sigma,plain_ber,noise_trained_ber\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.sigma, r.plain_ber, r.noise_trained_ber);
    }
    out
}

/// Stego plus `N(0, σ²)` in the normalized domain, clamped back into range.
pub fn noisy(stego: &ImageTensor, sigma: f64, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    if sigma == 0.0 {
        return Ok(stego.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("sigma {sigma}: {e}")))?;
    let values = stego.values().iter().map(|&v| v + normal.sample(rng) as f32).collect();
    Ok(ImageTensor::clamped(stego.size(), stego.channels(), values))
}

fn ber_under_noise(hider: &Hider, data: &EvalData, sigma: f64, sigma_index: usize) -> Result<f64> {
    let mut b = Vec::new();
    for i in 0..data.ids.len() {
        let (cover, _) = data.cover(i)?;
        let bits = data.payload(hider.block_size as u64, i, hider.capacity());
        let stego = quantize(&hider.embed(&cover, &bits)?);
        let mut rng = ChaCha8Rng::seed_from_u64(data.seed ^ 0x6e6f_6973 ^ ((sigma_index as u64) << 32));
        rng.set_stream(i as u64);
        b.push(ber(&bits, &hider.extract(&noisy(&stego, sigma, &mut rng)?)?)?);
    }
    Ok(mean(&b))
}

/// BER of both models under identical noise draws at each σ.
pub fn noise_robustness_eval(
    plain: &WeightSet<f32>,
    noise_trained: &WeightSet<f32>,
    sigmas: &[f64],
    data: &EvalData,
    block_size: usize,
) -> Result<Vec<NoiseRow>> {
    data.require_images()?;
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("noise sigma {s} must be >= 0")));
    }
    let hp = hider_for(plain, data, block_size)?;
    let hn = hider_for(noise_trained, data, block_size)?;
    sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            Ok(NoiseRow {
                sigma,
                plain_ber: ber_under_noise(&hp, data, sigma, k)?,
                noise_trained_ber: ber_under_noise(&hn, data, sigma, k)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_model::SplitRatios;
    use crate::message::{decode_plane, encode_plane, BitSymbols};
    use crate::network::NetworkSpec;
    use crate::style::StyleParams;
    use proptest::prelude::*;
    use rand::Rng;

    fn raw(s: usize, f: impl Fn(usize, usize, usize) -> f64) -> RawImage {
        let mut px = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    px.push(f(y, x, c).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RawImage::new(s, s, 3, px).unwrap()
    }

    fn pattern(s: usize) -> RawImage {
        raw(s, |y, x, c| ((x * 7 + y * 13 + c * 29 + (x * y) % 17) % 256) as f64)
    }

    fn inverted(a: &RawImage) -> RawImage {
        RawImage::new(a.width(), a.height(), 3, a.pixels().iter().map(|v| 255 - v).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = pattern(16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let off = RawImage::new(16, 16, 3, a.pixels().iter().map(|&v| if v < 255 { v + 1 } else { v - 1 }).collect()).unwrap();
        assert!((psnr(&a, &off).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-9);
        let black = RawImage::filled(8, 8, [0, 0, 0]);
        let white = RawImage::filled(8, 8, [255, 255, 255]);
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
        assert!(psnr(&black, &RawImage::filled(8, 4, [0, 0, 0])).is_err());
    }

    /// Direct 2-D windowed SSIM, no separable filtering.
    fn ssim_brute(a: &RawImage, b: &RawImage) -> f64 {
        let (w, h) = (a.width(), a.height());
        let r = 5i64;
        let mut kernel = [[0.0; 11]; 11];
        let mut total = 0.0;
        for (i, row) in kernel.iter_mut().enumerate() {
            for (j, k) in row.iter_mut().enumerate() {
                let (di, dj) = (i as i64 - r, j as i64 - r);
                *k = (-((di * di + dj * dj) as f64) / 4.5).exp();
                total += *k;
            }
        }
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut acc = 0.0;
        for c in 0..3 {
            let mut s = 0.0;
            let mut count = 0;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = kernel[i][j] / total;
                            let va = a.get(y0 + i, x0 + j, c) as f64;
                            let vb = b.get(y0 + i, x0 + j, c) as f64;
                            ma += k * va;
                            mb += k * vb;
                            aa += k * va * va;
                            bb += k * vb * vb;
                            ab += k * va * vb;
                        }
                    }
                    let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                    s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            acc += s / count as f64;
        }
        acc / 3.0
    }

    #[test]
    fn ssim_matches_reference_values() {
        // Reference: scikit-image structural_similarity with gaussian
        // weights, sigma 1.5, population covariance, data_range 255.
        let a = pattern(32);
        let b = raw(32, |y, x, c| {
            let v = ((x * 7 + y * 13 + c * 29 + (x * y) % 17) % 256) as f64;
            v + ((x * 3 + y * 5 + c) % 11) as f64 - 5.0
        });
        assert!((ssim(&a, &b).unwrap() - 0.9942904182714503).abs() < 1e-9);
        assert!((ssim(&a, &inverted(&a)).unwrap() - -0.6767748677129246).abs() < 1e-9);
        let g = raw(32, |y, x, c| 127.0 + 100.0 * (x as f64 / 4.0).sin() * (y as f64 / 5.0 + c as f64).cos());
        assert!((ssim(&g, &inverted(&g)).unwrap() - -0.7002446872632849).abs() < 1e-9);
        let g8 = RawImage::new(32, 32, 3, g.pixels().iter().map(|&v| v.saturating_add(8)).collect()).unwrap();
        assert!((ssim(&g, &g8).unwrap() - 0.9969880083412392).abs() < 1e-9);
    }

    #[test]
    fn ssim_agrees_with_brute_force() {
        let a = pattern(20);
        let b = raw(20, |y, x, c| ((x * 5 + y * 3 + c * 50) % 256) as f64);
        assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn ssim_trivial_cases() {
        let a = pattern(16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let k = RawImage::filled(16, 16, [90, 90, 90]);
        assert!((ssim(&k, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &inverted(&a)).unwrap() < 0.5);
        assert!(ssim(&pattern(10), &pattern(10)).is_err());
    }

    #[test]
    fn ber_counts() {
        let a = BitString::from_01(&[1, 0, 1, 1]);
        assert_eq!(ber(&a, &a).unwrap(), 0.0);
        let not_a = BitString::from_01(&[0, 1, 0, 0]);
        assert_eq!(ber(&a, &not_a).unwrap(), 1.0);
        let mut bits = vec![false; 64];
        let clean = BitString::new(bits.clone());
        bits[17] = true;
        assert_eq!(ber(&clean, &BitString::new(bits)).unwrap(), 0.015625);
        assert!(ber(&a, &BitString::from_01(&[1])).is_err());
    }

    #[test]
    fn codec_alone_has_zero_ber() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 4, 16] {
            let bits = BitString::random((32 / n) * (32 / n), &mut rng);
            let plane = encode_plane(&bits, 32, n, BitSymbols::Signed).unwrap();
            assert_eq!(ber(&bits, &decode_plane(&plane.tensor, n).unwrap()).unwrap(), 0.0);
        }
    }

    fn fixture() -> (Dataset, StyleGroundTruthSource, WeightSet<f32>) {
        let ds = Dataset::from_images(crate::synth::synth_corpus(12, 16, 4), 16, SplitRatios::default(), 0).unwrap();
        let src = StyleGroundTruthSource::builtin(16, StyleParams::default()).unwrap();
        let spec = NetworkSpec::with_widths(16, &[4, 4, 4, 4]);
        let w = WeightSet::build(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (ds, src, w)
    }

    #[test]
    fn protocols_run_on_untrained_weights() {
        let (ds, src, w) = fixture();
        let ids: Vec<String> = ds.split.all().cloned().collect();
        let data = EvalData { dataset: &ds, ids: &ids, source: &src, seed: 9 };
        let report = payload_distortion_sweep(&w, &data, &[2, 4]).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.records[0].al, 64);
        assert!(report.to_csv().lines().count() == 3);
        for r in &report.records {
            assert!((0.0..=1.0).contains(&r.ber_mean));
            assert!(r.stego_psnr_mean >= 0.0);
        }
        assert_eq!(report, payload_distortion_sweep(&w, &data, &[2, 4]).unwrap());
        assert!(random_trigger_test(&w, &data, 4, 0).is_err());
        let rt = random_trigger_test(&w, &data, 4, 5).unwrap();
        assert_eq!(rt.bers.len(), 5);
        let st = style_on_stego_eval(&w, &data, 4).unwrap();
        assert_eq!(st.cover_ids, st.stego_ids);
        let rows = noise_robustness_eval(&w, &w, &[0.0, 0.1], &data, 4).unwrap();
        assert_eq!(rows[0].plain_ber, rows[0].noise_trained_ber);
        let (_, clean_ber) = hiding_quality(&w, &data, 4).unwrap();
        assert_eq!(rows[0].plain_ber, clean_ber);
    }

    #[test]
    fn reports_with_different_networks_do_not_merge() {
        let (ds, src, w) = fixture();
        let ids: Vec<String> = ds.split.test.clone();
        let data = EvalData { dataset: &ds, ids: &ids, source: &src, seed: 1 };
        let mut a = payload_distortion_sweep(&w, &data, &[4]).unwrap();
        let mut b = a.clone();
        b.fingerprint = "0000".into();
        assert!(a.merge(b).is_err());
        let c = a.clone();
        a.merge(c).unwrap();
        assert_eq!(a.records.len(), 2);
    }

    proptest! {
        #[test]
        fn metric_ranges(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = RawImage::new(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
            let b = RawImage::new(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
            prop_assert!(psnr(&a, &b).unwrap() >= 0.0);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let x = BitString::random(40, &mut rng);
            let y = BitString::random(40, &mut rng);
            let e = ber(&x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
