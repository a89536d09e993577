//! Ground-truth style images.
//!
//! The built-in style is a per-pixel colour grade: channel mixing followed by
//! per-channel gamma. Ground truths may instead come from a directory whose
//! file names mirror the dataset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image_model::{normalize, ImageTensor, RawImage, CHANNELS};
use crate::{Error, Result};

static CANONICAL_PNG: &[u8] = include_bytes!("../assets/canonical.png");

/// The fixed content image from which the built-in style image is derived.
pub fn canonical_image() -> RawImage {
    RawImage::from_png_bytes(CANONICAL_PNG).expect("bundled canonical image decodes")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Row `i` gives output channel `i` as a mix of the input channels.
    pub matrix: [[f64; 3]; 3],
    pub gamma: [f64; 3],
}

impl Default for StyleParams {
    /// Warm sepia grade blended with the identity so the mix stays invertible.
    fn default() -> Self {
        StyleParams {
            matrix: [
                [0.636, 0.461, 0.113],
                [0.209, 0.812, 0.101],
                [0.163, 0.320, 0.479],
            ],
            gamma: [0.9, 1.0, 1.15],
        }
    }
}

const MIN_DETERMINANT: f64 = 1e-3;

impl StyleParams {
    pub fn identity() -> Self {
        StyleParams {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            gamma: [1.0; 3],
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().flatten().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::Config("style parameters must be finite".into()));
        }
        if let Some(g) = self.gamma.iter().find(|&&g| g <= 0.0) {
            return Err(Error::Config(format!("style gamma {g} must be > 0")));
        }
        let det = self.determinant();
        if det.abs() < MIN_DETERMINANT {
            return Err(Error::Config(format!(
                "style matrix is singular (determinant {det:.2e})"
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == StyleParams::identity()
    }
}

/// Applies the colour grade to a normalized image.
pub fn reference_transform(x: &ImageTensor, params: &StyleParams) -> Result<ImageTensor> {
    params.validate()?;
    if x.channels() != CHANNELS {
        return Err(Error::Shape(format!("style transform needs {CHANNELS} channels")));
    }
    let plane = x.size() * x.size();
    let v = x.values();
    let mut out = vec![0f32; v.len()];
    for p in 0..plane {
        let u: [f64; 3] = std::array::from_fn(|c| (v[c * plane + p] as f64 + 1.0) / 2.0);
        for (o, row) in params.matrix.iter().enumerate() {
            let mixed = (row[0] * u[0] + row[1] * u[1] + row[2] * u[2]).clamp(0.0, 1.0);
            out[o * plane + p] = (2.0 * mixed.powf(params.gamma[o]) - 1.0) as f32;
        }
    }
    ImageTensor::new(x.size(), CHANNELS, out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StyleMode {
    Builtin,
    ExternalDirectory(PathBuf),
}

/// Where ground truths `z_g` and the fixed style image `y` come from.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleGroundTruthSource {
    pub mode: StyleMode,
    pub style_image: ImageTensor,
    pub params: StyleParams,
}

impl StyleGroundTruthSource {
    /// Built-in grade; `y` is the graded canonical image.
    pub fn builtin(size: usize, params: StyleParams) -> Result<Self> {
        params.validate()?;
        if params.is_identity() {
            return Err(Error::Config("built-in style must not be the identity".into()));
        }
        let canonical = normalize(&canonical_image().resize(size))?;
        Ok(StyleGroundTruthSource {
            mode: StyleMode::Builtin,
            style_image: reference_transform(&canonical, &params)?,
            params,
        })
    }

    /// Ground truths read from `dir/<image id>`; `y` read from `style_image`.
    pub fn external(dir: &Path, style_image: &Path, size: usize) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "ground-truth directory {} does not exist",
                dir.display()
            )));
        }
        if !style_image.is_file() {
            return Err(Error::Config(format!(
                "style image {} does not exist",
                style_image.display()
            )));
        }
        Ok(StyleGroundTruthSource {
            mode: StyleMode::ExternalDirectory(dir.to_path_buf()),
            style_image: normalize(&RawImage::load(style_image)?.resize(size))?,
            params: StyleParams::identity(),
        })
    }

    pub fn size(&self) -> usize {
        self.style_image.size()
    }

    /// `z_g` for the image `x_id` whose content is `x`.
    pub fn ground_truth_for(&self, x_id: &str, x: &ImageTensor) -> Result<ImageTensor> {
        match &self.mode {
            StyleMode::Builtin => reference_transform(x, &self.params),
            StyleMode::ExternalDirectory(dir) => {
                let path = dir.join(x_id);
                if !path.is_file() {
                    return Err(Error::MissingGroundTruth(path.display().to_string()));
                }
                normalize(&RawImage::load(&path)?.resize(self.size()))
            }
        }
    }

    /// Fails on the first id without a ground truth.
    pub fn check_complete<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<()> {
        if let StyleMode::ExternalDirectory(dir) = &self.mode {
            if let Some(id) = ids.into_iter().find(|id| !dir.join(id).is_file()) {
                return Err(Error::MissingGroundTruth(dir.join(id).display().to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(size: usize) -> ImageTensor {
        let n = size * size * 3;
        ImageTensor::new(size, 3, (0..n).map(|i| (i as f32 / n as f32) * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn identity_parameters_are_identity() {
        let x = gradient(8);
        let y = reference_transform(&x, &StyleParams::identity()).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn black_stays_black() {
        let black = ImageTensor::constant(8, -1.0);
        let y = reference_transform(&black, &StyleParams::default()).unwrap();
        assert!(y.values().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn mid_gray_maps_to_scaled_row_sums() {
        let p = StyleParams::default();
        let y = reference_transform(&ImageTensor::constant(4, 0.0), &p).unwrap();
        for c in 0..3 {
            // Hand evaluation: u = 0.5, mixed = 0.5·Σrow, graded = mixed^γ.
            let expected = [0.605f64, 0.561, 0.481][c].powf(p.gamma[c]) * 2.0 - 1.0;
            for yy in 0..4 {
                for xx in 0..4 {
                    assert!((y.get(yy, xx, c) as f64 - expected).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn singular_or_bad_gamma_rejected() {
        let mut p = StyleParams::default();
        p.matrix[2] = p.matrix[0];
        assert!(matches!(
            reference_transform(&gradient(4), &p),
            Err(Error::Config(_))
        ));
        let mut p = StyleParams::default();
        p.gamma[1] = 0.0;
        assert!(p.validate().is_err());
        // The classic sepia matrix has nearly proportional rows.
        let sepia = StyleParams {
            matrix: [
                [0.393, 0.769, 0.189],
                [0.349, 0.686, 0.168],
                [0.272, 0.534, 0.131],
            ],
            gamma: [1.0; 3],
        };
        assert!(sepia.validate().is_err());
    }

    #[test]
    fn builtin_source_is_deterministic_and_not_identity() {
        assert!(StyleGroundTruthSource::builtin(16, StyleParams::identity()).is_err());
        let src = StyleGroundTruthSource::builtin(32, StyleParams::default()).unwrap();
        let x = gradient(32);
        let a = src.ground_truth_for("a.png", &x).unwrap();
        assert_eq!(a, src.ground_truth_for("a.png", &x).unwrap());
        assert_eq!(a, reference_transform(&x, &src.params).unwrap());
        assert_ne!(a, x);
        assert_eq!(src.style_image.size(), 32);
    }

    #[test]
    fn external_source_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = crate::synth::synth_image(16, 0, 0);
        img.save_png(&dir.path().join("a.png")).unwrap();
        img.save_png(&dir.path().join("style.png")).unwrap();
        let src = StyleGroundTruthSource::external(dir.path(), &dir.path().join("style.png"), 16).unwrap();
        let z = src.ground_truth_for("a.png", &ImageTensor::constant(16, 0.0)).unwrap();
        assert_eq!(z, normalize(&img).unwrap());
        assert!(matches!(
            src.ground_truth_for("b.png", &z),
            Err(Error::MissingGroundTruth(_))
        ));
        assert!(src.check_complete(&["a.png".to_string()]).is_ok());
        assert!(src.check_complete(&["a.png".to_string(), "c.png".to_string()]).is_err());
        assert!(StyleGroundTruthSource::external(dir.path(), &dir.path().join("nope.png"), 16).is_err());
    }
}
