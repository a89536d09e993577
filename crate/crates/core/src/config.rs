//! Flat TOML run configuration shared by every command.
//!
//! Relative paths are resolved against a working directory supplied by the
//! caller. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ecc::{EccConfig, EccScheme};
use crate::image_model::SplitRatios;
use crate::losses::{LossConfig, Norm};
use crate::network::NetworkSpec;
use crate::nn::NormStats;
use crate::steganalyzer::DetectorSpec;
use crate::style::{StyleGroundTruthSource, StyleParams};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleModeKey {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub image_size: usize,
    pub split_seed: u64,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub test_ratio: f64,

    /// Encoder widths; defaults double from 64 up to 512.
    pub down_channels: Option<Vec<usize>>,
    pub inference_norm: NormStats,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub block_size: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub norm: Norm,
    pub noise_sigmas: Vec<f64>,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub validation_images: usize,

    pub style_mode: StyleModeKey,
    pub style_matrix: Option<[[f64; 3]; 3]>,
    pub style_gamma: Option<[f64; 3]>,
    pub style_dir: Option<PathBuf>,
    pub style_image: Option<PathBuf>,

    pub ecc: EccScheme,
    pub rs_n: usize,
    pub rs_k: usize,

    pub checkpoint: Option<PathBuf>,
    pub noise_checkpoint: Option<PathBuf>,
    pub eval_block_sizes: Vec<usize>,
    pub random_trigger_trials: usize,
    pub noise_eval_sigmas: Vec<f64>,

    pub detector_checkpoints: Vec<PathBuf>,
    pub detector_block_sizes: Vec<usize>,
    pub detector_widths: Vec<usize>,
    pub detector_epochs: usize,
    pub detector_learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let ratios = SplitRatios::default();
        let ecc = EccConfig::default();
        let det = DetectorSpec::default();
        RunConfig {
            dataset: None,
            output_dir: PathBuf::from("run"),
            image_size: 128,
            split_seed: 0,
            train_ratio: ratios.train,
            validation_ratio: ratios.validation,
            test_ratio: ratios.test,
            down_channels: None,
            inference_norm: NormStats::Batch,
            learning_rate: train.learning_rate,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            batch_size: train.batch_size,
            epochs: train.epochs,
            block_size: train.block_size,
            alpha1: train.loss.alpha1,
            alpha2: train.loss.alpha2,
            norm: train.loss.norm,
            noise_sigmas: train.noise_sigmas,
            seed: train.seed,
            checkpoint_interval: train.checkpoint_interval,
            validation_images: train.validation_images,
            style_mode: StyleModeKey::Builtin,
            style_matrix: None,
            style_gamma: None,
            style_dir: None,
            style_image: None,
            ecc: ecc.scheme,
            rs_n: ecc.rs_n,
            rs_k: ecc.rs_k,
            checkpoint: None,
            noise_checkpoint: None,
            eval_block_sizes: vec![8, 16, 32, 64, 128],
            random_trigger_trials: 100,
            noise_eval_sigmas: vec![0.0, 0.05, 0.1, 0.15],
            detector_checkpoints: Vec::new(),
            detector_block_sizes: Vec::new(),
            detector_widths: det.widths,
            detector_epochs: det.epochs,
            detector_learning_rate: det.learning_rate,
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.split_ratios().validate()?;
        let spec = self.network_spec();
        spec.validate()?;
        self.train_config().validate(self.image_size)?;
        self.ecc_config().validate()?;
        self.style_params().validate()?;
        for &n in self.eval_block_sizes.iter().chain(&self.detector_block_sizes) {
            if n == 0 || self.image_size % n != 0 {
                return Err(Error::Config(format!(
                    "block size N={n} must divide image_size {}",
                    self.image_size
                )));
            }
        }
        if !self.detector_checkpoints.is_empty() && self.detector_checkpoints.len() != self.detector_block_sizes.len() {
            return Err(Error::Config(
                "detector_checkpoints and detector_block_sizes must have equal length".into(),
            ));
        }
        if let Some(s) = self.noise_eval_sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("noise_eval_sigmas entry {s} must be >= 0")));
        }
        if self.style_mode == StyleModeKey::External && self.style_dir.is_none() {
            return Err(Error::Config("style_mode = \"external\" requires style_dir".into()));
        }
        self.detector_spec().validate()
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            validation: self.validation_ratio,
            test: self.test_ratio,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut spec = match &self.down_channels {
            Some(d) => NetworkSpec::with_widths(self.image_size, d),
            None => NetworkSpec::for_size(self.image_size),
        };
        spec.inference_norm = self.inference_norm;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            block_size: self.block_size,
            loss: LossConfig {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                norm: self.norm,
            },
            noise_sigmas: self.noise_sigmas.clone(),
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            validation_images: self.validation_images,
        }
    }

    pub fn ecc_config(&self) -> EccConfig {
        EccConfig {
            scheme: self.ecc,
            rs_n: self.rs_n,
            rs_k: self.rs_k,
        }
    }

    pub fn style_params(&self) -> StyleParams {
        let d = StyleParams::default();
        StyleParams {
            matrix: self.style_matrix.unwrap_or(d.matrix),
            gamma: self.style_gamma.unwrap_or(d.gamma),
        }
    }

    pub fn detector_spec(&self) -> DetectorSpec {
        DetectorSpec {
            widths: self.detector_widths.clone(),
            learning_rate: self.detector_learning_rate,
            epochs: self.detector_epochs,
            seed: self.seed,
            ..DetectorSpec::default()
        }
    }

    pub fn style_source(&self, workdir: &Path) -> Result<StyleGroundTruthSource> {
        match self.style_mode {
            StyleModeKey::Builtin => StyleGroundTruthSource::builtin(self.image_size, self.style_params()),
            StyleModeKey::External => {
                let dir = workdir.join(self.style_dir.as_ref().expect("validated"));
                let image = match &self.style_image {
                    Some(p) => workdir.join(p),
                    None => dir.join("style.png"),
                };
                StyleGroundTruthSource::external(&dir, &image, self.image_size)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("learning_rat = 0.1").unwrap_err().to_string();
        assert!(err.contains("learning_rat"), "{err}");
    }

    #[test]
    fn invalid_block_size_named() {
        let err = RunConfig::from_toml("block_size = 3").unwrap_err().to_string();
        assert!(err.contains("N=3"), "{err}");
    }

    #[test]
    fn typed_views() {
        let cfg = RunConfig::from_toml(
            r#"
            image_size = 32
            down_channels = [8, 16, 16, 16, 16]
            norm = "l2"
            noise_sigmas = [0.01, 0.05]
            ecc = "reed_solomon"
            rs_n = 40
            rs_k = 32
            eval_block_sizes = [4, 8]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.network_spec().down_channels, vec![8, 16, 16, 16, 16]);
        assert_eq!(cfg.train_config().loss.norm, Norm::L2);
        assert_eq!(cfg.ecc_config().correctable(), 4);
        assert!(RunConfig::from_toml("image_size = 32\neval_block_sizes = [64]").is_err());
        assert!(RunConfig::from_toml("ecc = \"reed_solomon\"\nrs_k = 255").is_err());
        assert!(RunConfig::from_toml("style_mode = \"external\"").is_err());
        assert!(RunConfig::from_toml("style_gamma = [1.0, 0.0, 1.0]").is_err());
    }
}
