use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{AugmentConfig, PatchSpec};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, SmoothnessVariant};
use crate::model::ModelConfig;
use crate::train::optim::AdamConfig;

/// Every knob of a training run. [`TrainConfig::paper`] holds the published
/// recipe; [`TrainConfig::desk`] shrinks it to something a single CPU core
/// finishes in minutes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub alpha: f64,
    pub lr0: f64,
    pub lr_halving_period: u32,
    pub epochs: u32,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// LR patch geometry.
    pub patch_height: usize,
    pub patch_width: usize,
    pub patch_stride: usize,
    pub channels: usize,
    pub leaky_slope: f64,
    pub global_residual: bool,
    pub smoothness: SmoothnessVariant,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Save a checkpoint every this many epochs (and always after the last).
    pub checkpoint_every: u32,
    /// Stop after this many optimiser steps, if set.
    pub max_steps: Option<u64>,
    /// Validation frames scored per epoch (0 disables validation).
    pub val_frames: usize,
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn paper(scale: usize) -> Self {
        TrainConfig {
            scale,
            alpha: 0.005,
            lr0: 2e-4,
            lr_halving_period: 30,
            epochs: 80,
            batch: if scale >= 4 { 4 } else { 8 },
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patch_height: 30,
            patch_width: 90,
            patch_stride: 20,
            channels: 32,
            leaky_slope: 0.1,
            global_residual: true,
            smoothness: SmoothnessVariant::Diagonal,
            flip_horizontal: true,
            flip_vertical: true,
            checkpoint_every: 10,
            max_steps: None,
            val_frames: 8,
            data: None,
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Narrow network, 16×48 patches, 10 epochs and a larger step size.
    pub fn desk(scale: usize) -> Self {
        TrainConfig {
            lr0: 2e-3,
            lr_halving_period: 5,
            epochs: 10,
            patch_height: 16,
            patch_width: 48,
            patch_stride: 16,
            channels: 8,
            checkpoint_every: 5,
            val_frames: 4,
            ..TrainConfig::paper(scale)
        }
    }

    pub fn preset(name: &str, scale: usize) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(scale)),
            "desk" => Ok(Self::desk(scale)),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected paper or desk)"))),
        }
    }

    pub fn model(&self, img_channels: usize) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            img_channels,
            scale: self.scale,
            leaky_slope: self.leaky_slope,
            global_residual: self.global_residual,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            smoothness: self.smoothness,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn patches(&self) -> PatchSpec {
        PatchSpec {
            height: self.patch_height,
            width: self.patch_width,
            stride: self.patch_stride,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_horizontal: self.flip_horizontal,
            flip_vertical: self.flip_vertical,
            crop: None,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse '{value}' for '{key}'")))
        }
        match key {
            "scale" => self.scale = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "lr0" | "lr" => self.lr0 = p(key, value)?,
            "lr_halving_period" => self.lr_halving_period = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch" => self.batch = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "patch_height" => self.patch_height = p(key, value)?,
            "patch_width" => self.patch_width = p(key, value)?,
            "patch_stride" => self.patch_stride = p(key, value)?,
            "channels" => self.channels = p(key, value)?,
            "leaky_slope" => self.leaky_slope = p(key, value)?,
            "global_residual" => self.global_residual = p(key, value)?,
            "smoothness" => self.smoothness = value.parse()?,
            "flip_horizontal" => self.flip_horizontal = p(key, value)?,
            "flip_vertical" => self.flip_vertical = p(key, value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(p(key, v)?),
                }
            }
            "val_frames" => self.val_frames = p(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// The same `key = value` form [`apply_text`](Self::apply_text) reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scale", self.scale.to_string());
        kv("alpha", self.alpha.to_string());
        kv("lr0", self.lr0.to_string());
        kv("lr_halving_period", self.lr_halving_period.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("seed", self.seed.to_string());
        kv("patch_height", self.patch_height.to_string());
        kv("patch_width", self.patch_width.to_string());
        kv("patch_stride", self.patch_stride.to_string());
        kv("channels", self.channels.to_string());
        kv("leaky_slope", self.leaky_slope.to_string());
        kv("global_residual", self.global_residual.to_string());
        kv("smoothness", self.smoothness.to_string());
        kv("flip_horizontal", self.flip_horizontal.to_string());
        kv("flip_vertical", self.flip_vertical.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("max_steps", self.max_steps.map_or("none".into(), |v| v.to_string()));
        kv("val_frames", self.val_frames.to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.scale, 2 | 4) {
            return bad(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.batch == 0 || self.epochs == 0 || self.channels == 0 || self.lr_halving_period == 0 {
            return bad("batch, epochs, channels and lr_halving_period must be positive".into());
        }
        if self.patch_height == 0 || self.patch_width == 0 || self.patch_stride == 0 || self.checkpoint_every == 0 {
            return bad("patch geometry and checkpoint_every must be positive".into());
        }
        for (k, v) in [("alpha", self.alpha), ("lr0", self.lr0), ("epsilon", self.epsilon)] {
            if !(v.is_finite() && v >= 0.0) || (k != "alpha" && v == 0.0) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr0, c.lr_halving_period, c.epochs, c.batch, c.alpha), (2e-4, 30, 80, 8, 0.005));
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.9, 0.999, 1e-8));
        assert_eq!((c.patch_height, c.patch_width, c.patch_stride), (30, 90, 20));
        assert_eq!(TrainConfig::paper(4).batch, 4);
        c.validate().unwrap();
        TrainConfig::desk(4).validate().unwrap();
    }

    #[test]
    fn text_round_trip_and_errors() {
        let mut c = TrainConfig::desk(2);
        c.apply_text("# comment\nalpha = 0\nmax_steps=12\nsmoothness = horizontal\ndata = /tmp/x.tsv\n").unwrap();
        assert_eq!((c.alpha, c.max_steps, c.smoothness), (0.0, Some(12), SmoothnessVariant::Horizontal));
        let mut d = TrainConfig::paper(4);
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert!(c.apply_text("bogus = 1").unwrap_err().to_string().contains("line 1"));
        assert!(c.apply_text("batch = many").is_err());
        assert!(c.apply_text("just words").is_err());
        c.scale = 3;
        assert!(c.validate().is_err());
        assert!(TrainConfig::preset("huge", 2).is_err());
    }
}
