//! The symmetric two-eye super-resolution network.

use super::apam::{warp, Apam, Direction, DisparityMask, MaskPair, Reconstructor};
use super::feature::FeatureExtractor;
use super::params::{Bound, ParamStore};
use crate::data::bicubic;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Feature width.
    pub channels: usize,
    /// Image channels (1 = grayscale, 3 = RGB).
    pub img_channels: usize,
    pub scale: usize,
    pub leaky_slope: f64,
    /// Add the bicubic upsampled input to the network output.
    pub global_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            img_channels: 1,
            scale: 2,
            leaky_slope: 0.1,
            global_residual: true,
        }
    }
}

/// Layer layout; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dcssr {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    pub apam: Apam,
    pub reconstructor: Reconstructor,
}

/// Offset subtracted from intensities before they enter the extractor.
pub const INPUT_SHIFT: f64 = 0.5;

/// Zero-centred network inputs and the bicubic upsampling of the raw LR pair,
/// as graph constants `[1, C, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct StereoInputs {
    pub lr_left: Var,
    pub lr_right: Var,
    pub up_left: Var,
    pub up_right: Var,
}

impl StereoInputs {
    pub fn swapped(self) -> StereoInputs {
        StereoInputs {
            lr_left: self.lr_right,
            lr_right: self.lr_left,
            up_left: self.up_right,
            up_right: self.up_left,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub sr_left: Var,
    pub sr_right: Var,
    /// Masks from the LR pair, `[1, h, w, w]`.
    pub lr_masks: MaskPair,
    /// Masks from the SR pair, `[1, s·h, s·w, s·w]`; only when requested.
    pub sr_masks: Option<MaskPair>,
}

impl Dcssr {
    pub fn register<T: Element>(config: ModelConfig, store: &mut ParamStore<T>) -> Self {
        let c = config.channels;
        Dcssr {
            extractor: FeatureExtractor::register(store, "extractor", config.img_channels, c),
            apam: Apam::register(store, "apam", c),
            reconstructor: Reconstructor::register(store, "reconstruct", c, config.img_channels, config.scale),
            config,
        }
    }

    fn slope<T: Element>(&self) -> T {
        T::of(self.config.leaky_slope)
    }

    /// Shared extractor + APAM on an image pair.
    pub fn masks<T: Element>(&self, g: &mut Graph<T>, p: &Bound, left: Var, right: Var) -> Result<MaskPair> {
        let (fl, fr) = self.extractor.extract_features(g, p, left, right, self.slope())?;
        self.apam.masks(g, p, fl, fr, self.slope())
    }

    /// SR for both eyes from the LR pair, plus the LR masks.
    pub fn forward_lr<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: &StereoInputs) -> Result<(Var, Var, MaskPair)> {
        let slope = self.slope();
        let (fl, fr) = self.extractor.extract_features(g, p, x.lr_left, x.lr_right, slope)?;
        let masks = self.apam.masks(g, p, fl, fr, slope)?;
        let fr_in_left = warp(g, masks.right_to_left, fr)?;
        let fl_in_right = warp(g, masks.left_to_right, fl)?;
        let mut res_l = self.reconstructor.forward(g, p, fl, fr_in_left, slope)?;
        let mut res_r = self.reconstructor.forward(g, p, fr, fl_in_right, slope)?;
        if self.config.global_residual {
            res_l = g.add(res_l, x.up_left)?;
            res_r = g.add(res_r, x.up_right)?;
        }
        Ok((res_l, res_r, masks))
    }

    /// Full training pass: LR pass, then (optionally) a second pass of the
    /// same extractor + APAM over the SR outputs for SR-scale masks.
    pub fn forward_full<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: &StereoInputs,
        with_sr_masks: bool,
    ) -> Result<ForwardOutputs> {
        let (sr_left, sr_right, lr_masks) = self.forward_lr(g, p, x)?;
        let sr_masks = if with_sr_masks {
            let shift = g.constant(Tensor::full(g.shape(sr_left).to_vec(), T::of(INPUT_SHIFT)));
            let l = g.sub(sr_left, shift)?;
            let r = g.sub(sr_right, shift)?;
            Some(self.masks(g, p, l, r)?)
        } else {
            None
        };
        Ok(ForwardOutputs {
            sr_left,
            sr_right,
            lr_masks,
            sr_masks,
        })
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    pub arch: Dcssr,
    pub params: ParamStore<T>,
}

/// Adds a leading batch axis and casts.
pub fn batch1<T: Element>(img: &Tensor<f32>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(img.shape());
    img.cast::<T>().reshape(shape)
}

impl<T: Element> Model<T> {
    /// Zero-initialised model.
    pub fn new(config: ModelConfig) -> Self {
        let mut params = ParamStore::default();
        let arch = Dcssr::register(config, &mut params);
        Model { arch, params }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Places an LR pair on `g` together with its bicubic upsampling.
    pub fn inputs(&self, g: &mut Graph<T>, lr_left: &Tensor<f32>, lr_right: &Tensor<f32>) -> Result<StereoInputs> {
        let cfg = self.config();
        if lr_left.shape() != lr_right.shape() {
            return Err(Error::shape(
                "stereo_inputs",
                format!("left {:?} vs right {:?}", lr_left.shape(), lr_right.shape()),
            ));
        }
        if lr_left.rank() != 3 || lr_left.shape()[0] != cfg.img_channels {
            return Err(Error::shape(
                "stereo_inputs",
                format!("expected [{}, h, w] images, got {:?}", cfg.img_channels, lr_left.shape()),
            ));
        }
        let centre = |t: &Tensor<f32>| batch1::<T>(t).map(|b| b.map(|v| v - T::of(INPUT_SHIFT)));
        let (l, r) = (centre(lr_left)?, centre(lr_right)?);
        let up = |t: &Tensor<f32>| -> Result<Tensor<T>> {
            let u = bicubic::upscale(&t.cast::<T>(), cfg.scale)?;
            let s = u.shape().to_vec();
            u.reshape([1, s[0], s[1], s[2]])
        };
        let (ul, ur) = (up(lr_left)?, up(lr_right)?);
        Ok(StereoInputs {
            lr_left: g.constant(l),
            lr_right: g.constant(r),
            up_left: g.constant(ul),
            up_right: g.constant(ur),
        })
    }

    /// Inference: `[C, s·h, s·w]` SR images for both eyes.
    pub fn super_resolve(&self, lr_left: &Tensor<f32>, lr_right: &Tensor<f32>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind_constants(&mut g);
        let x = self.inputs(&mut g, lr_left, lr_right)?;
        let (l, r, _) = self.arch.forward_lr(&mut g, &p, &x)?;
        let strip = |t: &Tensor<T>| {
            let s = t.shape();
            t.clone().reshape([s[1], s[2], s[3]])
        };
        Ok((strip(g.value(l))?, strip(g.value(r))?))
    }

    /// Inference: the LR disparity masks `(M_{l→r}, M_{r→l})`.
    pub fn lr_masks(&self, lr_left: &Tensor<f32>, lr_right: &Tensor<f32>) -> Result<(DisparityMask<T>, DisparityMask<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind_constants(&mut g);
        let x = self.inputs(&mut g, lr_left, lr_right)?;
        let m = self.arch.masks(&mut g, &p, x.lr_left, x.lr_right)?;
        Ok((
            DisparityMask::new(g.value(m.left_to_right).clone(), Direction::LeftToRight)?,
            DisparityMask::new(g.value(m.right_to_left).clone(), Direction::RightToLeft)?,
        ))
    }
}
