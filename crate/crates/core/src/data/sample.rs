use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::bicubic;

/// Paired LR inputs and HR ground truth for both eyes.
///
/// `disparity`, when known, lives on the HR right-eye grid: the right image
/// at column `x` shows the left image's content at `x - disparity[y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub lr_left: Tensor<f32>,
    pub lr_right: Tensor<f32>,
    pub hr_left: Tensor<f32>,
    pub hr_right: Tensor<f32>,
    pub scale: usize,
    pub disparity: Option<Tensor<f32>>,
}

impl StereoSample {
    /// Builds the LR pair by bicubic downscaling of the HR pair.
    pub fn from_hr(hr_left: Tensor<f32>, hr_right: Tensor<f32>, scale: usize) -> Result<Self> {
        if hr_left.shape() != hr_right.shape() {
            return Err(Error::shape(
                "stereo_sample",
                format!("left {:?} vs right {:?}", hr_left.shape(), hr_right.shape()),
            ));
        }
        Ok(StereoSample {
            lr_left: bicubic::downscale(&hr_left, scale)?,
            lr_right: bicubic::downscale(&hr_right, scale)?,
            hr_left,
            hr_right,
            scale,
            disparity: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.lr_left.shape()[0]
    }

    /// LR `(height, width)`.
    pub fn lr_size(&self) -> (usize, usize) {
        (self.lr_left.shape()[1], self.lr_left.shape()[2])
    }

    /// Disparity in LR pixels, sampled at the LR pixel centres.
    pub fn lr_disparity(&self) -> Option<Tensor<f32>> {
        let d = self.disparity.as_ref()?;
        let s = self.scale;
        let (h, w) = self.lr_size();
        let hw = d.shape()[1];
        Some(Tensor::from_fn([h, w], |i| {
            let (y, x) = (i / w, i % w);
            // average of the s×s block
            let mut acc = 0.0;
            for dy in 0..s {
                for dx in 0..s {
                    acc += d.data()[(y * s + dy) * hw + x * s + dx];
                }
            }
            acc / (s * s) as f32 / s as f32
        }))
    }

    /// Checks the shape and range invariants.
    pub fn validate(&self) -> Result<()> {
        let lr = self.lr_left.shape();
        let hr = self.hr_left.shape();
        let bad = |msg: String| Err(Error::Invalid(format!("invalid stereo sample: {msg}")));
        if self.lr_right.shape() != lr || self.hr_right.shape() != hr {
            return bad("left/right shapes differ".into());
        }
        if lr.len() != 3 || hr.len() != 3 || lr[0] != hr[0] {
            return bad(format!("LR {lr:?} / HR {hr:?} are not matching [C,H,W]"));
        }
        if !matches!(self.scale, 1..=8) || hr[1] != lr[1] * self.scale || hr[2] != lr[2] * self.scale {
            return bad(format!("HR {hr:?} is not {}x LR {lr:?}", self.scale));
        }
        for t in [&self.lr_left, &self.lr_right, &self.hr_left, &self.hr_right] {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("pixel outside [0,1]".into());
            }
        }
        if let Some(d) = &self.disparity {
            if d.shape() != [hr[1], hr[2]] {
                return bad(format!("disparity {:?} does not match HR grid", d.shape()));
            }
        }
        Ok(())
    }
}
