use log::warn;

use super::sample::StereoSample;
use crate::error::Result;
use crate::tensor::Tensor;

/// LR patch geometry. The default is 30×90 with stride 20.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            height: 30,
            width: 90,
            stride: 20,
        }
    }
}

/// Top-left offsets along one axis; no partial tail position.
pub fn offsets(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if extent < patch || stride == 0 {
        return Vec::new();
    }
    (0..=(extent - patch) / stride).map(|i| i * stride).collect()
}

/// Crops `[C, H, W]` to `h×w` at `(y, x)`.
pub fn crop(img: &Tensor<f32>, y: usize, x: usize, h: usize, w: usize) -> Tensor<f32> {
    let (c, ih, iw) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    assert!(y + h <= ih && x + w <= iw, "crop out of bounds");
    Tensor::from_fn([c, h, w], |i| {
        let (ch, r, col) = (i / (h * w), (i / w) % h, i % w);
        img.data()[(ch * ih + y + r) * iw + x + col]
    })
}

pub(crate) fn crop_plane(d: &Tensor<f32>, y: usize, x: usize, h: usize, w: usize) -> Tensor<f32> {
    let iw = d.shape()[1];
    Tensor::from_fn([h, w], |i| d.data()[(y + i / w) * iw + x + i % w])
}

/// Crops a sample at LR offset `(y, x)` with LR extents `h×w`.
pub fn crop_sample(s: &StereoSample, y: usize, x: usize, h: usize, w: usize) -> StereoSample {
    let k = s.scale;
    StereoSample {
        lr_left: crop(&s.lr_left, y, x, h, w),
        lr_right: crop(&s.lr_right, y, x, h, w),
        hr_left: crop(&s.hr_left, y * k, x * k, h * k, w * k),
        hr_right: crop(&s.hr_right, y * k, x * k, h * k, w * k),
        scale: k,
        disparity: s
            .disparity
            .as_ref()
            .map(|d| crop_plane(d, y * k, x * k, h * k, w * k)),
    }
}

/// Cuts a full-frame sample into LR patches on a regular stride grid,
/// identical for both eyes. Frames smaller than a patch yield nothing.
pub fn extract_patches(frame: &StereoSample, spec: PatchSpec) -> Result<Vec<StereoSample>> {
    let (h, w) = frame.lr_size();
    let ys = offsets(h, spec.height, spec.stride);
    let xs = offsets(w, spec.width, spec.stride);
    if ys.is_empty() || xs.is_empty() {
        warn!(
            "frame {h}x{w} is smaller than the {}x{} patch; no patches extracted",
            spec.height, spec.width
        );
        return Ok(Vec::new());
    }
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .map(|(y, x)| crop_sample(frame, y, x, spec.height, spec.width))
        .collect())
}
