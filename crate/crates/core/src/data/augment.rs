use rand::Rng;

use super::patches::crop_sample;
use super::sample::StereoSample;
use crate::tensor::Tensor;

/// Which augmentations [`augment`] may draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// LR crop extents; `None` disables random cropping.
    pub crop: Option<(usize, usize)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_horizontal: true,
            flip_vertical: true,
            crop: None,
        }
    }
}

fn mirror_cols(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.shape().last().unwrap();
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

fn mirror_rows(t: &Tensor<f32>) -> Tensor<f32> {
    let sh = t.shape();
    let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
    let mut out = t.clone();
    for (plane_out, plane_in) in out.data_mut().chunks_exact_mut(h * w).zip(t.data().chunks_exact(h * w)) {
        for y in 0..h {
            plane_out[y * w..(y + 1) * w].copy_from_slice(&plane_in[(h - 1 - y) * w..(h - y) * w]);
        }
    }
    out
}

/// Mirrors both eyes left-right and swaps them, which keeps the pair a valid
/// rectified stereo pair with the same disparity sign.
pub fn flip_horizontal(s: &StereoSample) -> StereoSample {
    StereoSample {
        lr_left: mirror_cols(&s.lr_right),
        lr_right: mirror_cols(&s.lr_left),
        hr_left: mirror_cols(&s.hr_right),
        hr_right: mirror_cols(&s.hr_left),
        scale: s.scale,
        disparity: s.disparity.as_ref().map(mirror_cols),
    }
}

pub fn flip_vertical(s: &StereoSample) -> StereoSample {
    StereoSample {
        lr_left: mirror_rows(&s.lr_left),
        lr_right: mirror_rows(&s.lr_right),
        hr_left: mirror_rows(&s.hr_left),
        hr_right: mirror_rows(&s.hr_right),
        scale: s.scale,
        disparity: s.disparity.as_ref().map(mirror_rows),
    }
}

/// Random flips (each with probability ½) and an optional random crop at
/// identical offsets for both eyes.
pub fn augment<R: Rng + ?Sized>(sample: &StereoSample, cfg: &AugmentConfig, rng: &mut R) -> StereoSample {
    let mut out = sample.clone();
    if cfg.flip_horizontal && rng.gen_bool(0.5) {
        out = flip_horizontal(&out);
    }
    if cfg.flip_vertical && rng.gen_bool(0.5) {
        out = flip_vertical(&out);
    }
    if let Some((ch, cw)) = cfg.crop {
        let (h, w) = out.lr_size();
        if ch <= h && cw <= w && (ch, cw) != (h, w) {
            let y = rng.gen_range(0..=h - ch);
            let x = rng.gen_range(0..=w - cw);
            out = crop_sample(&out, y, x, ch, cw);
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_stereo, SynthConfig};
    use rand::SeedableRng;

    fn sample() -> StereoSample {
        let cfg = SynthConfig {
            height: 24,
            width: 40,
            disparity: (2.0, 2.0),
            ..SynthConfig::default()
        };
        synth_stereo(5, &cfg).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
        assert_eq!(flip_vertical(&flip_vertical(&s)), s);
        flip_horizontal(&s).validate().unwrap();
        flip_vertical(&s).validate().unwrap();
    }

    #[test]
    fn horizontal_flip_keeps_epipolar_relation() {
        let s = flip_horizontal(&sample());
        let (h, w) = (s.hr_left.shape()[1], s.hr_left.shape()[2]);
        for y in 0..h {
            for x in 2..w {
                assert_eq!(s.hr_right.at(&[0, y, x]), s.hr_left.at(&[0, y, x - 2]));
            }
        }
        assert!(s.disparity.unwrap().data().iter().all(|&d| d == 2.0));
    }

    #[test]
    fn random_augment_keeps_invariants() {
        let s = sample();
        let cfg = AugmentConfig {
            crop: Some((6, 10)),
            ..AugmentConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = augment(&s, &cfg, &mut rng);
            a.validate().unwrap();
            assert_eq!(a.lr_size(), (6, 10));
        }
    }
}
