//! Procedural stereo pairs with known disparity.
//!
//! The left image is a continuous intensity field (multi-octave value noise,
//! soft ellipses and thin vessel-like strokes) sampled at pixel centres. The
//! right image samples the same field at `x - d(x, y)`, so integer disparities
//! give exact pixel shifts and fractional ones add genuine sub-pixel detail.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// HR frame height.
    pub height: usize,
    /// HR frame width.
    pub width: usize,
    pub scale: usize,
    pub channels: usize,
    /// Disparity range in HR pixels, `(min, max)`.
    pub disparity: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 192,
            scale: 2,
            channels: 1,
            disparity: (0.0, 8.0),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes several words into one seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

#[derive(Clone, Debug)]
struct ValueNoise {
    seed: u64,
    cell: f64,
}

impl ValueNoise {
    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let h = splitmix(self.seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Smooth noise in `[0, 1]`.
    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor(), gy.floor());
        let (tx, ty) = (gx - x0, gy - y0);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(tx), s(ty));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = self.lattice(ix, iy) * (1.0 - sx) + self.lattice(ix + 1, iy) * sx;
        let bot = self.lattice(ix, iy + 1) * (1.0 - sx) + self.lattice(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }
}

#[derive(Clone, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    intensity: f64,
}

#[derive(Clone, Debug)]
struct Vessel {
    offset: f64,
    amplitude: f64,
    wavelength: f64,
    phase: f64,
    slope: f64,
    thickness: f64,
    darkness: f64,
    vertical: bool,
}

/// A continuous grayscale scene.
#[derive(Clone, Debug)]
pub struct Scene {
    octaves: Vec<(ValueNoise, f64)>,
    ellipses: Vec<Ellipse>,
    vessels: Vec<Vessel>,
}

impl Scene {
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (height as f64, width as f64);
        let octaves = [(20.0, 0.25), (10.0, 0.2), (5.0, 0.14), (2.5, 0.08)]
            .into_iter()
            .map(|(cell, amp)| (ValueNoise { seed: rng.gen(), cell }, amp))
            .collect();
        let n_ellipses = 3 + (width * height) / 1500;
        let ellipses = (0..n_ellipses)
            .map(|_| Ellipse {
                cx: rng.gen_range(0.0..w),
                cy: rng.gen_range(0.0..h),
                a: rng.gen_range(3.0..(w / 6.0).max(4.0)),
                b: rng.gen_range(2.0..(h / 4.0).max(3.0)),
                theta: rng.gen_range(0.0..PI),
                intensity: rng.gen_range(-0.25..0.25),
            })
            .collect();
        let n_vessels = 2 + (width * height) / 2500;
        let vessels = (0..n_vessels)
            .map(|_| {
                let vertical = rng.gen_bool(0.5);
                Vessel {
                    offset: rng.gen_range(0.0..if vertical { w } else { h }),
                    amplitude: rng.gen_range(1.0..8.0),
                    wavelength: rng.gen_range(15.0..60.0),
                    phase: rng.gen_range(0.0..2.0 * PI),
                    slope: rng.gen_range(-0.3..0.3),
                    thickness: rng.gen_range(1.0..3.5),
                    darkness: rng.gen_range(0.15..0.4),
                    vertical,
                }
            })
            .collect();
        Scene {
            octaves,
            ellipses,
            vessels,
        }
    }

    /// Intensity at continuous position `(x, y)`, clamped to `[0, 1]`.
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for (n, amp) in &self.octaves {
            v += amp * (n.at(x, y) - 0.5) * 2.0;
        }
        for e in &self.ellipses {
            let (dx, dy) = (x - e.cx, y - e.cy);
            let (c, s) = (e.theta.cos(), e.theta.sin());
            let u = (dx * c + dy * s) / e.a;
            let t = (-dx * s + dy * c) / e.b;
            let r = (u * u + t * t).sqrt();
            // ~1px soft edge
            let cover = ((1.0 - r) * e.a.min(e.b) + 0.5).clamp(0.0, 1.0);
            v += e.intensity * cover;
        }
        for ves in &self.vessels {
            let (along, across) = if ves.vertical { (y, x) } else { (x, y) };
            let k = 2.0 * PI / ves.wavelength;
            let centre = ves.offset + ves.amplitude * (k * along + ves.phase).sin() + ves.slope * along;
            let deriv = ves.amplitude * k * (k * along + ves.phase).cos() + ves.slope;
            let dist = (across - centre).abs() / (1.0 + deriv * deriv).sqrt();
            let cover = (ves.thickness / 2.0 - dist + 0.5).clamp(0.0, 1.0);
            v -= ves.darkness * cover;
        }
        v.clamp(0.0, 1.0)
    }
}

const CHANNEL_GAIN: [(f64, f64); 3] = [(1.0, 0.0), (0.72, 0.06), (0.66, 0.1)];

fn render(scene: &Scene, cfg: &SynthConfig, shift: impl Fn(usize, usize) -> f64) -> Tensor<f32> {
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let mut gray = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            gray[y * w + x] = scene.intensity(x as f64 - shift(y, x), y as f64);
        }
    }
    Tensor::from_fn([c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        let (g, o) = if c == 1 { (1.0, 0.0) } else { CHANNEL_GAIN[ch] };
        (gray[p] * g + o).clamp(0.0, 1.0) as f32
    })
}

/// Smooth disparity field on the HR grid within `cfg.disparity`.
pub fn disparity_field(seed: u64, cfg: &SynthConfig) -> Tensor<f32> {
    let (lo, hi) = cfg.disparity;
    let noise = ValueNoise {
        seed: mix_seed(&[seed, 0xD15]),
        cell: (cfg.height.max(cfg.width) as f64 / 2.0).max(1.0),
    };
    Tensor::from_fn([cfg.height, cfg.width], |i| {
        if lo == hi {
            lo as f32
        } else {
            let (y, x) = (i / cfg.width, i % cfg.width);
            (lo + (hi - lo) * noise.at(x as f64, y as f64)) as f32
        }
    })
}

/// Generates one full-frame stereo sample with its ground-truth disparity.
pub fn synth_stereo(seed: u64, cfg: &SynthConfig) -> Result<StereoSample> {
    let (lo, hi) = cfg.disparity;
    if cfg.height == 0 || cfg.width == 0 || cfg.scale == 0 {
        return Err(Error::Config("synthetic frame extents and scale must be positive".into()));
    }
    if cfg.height % cfg.scale != 0 || cfg.width % cfg.scale != 0 {
        return Err(Error::Config(format!(
            "frame {}x{} is not divisible by scale {}",
            cfg.height, cfg.width, cfg.scale
        )));
    }
    if !(lo <= hi && lo.abs() < cfg.width as f64 && hi.abs() < cfg.width as f64) {
        return Err(Error::Config(format!("disparity range {lo}..{hi} invalid for width {}", cfg.width)));
    }
    if !(cfg.channels == 1 || cfg.channels == 3) {
        return Err(Error::Config(format!("{} channels unsupported", cfg.channels)));
    }
    let scene = Scene::random(seed, cfg.height, cfg.width);
    let disp = disparity_field(seed, cfg);
    let left = render(&scene, cfg, |_, _| 0.0);
    let right = render(&scene, cfg, |y, x| disp.data()[y * cfg.width + x] as f64);
    let mut sample = StereoSample::from_hr(left, right, cfg.scale)?;
    sample.disparity = Some(disp);
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_gives_identical_eyes() {
        let cfg = SynthConfig {
            height: 16,
            width: 32,
            disparity: (0.0, 0.0),
            ..SynthConfig::default()
        };
        let s = synth_stereo(1, &cfg).unwrap();
        assert_eq!(s.hr_left, s.hr_right);
        assert_eq!(s.lr_left, s.lr_right);
        s.validate().unwrap();
    }

    #[test]
    fn constant_disparity_is_a_pure_shift() {
        for d in [1usize, 3, 6] {
            let cfg = SynthConfig {
                height: 20,
                width: 40,
                disparity: (d as f64, d as f64),
                ..SynthConfig::default()
            };
            let s = synth_stereo(7, &cfg).unwrap();
            for y in 0..20 {
                for x in d..40 {
                    assert_eq!(s.hr_right.at(&[0, y, x]), s.hr_left.at(&[0, y, x - d]));
                }
            }
        }
    }

    #[test]
    fn lr_pair_shifts_by_disparity_over_scale() {
        let cfg = SynthConfig {
            height: 32,
            width: 96,
            disparity: (4.0, 4.0),
            ..SynthConfig::default()
        };
        let s = synth_stereo(11, &cfg).unwrap();
        let lr_d = s.lr_disparity().unwrap();
        assert!(lr_d.data().iter().all(|&v| v == 2.0));
        // interior, away from the clamped borders
        for y in 2..14 {
            for x in 6..44 {
                let (r, l) = (s.lr_right.at(&[0, y, x]), s.lr_left.at(&[0, y, x - 2]));
                assert!((r - l).abs() < 1e-6, "{r} vs {l}");
            }
        }
    }

    #[test]
    fn varying_field_stays_in_range_and_is_deterministic() {
        let cfg = SynthConfig {
            height: 24,
            width: 48,
            channels: 3,
            disparity: (1.0, 5.0),
            ..SynthConfig::default()
        };
        let a = synth_stereo(3, &cfg).unwrap();
        let b = synth_stereo(3, &cfg).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let d = a.disparity.as_ref().unwrap();
        assert!(d.data().iter().all(|&v| (1.0..=5.0).contains(&v)));
        let spread = d.data().iter().cloned().fold(f32::MIN, f32::max) - d.data().iter().cloned().fold(f32::MAX, f32::min);
        assert!(spread > 0.1);
        assert_ne!(synth_stereo(4, &cfg).unwrap().hr_left, a.hr_left);
    }

    #[test]
    fn texture_has_contrast() {
        let s = synth_stereo(9, &SynthConfig::default()).unwrap();
        let v = s.hr_left.data();
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / v.len() as f32;
        assert!(var.sqrt() > 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SynthConfig::default();
        cfg.disparity = (0.0, 500.0);
        assert!(synth_stereo(0, &cfg).is_err());
        cfg.disparity = (0.0, 1.0);
        cfg.width = 33;
        assert!(synth_stereo(0, &cfg).is_err());
    }
}
