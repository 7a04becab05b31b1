//! Image quality metrics and split-level evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{bicubic, StereoSample};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::model::Model;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Tensor<f32>, b: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    match *a.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, format!("expected [C,H,W], got {s:?}"))),
    }
}

/// `10·log10(peak² / mse)` over all channels jointly; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    check_pair(a, b, "psnr")?;
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let mse = se / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for (t, tap) in taps.iter().enumerate() {
            let src = &rows[(y + t) * wo..(y + t + 1) * wo];
            for (o, s) in out[y * wo..(y + 1) * wo].iter_mut().zip(src) {
                *o += tap * s;
            }
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5) over every
/// valid window position, averaged over positions and channels.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    let (c, h, w) = check_pair(a, b, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let range = ch * h * w..(ch + 1) * h * w;
        let x: Vec<f64> = a.data()[range.clone()].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data()[range].iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let mxx = filter_valid(&prod(&x, &x), h, w, &taps);
        let myy = filter_valid(&prod(&y, &y), h, w, &taps);
        let mxy = filter_valid(&prod(&x, &y), h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// What produces the SR images being scored.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Bicubic,
    Model(&'a Model<f32>),
}

impl Method<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Bicubic => "bicubic",
            Method::Model(_) => "dcssr",
        }
    }

    /// SR images for both eyes, clamped to `[0, 1]`.
    pub fn super_resolve(&self, sample: &StereoSample) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (l, r) = match self {
            Method::Bicubic => (
                bicubic::upscale(&sample.lr_left, sample.scale)?,
                bicubic::upscale(&sample.lr_right, sample.scale)?,
            ),
            Method::Model(m) => {
                if m.config().scale != sample.scale {
                    return Err(Error::Config(format!(
                        "model scale {} does not match data scale {}",
                        m.config().scale,
                        sample.scale
                    )));
                }
                m.super_resolve(&sample.lr_left, &sample.lr_right)?
            }
        };
        Ok((l.map(|v| v.clamp(0.0, 1.0)), r.map(|v| v.clamp(0.0, 1.0))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    /// `"left"` or `"right"`.
    pub eye: &'static str,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub scale: usize,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub const EVAL_CSV_HEADER: &str = "image_id,eye,psnr_db,ssim";

impl EvalReport {
    pub fn from_rows(method: impl Into<String>, scale: usize, rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("evaluation over an empty split".into()));
        }
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(EvalReport {
            method: method.into(),
            scale,
            rows,
            mean_psnr,
            mean_ssim,
        })
    }

    /// One row per image and eye, then `mean,both,…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.image_id, r.eye, r.psnr_db, r.ssim);
        }
        let _ = writeln!(out, "mean,both,{},{}", self.mean_psnr, self.mean_ssim);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores both eyes of every sample against its HR pair. Samples are
/// processed in parallel; rows come back in sample order.
pub fn evaluate(method: Method<'_>, samples: &[StereoSample], ids: &[String], exec: Execution) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation over an empty split".into()));
    }
    if ids.len() != samples.len() {
        return Err(Error::Invalid(format!("{} ids for {} samples", ids.len(), samples.len())));
    }
    let scored = try_map_indexed(exec, samples.len(), |i| {
        let s = &samples[i];
        let (l, r) = method.super_resolve(s)?;
        let row = |eye, sr: &Tensor<f32>, hr: &Tensor<f32>| -> Result<EvalRow> {
            Ok(EvalRow {
                image_id: ids[i].clone(),
                eye,
                psnr_db: psnr(sr, hr, 1.0)?,
                ssim: ssim(sr, hr, 1.0)?,
            })
        };
        Ok::<_, Error>([row("left", &l, &s.hr_left)?, row("right", &r, &s.hr_right)?])
    })?;
    EvalReport::from_rows(method.label(), samples[0].scale, scored.into_iter().flatten().collect())
}

/// Default ids: zero-padded sample indices.
pub fn index_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:05}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_stereo, SynthConfig};
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(shape: [usize; 3], seed: u64) -> Tensor<f32> {
        Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Direct-formula SSIM: explicit window sums at every position.
    fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let k = SSIM_WINDOW;
        let g1: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let z: f64 = g1.iter().sum::<f64>().powi(2);
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut acc = 0.0;
        let mut n = 0;
        for ch in 0..c {
            for y0 in 0..=h - k {
                for x0 in 0..=w - k {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..k {
                        for dx in 0..k {
                            let wgt = g1[dy] * g1[dx] / z;
                            let x = a.at(&[ch, y0 + dy, x0 + dx]) as f64;
                            let y = b.at(&[ch, y0 + dy, x0 + dx]) as f64;
                            mx += wgt * x;
                            my += wgt * y;
                            sxx += wgt * x * x;
                            syy += wgt * y * y;
                            sxy += wgt * x * y;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    n += 1;
                }
            }
        }
        acc / n as f64
    }

    #[test]
    fn psnr_examples() {
        let a = rand_img([1, 4, 5], 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        let zero = Tensor::zeros([3, 2, 2]);
        let full = Tensor::full([3, 2, 2], 1.0);
        assert_eq!(psnr(&zero, &full, 1.0).unwrap(), 0.0);
        assert!(psnr(&zero, &a, 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = rand_img([2, 16, 16], 2);
        let b = rand_img([2, 16, 16], 3);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        assert!(ssim(&rand_img([1, 10, 16], 4), &rand_img([1, 10, 16], 5), 1.0).is_err());
    }

    #[test]
    fn gaussian_taps_match_closed_form() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((t[5] / t[6] - (1.0f64 / 4.5).exp()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = rand_img([1, 24, 24], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let unit: Vec<f32> = (0..a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut prev = f64::INFINITY;
        for sigma in [0.01f32, 0.02, 0.04] {
            let noisy = Tensor::new(a.shape().to_vec(), a.data().iter().zip(&unit).map(|(v, n)| v + sigma * n).collect()).unwrap();
            let p = psnr(&a, &noisy, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    fn samples(n: usize) -> Vec<StereoSample> {
        let cfg = SynthConfig {
            height: 24,
            width: 32,
            ..SynthConfig::default()
        };
        (0..n).map(|i| synth_stereo(100 + i as u64, &cfg).unwrap()).collect()
    }

    #[test]
    fn evaluation_is_deterministic_and_zero_model_matches_bicubic() {
        let s = samples(3);
        let ids = index_ids(3);
        let a = evaluate(Method::Bicubic, &s, &ids, Execution::Parallel).unwrap();
        let b = evaluate(Method::Bicubic, &s, &ids, Execution::Sequential).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.mean_psnr.is_finite());
        assert_eq!(a.rows.len(), 6);
        let csv = a.to_csv();
        assert!(csv.starts_with(EVAL_CSV_HEADER));
        assert!(csv.lines().last().unwrap().starts_with("mean,both,"));

        let zero = Model::<f32>::new(ModelConfig {
            channels: 4,
            ..ModelConfig::default()
        });
        let m = evaluate(Method::Model(&zero), &s, &ids, Execution::Parallel).unwrap();
        assert_eq!(m.rows.iter().map(|r| (r.psnr_db, r.ssim)).collect::<Vec<_>>(), a.rows.iter().map(|r| (r.psnr_db, r.ssim)).collect::<Vec<_>>());
        assert!(evaluate(Method::Bicubic, &[], &[], Execution::Parallel).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn ssim_in_range(seed in any::<u64>(), h in 11usize..16, w in 11usize..16) {
                let a = rand_img([1, h, w], seed);
                let b = rand_img([1, h, w], seed ^ 0x55);
                let s = ssim(&a, &b, 1.0).unwrap();
                prop_assert!((-1.0..=1.0).contains(&s));
                prop_assert!(s < 1.0 - 1e-9);
            }
        }
    }
}
