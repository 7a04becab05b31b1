use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (KEYS_A + 2.0) * x * x * x - (KEYS_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        KEYS_A * x * x * x - 5.0 * KEYS_A * x * x + 8.0 * KEYS_A * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Four (index, weight) taps per output coordinate; half-pixel centres, edge clamp.
fn taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut out = [(0usize, 0.0); 4];
            for (k, slot) in out.iter_mut().enumerate() {
                let idx = (base as isize + k as isize - 1).clamp(0, n_in as isize - 1) as usize;
                *slot = (idx, keys_weight(t - (k as f64 - 1.0)));
            }
            out
        })
        .collect()
}

/// Bicubic resize of a `[C, H, W]` image (no antialiasing on downscale).
pub fn bicubic_resize<T: Element>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let sh = img.shape();
    if sh.len() != 3 {
        return Err(Error::shape("bicubic_resize", format!("expected [C,H,W], got {sh:?}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bicubic_resize", "target extents must be positive"));
    }
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let tx: Vec<[(usize, T); 4]> = tx.iter().map(|t| t.map(|(i, v)| (i, T::of(v)))).collect();
    let ty: Vec<[(usize, T); 4]> = ty.iter().map(|t| t.map(|(i, v)| (i, T::of(v)))).collect();

    let mut horiz = vec![T::zero(); c * h * out_w];
    for (row, dst) in img.data().chunks_exact(w).zip(horiz.chunks_exact_mut(out_w)) {
        for (d, t) in dst.iter_mut().zip(&tx) {
            *d = t.iter().fold(T::zero(), |acc, &(i, wt)| acc + wt * row[i]);
        }
    }
    let mut out = vec![T::zero(); c * out_h * out_w];
    for ch in 0..c {
        let src = &horiz[ch * h * out_w..(ch + 1) * h * out_w];
        for (oy, t) in ty.iter().enumerate() {
            let dst = &mut out[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
            for &(iy, wt) in t {
                let r = &src[iy * out_w..(iy + 1) * out_w];
                for (d, &v) in dst.iter_mut().zip(r) {
                    *d = *d + wt * v;
                }
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}

/// Bicubic resize by an integer factor, up (`s > 0`) or down.
pub fn upscale<T: Element>(img: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    bicubic_resize(img, img.shape()[1] * s, img.shape()[2] * s)
}

/// Bicubic downscale by an integer factor, clamped to `[0, 1]`.
pub fn downscale(img: &Tensor<f32>, s: usize) -> Result<Tensor<f32>> {
    let sh = img.shape();
    if sh.len() != 3 || sh[1] % s != 0 || sh[2] % s != 0 {
        return Err(Error::shape(
            "downscale",
            format!("extents of {sh:?} are not divisible by {s}"),
        ));
    }
    Ok(bicubic_resize(img, sh[1] / s, sh[2] / s)?.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward per-pixel evaluation of the 2-D Keys filter.
    fn oracle(img: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let kernel = |x: f64| {
            let a = -0.5;
            let x = x.abs();
            if x < 1.0 {
                1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0
            } else if x < 2.0 {
                a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
            } else {
                0.0
            }
        };
        Tensor::from_fn([1, oh, ow], |i| {
            let (oy, ox) = (i / ow, i % ow);
            let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
            let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
            let mut acc = 0.0;
            for ky in -1..=2 {
                for kx in -1..=2 {
                    let yy = sy.floor() as isize + ky;
                    let xx = sx.floor() as isize + kx;
                    let wy = kernel(sy - yy as f64);
                    let wx = kernel(sx - xx as f64);
                    let v = img.at(&[0, yy.clamp(0, h as isize - 1) as usize, xx.clamp(0, w as isize - 1) as usize]);
                    acc += wy * wx * v;
                }
            }
            acc
        })
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::<f64>::full([2, 6, 9], 0.37);
        for (h, w) in [(3, 3), (12, 18), (5, 11)] {
            let r = bicubic_resize(&img, h, w).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_resize() {
        let img = Tensor::<f32>::from_fn([1, 5, 7], |i| (i as f32 * 0.37).sin().abs());
        let r = bicubic_resize(&img, 5, 7).unwrap();
        assert!(r.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn ramp_downsample_matches_oracle() {
        let ramp = Tensor::<f64>::from_fn([1, 8, 8], |i| ((i / 8) * 8 + i % 8) as f64 / 63.0);
        let r = bicubic_resize(&ramp, 4, 4).unwrap();
        assert!(r.max_abs_diff(&oracle(&ramp, 4, 4)) < 1e-5);
        let noisy = Tensor::<f64>::from_fn([1, 8, 8], |i| ((i * 7919) % 101) as f64 / 100.0);
        for (h, w) in [(4, 4), (16, 16), (5, 13)] {
            assert!(bicubic_resize(&noisy, h, w).unwrap().max_abs_diff(&oracle(&noisy, h, w)) < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let img = Tensor::<f32>::from_fn([1, 9, 9], |i| (i as f32).cos());
        let a = bicubic_resize(&img, 4, 5).unwrap();
        let b = bicubic_resize(&img, 4, 5).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn keys_weights_partition_unity() {
        for t in [0.0, 0.1, 0.5, 0.77] {
            let s: f64 = (-1..=2).map(|k| keys_weight(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(keys_weight(1.0), 0.0);
        assert_eq!(keys_weight(2.0), 0.0);
    }
}
