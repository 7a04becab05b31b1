//! Binary Netpbm rasters: PGM (P5, grayscale) and PPM (P6, RGB), maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a P5/P6 file into a `[C, H, W]` tensor with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes).map_err(|reason| Error::format(path, reason))
}

/// Writes a `[C, H, W]` tensor (C = 1 or 3) as P5/P6, rounding to 8 bits.
pub fn save_image(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_netpbm(img).map_err(|reason| Error::format(path, reason))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_netpbm(img: &Tensor<f32>) -> Result<Vec<u8>, String> {
    let sh = img.shape();
    if sh.len() != 3 || !(sh[0] == 1 || sh[0] == 3) {
        return Err(format!("expected [1|3, H, W] image, got {sh:?}"));
    }
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(to_u8(img.data()[(ch * h + y) * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor<f32>, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic `{other}` (expected P5 or P6)")),
    };
    let mut num = |what: &str| -> Result<usize, String> {
        let t = token()?;
        t.parse::<usize>().map_err(|_| format!("bad {what} `{t}`"))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = channels * w * h;
    if bytes.len() < start + need {
        return Err(format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(start)));
    }
    let raster = &bytes[start..start + need];
    let mut data = vec![0.0f32; need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = raster[(y * w + x) * channels + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new([channels, h, w], data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn roundtrip_is_lossless_for_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for c in [1, 3] {
            let img = Tensor::from_fn([c, 7, 5], |_| rng.gen_range(0..=255u8) as f32 / 255.0);
            let p = dir.path().join(format!("x{c}.pnm"));
            save_image(&p, &img).unwrap();
            let first = fs::read(&p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back, img);
            save_image(&p, &back).unwrap();
            assert_eq!(fs::read(&p).unwrap(), first);
        }
    }

    #[test]
    fn gray_128_normalizes() {
        let mut bytes = b"P5\n# comment\n16 16\n255\n".to_vec();
        bytes.extend(std::iter::repeat(128u8).take(256));
        let t = decode_netpbm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 16, 16]);
        assert!(t.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn errors_name_path_and_reason() {
        let err = load_image("/nonexistent/frame.pgm").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/frame.pgm"));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        let err = load_image(&p).unwrap_err().to_string();
        assert!(err.contains("bad.pgm") && err.contains("P2"), "{err}");
        fs::write(&p, b"P5\n4 4\n255\n\x00\x01").unwrap();
        assert!(load_image(&p).unwrap_err().to_string().contains("truncated"));
    }
}
