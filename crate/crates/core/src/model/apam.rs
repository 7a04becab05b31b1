//! Atrous parallax attention: bidirectional disparity masks, warping and
//! the per-eye SR reconstruction head.

use super::feature::{ResAsppBlock, ResidualBlock};
use super::layers::Conv;
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

/// Per-row attention volume `[H, W, W]`; each `(i, j, ·)` slice is a
/// distribution over source columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMask<T: Element = f32> {
    values: Tensor<T>,
    direction: Direction,
}

impl<T: Element> DisparityMask<T> {
    /// Wraps `[H, W, W]` (or `[1, H, W, W]`) values, checking normalisation.
    pub fn new(values: Tensor<T>, direction: Direction) -> Result<Self> {
        let values = match values.shape() {
            [1, h, w, w2] => {
                let s = [*h, *w, *w2];
                values.reshape(s)?
            }
            _ => values,
        };
        let sh = values.shape();
        if sh.len() != 3 || sh[1] != sh[2] {
            return Err(Error::shape("disparity_mask", format!("expected [H,W,W], got {sh:?}")));
        }
        let mask = DisparityMask { values, direction };
        if mask.max_row_error() > 1e-5 || mask.values.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::Invalid("disparity mask rows are not distributions".into()));
        }
        Ok(mask)
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        row_sum_error(&self.values)
    }

    /// `argmax_b M[i, a, b] - a` for every `(i, a)`, as `[H, W]`.
    pub fn argmax_offset(&self) -> Vec<Vec<isize>> {
        let w = self.width();
        self.values
            .data()
            .chunks_exact(w * w)
            .map(|plane| {
                plane
                    .chunks_exact(w)
                    .enumerate()
                    .map(|(a, row)| {
                        let (b, _) = row
                            .iter()
                            .enumerate()
                            .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
                        b as isize - a as isize
                    })
                    .collect()
            })
            .collect()
    }
}

/// Largest `|Σ_last − 1|` over all last-axis slices.
pub fn row_sum_error<T: Element>(t: &Tensor<T>) -> f64 {
    let w = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks_exact(w.max(1))
        .map(|r| (r.iter().copied().sum::<T>().f64() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Graph handles of both masks, each `[N, H, W, W]`.
#[derive(Clone, Copy, Debug)]
pub struct MaskPair {
    /// Warps left-eye content into the right view.
    pub left_to_right: Var,
    /// Warps right-eye content into the left view.
    pub right_to_left: Var,
}

impl MaskPair {
    pub fn swapped(self) -> MaskPair {
        MaskPair {
            left_to_right: self.right_to_left,
            right_to_left: self.left_to_right,
        }
    }
}

/// `out[n, c, i, a] = Σ_b mask[n, i, a, b] · img[n, c, i, b]`.
pub fn warp<T: Element>(g: &mut Graph<T>, mask: Var, img: Var) -> Result<Var> {
    let (ms, is) = (g.shape(mask).to_vec(), g.shape(img).to_vec());
    if ms.len() != 4 || is.len() != 4 || ms[0] != is[0] || ms[1] != is[2] || ms[2] != is[3] || ms[3] != is[3] {
        return Err(Error::shape("warp", format!("mask {ms:?} does not fit image {is:?}")));
    }
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    let rows = g.permute(img, &[0, 2, 3, 1])?;
    let rows = g.reshape(rows, &[n * h, w, c])?;
    let m = g.reshape(mask, &[n * h, w, w])?;
    let out = g.batch_matmul(m, rows)?;
    let out = g.reshape(out, &[n, h, w, c])?;
    g.permute(out, &[0, 3, 1, 2])
}

/// Shared pre-attention pyramid block plus query/key projections.
#[derive(Clone, Debug, PartialEq)]
pub struct Apam {
    pub aspp: ResAsppBlock,
    pub query: Conv,
    pub key: Conv,
}

impl Apam {
    pub fn register<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Apam {
            aspp: ResAsppBlock::register(store, &format!("{name}.aspp"), channels),
            query: Conv::register(store, &format!("{name}.query"), channels, channels, 1, 1),
            key: Conv::register(store, &format!("{name}.key"), channels, channels, 1, 1),
        }
    }

    /// Score `S[i, a, b] = <Q[:, i, a], K[:, i, b]>`; `M_{r→l} = softmax_b S`
    /// and `M_{l→r} = softmax_a Sᵀ`.
    pub fn masks<T: Element>(&self, g: &mut Graph<T>, p: &Bound, fl: Var, fr: Var, slope: T) -> Result<MaskPair> {
        if g.shape(fl) != g.shape(fr) || g.shape(fl).len() != 4 {
            return Err(Error::shape(
                "apam_masks",
                format!("left {:?} vs right {:?}", g.shape(fl), g.shape(fr)),
            ));
        }
        let sh = g.shape(fl).to_vec();
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let gl = self.aspp.forward(g, p, fl, slope)?;
        let gr = self.aspp.forward(g, p, fr, slope)?;
        let q = self.query.forward(g, p, gl)?;
        let k = self.key.forward(g, p, gr)?;
        let q = g.permute(q, &[0, 2, 3, 1])?;
        let q = g.reshape(q, &[n * h, w, c])?;
        let k = g.permute(k, &[0, 2, 1, 3])?;
        let k = g.reshape(k, &[n * h, c, w])?;
        let score = g.batch_matmul(q, k)?;
        let rl = g.softmax_lastdim(score)?;
        let st = g.transpose_last2(score)?;
        let lr = g.softmax_lastdim(st)?;
        Ok(MaskPair {
            left_to_right: g.reshape(lr, &[n, h, w, w])?,
            right_to_left: g.reshape(rl, &[n, h, w, w])?,
        })
    }
}

/// `fuse(own ‖ warped) → 2 residual blocks → conv → pixel_shuffle → conv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstructor {
    pub fuse: Conv,
    pub res: [ResidualBlock; 2],
    pub upscale: Conv,
    pub output: Conv,
    scale: usize,
}

impl Reconstructor {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        img_channels: usize,
        scale: usize,
    ) -> Self {
        Reconstructor {
            fuse: Conv::register(store, &format!("{name}.fuse"), 2 * channels, channels, 1, 1),
            res: [0, 1].map(|i| ResidualBlock::register(store, &format!("{name}.res{i}"), channels)),
            upscale: Conv::register(store, &format!("{name}.upscale"), channels, img_channels * scale * scale, 3, 1),
            output: Conv::register(store, &format!("{name}.output"), img_channels, img_channels, 3, 1),
            scale,
        }
    }

    /// Network residual at SR scale; the caller adds the bicubic base.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, own: Var, warped: Var, slope: T) -> Result<Var> {
        let x = g.concat(&[own, warped], 1)?;
        let x = self.fuse.forward(g, p, x)?;
        let x = self.res[0].forward(g, p, x, slope)?;
        let x = self.res[1].forward(g, p, x, slope)?;
        let x = self.upscale.forward(g, p, x)?;
        let x = g.pixel_shuffle(x, self.scale)?;
        self.output.forward(g, p, x)
    }
}
