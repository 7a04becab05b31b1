//! Training objective: reconstruction MSE plus the disparity terms
//! (cross-scale mask consistency, photometric warp error, mask smoothness
//! and left-right cycle consistency).
//!
//! Every term is mean-reduced per element so `alpha` keeps the same meaning
//! across patch sizes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::apam::{warp, MaskPair};
use crate::model::ForwardOutputs;
use crate::tensor::{Element, Graph, Tensor, Var};

/// Second difference term of the smoothness loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SmoothnessVariant {
    /// `|M(i,j,k) − M(i,j+1,k+1)|`, along the disparity diagonal.
    #[default]
    Diagonal,
    /// `|M(i,j,k) − M(i,j,k+1)|`.
    Horizontal,
}

impl fmt::Display for SmoothnessVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoothnessVariant::Diagonal => "diagonal",
            SmoothnessVariant::Horizontal => "horizontal",
        })
    }
}

impl FromStr for SmoothnessVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(SmoothnessVariant::Diagonal),
            "horizontal" => Ok(SmoothnessVariant::Horizontal),
            other => Err(Error::Config(format!("unknown smoothness variant '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the disparity terms.
    pub alpha: f64,
    pub smoothness: SmoothnessVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.005,
            smoothness: SmoothnessVariant::Diagonal,
        }
    }
}

fn require_same<T: Element>(g: &Graph<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn mask_dims<T: Element>(g: &Graph<T>, m: Var, op: &'static str) -> Result<[usize; 3]> {
    match *g.shape(m) {
        [n, h, w, w2] if w == w2 => Ok([n, h, w]),
        ref s => Err(Error::shape(op, format!("expected [N,H,W,W] mask, got {s:?}"))),
    }
}

fn mean_square_diff<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.square(d)?;
    g.mean(d)
}

fn mean_abs_diff<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Mean squared error of both eyes, summed.
pub fn mse_loss<T: Element>(g: &mut Graph<T>, sr_left: Var, sr_right: Var, hr_left: Var, hr_right: Var) -> Result<Var> {
    require_same(g, sr_left, hr_left, "mse_loss")?;
    require_same(g, sr_right, hr_right, "mse_loss")?;
    let l = mean_square_diff(g, sr_left, hr_left)?;
    let r = mean_square_diff(g, sr_right, hr_right)?;
    g.add(l, r)
}

/// Trilinear upsampling of an LR mask by `s` on all three mask axes,
/// followed by row renormalisation.
pub fn upsample_mask<T: Element>(g: &mut Graph<T>, mask: Var, s: usize) -> Result<Var> {
    mask_dims(g, mask, "upsample_mask")?;
    let up = g.trilinear_upsample(mask, [s, s, s])?;
    g.normalize_lastdim(up)
}

/// Cross-scale consistency between the LR-pass and SR-pass masks.
pub fn disparity_consistency_loss<T: Element>(g: &mut Graph<T>, lr: MaskPair, sr: MaskPair, s: usize) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    for (small, big) in [(lr.left_to_right, sr.left_to_right), (lr.right_to_left, sr.right_to_left)] {
        let [n, h, w] = mask_dims(g, small, "disparity_consistency_loss")?;
        if mask_dims(g, big, "disparity_consistency_loss")? != [n, s * h, s * w] {
            return Err(Error::shape(
                "disparity_consistency_loss",
                format!("LR mask {:?} at scale {s} does not match SR mask {:?}", g.shape(small), g.shape(big)),
            ));
        }
        let up = upsample_mask(g, small, s)?;
        terms.push(mean_square_diff(g, up, big)?);
    }
    g.add(terms[0], terms[1])
}

/// Mean absolute warp error of both eyes.
pub fn photometric_loss<T: Element>(g: &mut Graph<T>, left: Var, right: Var, masks: MaskPair) -> Result<Var> {
    require_same(g, left, right, "photometric_loss")?;
    let right_in_left = warp(g, masks.right_to_left, right)?;
    let left_in_right = warp(g, masks.left_to_right, left)?;
    let l = mean_abs_diff(g, left, right_in_left)?;
    let r = mean_abs_diff(g, right, left_in_right)?;
    g.add(l, r)
}

/// Sum of absolute neighbour differences of one mask, divided by its element
/// count. Pairs that fall outside the mask are dropped.
pub fn smoothness_loss<T: Element>(g: &mut Graph<T>, mask: Var, variant: SmoothnessVariant) -> Result<Var> {
    let [n, h, w] = mask_dims(g, mask, "smoothness_loss")?;
    let numel = (n * h * w * w) as f64;
    let mut parts = Vec::with_capacity(2);
    if h > 1 {
        let a = g.narrow(mask, 1, 0, h - 1)?;
        let b = g.narrow(mask, 1, 1, h - 1)?;
        let d = g.sub(a, b)?;
        let d = g.abs(d)?;
        parts.push(g.sum(d)?);
    }
    if w > 1 {
        let (a, b) = match variant {
            SmoothnessVariant::Diagonal => {
                let a = g.narrow(mask, 2, 0, w - 1)?;
                let a = g.narrow(a, 3, 0, w - 1)?;
                let b = g.narrow(mask, 2, 1, w - 1)?;
                let b = g.narrow(b, 3, 1, w - 1)?;
                (a, b)
            }
            SmoothnessVariant::Horizontal => (g.narrow(mask, 3, 0, w - 1)?, g.narrow(mask, 3, 1, w - 1)?),
        };
        let d = g.sub(a, b)?;
        let d = g.abs(d)?;
        parts.push(g.sum(d)?);
    }
    let total = match parts[..] {
        [] => g.constant(Tensor::scalar(T::zero())),
        [p] => p,
        [p, q] => g.add(p, q)?,
        _ => unreachable!(),
    };
    g.scale(total, T::of(1.0 / numel))
}

/// Per-row products `M_{l→r}·M_{r→l}` and `M_{r→l}·M_{l→r}`, each `[N·H, W, W]`.
pub fn cycle_products<T: Element>(g: &mut Graph<T>, masks: MaskPair) -> Result<(Var, Var)> {
    require_same(g, masks.left_to_right, masks.right_to_left, "cycle_loss")?;
    let [n, h, w] = mask_dims(g, masks.left_to_right, "cycle_loss")?;
    let lr = g.reshape(masks.left_to_right, &[n * h, w, w])?;
    let rl = g.reshape(masks.right_to_left, &[n * h, w, w])?;
    Ok((g.batch_matmul(lr, rl)?, g.batch_matmul(rl, lr)?))
}

/// Mean absolute deviation of both per-row round-trip products from identity.
pub fn cycle_loss<T: Element>(g: &mut Graph<T>, masks: MaskPair) -> Result<Var> {
    let (a, b) = cycle_products(g, masks)?;
    let s = g.shape(a).to_vec();
    let eye = g.constant(Tensor::eye_stack(s[0], s[1]));
    let la = mean_abs_diff(g, a, eye)?;
    let lb = mean_abs_diff(g, b, eye)?;
    g.add(la, lb)
}

/// Graph handles of the disparity-related terms.
#[derive(Clone, Copy, Debug)]
pub struct DisparityTerms {
    pub dc: Var,
    pub apam: Var,
    pub photo: Var,
    pub smooth_lr: Var,
    pub smooth_rl: Var,
    pub cycle: Var,
}

/// Graph handles of one sample's loss.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    /// Absent when `alpha == 0`: the terms are then not built at all.
    pub disparity: Option<DisparityTerms>,
}

/// Image handles the loss needs, each `[1, C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct Targets {
    pub lr_left: Var,
    pub lr_right: Var,
    pub hr_left: Var,
    pub hr_right: Var,
}

/// `mse + alpha·(dc + photo + smooth_lr + smooth_rl + cycle)` for one sample.
pub fn compute_loss<T: Element>(
    g: &mut Graph<T>,
    out: &ForwardOutputs,
    targets: &Targets,
    scale: usize,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be a finite non-negative number, got {}", cfg.alpha)));
    }
    let mse = mse_loss(g, out.sr_left, out.sr_right, targets.hr_left, targets.hr_right)?;
    if cfg.alpha == 0.0 {
        return Ok(LossTerms {
            total: mse,
            mse,
            disparity: None,
        });
    }
    let sr_masks = out
        .sr_masks
        .ok_or_else(|| Error::Config("disparity terms need the SR-pass masks".into()))?;
    let dc = disparity_consistency_loss(g, out.lr_masks, sr_masks, scale)?;
    let photo = photometric_loss(g, targets.lr_left, targets.lr_right, out.lr_masks)?;
    let smooth_lr = smoothness_loss(g, out.lr_masks.left_to_right, cfg.smoothness)?;
    let smooth_rl = smoothness_loss(g, out.lr_masks.right_to_left, cfg.smoothness)?;
    let cycle = cycle_loss(g, out.lr_masks)?;
    let apam = g.add(photo, smooth_lr)?;
    let apam = g.add(apam, smooth_rl)?;
    let apam = g.add(apam, cycle)?;
    let reg = g.add(dc, apam)?;
    let reg = g.scale(reg, T::of(cfg.alpha))?;
    let total = g.add(mse, reg)?;
    Ok(LossTerms {
        total,
        mse,
        disparity: Some(DisparityTerms {
            dc,
            apam,
            photo,
            smooth_lr,
            smooth_rl,
            cycle,
        }),
    })
}

/// Scalar loss values of one sample or a batch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub dc: f64,
    pub apam: f64,
    pub photo: f64,
    pub smooth_lr: f64,
    pub smooth_rl: f64,
    pub cycle: f64,
    pub alpha: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,total,mse,dc,apam,photo,smooth_lr,smooth_rl,cycle";

impl LossBreakdown {
    /// Reads the values of `terms` from `g`.
    pub fn read<T: Element>(g: &Graph<T>, terms: &LossTerms, alpha: f64) -> Self {
        let v = |x: Var| g.value(x).item().f64();
        let mut b = LossBreakdown {
            total: v(terms.total),
            mse: v(terms.mse),
            alpha,
            ..LossBreakdown::default()
        };
        if let Some(d) = &terms.disparity {
            b.dc = v(d.dc);
            b.apam = v(d.apam);
            b.photo = v(d.photo);
            b.smooth_lr = v(d.smooth_lr);
            b.smooth_rl = v(d.smooth_rl);
            b.cycle = v(d.cycle);
        }
        b
    }

    /// Field-wise mean. `parts` must share one `alpha`.
    pub fn mean(parts: &[LossBreakdown]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Invalid("mean of no loss values".into()))?;
        if parts.iter().any(|p| p.alpha != first.alpha) {
            return Err(Error::Invalid("loss values with different alpha".into()));
        }
        let n = parts.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
        Ok(LossBreakdown {
            total: avg(|p| p.total),
            mse: avg(|p| p.mse),
            dc: avg(|p| p.dc),
            apam: avg(|p| p.apam),
            photo: avg(|p| p.photo),
            smooth_lr: avg(|p| p.smooth_lr),
            smooth_rl: avg(|p| p.smooth_rl),
            cycle: avg(|p| p.cycle),
            alpha: first.alpha,
        })
    }

    /// Largest violation of the component identities and of non-negativity.
    pub fn invariant_error(&self) -> f64 {
        let parts = [self.mse, self.dc, self.apam, self.photo, self.smooth_lr, self.smooth_rl, self.cycle, self.total];
        let negative = parts.iter().map(|&p| (-p).max(0.0)).fold(0.0, f64::max);
        let total = (self.total - (self.mse + self.alpha * (self.dc + self.apam))).abs();
        let apam = (self.apam - (self.photo + self.smooth_lr + self.smooth_rl + self.cycle)).abs();
        negative.max(total).max(apam)
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{}",
            self.total, self.mse, self.dc, self.apam, self.photo, self.smooth_lr, self.smooth_rl, self.cycle
        )
    }
}
