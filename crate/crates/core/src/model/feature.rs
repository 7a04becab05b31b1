//! Shared-weight feature backbone: residual blocks alternating with
//! residual atrous spatial pyramid blocks.

use super::layers::Conv;
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

/// Dilation rates of the three pyramid branches.
pub const ASPP_DILATIONS: [usize; 3] = [1, 4, 8];

fn check_channels<T: Element>(g: &Graph<T>, x: Var, channels: usize, op: &'static str) -> Result<()> {
    let sh = g.shape(x);
    if sh.len() != 4 || sh[1] != channels {
        return Err(Error::shape(op, format!("expected [N,{channels},H,W], got {sh:?}")));
    }
    Ok(())
}

/// `y = x + conv2(act(conv1(x)))` with two 3×3 convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    channels: usize,
}

impl ResidualBlock {
    pub fn register<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv::register(store, &format!("{name}.conv1"), channels, channels, 3, 1),
            conv2: Conv::register(store, &format!("{name}.conv2"), channels, channels, 3, 1),
            channels,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var, slope: T) -> Result<Var> {
        check_channels(g, x, self.channels, "residual_block")?;
        let h = self.conv1.forward(g, p, x)?;
        let h = g.leaky_relu(h, slope)?;
        let h = self.conv2.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// `y = x + fuse(concat(act(d1(x)), act(d4(x)), act(d8(x))))`.
///
/// Each dilated branch pads by its dilation so all three keep the input
/// extent; the 1×1 fusion maps `3C` back to `C` and is not activated.
#[derive(Clone, Debug, PartialEq)]
pub struct ResAsppBlock {
    pub branches: [Conv; 3],
    pub fuse: Conv,
    channels: usize,
}

impl ResAsppBlock {
    pub fn register<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let branches = ASPP_DILATIONS
            .map(|d| Conv::register(store, &format!("{name}.d{d}"), channels, channels, 3, d));
        ResAsppBlock {
            branches,
            fuse: Conv::register(store, &format!("{name}.fuse"), 3 * channels, channels, 1, 1),
            channels,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var, slope: T) -> Result<Var> {
        check_channels(g, x, self.channels, "res_aspp_block")?;
        let mut outs = [x; 3];
        for (o, branch) in outs.iter_mut().zip(&self.branches) {
            let b = branch.forward(g, p, x)?;
            *o = g.leaky_relu(b, slope)?;
        }
        let cat = g.concat(&outs, 1)?;
        let fused = self.fuse.forward(g, p, cat)?;
        g.add(x, fused)
    }
}

/// Entry 3×3 convolution followed by `res → resASPP → res → resASPP → res`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub entry: Conv,
    pub res: [ResidualBlock; 3],
    pub aspp: [ResAsppBlock; 2],
}

impl FeatureExtractor {
    pub fn register<T: Element>(store: &mut ParamStore<T>, name: &str, img_channels: usize, channels: usize) -> Self {
        FeatureExtractor {
            entry: Conv::register(store, &format!("{name}.entry"), img_channels, channels, 3, 1),
            res: [0, 1, 2].map(|i| ResidualBlock::register(store, &format!("{name}.res{i}"), channels)),
            aspp: [0, 1].map(|i| ResAsppBlock::register(store, &format!("{name}.aspp{i}"), channels)),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, img: Var, slope: T) -> Result<Var> {
        let x = self.entry.forward(g, p, img)?;
        let x = g.leaky_relu(x, slope)?;
        let x = self.res[0].forward(g, p, x, slope)?;
        let x = self.aspp[0].forward(g, p, x, slope)?;
        let x = self.res[1].forward(g, p, x, slope)?;
        let x = self.aspp[1].forward(g, p, x, slope)?;
        self.res[2].forward(g, p, x, slope)
    }

    /// Runs the one shared parameter set over both eyes.
    pub fn extract_features<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        left: Var,
        right: Var,
        slope: T,
    ) -> Result<(Var, Var)> {
        if g.shape(left) != g.shape(right) {
            return Err(Error::shape(
                "extract_features",
                format!("left {:?} vs right {:?}", g.shape(left), g.shape(right)),
            ));
        }
        Ok((self.forward(g, p, left, slope)?, self.forward(g, p, right, slope)?))
    }
}
