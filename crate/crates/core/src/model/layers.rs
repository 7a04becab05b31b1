use super::params::{Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Conv2dSpec, Element, Graph, Var};

/// A square convolution with bias and "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        Conv {
            weight: store.register(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel]),
            bias: store.register(format!("{name}.bias"), &[out_ch]),
            spec: Conv2dSpec::same(kernel, dilation),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), p.var(self.bias), self.spec)
    }
}
