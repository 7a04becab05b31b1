//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the node list is
//! already topologically sorted. [`Graph::backward`] walks it once in reverse.

use super::kernels::{self, Conv2dSpec};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Square(Var),
    LeakyRelu(Var, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Conv2d(Var, Var, Var, Conv2dSpec),
    BatchMatmul(Var, Var),
    Softmax(Var),
    NormalizeLast(Var),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    Trilinear(Var, [usize; 3]),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation record for one forward pass. Confined to a single thread.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Element> Graph<T> {
    /// New graph with non-finite detection enabled.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn set_finite_checks(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        kernels::same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |p, q| p + q)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |p, q| p - q)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |p, q| p * q)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push("scale", v, Op::Scale(a, k), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::abs);
        self.push("abs", v, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a), &[a])
    }

    /// Elementwise `max(x, slope·x)`, `slope` in `[0, 1)`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(Error::Invalid(format!("leaky_relu slope {slope} outside [0,1)")));
        }
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope), &[a])
    }

    /// Signs (`x >= 0`) of every input to a non-smooth op (`abs`,
    /// `leaky_relu`), in recording order. Two passes of the same program agree
    /// elementwise iff no input crossed a kink between them.
    pub fn kink_signs(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Abs(a) | Op::LeakyRelu(a, _) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&x| x >= T::zero()))
            .collect()
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / T::of(x.len() as f64));
        self.push("mean", v, Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(a), axes)?;
        self.push("permute", v, Op::Permute(a, axes.to_vec()), &[a])
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::shape("transpose_last2", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let v = kernels::concat(&refs, axis)?;
        self.push("concat", v, Op::Concat(xs.to_vec(), axis), xs)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(a), axis, start, len)?;
        self.push("narrow", v, Op::Narrow(a, axis, start), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), self.value(b), spec)?;
        self.push("conv2d", v, Op::Conv2d(x, w, b, spec), &[x, w, b])
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::batch_matmul(self.value(a), self.value(b))?;
        self.push("batch_matmul", v, Op::BatchMatmul(a, b), &[a, b])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let v = kernels::softmax_lastdim(self.value(a))?;
        self.push("softmax_lastdim", v, Op::Softmax(a), &[a])
    }

    pub fn normalize_lastdim(&mut self, a: Var) -> Result<Var> {
        let v = kernels::normalize_lastdim(self.value(a))?;
        self.push("normalize_lastdim", v, Op::NormalizeLast(a), &[a])
    }

    pub fn pixel_shuffle(&mut self, a: Var, s: usize) -> Result<Var> {
        let v = kernels::pixel_shuffle(self.value(a), s)?;
        self.push("pixel_shuffle", v, Op::PixelShuffle(a, s), &[a])
    }

    pub fn pixel_unshuffle(&mut self, a: Var, s: usize) -> Result<Var> {
        let v = kernels::pixel_unshuffle(self.value(a), s)?;
        self.push("pixel_unshuffle", v, Op::PixelUnshuffle(a, s), &[a])
    }

    pub fn trilinear_upsample(&mut self, a: Var, factors: [usize; 3]) -> Result<Var> {
        let v = kernels::trilinear_upsample(self.value(a), factors)?;
        self.push("trilinear_upsample", v, Op::Trilinear(a, factors), &[a])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.local_grads(node, g)? {
                if !self.needs(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        // only leaves keep their gradients
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let elementwise = |x: &Tensor<T>, g: &Tensor<T>, f: &dyn Fn(T, T) -> T| {
            Tensor::new(
                x.shape(),
                x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect(),
            )
            .expect("same shape")
        };
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g)],
            &Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            &Op::Mul(a, b) => {
                let ga = elementwise(val(b), &g, &|y, gv| y * gv);
                let gb = elementwise(val(a), &g, &|x, gv| x * gv);
                vec![(a, ga), (b, gb)]
            }
            &Op::Scale(a, k) => vec![(a, g.map(|x| x * k))],
            &Op::Abs(a) => vec![(a, elementwise(val(a), &g, &|x, gv| gv * sign(x)))],
            &Op::Square(a) => vec![(a, elementwise(val(a), &g, &|x, gv| T::of(2.0) * x * gv))],
            &Op::LeakyRelu(a, slope) => vec![(
                a,
                elementwise(val(a), &g, &|x, gv| if x > T::zero() { gv } else { gv * slope }),
            )],
            &Op::Sum(a) => vec![(a, Tensor::full(val(a).shape(), g.item()))],
            &Op::Mean(a) => {
                let n = T::of(val(a).len() as f64);
                vec![(a, Tensor::full(val(a).shape(), g.item() / n))]
            }
            &Op::Reshape(a) => vec![(a, g.reshape(val(a).shape())?)],
            Op::Permute(a, axes) => {
                vec![(*a, kernels::permute(&g, &kernels::inverse_permutation(axes))?)]
            }
            Op::Concat(xs, axis) => {
                let sizes: Vec<usize> = xs.iter().map(|&v| val(v).shape()[*axis]).collect();
                xs.iter()
                    .copied()
                    .zip(kernels::concat_backward(&sizes, *axis, &g))
                    .collect()
            }
            &Op::Narrow(a, axis, start) => {
                vec![(a, kernels::narrow_backward(val(a).shape(), axis, start, &g))]
            }
            &Op::Conv2d(x, w, b, spec) => {
                let need = [self.needs(x), self.needs(w), self.needs(b)];
                let (gx, gw, gb) = kernels::conv2d_backward(val(x), val(w), val(b), spec, &g, need)?;
                [(x, gx), (w, gw), (b, gb)]
                    .into_iter()
                    .filter_map(|(v, t)| t.map(|t| (v, t)))
                    .collect()
            }
            &Op::BatchMatmul(a, b) => {
                let need = [self.needs(a), self.needs(b)];
                let (ga, gb) = kernels::batch_matmul_backward(val(a), val(b), &g, need)?;
                [(a, ga), (b, gb)]
                    .into_iter()
                    .filter_map(|(v, t)| t.map(|t| (v, t)))
                    .collect()
            }
            &Op::Softmax(a) => vec![(a, kernels::softmax_lastdim_backward(&node.value, &g))],
            &Op::NormalizeLast(a) => {
                vec![(a, kernels::normalize_lastdim_backward(val(a), &node.value, &g))]
            }
            &Op::PixelShuffle(a, s) => vec![(a, kernels::pixel_unshuffle(&g, s)?)],
            &Op::PixelUnshuffle(a, s) => vec![(a, kernels::pixel_shuffle(&g, s)?)],
            &Op::Trilinear(a, f) => vec![(a, kernels::trilinear_upsample_backward(&g, f))],
        })
    }
}

fn sign<T: Element>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
