//! Forward and backward kernels on plain tensors. The tape in `graph.rs`
//! strings these together; tests call them directly.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Convolution hyper-parameters. Cross-correlation convention (no kernel flip).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dSpec {
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], b: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let op = "conv2d";
        if x.len() != 4 {
            return Err(Error::shape(op, format!("input must be [N,C,H,W], got {x:?}")));
        }
        if w.len() != 4 {
            return Err(Error::shape(op, format!("weight must be [O,C,kH,kW], got {w:?}")));
        }
        if w[1] != x[1] {
            return Err(Error::shape(
                op,
                format!("input channels (dim 1) {} != weight input channels {}", x[1], w[1]),
            ));
        }
        if b != [w[0]] {
            return Err(Error::shape(op, format!("bias must be [{}], got {b:?}", w[0])));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::shape(op, "stride and dilation must be >= 1"));
        }
        let out = |size: usize, k: usize, dim: &str| -> Result<usize> {
            let span = spec.dilation * (k - 1) + 1;
            let padded = size + 2 * spec.padding;
            if k == 0 || padded < span {
                return Err(Error::shape(
                    op,
                    format!("{dim}: padded extent {padded} smaller than dilated kernel {span}"),
                ));
            }
            Ok((padded - span) / spec.stride + 1)
        };
        Ok(ConvGeom {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            kh: w[2],
            kw: w[3],
            ho: out(x[2], w[2], "height (dim 2)")?,
            wo: out(x[3], w[3], "width (dim 3)")?,
            spec,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels_out(&self) -> usize {
        self.ho * self.wo
    }

    /// Range of output columns `ox` whose input column `ox*stride - pad + off` is in bounds.
    fn valid_range(out_len: usize, in_len: usize, stride: usize, off: isize) -> (usize, usize) {
        // need 0 <= ox*stride + off < in_len
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(stride)
        };
        let hi = if (in_len as isize) - off <= 0 {
            0
        } else {
            (((in_len as isize - off) as usize).div_ceil(stride)).min(out_len)
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.pixels_out();
    let s = g.spec.stride;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let offy = (ky * g.spec.dilation) as isize - g.spec.padding as isize;
            let (y0, y1) = ConvGeom::valid_range(g.ho, g.h, s, offy);
            for kx in 0..g.kw {
                let offx = (kx * g.spec.dilation) as isize - g.spec.padding as isize;
                let (x0, x1) = ConvGeom::valid_range(g.wo, g.w, s, offx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                dst.fill(T::zero());
                for oy in y0..y1 {
                    let iy = (oy * s) as isize + offy;
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if x0 == x1 {
                        break;
                    }
                    if s == 1 {
                        let ix0 = (x0 as isize + offx) as usize;
                        d[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            d[ox] = src[((ox * s) as isize + offx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.pixels_out();
    let s = g.spec.stride;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let offy = (ky * g.spec.dilation) as isize - g.spec.padding as isize;
            let (y0, y1) = ConvGeom::valid_range(g.ho, g.h, s, offy);
            for kx in 0..g.kw {
                let offx = (kx * g.spec.dilation) as isize - g.spec.padding as isize;
                let (x0, x1) = ConvGeom::valid_range(g.wo, g.w, s, offx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = ((oy * s) as isize + offy) as usize;
                    let d = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let sr = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in x0..x1 {
                        let ix = ((ox * s) as isize + offx) as usize;
                        d[ix] = d[ix] + sr[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), b.shape(), spec)?;
    let p = g.pixels_out();
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * p;
    let mut out = vec![T::zero(); g.n * out_sz];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for n in 0..g.n {
        let xn = &x.data()[n * in_sz..(n + 1) * in_sz];
        let on = &mut out[n * out_sz..(n + 1) * out_sz];
        let colsref: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, &g, &mut cols);
            &cols
        };
        T::gemm(g.o, g.patch(), p, w.data(), false, colsref, false, T::zero(), on);
        for (o, row) in on.chunks_exact_mut(p).enumerate() {
            let bias = b.data()[o];
            for v in row {
                *v = *v + bias;
            }
        }
    }
    Tensor::new([g.n, g.o, g.ho, g.wo], out)
}

/// Gradients of `conv2d` w.r.t. (input, weight, bias); each only when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: Conv2dSpec,
    gy: &Tensor<T>,
    need: [bool; 3],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeom::new(x.shape(), w.shape(), b.shape(), spec)?;
    let p = g.pixels_out();
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * p;
    let mut gx = need[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = need[1].then(|| Tensor::zeros(w.shape()));
    let mut gb = need[2].then(|| Tensor::zeros(b.shape()));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for n in 0..g.n {
        let xn = &x.data()[n * in_sz..(n + 1) * in_sz];
        let gyn = &gy.data()[n * out_sz..(n + 1) * out_sz];
        if let Some(gw) = gw.as_mut() {
            let colsref: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut cols);
                &cols
            };
            T::gemm(g.o, p, g.patch(), gyn, false, colsref, true, T::one(), gw.data_mut());
        }
        if let Some(gb) = gb.as_mut() {
            for (o, row) in gyn.chunks_exact(p).enumerate() {
                let s: T = row.iter().copied().sum();
                gb.data_mut()[o] = gb.data()[o] + s;
            }
        }
        if let Some(gx) = gx.as_mut() {
            let gxn = &mut gx.data_mut()[n * in_sz..(n + 1) * in_sz];
            if g.is_pointwise() {
                T::gemm(g.patch(), g.o, p, w.data(), true, gyn, false, T::zero(), gxn);
            } else {
                T::gemm(g.patch(), g.o, p, w.data(), true, gyn, false, T::zero(), &mut cols);
                col2im(&cols, &g, gxn);
            }
        }
    }
    Ok((gx, gw, gb))
}

fn bmm_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 {
        return Err(Error::shape(
            "batch_matmul",
            format!("operands must be rank 3, got {a:?} and {b:?}"),
        ));
    }
    if a[0] != b[0] {
        return Err(Error::shape(
            "batch_matmul",
            format!("batch (dim 0) differs: {} vs {}", a[0], b[0]),
        ));
    }
    if a[2] != b[1] {
        return Err(Error::shape(
            "batch_matmul",
            format!("inner dimensions differ: {a:?} x {b:?}"),
        ));
    }
    Ok((a[0], a[1], a[2], b[2]))
}

pub fn batch_matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (bs, m, k, n) = bmm_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); bs * m * n];
    for i in 0..bs {
        T::gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            false,
            &b.data()[i * k * n..(i + 1) * k * n],
            false,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Tensor::new([bs, m, n], out)
}

pub fn batch_matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
    need: [bool; 2],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (bs, m, k, n) = bmm_dims(a.shape(), b.shape())?;
    let mut ga = need[0].then(|| Tensor::zeros(a.shape()));
    let mut gb = need[1].then(|| Tensor::zeros(b.shape()));
    for i in 0..bs {
        let gyi = &gy.data()[i * m * n..(i + 1) * m * n];
        if let Some(ga) = ga.as_mut() {
            let bi = &b.data()[i * k * n..(i + 1) * k * n];
            T::gemm(m, n, k, gyi, false, bi, true, T::zero(), &mut ga.data_mut()[i * m * k..(i + 1) * m * k]);
        }
        if let Some(gb) = gb.as_mut() {
            let ai = &a.data()[i * m * k..(i + 1) * m * k];
            T::gemm(k, m, n, ai, true, gyi, false, T::zero(), &mut gb.data_mut()[i * k * n..(i + 1) * k * n]);
        }
    }
    Ok((ga, gb))
}

/// Numerically stabilized softmax over the last dimension.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let w = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax_lastdim", "scalar input"))?;
    if w == 0 {
        return Err(Error::shape("softmax_lastdim", "last dimension is empty"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = sum.recip();
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(out)
}

pub fn softmax_lastdim_backward<T: Element>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let w = *y.shape().last().unwrap();
    let mut gx = gy.clone();
    for (g, yr) in gx.data_mut().chunks_exact_mut(w).zip(y.data().chunks_exact(w)) {
        let dot: T = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in g.iter_mut().zip(yr) {
            *gv = yv * (*gv - dot);
        }
    }
    gx
}

/// Divides each last-dimension slice by its sum.
pub fn normalize_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let w = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("normalize_lastdim", "scalar input"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        let inv = row.iter().copied().sum::<T>().recip();
        for v in row {
            *v = *v * inv;
        }
    }
    Ok(out)
}

pub fn normalize_lastdim_backward<T: Element>(x: &Tensor<T>, y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let w = *x.shape().last().unwrap();
    let mut gx = gy.clone();
    for ((g, xr), yr) in gx
        .data_mut()
        .chunks_exact_mut(w)
        .zip(x.data().chunks_exact(w))
        .zip(y.data().chunks_exact(w))
    {
        let inv = xr.iter().copied().sum::<T>().recip();
        let dot: T = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for gv in g.iter_mut() {
            *gv = (*gv - dot) * inv;
        }
    }
    gx
}

pub fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape(
            "permute",
            format!("{axes:?} is not a permutation of {rank} axes"),
        ));
    }
    let in_strides = x.strides();
    let shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    if rank == 0 || x.is_empty() {
        return Tensor::new(shape, x.data().to_vec());
    }
    // odometer over output index, innermost axis unrolled
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let data = x.data();
    loop {
        let s = strides[last];
        for j in 0..shape[last] {
            out.push(data[base + j * s]);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return Tensor::new(shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

pub fn narrow<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, inner) = outer_inner(x.shape(), axis);
    let n = x.shape()[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

pub fn narrow_backward<T: Element>(in_shape: &[usize], axis: usize, start: usize, gy: &Tensor<T>) -> Tensor<T> {
    let (outer, inner) = outer_inner(in_shape, axis);
    let n = in_shape[axis];
    let len = gy.shape()[axis];
    let mut gx = Tensor::zeros(in_shape);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        gx.data_mut()[base..base + len * inner]
            .copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
    }
    gx
}

pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", format!("axis {axis} out of range")));
    }
    for x in xs {
        let ok = x.rank() == first.rank()
            && x.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} incompatible with {:?} on axis {axis}", x.shape(), first.shape()),
            ));
        }
    }
    let (outer, inner) = outer_inner(first.shape(), axis);
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let n = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * n..(o + 1) * n]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

/// Splits a concat gradient back into per-input gradients.
pub fn concat_backward<T: Element>(sizes: &[usize], axis: usize, gy: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, inner) = outer_inner(gy.shape(), axis);
    let total = gy.shape()[axis];
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * total + start) * inner;
                data.extend_from_slice(&gy.data()[base..base + len * inner]);
            }
            start += len;
            let mut shape = gy.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data).expect("consistent split")
        })
        .collect()
}

/// `[N, C·s², H, W] -> [N, C, s·H, s·W]`
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let sh = x.shape();
    if sh.len() != 4 || s == 0 || sh[1] % (s * s) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channel count of {sh:?} is not divisible by {s}^2"),
        ));
    }
    let (n, cs, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let c = cs / (s * s);
    let mut out = Tensor::zeros([n, c, h * s, w * s]);
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src_c = (b * cs + ch * s * s + i * s + j) * h * w;
                    for y in 0..h {
                        let dst_row = ((b * c + ch) * h * s + y * s + i) * w * s;
                        for xx in 0..w {
                            od[dst_row + xx * s + j] = x.data()[src_c + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]: `[N, C, s·H, s·W] -> [N, C·s², H, W]`.
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let sh = x.shape();
    if sh.len() != 4 || s == 0 || sh[2] % s != 0 || sh[3] % s != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial extents of {sh:?} are not divisible by {s}"),
        ));
    }
    let (n, c, hs, ws) = (sh[0], sh[1], sh[2], sh[3]);
    let (h, w) = (hs / s, ws / s);
    let mut out = Tensor::zeros([n, c * s * s, h, w]);
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let dst_c = (b * c * s * s + ch * s * s + i * s + j) * h * w;
                    for y in 0..h {
                        let src_row = ((b * c + ch) * hs + y * s + i) * ws;
                        for xx in 0..w {
                            od[dst_c + y * w + xx] = x.data()[src_row + xx * s + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Source taps for align-corners-false linear interpolation by an integer factor.
fn lerp_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn lerp_axis<T: Element>(x: &Tensor<T>, axis: usize, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return x.clone();
    }
    let (outer, inner) = outer_inner(x.shape(), axis);
    let n = x.shape()[axis];
    let taps = lerp_taps(n, factor);
    let m = taps.len();
    let mut out = vec![T::zero(); outer * m * inner];
    for o in 0..outer {
        let src = &x.data()[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * m * inner..(o + 1) * m * inner];
        for (k, &(i0, i1, lam)) in taps.iter().enumerate() {
            let (l0, l1) = (T::of(1.0 - lam), T::of(lam));
            let d = &mut dst[k * inner..(k + 1) * inner];
            let a = &src[i0 * inner..(i0 + 1) * inner];
            let b = &src[i1 * inner..(i1 + 1) * inner];
            for ((dv, &av), &bv) in d.iter_mut().zip(a).zip(b) {
                *dv = l0 * av + l1 * bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = m;
    Tensor::new(shape, out).expect("lerp shape")
}

fn lerp_axis_backward<T: Element>(gy: &Tensor<T>, axis: usize, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return gy.clone();
    }
    let (outer, inner) = outer_inner(gy.shape(), axis);
    let m = gy.shape()[axis];
    let n = m / factor;
    let taps = lerp_taps(n, factor);
    let mut out = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        let src = &gy.data()[o * m * inner..(o + 1) * m * inner];
        let dst = &mut out[o * n * inner..(o + 1) * n * inner];
        for (k, &(i0, i1, lam)) in taps.iter().enumerate() {
            let (l0, l1) = (T::of(1.0 - lam), T::of(lam));
            let g = &src[k * inner..(k + 1) * inner];
            for (j, &gv) in g.iter().enumerate() {
                dst[i0 * inner + j] = dst[i0 * inner + j] + l0 * gv;
                dst[i1 * inner + j] = dst[i1 * inner + j] + l1 * gv;
            }
        }
    }
    let mut shape = gy.shape().to_vec();
    shape[axis] = n;
    Tensor::new(shape, out).expect("lerp shape")
}

/// Align-corners-false trilinear upsampling of the last three axes by integer factors.
pub fn trilinear_upsample<T: Element>(x: &Tensor<T>, factors: [usize; 3]) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 3 || factors.contains(&0) {
        return Err(Error::shape(
            "trilinear_upsample",
            format!("needs rank >= 3 and factors >= 1, got {:?} and {factors:?}", x.shape()),
        ));
    }
    let mut out = lerp_axis(x, r - 3, factors[0]);
    out = lerp_axis(&out, r - 2, factors[1]);
    Ok(lerp_axis(&out, r - 1, factors[2]))
}

pub fn trilinear_upsample_backward<T: Element>(gy: &Tensor<T>, factors: [usize; 3]) -> Tensor<T> {
    let r = gy.rank();
    let g = lerp_axis_backward(gy, r - 1, factors[2]);
    let g = lerp_axis_backward(&g, r - 2, factors[1]);
    lerp_axis_backward(&g, r - 3, factors[0])
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

