//! Forward kernels on plain tensors.
//!
//! These are the value computations behind every [`Graph`](super::Graph)
//! primitive, plus the few adjoint kernels that are not themselves
//! expressible as forward kernels. All loops run in a fixed order so results
//! are bit-reproducible.

use super::{Element, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Convolution flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvMode {
    /// 1×1 kernel, weight `[Cout, Cin, 1, 1]`.
    Pointwise,
    /// Dense `k×k` kernel with zero padding `(k-1)/2`, weight `[Cout, Cin, k, k]`.
    Spatial,
    /// One `k×k` filter per channel, weight `[C, 1, k, k]`.
    Depthwise,
}

fn require_rank<T: Element>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return invalid(format!(
            "{op}: expected rank {rank}, got shape {:?}",
            t.shape()
        ));
    }
    Ok(())
}

fn check_axis<T: Element>(op: &'static str, t: &Tensor<T>, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Axis {
            op,
            axis,
            rank: t.rank(),
        });
    }
    Ok(())
}

/// `(outer, dim, inner)` strides around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return shape_err("matmul", a.shape(), b.shape());
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("transpose", a, 2)?;
    let (m, n) = (a.dim(0), a.dim(1));
    let d = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    depthwise: bool,
}

fn conv_geom<T: Element>(x: &Tensor<T>, w: &Tensor<T>, mode: ConvMode) -> Result<ConvGeom> {
    require_rank("conv2d input", x, 3)?;
    require_rank("conv2d weight", w, 4)?;
    let (cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, wcin, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if kh != kw || !(kh == 1 || kh == 3) {
        return invalid(format!("conv2d: unsupported kernel {kh}x{kw}"));
    }
    match mode {
        ConvMode::Pointwise if kh != 1 => {
            return invalid(format!(
                "conv2d: pointwise mode needs a 1x1 kernel, got {kh}x{kw}"
            ))
        }
        ConvMode::Depthwise => {
            if wcin != 1 || cout != cin {
                return shape_err("conv2d depthwise", x.shape(), w.shape());
            }
        }
        _ => {
            if wcin != cin {
                return shape_err("conv2d", x.shape(), w.shape());
            }
        }
    }
    Ok(ConvGeom {
        cin,
        cout,
        h,
        w: wd,
        k: kh,
        depthwise: mode == ConvMode::Depthwise,
    })
}

/// `(dst_start, src_start, len)` such that `dst[i]` pairs with `src[i + d]`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize, usize) {
    if d >= 0 {
        let d = d as usize;
        if d >= n {
            (0, 0, 0)
        } else {
            (0, d, n - d)
        }
    } else {
        let d = (-d) as usize;
        if d >= n {
            (0, 0, 0)
        } else {
            (d, 0, n - d)
        }
    }
}

/// `dst[y][x] += scale * src[y + dy][x + dx]` over the valid overlap (both `h×w` planes).
#[inline]
fn shifted_axpy<T: Element>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    scale: T,
) {
    let (y0, sy0, ny) = span(h, dy);
    let (x0, sx0, nx) = span(w, dx);
    for r in 0..ny {
        let d = &mut dst[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
        let s = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
        for (o, &v) in d.iter_mut().zip(s) {
            *o = *o + scale * v;
        }
    }
}

/// `Σ a[y][x] · src[y + dy][x + dx]` over the valid overlap.
#[inline]
fn shifted_dot<T: Element>(a: &[T], src: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let (y0, sy0, ny) = span(h, dy);
    let (x0, sx0, nx) = span(w, dx);
    let mut acc = T::zero();
    for r in 0..ny {
        let d = &a[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
        let s = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
        for (&p, &q) in d.iter().zip(s) {
            acc = acc + p * q;
        }
    }
    acc
}

/// Stride-1 cross-correlation preserving spatial size.
///
/// `x` is `[Cin, H, W]`; see [`ConvMode`] for the weight layouts.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, mode: ConvMode) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, mode)?;
    let plane = g.h * g.w;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); g.cout * plane];
    let half = (g.k / 2) as isize;
    let kk = g.k * g.k;
    for co in 0..g.cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        let cis = if g.depthwise { co..co + 1 } else { 0..g.cin };
        for ci in cis {
            let src = &xd[ci * plane..(ci + 1) * plane];
            let wbase = if g.depthwise {
                co * kk
            } else {
                (co * g.cin + ci) * kk
            };
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wd[wbase + ky * g.k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    // out[y][x] += w * in[y + dy][x + dx]
                    let dy = ky as isize - half;
                    let dx = kx as isize - half;
                    shifted_axpy(dst, src, g.h, g.w, dy, dx, wv);
                }
            }
        }
    }
    Tensor::new(&[g.cout, g.h, g.w], out)
}

/// Adjoints of [`conv2d`] with respect to input and weight.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    mode: ConvMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = conv_geom(x, w, mode)?;
    if grad_out.shape() != [g.cout, g.h, g.w] {
        return shape_err("conv2d backward", grad_out.shape(), &[g.cout, g.h, g.w]);
    }
    let plane = g.h * g.w;
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![T::zero(); g.cin * plane];
    let mut gw = vec![T::zero(); w.len()];
    let half = (g.k / 2) as isize;
    let kk = g.k * g.k;
    for co in 0..g.cout {
        let gplane = &gd[co * plane..(co + 1) * plane];
        let cis = if g.depthwise { co..co + 1 } else { 0..g.cin };
        for ci in cis {
            let src = &xd[ci * plane..(ci + 1) * plane];
            let wbase = if g.depthwise {
                co * kk
            } else {
                (co * g.cin + ci) * kk
            };
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let dy = ky as isize - half;
                    let dx = kx as isize - half;
                    // out[y][x] uses in[y + dy][x + dx]
                    gw[wbase + ky * g.k + kx] =
                        shifted_dot(gplane, src, g.h, g.w, dy, dx) + gw[wbase + ky * g.k + kx];
                    let wv = wd[wbase + ky * g.k + kx];
                    if wv != T::zero() {
                        let dst = &mut gx[ci * plane..(ci + 1) * plane];
                        shifted_axpy(dst, gplane, g.h, g.w, -dy, -dx, wv);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), gw)?))
}

/// Adds `b[c]` to every entry of channel `c` of `x` (`[C, ...]`).
pub fn channel_bias<T: Element>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 1 || b.rank() != 1 || b.dim(0) != x.dim(0) {
        return shape_err("channel_bias", x.shape(), b.shape());
    }
    let per = x.len() / x.dim(0);
    let mut out = x.clone();
    for (c, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let bv = b.data()[c];
        chunk.iter_mut().for_each(|v| *v = *v + bv);
    }
    Ok(out)
}

/// `[C·r², H, W] → [C, rH, rW]`.
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    require_rank("pixel_shuffle", x, 3)?;
    if r == 0 || x.dim(0) % (r * r) != 0 {
        return invalid(format!(
            "pixel_shuffle: {} channels not divisible by r²={}",
            x.dim(0),
            r * r
        ));
    }
    let (cr, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[co * oh * ow + (y * r + i) * ow + xx * r + j] =
                            xd[ci * h * w + y * w + xx];
                    }
                }
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// `[C, rH, rW] → [C·r², H, W]`, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    require_rank("pixel_unshuffle", x, 3)?;
    let (c, oh, ow) = (x.dim(0), x.dim(1), x.dim(2));
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return invalid(format!(
            "pixel_unshuffle: spatial dims {oh}x{ow} not divisible by {r}"
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[ci * h * w + y * w + xx] =
                            xd[co * oh * ow + (y * r + i) * ow + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * r * r, h, w], out)
}

/// Sum along `axis`, keeping it with size 1.
pub fn sum_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum", x, axis)?;
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..n {
            let base = (o * n + a) * inner;
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + xd[base + i];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(&shape, out)
}

pub fn mean_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let s = sum_axis(x, axis)?;
    let n = T::from_f64(x.dim(axis) as f64);
    Ok(s.map(|v| v / n))
}

/// Repeats a size-1 `axis` of `x` `n` times (adjoint of [`sum_axis`]).
pub fn expand_axis<T: Element>(x: &Tensor<T>, axis: usize, n: usize) -> Result<Tensor<T>> {
    check_axis("expand", x, axis)?;
    if x.dim(axis) != 1 {
        return invalid(format!(
            "expand: axis {axis} of {:?} is not size 1",
            x.shape()
        ));
    }
    let (outer, _, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend_from_slice(&xd[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = n;
    Tensor::new(&shape, out)
}

/// Numerically stable softmax along the last axis.
pub fn softmax_last<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() == 0 {
        return Err(Error::Axis {
            op: "softmax",
            axis: 0,
            rank: 0,
        });
    }
    let n = x.dim(x.rank() - 1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / s);
    }
    Ok(out)
}

pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = match parts.first() {
        Some(f) => *f,
        None => return invalid("concat: no inputs"),
    };
    check_axis("concat", first, axis)?;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return shape_err("concat", first.shape(), p.shape());
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.dim(axis) * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// `len` entries of `axis` starting at `start`.
pub fn slice_axis<T: Element>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    check_axis("slice", x, axis)?;
    if len == 0 || start + len > x.dim(axis) {
        return invalid(format!(
            "slice: range {start}..{} outside axis {axis} of {:?}",
            start + len,
            x.shape()
        ));
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

/// Row-wise centering and unit normalization of an `[N, C]` matrix.
///
/// Each row becomes `(x − x̄) / (‖x − x̄‖ + eps)`; constant rows map to zero.
/// Also returns the per-row norms `‖x − x̄‖`.
pub fn center_normalize_rows<T: Element>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    require_rank("center_normalize", x, 2)?;
    let c = x.dim(1);
    if c < 2 {
        return invalid("center_normalize: need at least 2 channels per token");
    }
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.dim(0));
    let cn = T::from_f64(c as f64);
    for row in out.data_mut().chunks_mut(c) {
        let mean = row.iter().fold(T::zero(), |a, &b| a + b) / cn;
        let mut ss = T::zero();
        for v in row.iter_mut() {
            *v = *v - mean;
            ss = ss + *v * *v;
        }
        let n = ss.sqrt();
        let s = n + eps;
        row.iter_mut().for_each(|v| *v = *v / s);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Divides each row of `num` (`[N, M]`) by `max(den[i], floor)` (`den` is `[N, 1]`).
pub fn div_rows<T: Element>(num: &Tensor<T>, den: &Tensor<T>, floor: T) -> Result<Tensor<T>> {
    if num.rank() != 2 || den.shape() != [num.dim(0), 1] {
        return shape_err("div_rows", num.shape(), den.shape());
    }
    let m = num.dim(1);
    let mut out = num.clone();
    for (row, &d) in out.data_mut().chunks_mut(m).zip(den.data()) {
        let d = d.max(floor);
        row.iter_mut().for_each(|v| *v = *v / d);
    }
    Ok(out)
}
