//! Reverse-mode differentiation over a linear tape.
//!
//! Each primitive evaluates eagerly and appends a node holding its value and
//! the handles of its inputs. Nodes are only ever appended, so index order is
//! a topological order and [`Graph::backward`] simply walks the tape in
//! reverse.

use super::ops::{self, ConvMode};
use super::{Element, Tensor};
use crate::attention::features::{self, FeatureSpec};
use crate::error::{invalid, shape_err, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Element> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Powi(Var, i32),
    Abs(Var),
    Gelu(Var),
    LeakyRelu(Var, T),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Conv2d(Var, Var, ConvMode),
    ChannelBias(Var, Var),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    CenterNormalize(Var, T, Vec<T>),
    FeatureMap(Var, FeatureSpec),
    DivRows(Var, Var, T),
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A tape of recorded tensor operations.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient of `v`, or zeros of its shape if the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]).expect("recorded shapes are valid"),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Element>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = ops::transpose(self.value(a))?;
        Ok(self.push(y, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|x| x * s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|x| x + s);
        self.push(y, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| x.exp());
        self.push(y, Op::Exp(a), &[a])
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let y = self.value(a).map(|x| x.powi(n));
        self.push(y, Op::Powi(a, n), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| x.abs());
        self.push(y, Op::Abs(a), &[a])
    }

    /// Gaussian-error linear unit (tanh form).
    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(gelu);
        self.push(y, Op::Gelu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let y = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        self.push(y, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let y = ops::sum_axis(self.value(a), axis)?;
        Ok(self.push(y, Op::Sum(a, axis), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let y = ops::mean_axis(self.value(a), axis)?;
        Ok(self.push(y, Op::Mean(a, axis), &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let y = Tensor::scalar(v.sum() / T::from_f64(v.len() as f64));
        self.push(y, Op::MeanAll(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let y = ops::softmax_last(self.value(a))?;
        Ok(self.push(y, Op::Softmax(a), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat(&vals, axis)?;
        Ok(self.push(y, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_axis(self.value(a), axis, start, len)?;
        Ok(self.push(y, Op::Slice(a, axis, start), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, mode: ConvMode) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), mode)?;
        Ok(self.push(y, Op::Conv2d(x, w, mode), &[x, w]))
    }

    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let y = ops::channel_bias(self.value(x), self.value(b))?;
        Ok(self.push(y, Op::ChannelBias(x, b), &[x, b]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelShuffle(x, r), &[x]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_unshuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelUnshuffle(x, r), &[x]))
    }

    /// Row-wise `(x − x̄) / (‖x − x̄‖ + eps)` on an `[N, C]` matrix.
    pub fn center_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let (y, norms) = ops::center_normalize_rows(self.value(x), eps)?;
        Ok(self.push(y, Op::CenterNormalize(x, eps, norms), &[x]))
    }

    /// Truncated-series feature map of already-normalized `[N, C]` rows.
    pub fn feature_map(&mut self, x: Var, spec: FeatureSpec) -> Result<Var> {
        let y = features::feature_forward(self.value(x), &spec)?;
        Ok(self.push(y, Op::FeatureMap(x, spec), &[x]))
    }

    /// `num[i, :] / max(den[i], floor)` with `den` of shape `[N, 1]`.
    pub fn div_rows(&mut self, num: Var, den: Var, floor: T) -> Result<Var> {
        let y = ops::div_rows(self.value(num), self.value(den), floor)?;
        Ok(self.push(y, Op::DivRows(num, den, floor), &[num, den]))
    }

    /// Mean absolute error between two equally shaped tensors.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean_all(a))
    }

    /// Accumulates adjoints from a scalar `loss` back to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                lv.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one())?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        if g.shape() != self.shape(v) {
            return shape_err("backward", g.shape(), self.shape(v));
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let ga = ops::matmul(g, &ops::transpose(bv)?)?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.nodes[b.0].needs_grad {
                    let gb = ops::matmul(&ops::transpose(av)?, g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, ops::transpose(g)?)?,
            Op::Reshape(a) => {
                let ga = g.reshape(self.shape(*a))?;
                self.accumulate(grads, *a, ga)?
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.zip_map(bv, "mul", |x, y| x * y)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.zip_map(av, "mul", |x, y| x * y)?)?;
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s))?
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone())?,
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, "exp", |x, e| x * e)?)?,
            Op::Powi(a, n) => {
                let n = *n;
                let nf = T::from_f64(n as f64);
                let ga = g.zip_map(self.value(*a), "powi", |gx, x| gx * nf * x.powi(n - 1))?;
                self.accumulate(grads, *a, ga)?
            }
            Op::Abs(a) => {
                let ga = g.zip_map(self.value(*a), "abs", |gx, x| {
                    if x > T::zero() {
                        gx
                    } else if x < T::zero() {
                        -gx
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, *a, ga)?
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), "gelu", |gx, x| gx * gelu_grad(x))?;
                self.accumulate(grads, *a, ga)?
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let ga = g.zip_map(self.value(*a), "leaky_relu", |gx, x| {
                    if x > T::zero() {
                        gx
                    } else {
                        gx * slope
                    }
                })?;
                self.accumulate(grads, *a, ga)?
            }
            Op::Sum(a, axis) => {
                let n = self.shape(*a)[*axis];
                self.accumulate(grads, *a, ops::expand_axis(g, *axis, n)?)?
            }
            Op::Mean(a, axis) => {
                let n = self.shape(*a)[*axis];
                let inv = T::one() / T::from_f64(n as f64);
                let ga = ops::expand_axis(g, *axis, n)?.map(|x| x * inv);
                self.accumulate(grads, *a, ga)?
            }
            Op::SumAll(a) => {
                let gv = g.item()?;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv)?)?
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len();
                let gv = g.item()? / T::from_f64(n as f64);
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv)?)?
            }
            Op::Softmax(a) => {
                let n = y.dim(y.rank() - 1);
                let mut ga = g.clone();
                for (gr, yr) in ga.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *a, ga)?
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.nodes[p.0].needs_grad {
                        let gp = ops::slice_axis(g, *axis, start, len)?;
                        self.accumulate(grads, *p, gp)?;
                    }
                    start += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let src = self.shape(*a).to_vec();
                let len = g.dim(*axis);
                let mut parts = Vec::new();
                let mut pre_shape = src.clone();
                let mut post_shape = src.clone();
                pre_shape[*axis] = *start;
                post_shape[*axis] = src[*axis] - start - len;
                let pre = (*start > 0)
                    .then(|| Tensor::zeros(&pre_shape))
                    .transpose()?;
                let post = (post_shape[*axis] > 0)
                    .then(|| Tensor::zeros(&post_shape))
                    .transpose()?;
                if let Some(p) = &pre {
                    parts.push(p);
                }
                parts.push(g);
                if let Some(p) = &post {
                    parts.push(p);
                }
                self.accumulate(grads, *a, ops::concat(&parts, *axis)?)?
            }
            Op::Conv2d(x, w, mode) => {
                let (gx, gw) = ops::conv2d_backward(self.value(*x), self.value(*w), g, *mode)?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *w, gw)?;
            }
            Op::ChannelBias(x, b) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.nodes[b.0].needs_grad {
                    let c = g.dim(0);
                    let per = g.len() / c;
                    let gb: Vec<T> = g
                        .data()
                        .chunks(per)
                        .map(|ch| ch.iter().fold(T::zero(), |a, &v| a + v))
                        .collect();
                    self.accumulate(grads, *b, Tensor::new(&[c], gb)?)?;
                }
            }
            Op::PixelShuffle(x, r) => self.accumulate(grads, *x, ops::pixel_unshuffle(g, *r)?)?,
            Op::PixelUnshuffle(x, r) => self.accumulate(grads, *x, ops::pixel_shuffle(g, *r)?)?,
            Op::CenterNormalize(x, eps, norms) => {
                let c = y.dim(1);
                let cn = T::from_f64(c as f64);
                let mut gx = g.clone();
                for ((gr, yr), &n) in gx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(norms)
                {
                    // y = u / s with u = x − x̄, s = ‖u‖ + eps
                    let s = n + *eps;
                    let gy_dot_y = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        // du_k = g_k / s − (g·y) y_k / n
                        let radial = if n > T::zero() {
                            gy_dot_y * yv / n
                        } else {
                            T::zero()
                        };
                        *gv = *gv / s - radial;
                    }
                    let mean = gr.iter().fold(T::zero(), |a, &v| a + v) / cn;
                    gr.iter_mut().for_each(|v| *v = *v - mean);
                }
                self.accumulate(grads, *x, gx)?
            }
            Op::FeatureMap(x, spec) => {
                let gx = features::feature_backward(self.value(*x), g, spec)?;
                self.accumulate(grads, *x, gx)?
            }
            Op::DivRows(num, den, floor) => {
                let (nv, dv) = (self.value(*num), self.value(*den));
                let m = nv.dim(1);
                if self.nodes[num.0].needs_grad {
                    let mut gn = g.clone();
                    for (row, &d) in gn.data_mut().chunks_mut(m).zip(dv.data()) {
                        let d = d.max(*floor);
                        row.iter_mut().for_each(|v| *v = *v / d);
                    }
                    self.accumulate(grads, *num, gn)?;
                }
                if self.nodes[den.0].needs_grad {
                    let gd: Vec<T> = g
                        .data()
                        .chunks(m)
                        .zip(nv.data().chunks(m))
                        .zip(dv.data())
                        .map(|((gr, nr), &d)| {
                            if d < *floor {
                                return T::zero();
                            }
                            let dot = gr
                                .iter()
                                .zip(nr)
                                .fold(T::zero(), |a, (&gv, &nv)| a + gv * nv);
                            -dot / (d * d)
                        })
                        .collect();
                    self.accumulate(grads, *den, Tensor::new(dv.shape(), gd)?)?;
                }
            }
        }
        Ok(())
    }
}
