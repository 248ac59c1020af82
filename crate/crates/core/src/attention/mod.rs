//! Spectral-correlation attention.
//!
//! Similarity between two tokens is the squared Pearson correlation of their
//! channel vectors, `r² = ⟨q̂, k̂⟩²` with `x̂` the centred, unit-normalized
//! token. Lifting it through `exp(r²/σ)` and truncating the series gives a
//! kernel with an explicit feature map `ψ`, so attention can be evaluated as
//! `ψ(Q) (ψ(K)ᵀ V)` without ever forming the `N × N` matrix.
//!
//! The quadratic forms ([`scc_attention`], [`reference_attention`]) are kept
//! as oracles for the linear one ([`essa_forward`]).

pub mod features;

pub use features::{FeatureMode, FeatureSpec};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{ops, Element, Graph, Tensor, Var};

/// Token count accepted by the quadratic reference implementations.
pub const REFERENCE_MAX_TOKENS: usize = 4096;

/// An `[N, C]` token matrix with `N ≥ 1` and `C ≥ 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix<T: Element = f32>(Tensor<T>);

impl<T: Element> TokenMatrix<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 2 {
            return invalid(format!("token matrix must be rank 2, got {:?}", t.shape()));
        }
        if t.dim(1) < 2 {
            return invalid(format!(
                "token matrix needs at least 2 channels, got {}",
                t.dim(1)
            ));
        }
        Ok(Self(t))
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor::new(&[rows, cols], data)?)
    }

    pub fn rows(&self) -> usize {
        self.0.dim(0)
    }

    pub fn cols(&self) -> usize {
        self.0.dim(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.0.data()[i * c..(i + 1) * c]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// `[N, width]` features produced by [`feature_map`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T: Element = f32> {
    pub values: Tensor<T>,
    pub spec: FeatureSpec,
}

impl<T: Element> FeatureMatrix<T> {
    pub fn width(&self) -> usize {
        self.values.dim(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    /// Kernel temperature σ.
    pub sigma: f64,
    /// Taylor truncation order.
    pub order: usize,
    pub mode: FeatureMode,
    /// Divide each output row by its total kernel weight.
    pub normalize: bool,
    pub heads: usize,
    /// Guard added to token norms during centring.
    pub epsilon: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            order: 1,
            mode: FeatureMode::Elementwise,
            normalize: true,
            heads: 1,
            epsilon: 1e-6,
        }
    }
}

impl AttentionConfig {
    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            mode: self.mode,
            order: self.order,
            sigma: self.sigma,
        }
    }

    /// Channels per head after validating against `c` total channels.
    pub fn head_width(&self, c: usize) -> Result<usize> {
        if self.heads == 0 || c % self.heads != 0 {
            return invalid(format!("{} heads do not divide {c} channels", self.heads));
        }
        let hw = c / self.heads;
        if hw < 2 {
            return invalid(format!("head width {hw} is below 2 channels"));
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.mode == FeatureMode::Exact && hw > features::EXACT_MAX_CHANNELS {
            return invalid(format!(
                "exact mode supports at most {} channels per head, got {hw}",
                features::EXACT_MAX_CHANNELS
            ));
        }
        Ok(hw)
    }
}

/// Row-wise centring and unit normalization; constant rows become zero.
pub fn center_normalize<T: Element>(x: &TokenMatrix<T>, eps: f64) -> TokenMatrix<T> {
    let (y, _) =
        ops::center_normalize_rows(x.tensor(), T::from_f64(eps)).expect("token matrix invariants");
    TokenMatrix(y)
}

fn normalized_row<T: Element>(x: &[T], eps: f64) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / c;
    let u: Vec<f64> = x.iter().map(|v| v.as_f64() - mean).collect();
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.into_iter().map(|v| v / (n + eps)).collect()
}

/// Squared correlation of two tokens, in `[0, 1]`.
pub fn scc2<T: Element>(q: &[T], k: &[T], eps: f64) -> Result<f64> {
    if q.len() != k.len() || q.len() < 2 {
        return shape_err("scc2", &[q.len()], &[k.len()]);
    }
    let qh = normalized_row(q, eps);
    let kh = normalized_row(k, eps);
    let r: f64 = qh.iter().zip(&kh).map(|(a, b)| a * b).sum();
    Ok(r * r)
}

fn check_qkv<T: Element>(g: &Graph<T>, q: Var, k: Var, v: Var) -> Result<()> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return shape_err("attention", qs, ks);
    }
    if qs[1] != ks[1] {
        return shape_err("attention (query/key channels)", qs, ks);
    }
    if ks[0] != vs[0] || vs[1] != qs[1] {
        return shape_err("attention (key/value)", ks, vs);
    }
    Ok(())
}

fn split_heads<T: Element>(g: &mut Graph<T>, x: Var, heads: usize, hw: usize) -> Result<Vec<Var>> {
    if heads == 1 {
        return Ok(vec![x]);
    }
    (0..heads).map(|h| g.slice(x, 1, h * hw, hw)).collect()
}

fn merge_heads<T: Element>(g: &mut Graph<T>, parts: Vec<Var>) -> Result<Var> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    g.concat(&parts, 1)
}

/// Linear-time kernel attention recorded on `g`.
///
/// Computes `ψ(Q) (ψ(K)ᵀ V)` per head, optionally divided row-wise by
/// `ψ(Q) (ψ(K)ᵀ 1)`. The `N × N` kernel matrix is never formed.
pub fn essa_graph<T: Element>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AttentionConfig,
) -> Result<Var> {
    check_qkv(g, q, k, v)?;
    let c = g.shape(q)[1];
    let hw = cfg.head_width(c)?;
    let eps = T::from_f64(cfg.epsilon);
    let spec = cfg.feature_spec();
    let qs = split_heads(g, q, cfg.heads, hw)?;
    let ks = split_heads(g, k, cfg.heads, hw)?;
    let vs = split_heads(g, v, cfg.heads, hw)?;
    let mut outs = Vec::with_capacity(cfg.heads);
    for ((qh, kh), vh) in qs.into_iter().zip(ks).zip(vs) {
        let qn = g.center_normalize(qh, eps)?;
        let kn = g.center_normalize(kh, eps)?;
        let fq = g.feature_map(qn, spec)?;
        let fk = g.feature_map(kn, spec)?;
        let fkt = g.transpose(fk)?;
        let kv = g.matmul(fkt, vh)?;
        let num = g.matmul(fq, kv)?;
        let out = if cfg.normalize {
            let ksum = g.sum_axis(fk, 0)?;
            let ksum = g.transpose(ksum)?;
            let den = g.matmul(fq, ksum)?;
            g.div_rows(num, den, eps)?
        } else {
            num
        };
        outs.push(out);
    }
    merge_heads(g, outs)
}

/// Quadratic `r²(Q, K) V` recorded on `g`.
pub fn scc_attention_graph<T: Element>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AttentionConfig,
) -> Result<Var> {
    check_qkv(g, q, k, v)?;
    let c = g.shape(q)[1];
    let hw = cfg.head_width(c)?;
    let eps = T::from_f64(cfg.epsilon);
    let qs = split_heads(g, q, cfg.heads, hw)?;
    let ks = split_heads(g, k, cfg.heads, hw)?;
    let vs = split_heads(g, v, cfg.heads, hw)?;
    let mut outs = Vec::with_capacity(cfg.heads);
    for ((qh, kh), vh) in qs.into_iter().zip(ks).zip(vs) {
        let qn = g.center_normalize(qh, eps)?;
        let kn = g.center_normalize(kh, eps)?;
        let knt = g.transpose(kn)?;
        let r = g.matmul(qn, knt)?;
        let r2 = g.powi(r, 2);
        let num = g.matmul(r2, vh)?;
        let out = if cfg.normalize {
            let den = g.sum_axis(r2, 1)?;
            g.div_rows(num, den, eps)?
        } else {
            num
        };
        outs.push(out);
    }
    merge_heads(g, outs)
}

fn run_on_graph<T: Element>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    f: impl FnOnce(&mut Graph<T>, Var, Var, Var) -> Result<Var>,
) -> Result<TokenMatrix<T>> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (
        g.constant(q.tensor().clone()),
        g.constant(k.tensor().clone()),
        g.constant(v.tensor().clone()),
    );
    let out = f(&mut g, qv, kv, vv)?;
    TokenMatrix::new(g.value(out).clone())
}

/// Efficient SCC-kernel attention on plain token matrices.
pub fn essa_forward<T: Element>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    cfg: &AttentionConfig,
) -> Result<TokenMatrix<T>> {
    run_on_graph(q, k, v, |g, q, k, v| essa_graph(g, q, k, v, cfg))
}

/// Quadratic squared-correlation attention on plain token matrices.
pub fn scc_attention<T: Element>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    cfg: &AttentionConfig,
) -> Result<TokenMatrix<T>> {
    run_on_graph(q, k, v, |g, q, k, v| scc_attention_graph(g, q, k, v, cfg))
}

/// Centres and normalizes `x`, then applies the configured feature map.
pub fn feature_map<T: Element>(
    x: &TokenMatrix<T>,
    cfg: &AttentionConfig,
) -> Result<FeatureMatrix<T>> {
    cfg.head_width(x.cols())?;
    let xn = center_normalize(x, cfg.epsilon);
    let spec = cfg.feature_spec();
    Ok(FeatureMatrix {
        values: features::feature_forward(xn.tensor(), &spec)?,
        spec,
    })
}

/// Kernel series order for the quadratic reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelOrder {
    Truncated(usize),
    /// The untruncated `exp`.
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    /// `softmax(QKᵀ / √C) V`.
    Mhsa,
    /// Full kernel matrix built entry by entry, then applied to `V`.
    SccKernelQuadratic(KernelOrder),
}

/// Kernel value between two normalized tokens under `mode`.
///
/// Exact mode evaluates the series in `r² = ⟨q̂, k̂⟩²`; elementwise mode
/// sums the per-channel series in `(q̂_c k̂_c)²` plus the constant term.
pub fn kernel_value(
    qn: &[f64],
    kn: &[f64],
    mode: FeatureMode,
    order: KernelOrder,
    sigma: f64,
) -> f64 {
    let series = |z: f64| -> f64 {
        match order {
            KernelOrder::Infinite => (z / sigma).exp(),
            KernelOrder::Truncated(p) => {
                let mut term = 1.0;
                let mut acc = 1.0;
                for i in 1..=p {
                    term *= z / (sigma * i as f64);
                    acc += term;
                }
                acc
            }
        }
    };
    match mode {
        FeatureMode::Exact => {
            let r: f64 = qn.iter().zip(kn).map(|(a, b)| a * b).sum();
            series(r * r)
        }
        FeatureMode::Elementwise => {
            1.0 + qn
                .iter()
                .zip(kn)
                .map(|(a, b)| series((a * b) * (a * b)) - 1.0)
                .sum::<f64>()
        }
    }
}

/// Quadratic reference attentions; `O(N²)` by construction.
pub fn reference_attention<T: Element>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    kind: ReferenceKind,
    cfg: &AttentionConfig,
) -> Result<TokenMatrix<T>> {
    let (n, m) = (q.rows(), k.rows());
    if n > REFERENCE_MAX_TOKENS || m > REFERENCE_MAX_TOKENS {
        return invalid(format!(
            "reference attention limited to {REFERENCE_MAX_TOKENS} tokens, got {}",
            n.max(m)
        ));
    }
    if q.cols() != k.cols() || k.rows() != v.rows() || v.cols() != q.cols() {
        return shape_err(
            "reference_attention",
            q.tensor().shape(),
            k.tensor().shape(),
        );
    }
    let c = q.cols();
    let hw = cfg.head_width(c)?;
    let mut out = vec![T::zero(); n * c];
    for h in 0..cfg.heads {
        let cols = h * hw..(h + 1) * hw;
        match kind {
            ReferenceKind::Mhsa => {
                let qh = ops::slice_axis(q.tensor(), 1, cols.start, hw)?;
                let kh = ops::slice_axis(k.tensor(), 1, cols.start, hw)?;
                let vh = ops::slice_axis(v.tensor(), 1, cols.start, hw)?;
                let scale = T::from_f64(1.0 / (hw as f64).sqrt());
                let logits = ops::matmul(&qh, &ops::transpose(&kh)?)?.map(|x| x * scale);
                let attn = ops::softmax_last(&logits)?;
                let yh = ops::matmul(&attn, &vh)?;
                for i in 0..n {
                    for j in 0..hw {
                        out[i * c + cols.start + j] = yh.data()[i * hw + j];
                    }
                }
            }
            ReferenceKind::SccKernelQuadratic(order) => {
                let qn: Vec<Vec<f64>> = (0..n)
                    .map(|i| normalized_row(&q.row(i)[cols.clone()], cfg.epsilon))
                    .collect();
                let kn: Vec<Vec<f64>> = (0..m)
                    .map(|j| normalized_row(&k.row(j)[cols.clone()], cfg.epsilon))
                    .collect();
                let mut row = vec![0.0f64; m];
                for i in 0..n {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = kernel_value(&qn[i], &kn[j], cfg.mode, order, cfg.sigma);
                    }
                    let den = if cfg.normalize {
                        row.iter().sum::<f64>().max(cfg.epsilon)
                    } else {
                        1.0
                    };
                    for jj in 0..hw {
                        let acc: f64 = row
                            .iter()
                            .enumerate()
                            .map(|(j, &w)| w * v.row(j)[cols.start + jj].as_f64())
                            .sum();
                        out[i * c + cols.start + jj] = T::from_f64(acc / den);
                    }
                }
            }
        }
    }
    TokenMatrix::from_rows(n, c, out)
}
