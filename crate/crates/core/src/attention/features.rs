//! Truncated Taylor feature maps for the `exp(r²/σ)` correlation kernel.
//!
//! Block `i` of a feature row carries the degree-`2i` monomials of the
//! centred, unit-normalized token scaled by `1 / (σ^{i/2} √(i!))`, so that the
//! inner product of two rows sums `i`-th series terms over `i = 0..=order`.
//!
//! * [`FeatureMode::Exact`] uses the full `2i`-fold tensor power (width
//!   `C^{2i}` per block) and reproduces `Σ r^{2i} / (σ^i i!)` exactly.
//! * [`FeatureMode::Elementwise`] keeps only the coordinatewise powers
//!   `x̂_c^{2i}` (width `C` per block), which is linear in `C`.

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// Largest head width accepted in exact mode.
pub const EXACT_MAX_CHANNELS: usize = 16;

/// Upper bound on `rows × width` for one exact feature matrix.
pub const EXACT_MAX_ELEMENTS: usize = 1 << 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Exact,
    Elementwise,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Exact => "exact",
            FeatureMode::Elementwise => "elementwise",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(FeatureMode::Exact),
            "elementwise" => Ok(FeatureMode::Elementwise),
            other => invalid(format!(
                "unknown feature mode {other:?} (expected exact|elementwise)"
            )),
        }
    }
}

/// Parameters of a feature map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureSpec {
    pub mode: FeatureMode,
    pub order: usize,
    pub sigma: f64,
}

impl FeatureSpec {
    /// Feature width for `c`-channel tokens.
    pub fn width(&self, c: usize) -> usize {
        match self.mode {
            FeatureMode::Elementwise => 1 + self.order * c,
            FeatureMode::Exact => (0..=self.order).map(|i| c.pow(2 * i as u32)).sum(),
        }
    }

    /// `1 / (σ^{i/2} √(i!))` for `i = 0..=order`.
    pub fn block_scales(&self) -> Vec<f64> {
        let mut fact = 1.0f64;
        (0..=self.order)
            .map(|i| {
                if i > 0 {
                    fact *= i as f64;
                }
                1.0 / (self.sigma.powf(i as f64 / 2.0) * fact.sqrt())
            })
            .collect()
    }

    pub fn check(&self, rows: usize, c: usize) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.mode == FeatureMode::Exact {
            if c > EXACT_MAX_CHANNELS {
                return invalid(format!(
                    "exact feature map limited to {EXACT_MAX_CHANNELS} channels per head, got {c}"
                ));
            }
            let width = (0..=self.order).try_fold(0usize, |acc, i| {
                c.checked_pow(2 * i as u32).and_then(|b| acc.checked_add(b))
            });
            match width.and_then(|w| w.checked_mul(rows)) {
                Some(n) if n <= EXACT_MAX_ELEMENTS => {}
                _ => {
                    return invalid(format!(
                    "exact feature map of order {} for {rows}x{c} tokens exceeds the memory guard",
                    self.order
                ))
                }
            }
        }
        Ok(())
    }
}

/// `P_m = x^{⊗m}` for `m = 0..=max`, each flattened row-major.
fn tensor_powers<T: Element>(x: &[T], max: usize) -> Vec<Vec<T>> {
    let mut pows = Vec::with_capacity(max + 1);
    pows.push(vec![T::one()]);
    for m in 1..=max {
        let prev: &Vec<T> = &pows[m - 1];
        let mut next = Vec::with_capacity(prev.len() * x.len());
        for &a in prev {
            next.extend(x.iter().map(|&b| a * b));
        }
        pows.push(next);
    }
    pows
}

/// Maps normalized `[N, C]` rows to `[N, width]` features.
pub fn feature_forward<T: Element>(x: &Tensor<T>, spec: &FeatureSpec) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return shape_err("feature_map", x.shape(), &[0, 0]);
    }
    let (n, c) = (x.dim(0), x.dim(1));
    spec.check(n, c)?;
    let width = spec.width(c);
    let scales: Vec<T> = spec.block_scales().into_iter().map(T::from_f64).collect();
    let mut out = Vec::with_capacity(n * width);
    for row in x.data().chunks(c) {
        out.push(T::one());
        match spec.mode {
            FeatureMode::Elementwise => {
                for i in 1..=spec.order {
                    let p = 2 * i as i32;
                    out.extend(row.iter().map(|&v| v.powi(p) * scales[i]));
                }
            }
            FeatureMode::Exact => {
                let pows = tensor_powers(row, 2 * spec.order);
                for i in 1..=spec.order {
                    out.extend(pows[2 * i].iter().map(|&v| v * scales[i]));
                }
            }
        }
    }
    Tensor::new(&[n, width], out)
}

/// Adjoint of [`feature_forward`] with respect to its input rows.
pub fn feature_backward<T: Element>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    spec: &FeatureSpec,
) -> Result<Tensor<T>> {
    let (n, c) = (x.dim(0), x.dim(1));
    let width = spec.width(c);
    if grad.shape() != [n, width] {
        return shape_err("feature_map backward", grad.shape(), &[n, width]);
    }
    let scales: Vec<T> = spec.block_scales().into_iter().map(T::from_f64).collect();
    let mut gx = vec![T::zero(); n * c];
    for ((row, grow), gout) in x
        .data()
        .chunks(c)
        .zip(grad.data().chunks(width))
        .zip(gx.chunks_mut(c))
    {
        match spec.mode {
            FeatureMode::Elementwise => {
                for i in 1..=spec.order {
                    let block = &grow[1 + (i - 1) * c..1 + i * c];
                    let k = T::from_f64(2.0 * i as f64) * scales[i];
                    let p = 2 * i as i32 - 1;
                    for ((o, &g), &v) in gout.iter_mut().zip(block).zip(row) {
                        *o = *o + g * k * v.powi(p);
                    }
                }
            }
            FeatureMode::Exact => {
                let top = 2 * spec.order;
                let pows = tensor_powers(row, top);
                // block offsets inside the feature row
                let mut offsets = vec![0usize; spec.order + 1];
                let mut off = 1;
                for i in 1..=spec.order {
                    offsets[i] = off;
                    off += c.pow(2 * i as u32);
                }
                let mut carry: Option<Vec<T>> = None;
                for m in (1..=top).rev() {
                    let len = pows[m].len();
                    let mut gm = carry.take().unwrap_or_else(|| vec![T::zero(); len]);
                    if m % 2 == 0 {
                        let i = m / 2;
                        let block = &grow[offsets[i]..offsets[i] + len];
                        for (a, &g) in gm.iter_mut().zip(block) {
                            *a = *a + g * scales[i];
                        }
                    }
                    // P_m[a·C + j] = P_{m−1}[a] · x_j
                    let prev = &pows[m - 1];
                    let mut gprev = vec![T::zero(); prev.len()];
                    for (a, &pa) in prev.iter().enumerate() {
                        let seg = &gm[a * c..(a + 1) * c];
                        let mut acc = T::zero();
                        for (j, &g) in seg.iter().enumerate() {
                            acc = acc + g * row[j];
                            gout[j] = gout[j] + g * pa;
                        }
                        gprev[a] = acc;
                    }
                    carry = Some(gprev);
                }
            }
        }
    }
    Tensor::new(&[n, c], gx)
}
