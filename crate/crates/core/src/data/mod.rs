//! Hyperspectral cubes, their file container, resampling, patch pairs and a
//! seeded synthetic generator.

mod io;
mod pairs;
mod resize;
mod synth;

pub use io::{read_hsi, write_hsi, HSI_HEADER_LEN, HSI_MAGIC};
pub use pairs::{make_pairs, Pair, PairSet, Split, SplitRule};
pub use resize::{bicubic_resize, cubic_weights, resize_to, CUBIC_A};
pub use synth::{adjacent_band_correlation, synthesize, SynthSpec};

use crate::error::{invalid, Result};
use crate::tensor::{Element, Tensor};

/// A hyperspectral image stored band-major as `[bands, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube<T: Element = f32> {
    values: Tensor<T>,
}

impl<T: Element> HsiCube<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 3 {
            return invalid(format!(
                "cube tensor must be [c, h, w], got {:?}",
                values.shape()
            ));
        }
        if !values.all_finite() {
            return invalid("cube contains non-finite values");
        }
        Ok(Self { values })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[bands, height, width])?)
    }

    pub fn bands(&self) -> usize {
        self.values.dim(0)
    }

    pub fn height(&self) -> usize {
        self.values.dim(1)
    }

    pub fn width(&self) -> usize {
        self.values.dim(2)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.values
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.height() * self.width();
        &self.values.data()[b * n..(b + 1) * n]
    }

    /// Spectrum of the pixel at row `y`, column `x`.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<T> {
        let n = self.height() * self.width();
        let o = y * self.width() + x;
        (0..self.bands())
            .map(|b| self.values.data()[b * n + o])
            .collect()
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            values: self.values.map(|v| v.max(T::zero()).min(T::one())),
        }
    }

    pub fn cast<U: Element>(&self) -> HsiCube<U> {
        HsiCube {
            values: self.values.cast(),
        }
    }

    /// Spatial crop of `size_h × size_w` pixels starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if y0 + size_h > self.height() || x0 + size_w > self.width() {
            return invalid(format!(
                "crop {size_h}x{size_w} at ({y0}, {x0}) exceeds {}x{} cube",
                self.height(),
                self.width()
            ));
        }
        let (c, w) = (self.bands(), self.width());
        let src = self.values.data();
        let mut out = Vec::with_capacity(c * size_h * size_w);
        for b in 0..c {
            for y in y0..y0 + size_h {
                let row = (b * self.height() + y) * w;
                out.extend_from_slice(&src[row + x0..row + x0 + size_w]);
            }
        }
        Self::new(Tensor::new(&[c, size_h, size_w], out)?)
    }
}
