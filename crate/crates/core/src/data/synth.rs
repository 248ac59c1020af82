//! Seeded linear-mixing generator for synthetic hyperspectral cubes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HsiCube;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    /// Number of endmember spectra.
    pub endmembers: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian width of endmember peaks, in band-index units.
    pub smoothness: f64,
    /// Number of sinusoids per abundance map; the `j`-th has `j` cycles across the image.
    pub frequencies: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            endmembers: 4,
            bands: 31,
            height: 64,
            width: 64,
            smoothness: 4.0,
            frequencies: 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.endmembers == 0 || self.bands == 0 || self.height == 0 || self.width == 0 {
            return invalid("synthetic cube needs at least one endmember, band and pixel");
        }
        if !(self.smoothness > 0.0) || !self.smoothness.is_finite() {
            return invalid(format!(
                "smoothness must be positive, got {}",
                self.smoothness
            ));
        }
        if self.frequencies == 0 {
            return invalid("at least one spatial frequency is required");
        }
        Ok(())
    }
}

fn endmember(rng: &mut ChaCha8Rng, bands: usize, width: f64) -> Vec<f64> {
    let peaks: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let centre = rng.random_range(0.0..bands as f64);
            let sigma = width * rng.random_range(0.75..1.25);
            let amp = rng.random_range(0.2..1.0);
            (centre, sigma, amp)
        })
        .collect();
    (0..bands)
        .map(|b| {
            peaks
                .iter()
                .map(|&(mu, s, a)| a * (-0.5 * ((b as f64 - mu) / s).powi(2)).exp())
                .sum()
        })
        .collect()
}

fn abundance(rng: &mut ChaCha8Rng, h: usize, w: usize, freqs: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (1..=freqs)
        .map(|j| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..1.0);
            (j as f64 * theta.cos(), j as f64 * theta.sin(), phase, amp)
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * 0.5 * (1.0 + (2.0 * PI * (fx * u + fy * v) + ph).sin()))
                .sum();
            out.push(s + 1e-3);
        }
    }
    out
}

/// Generates a cube in `[0, 1]` fully determined by `spec`.
pub fn synthesize(spec: &SynthSpec) -> Result<HsiCube<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, h, w, m) = (spec.bands, spec.height, spec.width, spec.endmembers);
    let spectra: Vec<Vec<f64>> = (0..m)
        .map(|_| endmember(&mut rng, c, spec.smoothness))
        .collect();
    let mut maps: Vec<Vec<f64>> = (0..m)
        .map(|_| abundance(&mut rng, h, w, spec.frequencies))
        .collect();
    for p in 0..h * w {
        let total: f64 = maps.iter().map(|a| a[p]).sum();
        for a in maps.iter_mut() {
            a[p] /= total;
        }
    }
    let mut data = vec![0.0f64; c * h * w];
    for (spec_e, map) in spectra.iter().zip(&maps) {
        for (b, &s) in spec_e.iter().enumerate() {
            let plane = &mut data[b * h * w..(b + 1) * h * w];
            for (v, &a) in plane.iter_mut().zip(map) {
                *v += a * s;
            }
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data: Vec<f32> = data
        .iter()
        .map(|&v| {
            if range > 1e-12 {
                ((v - lo) / range) as f32
            } else {
                0.5
            }
        })
        .collect();
    HsiCube::new(Tensor::new(&[c, h, w], data)?)
}

/// Mean Pearson correlation between consecutive bands across all pixels.
pub fn adjacent_band_correlation(cube: &HsiCube<f32>) -> f64 {
    let pearson = |a: &[f32], b: &[f32]| {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa.sqrt() * sbb.sqrt() + 1e-12)
    };
    let c = cube.bands();
    if c < 2 {
        return 1.0;
    }
    (0..c - 1)
        .map(|b| pearson(cube.band(b), cube.band(b + 1)))
        .sum::<f64>()
        / (c - 1) as f64
}
