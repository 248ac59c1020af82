//! Separable bicubic resampling with clamp-to-edge boundaries.

use super::HsiCube;
use crate::error::{invalid, Result};
use crate::tensor::{Element, Tensor};

/// Keys cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Weights of the four taps at offsets `-1, 0, 1, 2` for sampling phase `t ∈ [0, 1)`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [cubic(t + 1.0), cubic(t), cubic(1.0 - t), cubic(2.0 - t)]
}

struct Tap {
    idx: [usize; 4],
    w: [f64; 4],
}

fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
            Tap {
                idx: [
                    clamp(base - 1),
                    clamp(base),
                    clamp(base + 1),
                    clamp(base + 2),
                ],
                w: cubic_weights(t),
            }
        })
        .collect()
}

/// Resamples every band to `height × width`.
pub fn resize_to<T: Element>(cube: &HsiCube<T>, height: usize, width: usize) -> Result<HsiCube<T>> {
    if height == 0 || width == 0 {
        return invalid(format!(
            "resize target {height}x{width} has an empty dimension"
        ));
    }
    let (c, h, w) = (cube.bands(), cube.height(), cube.width());
    let tx = taps(w, width);
    let ty = taps(h, height);
    let mut out = Vec::with_capacity(c * height * width);
    let mut horiz = vec![0.0f64; h * width];
    for b in 0..c {
        let plane = cube.band(b);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, tap) in tx.iter().enumerate() {
                horiz[y * width + x] = (0..4).map(|k| tap.w[k] * row[tap.idx[k]].as_f64()).sum();
            }
        }
        for tap in &ty {
            for x in 0..width {
                let v: f64 = (0..4)
                    .map(|k| tap.w[k] * horiz[tap.idx[k] * width + x])
                    .sum();
                out.push(T::from_f64(v));
            }
        }
    }
    HsiCube::new(Tensor::new(&[c, height, width], out)?)
}

/// Resamples by `factor` with output dims `round(factor · n)`.
pub fn bicubic_resize<T: Element>(cube: &HsiCube<T>, factor: f64) -> Result<HsiCube<T>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return invalid(format!("resize factor must be positive, got {factor}"));
    }
    let oh = (cube.height() as f64 * factor).round() as usize;
    let ow = (cube.width() as f64 * factor).round() as usize;
    if oh == 0 || ow == 0 {
        return invalid(format!(
            "factor {factor} maps {}x{} to an empty image",
            cube.height(),
            cube.width()
        ));
    }
    resize_to(cube, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube(c: usize, h: usize, w: usize, seed: u64) -> HsiCube<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::new(Tensor::rand_uniform(&[c, h, w], 0.0, 1.0, &mut rng).unwrap()).unwrap()
    }

    #[test]
    fn unit_factor_is_identity() {
        let x = cube(3, 5, 7, 1);
        let y = bicubic_resize(&x, 1.0).unwrap();
        assert!(y.tensor().max_abs_diff(x.tensor()).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_cube_stays_constant() {
        let x = HsiCube::new(Tensor::<f64>::full(&[2, 6, 6], 0.37).unwrap()).unwrap();
        for f in [0.5, 2.0, 0.25, 3.0] {
            let y = bicubic_resize(&x, f).unwrap();
            assert!(
                y.tensor().data().iter().all(|v| (v - 0.37).abs() < 1e-12),
                "factor {f}"
            );
        }
    }

    #[test]
    fn ramp_upsampling_matches_direct_kernel_sum() {
        let ramp = [0.0, 1.0, 2.0, 3.0];
        let x = HsiCube::new(Tensor::<f64>::new(&[1, 1, 4], ramp.to_vec()).unwrap()).unwrap();
        let y = bicubic_resize(&x, 2.0).unwrap();
        assert_eq!(y.width(), 8);
        // Keys kernel written out directly for the oracle
        let k = |s: f64| -> f64 {
            let s = s.abs();
            if s <= 1.0 {
                1.5 * s.powi(3) - 2.5 * s * s + 1.0
            } else if s < 2.0 {
                -0.5 * s.powi(3) + 2.5 * s * s - 4.0 * s + 2.0
            } else {
                0.0
            }
        };
        for o in 2..6 {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let expect: f64 = (-3i32..7)
                .map(|j| k(src - j as f64) * ramp[j.clamp(0, 3) as usize])
                .sum();
            assert!((y.band(0)[o] - expect).abs() < 1e-12, "o={o}");
        }
        for o in 3..5 {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            assert!(
                (y.band(0)[o] - src).abs() < 1e-12,
                "linear reproduction at o={o}"
            );
        }
    }

    #[test]
    fn output_dims_are_rounded() {
        let x = cube(1, 6, 5, 2);
        let y = bicubic_resize(&x, 0.5).unwrap();
        assert_eq!((y.height(), y.width()), (3, 3));
        assert!(bicubic_resize(&x, 0.01).is_err());
        assert!(bicubic_resize(&x, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_partition_unity(t in 0.0f64..1.0) {
            let s: f64 = cubic_weights(t).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }
}
