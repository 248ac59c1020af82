//! Closed-form FLOP counts and wall-clock scaling of attention layers.
//!
//! Counting conventions: a matmul `[M×K]·[K×N]` costs `2MKN`; a convolution
//! `2·Cout·Cin·k²·H·W`; elementwise ops cost 1 per entry and `exp` 4 per
//! entry. One MAC equals 2 FLOPs. Counts cover a single attention layer
//! including its Q/K/V projections, not the whole network.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    essa_forward, reference_attention, AttentionConfig, KernelOrder, ReferenceKind, TokenMatrix,
};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const EXP_FLOPS: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    /// Softmax dot-product attention.
    Mhsa,
    /// Linear-time kernel attention.
    Essa,
    /// The same truncated kernel built as an explicit `N × N` matrix.
    Quadratic,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Mhsa => "mhsa",
            AttentionKind::Essa => "essa",
            AttentionKind::Quadratic => "quadratic",
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mhsa" => Ok(AttentionKind::Mhsa),
            "essa" => Ok(AttentionKind::Essa),
            "quadratic" => Ok(AttentionKind::Quadratic),
            other => invalid(format!(
                "unknown attention kind {other:?} (expected mhsa|essa|quadratic)"
            )),
        }
    }
}

fn matmul(m: u64, k: u64, n: u64) -> u64 {
    2 * m * k * n
}

/// FLOPs of one attention layer on `n` tokens of width `c`.
pub fn count_flops(kind: AttentionKind, n: usize, c: usize, cfg: &AttentionConfig) -> u64 {
    let (n, c) = (n as u64, c as u64);
    let heads = cfg.heads.max(1) as u64;
    let hw = c / heads;
    // Q, K, V projections with bias
    let mut total = 3 * (matmul(n, c, c) + n * c);
    // centring and unit-normalizing one [n, hw] token matrix
    let centre = 5 * n * hw + 3 * n;
    for _ in 0..heads {
        total += match kind {
            AttentionKind::Mhsa => {
                let scores = matmul(n, hw, n) + n * n;
                let softmax = (EXP_FLOPS + 3) * n * n;
                scores + softmax + matmul(n, n, hw)
            }
            AttentionKind::Essa => {
                let d = cfg.feature_spec().width(hw as usize) as u64;
                let features = 2 * 2 * n * (d - 1);
                let products = matmul(d, n, hw) + matmul(n, d, hw);
                let norm = if cfg.normalize {
                    n * d + matmul(n, d, 1) + n * hw
                } else {
                    0
                };
                2 * centre + features + products + norm
            }
            AttentionKind::Quadratic => {
                let r = matmul(n, hw, n);
                // r², then the truncated series: one multiply-add per term
                let kernel = n * n * (1 + 2 * cfg.order as u64);
                let norm = if cfg.normalize { n * n + n * hw } else { 0 };
                2 * centre + r + kernel + matmul(n, n, hw) + norm
            }
        };
    }
    total
}

/// Least-squares line through `(log N, log flops)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_scaling(samples: &[(usize, f64)]) -> Result<ScalingFit> {
    if samples.len() < 4 {
        return invalid(format!("need at least 4 samples, got {}", samples.len()));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return invalid("sample sizes must be strictly increasing");
    }
    let (lo, hi) = (samples[0].0, samples[samples.len() - 1].0);
    if hi < 16 * lo.max(1) {
        return invalid(format!("sizes {lo}..{hi} span less than 16x"));
    }
    if samples.iter().any(|&(n, y)| n == 0 || !(y > 0.0)) {
        return invalid("sizes and values must be positive");
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(n, y)| ((n as f64).ln(), y.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(ScalingFit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub median_ns: f64,
    /// Every timed run, in order.
    pub samples_ns: Vec<f64>,
}

impl LatencyStats {
    /// Standard deviation divided by the median.
    pub fn relative_spread(&self) -> f64 {
        let n = self.samples_ns.len() as f64;
        let mean = self.samples_ns.iter().sum::<f64>() / n;
        let var = self
            .samples_ns
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt() / self.median_ns
    }
}

fn seeded_tokens(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<TokenMatrix<f32>> {
    TokenMatrix::new(Tensor::rand_normal(&[n, c], 1.0, rng)?)
}

/// Median wall-clock time of `repeats` forward passes after two warm-up runs.
pub fn measure_latency(
    kind: AttentionKind,
    n: usize,
    c: usize,
    cfg: &AttentionConfig,
    repeats: usize,
) -> Result<LatencyStats> {
    if repeats < 5 {
        return invalid(format!("at least 5 repeats are required, got {repeats}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64 * 131 + c as u64);
    let q = seeded_tokens(n, c, &mut rng)?;
    let k = seeded_tokens(n, c, &mut rng)?;
    let v = seeded_tokens(n, c, &mut rng)?;
    let run = || -> Result<()> {
        let out = match kind {
            AttentionKind::Essa => essa_forward(&q, &k, &v, cfg)?,
            AttentionKind::Mhsa => reference_attention(&q, &k, &v, ReferenceKind::Mhsa, cfg)?,
            AttentionKind::Quadratic => reference_attention(
                &q,
                &k,
                &v,
                ReferenceKind::SccKernelQuadratic(KernelOrder::Truncated(cfg.order)),
                cfg,
            )?,
        };
        std::hint::black_box(out);
        Ok(())
    };
    for _ in 0..2 {
        run()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        run()?;
        samples.push(t.elapsed().as_nanos() as f64);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(LatencyStats {
        median_ns: median,
        samples_ns: samples,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSample {
    pub kind: AttentionKind,
    pub n: usize,
    pub flops: u64,
    pub median_ns: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub channels: usize,
    pub samples: Vec<ScalingSample>,
    pub fits: Vec<(AttentionKind, ScalingFit)>,
}

/// Counts (and optionally times) each kind at each size, then fits FLOP slopes.
pub fn scaling_report(
    kinds: &[AttentionKind],
    sizes: &[usize],
    c: usize,
    cfg: &AttentionConfig,
    timing_repeats: Option<usize>,
) -> Result<ScalingReport> {
    let mut samples = Vec::new();
    let mut fits = Vec::new();
    for &kind in kinds {
        let mut pts = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let flops = count_flops(kind, n, c, cfg);
            let median_ns = match timing_repeats {
                Some(r) => Some(measure_latency(kind, n, c, cfg, r)?.median_ns),
                None => None,
            };
            pts.push((n, flops as f64));
            samples.push(ScalingSample {
                kind,
                n,
                flops,
                median_ns,
            });
        }
        fits.push((kind, fit_scaling(&pts)?));
    }
    Ok(ScalingReport {
        channels: c,
        samples,
        fits,
    })
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,n,c,flops,macs,median_ns\n");
        for x in &self.samples {
            let t = x.median_ns.map(|v| format!("{v:.0}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{t}",
                x.kind.as_str(),
                x.n,
                self.channels,
                x.flops,
                x.flops / 2
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>16} {:>16} {:>14}\n",
            "kind", "N", "FLOPs", "MACs", "median ms"
        );
        for x in &self.samples {
            let t = x
                .median_ns
                .map(|v| format!("{:.3}", v / 1e6))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>16} {:>16} {:>14}",
                x.kind.as_str(),
                x.n,
                x.flops,
                x.flops / 2,
                t
            );
        }
        for (kind, f) in &self.fits {
            let _ = writeln!(
                s,
                "slope {:<10} {:.4} (rms residual {:.2e})",
                kind.as_str(),
                f.slope,
                f.residual
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIZES: [usize; 4] = [256, 1024, 4096, 16384];

    #[test]
    fn fit_recovers_exact_power_laws() {
        let lin: Vec<(usize, f64)> = SIZES.iter().map(|&n| (n, 3.0 * n as f64)).collect();
        let quad: Vec<(usize, f64)> = SIZES.iter().map(|&n| (n, 0.5 * (n * n) as f64)).collect();
        assert!((fit_scaling(&lin).unwrap().slope - 1.0).abs() <= 1e-9);
        assert!((fit_scaling(&quad).unwrap().slope - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn fit_rejects_thin_inputs() {
        assert!(fit_scaling(&[(1, 1.0), (2, 2.0), (4, 4.0)]).is_err());
        assert!(fit_scaling(&[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]).is_err());
        assert!(fit_scaling(&[(4, 1.0), (2, 2.0), (8, 3.0), (64, 4.0)]).is_err());
    }

    #[test]
    fn doubling_tokens_approaches_linear_and_quadratic_limits() {
        let cfg = AttentionConfig::default();
        let r = |k, n| count_flops(k, 2 * n, 64, &cfg) as f64 / count_flops(k, n, 64, &cfg) as f64;
        assert!((r(AttentionKind::Essa, 4096) - 2.0).abs() <= 0.1);
        assert!((r(AttentionKind::Mhsa, 1 << 16) - 4.0).abs() <= 0.2);
    }

    #[test]
    fn counted_slopes_match_claimed_orders() {
        let cfg = AttentionConfig::default();
        let rep = scaling_report(
            &[AttentionKind::Essa, AttentionKind::Mhsa],
            &SIZES,
            64,
            &cfg,
            None,
        )
        .unwrap();
        let essa = rep.fits[0].1.slope;
        let mhsa = rep.fits[1].1.slope;
        assert!((0.9..=1.1).contains(&essa), "{essa}");
        assert!((1.8..=2.2).contains(&mhsa), "{mhsa}");
        assert_eq!(rep.to_csv().lines().count(), 9);
    }

    #[test]
    fn ratio_to_mhsa_decreases_with_tokens() {
        let cfg = AttentionConfig::default();
        let ratios: Vec<f64> = SIZES
            .iter()
            .map(|&n| {
                count_flops(AttentionKind::Essa, n, 64, &cfg) as f64
                    / count_flops(AttentionKind::Mhsa, n, 64, &cfg) as f64
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn single_token_runs_for_every_kind() {
        let cfg = AttentionConfig::default();
        for k in [
            AttentionKind::Essa,
            AttentionKind::Mhsa,
            AttentionKind::Quadratic,
        ] {
            assert!(measure_latency(k, 1, 4, &cfg, 5).is_ok());
        }
        assert!(measure_latency(AttentionKind::Essa, 1, 4, &cfg, 4).is_err());
    }
}
