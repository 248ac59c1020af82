//! Self-contained numerical property suite.
//!
//! Each check draws seeded inputs, compares against an independent
//! reference and reports pass or fail with the worst observed deviation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    center_normalize, essa_forward, feature_map, kernel_value, reference_attention, scc2,
    AttentionConfig, FeatureMode, KernelOrder, ReferenceKind, TokenMatrix,
};
use crate::bench::{count_flops, fit_scaling, AttentionKind};
use crate::data::{synthesize, HsiCube, SynthSpec};
use crate::error::Result;
use crate::metrics::evaluate_metrics;
use crate::model::{parse_schedule, Model, ModelConfig};
use crate::tensor::{finite_diff_check, ops, ConvMode, Graph, Tensor, Var};
use crate::train::{read_checkpoint, write_checkpoint, TrainState};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &'static str, worst: f64, limit: f64) -> Self {
        Self {
            name,
            passed: worst <= limit,
            detail: format!("worst {worst:.3e} (limit {limit:.0e})"),
        }
    }
}

fn tokens(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Result<TokenMatrix<f64>> {
    TokenMatrix::new(Tensor::rand_uniform(&[n, c], -1.0, 1.0, rng)?)
}

fn exact_cfg(order: usize, normalize: bool) -> AttentionConfig {
    AttentionConfig {
        order,
        mode: FeatureMode::Exact,
        normalize,
        ..AttentionConfig::default()
    }
}

/// `ψ(Q)(ψ(K)ᵀV)` against `(ψ(Q)ψ(K)ᵀ)V` in exact mode.
pub fn reorder_identity(cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case as u64);
        let n = rng.random_range(1..=64);
        let c = rng.random_range(2..=8);
        let cfg = exact_cfg(case % 4, false);
        let (q, k, v) = (
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
        );
        let fq = feature_map(&q, &cfg)?.values;
        let fk = feature_map(&k, &cfg)?.values;
        let fkt = ops::transpose(&fk)?;
        let linear = ops::matmul(&fq, &ops::matmul(&fkt, v.tensor())?)?;
        let quadratic = ops::matmul(&ops::matmul(&fq, &fkt)?, v.tensor())?;
        worst = worst.max(linear.rel_inf_diff(&quadratic)?);
    }
    Ok(worst)
}

/// Linear-time attention against the entry-by-entry kernel matrix.
pub fn kernel_equivalence(cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case as u64);
        let n = rng.random_range(1..=32);
        let c = rng.random_range(2..=8);
        let mode = if case % 2 == 0 {
            FeatureMode::Exact
        } else {
            FeatureMode::Elementwise
        };
        let cfg = AttentionConfig {
            order: (case / 2) % 4,
            mode,
            normalize: case % 3 != 0,
            sigma: rng.random_range(0.5..2.0),
            ..AttentionConfig::default()
        };
        let (q, k, v) = (
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
        );
        let fast = essa_forward(&q, &k, &v, &cfg)?;
        let slow = reference_attention(
            &q,
            &k,
            &v,
            ReferenceKind::SccKernelQuadratic(KernelOrder::Truncated(cfg.order)),
            &cfg,
        )?;
        worst = worst.max(fast.tensor().rel_inf_diff(slow.tensor())?);
    }
    Ok(worst)
}

fn tail_of_e(p: usize) -> f64 {
    let mut fact = 1.0;
    let mut partial = 0.0;
    for i in 0..=p {
        if i > 0 {
            fact *= i as f64;
        }
        partial += 1.0 / fact;
    }
    std::f64::consts::E - partial
}

/// Max-entry error of the degree-`p` kernel against `exp(r²)` for `p = 0..=6`.
///
/// Returns `(worst excess over the remainder bound, monotonicity violations)`.
/// Successive errors may differ by rounding once both are at machine precision.
pub fn truncation_convergence(cases: usize) -> Result<(f64, usize)> {
    let mut excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + case as u64);
        let n = rng.random_range(1..=8);
        let c = rng.random_range(2..=8);
        let qn = center_normalize(&tokens(&mut rng, n, c)?, 1e-6);
        let kn = center_normalize(&tokens(&mut rng, n, c)?, 1e-6);
        let mut prev = f64::INFINITY;
        for p in 0..=6 {
            let mut err = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let full = kernel_value(
                        qn.row(i),
                        kn.row(j),
                        FeatureMode::Exact,
                        KernelOrder::Infinite,
                        1.0,
                    );
                    let trunc = kernel_value(
                        qn.row(i),
                        kn.row(j),
                        FeatureMode::Exact,
                        KernelOrder::Truncated(p),
                        1.0,
                    );
                    err = err.max((full - trunc).abs());
                }
            }
            excess = excess.max(err - tail_of_e(p));
            if err > prev + 8.0 * f64::EPSILON * std::f64::consts::E {
                violations += 1;
            }
            prev = err;
        }
    }
    Ok((excess, violations))
}

/// Invariance of `scc2` and normalized attention under `K → sK + t` for scalar `s ≠ 0`, `t`.
pub struct InvarianceReport {
    /// Worst `scc2` deviation with a vanishing guard (`ε = 1e-12`).
    pub scc: f64,
    /// Worst relative attention deviation with a vanishing guard.
    pub attention: f64,
    /// Worst deviation at `ε = 1e-6` from the closed-form guard factor
    /// `((‖k̃‖ + ε) / (‖k̃‖ + ε/|s|))²`, where `k̃` is the centred key.
    pub guard: f64,
}

pub fn translation_invariance(cases: usize) -> Result<InvarianceReport> {
    let mut rep = InvarianceReport {
        scc: 0.0,
        attention: 0.0,
        guard: 0.0,
    };
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + case as u64);
        let c = rng.random_range(2..=8);
        let mut s = 0.0f64;
        while s.abs() < 1e-3 {
            s = rng.random_range(-3.0..3.0);
        }
        let t: f64 = rng.random_range(-2.0..2.0);
        let q = tokens(&mut rng, 1, c)?;
        let k = tokens(&mut rng, 1, c)?;
        let shifted: Vec<f64> = k.row(0).iter().map(|&x| s * x + t).collect();
        rep.scc = rep
            .scc
            .max((scc2(q.row(0), k.row(0), 1e-12)? - scc2(q.row(0), &shifted, 1e-12)?).abs());

        let eps = 1e-6;
        let mean = k.row(0).iter().sum::<f64>() / c as f64;
        let norm = k
            .row(0)
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            .sqrt();
        let factor = ((norm + eps) / (norm + eps / s.abs())).powi(2);
        let a = scc2(q.row(0), k.row(0), eps)?;
        let b = scc2(q.row(0), &shifted, eps)?;
        rep.guard = rep.guard.max((b - a * factor).abs());

        let n = rng.random_range(1..=16);
        let (q, k, v) = (
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
            tokens(&mut rng, n, c)?,
        );
        let k2 = TokenMatrix::new(k.tensor().map(|x| s * x + t))?;
        let mode = if case % 2 == 0 {
            FeatureMode::Exact
        } else {
            FeatureMode::Elementwise
        };
        let cfg = AttentionConfig {
            mode,
            order: 1 + case % 3,
            epsilon: 1e-12,
            ..AttentionConfig::default()
        };
        let y1 = essa_forward(&q, &k, &v, &cfg)?;
        let y2 = essa_forward(&q, &k2, &v, &cfg)?;
        rep.attention = rep.attention.max(y2.tensor().rel_inf_diff(y1.tensor())?);
    }
    Ok(rep)
}

/// Smallest eigenvalue of the truncated-kernel Gram matrix divided by `N`, minimized over cases.
pub fn gram_min_eigenvalue(cases: usize) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + case as u64);
        let n = rng.random_range(2..=64);
        let c = rng.random_range(2..=8);
        let x = tokens(&mut rng, n, c)?;
        let xn = center_normalize(&x, 1e-6);
        for mode in [FeatureMode::Exact, FeatureMode::Elementwise] {
            let p = 1 + case % 3;
            let gram = DMatrix::from_fn(n, n, |i, j| {
                kernel_value(xn.row(i), xn.row(j), mode, KernelOrder::Truncated(p), 1.0)
            });
            let eig = SymmetricEigen::new(gram).eigenvalues;
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            worst = worst.min(min / n as f64);
        }
    }
    Ok(worst)
}

type Primitive = (
    &'static str,
    Vec<usize>,
    fn(&mut Graph<f64>, Var) -> Result<Var>,
);

fn weights(g: &mut Graph<f64>, shape: &[usize], salt: f64) -> Result<Var> {
    Ok(g.constant(Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * salt).sin())?))
}

fn weighted_sum(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let w = weights(g, &g.shape(y).to_vec(), 0.37)?;
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

/// Differentiable primitives with a representative input shape each.
pub fn primitives() -> Vec<Primitive> {
    vec![
        ("matmul", vec![3, 4], |g, x| {
            let b = weights(g, &[4, 2], 0.7)?;
            let y = g.matmul(x, b)?;
            weighted_sum(g, y)
        }),
        ("transpose", vec![3, 2], |g, x| {
            let y = g.transpose(x)?;
            weighted_sum(g, y)
        }),
        ("add_sub_mul", vec![2, 3], |g, x| {
            let w = weights(g, &[2, 3], 1.3)?;
            let a = g.add(x, w)?;
            let s = g.sub(a, x)?;
            let m = g.mul(a, x)?;
            let y = g.add(s, m)?;
            weighted_sum(g, y)
        }),
        ("exp", vec![5], |g, x| {
            let y = g.exp(x);
            weighted_sum(g, y)
        }),
        ("powi", vec![5], |g, x| {
            let y = g.powi(x, 3);
            weighted_sum(g, y)
        }),
        ("gelu", vec![6], |g, x| {
            let y = g.gelu(x);
            weighted_sum(g, y)
        }),
        ("softmax", vec![3, 4], |g, x| {
            let y = g.softmax(x)?;
            weighted_sum(g, y)
        }),
        ("mean_axis", vec![3, 4], |g, x| {
            let y = g.mean_axis(x, 0)?;
            weighted_sum(g, y)
        }),
        ("conv_spatial", vec![2, 4, 4], |g, x| {
            let w = weights(g, &[3, 2, 3, 3], 0.9)?;
            let y = g.conv2d(x, w, ConvMode::Spatial)?;
            weighted_sum(g, y)
        }),
        ("conv_depthwise", vec![2, 4, 4], |g, x| {
            let w = weights(g, &[2, 1, 3, 3], 1.1)?;
            let y = g.conv2d(x, w, ConvMode::Depthwise)?;
            weighted_sum(g, y)
        }),
        ("pixel_shuffle", vec![4, 2, 2], |g, x| {
            let y = g.pixel_shuffle(x, 2)?;
            weighted_sum(g, y)
        }),
        ("pixel_unshuffle", vec![1, 4, 4], |g, x| {
            let y = g.pixel_unshuffle(x, 2)?;
            weighted_sum(g, y)
        }),
        ("center_normalize", vec![3, 4], |g, x| {
            let y = g.center_normalize(x, 1e-6)?;
            weighted_sum(g, y)
        }),
        ("essa_l1", vec![4, 3], |g, x| {
            let k = weights(g, &[4, 3], 0.8)?;
            let v = weights(g, &[4, 3], 1.7)?;
            let cfg = AttentionConfig {
                normalize: true,
                ..AttentionConfig::default()
            };
            let y = crate::attention::essa_graph(g, x, k, v, &cfg)?;
            let a = g.abs(y);
            Ok(g.sum_all(a))
        }),
    ]
}

/// Worst finite-difference discrepancy over all primitives and `seeds` inputs each.
pub fn primitive_gradients(seeds: u64) -> Result<(f64, &'static str)> {
    let mut worst = (0.0f64, "");
    for (name, shape, f) in primitives() {
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
            let x = Tensor::<f64>::rand_uniform(&shape, -1.0, 1.0, &mut rng)?;
            let d = finite_diff_check(f, &x, 1e-5)?;
            if d > worst.0 {
                worst = (d, name);
            }
        }
    }
    Ok(worst)
}

/// The small network configuration used for end-to-end gradient checks.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        channels: 8,
        schedule: parse_schedule("2,1").expect("static schedule"),
        ..ModelConfig::desk(2, 2)
    }
}

/// Finite-difference check of the L1 loss with respect to the input and every parameter tensor.
pub fn model_gradients(model: &Model<f64>, lr: &Tensor<f64>, hr: &Tensor<f64>) -> Result<f64> {
    let loss = |g: &mut Graph<f64>, x: Var, which: Option<&str>| -> Result<Var> {
        let mut bound = model.params.bind(g, false);
        let input = match which {
            Some(name) => {
                bound.replace(name, x)?;
                g.constant(lr.clone())
            }
            None => x,
        };
        let y = model.forward_graph(g, &bound, input)?;
        let t = g.constant(hr.clone());
        g.l1_loss(y, t)
    };
    let mut worst = finite_diff_check(|g, x| loss(g, x, None), lr, 1e-5)?;
    for p in model.params.params() {
        let d = finite_diff_check(|g, x| loss(g, x, Some(&p.name)), &p.value, 1e-5)?;
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Seeded C=8, two-stage, 8×8 instance for [`model_gradients`].
pub fn small_model_gradients() -> Result<f64> {
    let mut model = Model::<f64>::build(&small_model_config(), 21)?;
    // non-zero biases so bias gradients are exercised away from the origin
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for p in model.params.params_mut() {
        if p.name.ends_with(".b") {
            p.value = Tensor::rand_uniform(p.value.shape(), -0.1, 0.1, &mut rng)?;
        }
    }
    let lr = Tensor::rand_uniform(&[2, 8, 8], 0.0, 1.0, &mut rng)?;
    let hr = Tensor::rand_uniform(&[2, 16, 16], 0.0, 1.0, &mut rng)?;
    model_gradients(&model, &lr, &hr)
}

/// Fitted FLOP slopes `(essa, mhsa)` over `N ∈ {256, 1024, 4096, 16384}` at `C = 64`.
pub fn flop_slopes() -> Result<(f64, f64)> {
    let cfg = AttentionConfig::default();
    let sizes = [256usize, 1024, 4096, 16384];
    let pts = |k| -> Vec<(usize, f64)> {
        sizes
            .iter()
            .map(|&n| (n, count_flops(k, n, 64, &cfg) as f64))
            .collect()
    };
    Ok((
        fit_scaling(&pts(AttentionKind::Essa))?.slope,
        fit_scaling(&pts(AttentionKind::Mhsa))?.slope,
    ))
}

fn metrics_identity() -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let gt = HsiCube::new(Tensor::<f64>::rand_uniform(
        &[4, 16, 16],
        0.0,
        1.0,
        &mut rng,
    )?)?;
    let r = evaluate_metrics(&gt, &gt, 2)?;
    Ok(r.mpsnr == 100.0
        && r.sam == 0.0
        && r.ergas == 0.0
        && (r.mssim - 1.0).abs() < 1e-12
        && r.rmse == 0.0
        && (r.cc - 1.0).abs() < 1e-12)
}

fn formats_round_trip() -> Result<bool> {
    let cube = synthesize(&SynthSpec {
        height: 8,
        width: 8,
        ..SynthSpec::default()
    })?;
    let hsi_ok = HsiCube::from_hsi_bytes(&cube.to_hsi_bytes())? == cube;
    let state = TrainState::new(Model::<f32>::build(&small_model_config(), 3)?);
    let ckpt_ok =
        read_checkpoint::<f32>(&write_checkpoint(&state), Some(&state.model.cfg))? == state;
    Ok(hsi_ok && ckpt_ok)
}

/// Runs every check; `quick` reduces case counts.
pub fn run_all(quick: bool) -> Vec<CheckResult> {
    let scale = |full: usize| if quick { (full / 5).max(4) } else { full };
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<CheckResult>| {
        out.push(r.unwrap_or_else(|e| CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        }))
    };
    push(
        "reorder identity",
        reorder_identity(scale(50)).map(|w| CheckResult::bound("reorder identity", w, 1e-5)),
    );
    push(
        "kernel equivalence",
        kernel_equivalence(scale(50)).map(|w| CheckResult::bound("kernel equivalence", w, 1e-5)),
    );
    push(
        "truncation convergence",
        truncation_convergence(scale(50)).map(|(excess, bad)| CheckResult {
            name: "truncation convergence",
            passed: excess <= 1e-12 && bad == 0,
            detail: format!(
                "max excess over remainder {excess:.3e}, monotonicity violations {bad}"
            ),
        }),
    );
    push(
        "translation invariance",
        translation_invariance(scale(100)).map(|r| CheckResult {
            name: "translation invariance",
            passed: r.scc <= 1e-6 && r.attention <= 1e-5 && r.guard <= 1e-12,
            detail: format!(
                "scc2 {:.3e} (limit 1e-6), attention {:.3e} (limit 1e-5), guard factor {:.3e} (limit 1e-12)",
                r.scc, r.attention, r.guard
            ),
        }),
    );
    push(
        "mercer psd",
        gram_min_eigenvalue(scale(20)).map(|m| CheckResult {
            name: "mercer psd",
            passed: m >= -1e-8,
            detail: format!("min eigenvalue / N {m:.3e} (limit -1e-8)"),
        }),
    );
    push(
        "primitive gradients",
        primitive_gradients(if quick { 4 } else { 20 }).map(|(w, name)| CheckResult {
            name: "primitive gradients",
            passed: w <= 1e-4,
            detail: format!("worst {w:.3e} at {name} (limit 1e-4)"),
        }),
    );
    push(
        "model gradients",
        small_model_gradients().map(|w| CheckResult::bound("model gradients", w, 1e-4)),
    );
    push(
        "flop scaling",
        flop_slopes().map(|(e, m)| CheckResult {
            name: "flop scaling",
            passed: (0.9..=1.1).contains(&e) && (1.8..=2.2).contains(&m),
            detail: format!("essa slope {e:.4}, mhsa slope {m:.4}"),
        }),
    );
    push(
        "metrics identity",
        metrics_identity().map(|ok| CheckResult {
            name: "metrics identity",
            passed: ok,
            detail: "identity pair yields ideal values".into(),
        }),
    );
    push(
        "format round trips",
        formats_round_trip().map(|ok| CheckResult {
            name: "format round trips",
            passed: ok,
            detail: "HSI1 and checkpoint bytes reproduce the originals".into(),
        }),
    );
    out
}
