use essa_core::attention::{
    center_normalize, essa_forward, kernel_value, scc2, AttentionConfig, FeatureMode, KernelOrder,
    TokenMatrix,
};
use essa_core::bench::{count_flops, AttentionKind};
use essa_core::data::HsiCube;
use essa_core::model::{default_schedule, encoder_layer, Model, ModelConfig};
use essa_core::tensor::{finite_diff_check, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn token_rows(n: usize, c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * c)
}

fn non_constant(v: &[f64]) -> bool {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() > 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scc2_is_bounded(q in token_rows(1, 6), k in token_rows(1, 6)) {
        let r = scc2(&q, &k, 1e-6).unwrap();
        prop_assert!((0.0..=1.0 + 1e-6).contains(&r));
    }

    #[test]
    fn scc2_ignores_affine_key_changes(
        q in token_rows(1, 5),
        k in token_rows(1, 5),
        s in prop_oneof![-3.0f64..-0.01, 0.01f64..3.0],
        t in -2.0f64..2.0,
    ) {
        prop_assume!(non_constant(&k));
        let moved: Vec<f64> = k.iter().map(|x| s * x + t).collect();
        let a = scc2(&q, &k, 1e-12).unwrap();
        let b = scc2(&q, &moved, 1e-12).unwrap();
        prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn truncated_kernels_stay_between_one_and_e(
        q in token_rows(1, 4),
        k in token_rows(1, 4),
        p in 0usize..5,
        exact in any::<bool>(),
    ) {
        let qn = center_normalize(&TokenMatrix::from_rows(1, 4, q).unwrap(), 1e-6);
        let kn = center_normalize(&TokenMatrix::from_rows(1, 4, k).unwrap(), 1e-6);
        let mode = if exact { FeatureMode::Exact } else { FeatureMode::Elementwise };
        let v = kernel_value(qn.row(0), kn.row(0), mode, KernelOrder::Truncated(p), 1.0);
        prop_assert!(v >= 1.0 - 1e-6 && v <= std::f64::consts::E + 1e-6, "{v}");
    }

    #[test]
    fn normalized_attention_is_a_convex_mix_of_values(
        q in token_rows(5, 3),
        k in token_rows(5, 3),
        v in token_rows(5, 3),
    ) {
        let q = TokenMatrix::from_rows(5, 3, q).unwrap();
        let k = TokenMatrix::from_rows(5, 3, k).unwrap();
        let v = TokenMatrix::from_rows(5, 3, v).unwrap();
        let y = essa_forward(&q, &k, &v, &AttentionConfig::default()).unwrap();
        for ch in 0..3 {
            let col: Vec<f64> = (0..5).map(|j| v.row(j)[ch]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..5 {
                let o = y.row(i)[ch];
                prop_assert!(o >= lo - 1e-9 && o <= hi + 1e-9);
            }
        }
    }
}

#[test]
fn output_is_scale_times_input_for_every_supported_scale() {
    for s in [2usize, 4, 8] {
        let cfg = ModelConfig {
            channels: 4,
            schedule: default_schedule(s),
            ..ModelConfig::desk(3, s)
        };
        let model = Model::<f64>::build(&cfg, 5).unwrap();
        let lr = HsiCube::new(Tensor::full(&[3, 4, 6], 0.5).unwrap()).unwrap();
        let hr = model.forward(&lr).unwrap();
        assert_eq!(hr.tensor().shape(), &[3, 4 * s, 6 * s]);
    }
}

#[test]
fn encoder_layer_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        channels: 4,
        ..ModelConfig::desk(2, 2)
    };
    let model = Model::<f64>::build(&cfg, 13).unwrap();
    let key = model.params.share_map[0].encoder.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Tensor::<f64>::rand_uniform(&[4, 8, 8], -1.0, 1.0, &mut rng).unwrap();
    let d = finite_diff_check(
        |g, xv| {
            let p = model.params.bind(g, false);
            let y = encoder_layer(g, &p, &key, &cfg, xv)?;
            let a = g.abs(y);
            Ok(g.mean_all(a))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(d <= 1e-4, "discrepancy {d}");
}

#[test]
fn essa_cost_grows_linearly_and_mhsa_faster() {
    let cfg = AttentionConfig::default();
    let growth =
        |kind| count_flops(kind, 400, 64, &cfg) as f64 / count_flops(kind, 100, 64, &cfg) as f64;
    let essa = growth(AttentionKind::Essa);
    let mhsa = growth(AttentionKind::Mhsa);
    assert!((essa - 4.0).abs() / 4.0 < 0.05, "essa growth {essa}");
    assert!(mhsa > essa, "mhsa growth {mhsa} vs essa {essa}");
}
