use essa_core::attention::AttentionConfig;
use essa_core::bench::{measure_latency, AttentionKind};

#[test]
fn repeated_measurements_are_stable() {
    let stats = measure_latency(
        AttentionKind::Essa,
        4096,
        64,
        &AttentionConfig::default(),
        9,
    )
    .unwrap();
    let spread = stats.relative_spread();
    assert!(spread < 0.2, "stddev / median = {spread:.3}");
}
