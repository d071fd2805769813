use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use orthocal::bench::{generate_benchmark, model1_theta_star, ModelId};
use orthocal::calibrate::estimate_anchor;

/// θ̃ within 0.05 of 3.56 in at least 90 of 100 Model 1 data sets (n = 100,
/// σ = 0.2). The estimator's own sampling spread at this n is about 0.08, so
/// this fails; it is kept at the stated tolerance rather than loosened.
#[test]
fn anchor_is_accurate_for_model1() {
    let noise = ModelId::Model1.default_noise();
    let mut errors = Vec::new();
    for r in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + r);
        let b = generate_benchmark(ModelId::Model1, 100, &noise, &mut rng).unwrap();
        errors.push(estimate_anchor(&b.field, &b.model).unwrap().theta[0] - 3.56);
    }
    let close = errors.iter().filter(|e| e.abs() <= 0.05).count();
    let mean = errors.iter().sum::<f64>() / 100.0;
    let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    println!("θ* = {:.4}; θ̃ − 3.56: mean {mean:.4}, sd {sd:.4}; {close}/100 within 0.05", model1_theta_star());
    assert!(close >= 90, "{close}/100 within 0.05 (sd {sd:.4})");
}
