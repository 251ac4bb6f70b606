//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use ccrec_core::dataset::{PairKind, TrainingExample};
use ccrec_core::model::{backward, batch_losses, ModelConfig, Parameters, Variant};
use rand::{Rng, SeedableRng};

/// Four positives covering every pair kind and four negatives over a
/// 5-user, 6-item catalogue.
pub fn tiny_batch() -> Vec<TrainingExample> {
    vec![
        TrainingExample::positive(0, 1, PairKind::OffOnly),
        TrainingExample::positive(1, 2, PairKind::OnOnly),
        TrainingExample::positive(2, 3, PairKind::Both),
        TrainingExample::positive(3, 0, PairKind::Both),
        TrainingExample::negative(0, 4),
        TrainingExample::negative(1, 5),
        TrainingExample::negative(4, 2),
        TrainingExample::negative(2, 0),
    ]
}

pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d: 4,
        d_prime: 2,
        clf_hidden: 4,
        lambda_cls: 0.3,
        lambda_attn: 0.5,
        variant,
    }
}

/// Seeded init with nonzero biases, so no ReLU sits exactly on its kink.
pub fn tiny_params(cfg: &ModelConfig) -> Parameters {
    let mut params = Parameters::init(5, 6, cfg, 2024);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for (name, m) in params.tensors_mut() {
        if name.ends_with(".bias") {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    params
}

/// Worst relative error per tensor between the analytic gradient and a
/// central difference with step `h`. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_errors(variant: Variant, h: f64) -> Vec<(String, f64)> {
    let batch = tiny_batch();
    let cfg = tiny_config(variant);
    let params = tiny_params(&cfg);
    let total = |p: &Parameters| batch_losses(&batch, p, &cfg).unwrap().0.total;
    let (_, cache) = batch_losses(&batch, &params, &cfg).unwrap();
    let grads = backward(&batch, &params, &cfg, &cache);

    let mut out = Vec::new();
    for (t, (name, analytic)) in grads.grad.tensors().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &exact) in analytic.as_slice().iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1.as_mut_slice()[i] -= h;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((name, worst));
    }
    out
}
