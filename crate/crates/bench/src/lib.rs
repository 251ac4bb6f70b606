//! Shared fixtures for the benchmarks.

use ccrec_core::dataset::{sample_negatives, split};
use ccrec_core::synthgen::{generate, GenConfig, Generated};
use ccrec_core::DatasetBundle;

/// Default-sized synthetic store, its split, and ten negatives per positive.
pub fn fixture(seed: u64) -> (Generated, DatasetBundle) {
    let generated = generate(&GenConfig {
        seed,
        ..GenConfig::default()
    })
    .expect("generate");
    let bundle = split(&generated.store, seed).expect("split");
    let (bundle, _) = sample_negatives(&bundle, &generated.store, 10, seed);
    (generated, bundle)
}
