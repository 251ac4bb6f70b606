use std::collections::{BTreeSet, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, InteractionStore, TrainingExample};

/// Outcome counters of [`sample_negatives`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSummary {
    pub appended: usize,
    /// Users who purchased every item and therefore received no negatives.
    pub skipped_users: usize,
}

/// Appends `per_positive` negatives for every positive train row.
///
/// Negatives for a row are drawn uniformly without replacement among items
/// the user never purchased in either channel of `store`. When fewer such
/// items exist than requested, all of them are used.
pub fn sample_negatives(
    bundle: &DatasetBundle,
    store: &InteractionStore,
    per_positive: usize,
    seed: u64,
) -> (DatasetBundle, NegativeSummary) {
    let mut out = bundle.clone();
    let mut summary = NegativeSummary::default();
    if per_positive == 0 {
        return (out, summary);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut skipped: BTreeSet<usize> = BTreeSet::new();
    let mut negatives = Vec::new();

    for ex in bundle.train.iter().filter(|e| e.is_positive) {
        let pool = candidates.entry(ex.user).or_insert_with(|| {
            let bought: BTreeSet<usize> = store.user_pairs(ex.user).map(|(i, _)| i).collect();
            (0..store.n_items())
                .filter(|i| !bought.contains(i))
                .collect()
        });
        if pool.is_empty() {
            skipped.insert(ex.user);
            continue;
        }
        let amount = per_positive.min(pool.len());
        for idx in index::sample(&mut rng, pool.len(), amount) {
            negatives.push(TrainingExample::negative(ex.user, pool[idx]));
        }
    }

    summary.appended = negatives.len();
    summary.skipped_users = skipped.len();
    if summary.skipped_users > 0 {
        log::warn!(
            "{} user(s) purchased every item; no negatives sampled for them",
            summary.skipped_users
        );
    }
    out.train.extend(negatives);
    (out, summary)
}
