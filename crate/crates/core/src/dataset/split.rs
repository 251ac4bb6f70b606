use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Channel, InteractionStore, PairKind, PerChannel, Vocab};
use crate::error::{Error, Result};

/// user → item set
pub type GroundTruthSets = BTreeMap<usize, BTreeSet<usize>>;

/// One supervised row of the training set.
///
/// Positives carry a label per channel and a specificity flag: `true` for
/// pairs exclusive to one channel, `false` for pairs seen in both. Negatives
/// are labelled zero on both channels and their specificity is unused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user: usize,
    pub item: usize,
    pub label_off: bool,
    pub label_on: bool,
    pub specificity: bool,
    pub is_positive: bool,
}

impl TrainingExample {
    pub fn positive(user: usize, item: usize, kind: PairKind) -> Self {
        TrainingExample {
            user,
            item,
            label_off: kind.occurs_in(Channel::Off),
            label_on: kind.occurs_in(Channel::On),
            specificity: kind != PairKind::Both,
            is_positive: true,
        }
    }

    pub fn negative(user: usize, item: usize) -> Self {
        TrainingExample {
            user,
            item,
            label_off: false,
            label_on: false,
            specificity: false,
            is_positive: false,
        }
    }

    #[inline]
    pub fn label(&self, channel: Channel) -> bool {
        match channel {
            Channel::Off => self.label_off,
            Channel::On => self.label_on,
        }
    }

    /// Checks the label invariants.
    pub fn is_consistent(&self) -> bool {
        if self.is_positive {
            let both = self.label_off && self.label_on;
            let any = self.label_off || self.label_on;
            any && (self.specificity != both)
        } else {
            !self.label_off && !self.label_on
        }
    }
}

/// Train rows plus per-channel validation and test ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<TrainingExample>,
    pub val: PerChannel<GroundTruthSets>,
    pub test: PerChannel<GroundTruthSets>,
    /// Items each user has positive train rows for, per channel.
    pub train_items: PerChannel<GroundTruthSets>,
    pub overlapping_users: BTreeSet<usize>,
    pub vocab: Vocab,
}

impl DatasetBundle {
    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.vocab.n_items()
    }

    pub fn n_positives(&self) -> usize {
        self.train.iter().filter(|e| e.is_positive).count()
    }

    /// Train items of `user` in `channel`; empty when the user has none.
    pub fn train_items_of(&self, user: usize, channel: Channel) -> Option<&BTreeSet<usize>> {
        self.train_items[channel].get(&user)
    }

    /// Rebuilds `train_items` from the positive rows of `train`.
    pub fn index_train_items(&mut self) {
        let mut items = PerChannel::<GroundTruthSets>::default();
        for ex in self.train.iter().filter(|e| e.is_positive) {
            for c in Channel::ALL {
                if ex.label(c) {
                    items[c].entry(ex.user).or_default().insert(ex.item);
                }
            }
        }
        self.train_items = items;
    }
}

/// Splits each user's pairs 6:2:2 into train / validation / test.
///
/// A user's distinct `(user, item)` pairs are shuffled and cut with
/// `n_val = n_test = floor(n / 5)`, the remainder going to train. Exclusive
/// pairs in validation or test become ground truth for their own channel.
/// Pairs seen in both channels are dealt alternately to offline and online,
/// offline first, with one cursor per segment that carries over from user to
/// user. Both the per-user and the overall halves therefore differ by at most
/// one.
pub fn split(store: &InteractionStore, seed: u64) -> Result<DatasetBundle> {
    if store.is_empty() {
        return Err(Error::Empty("interaction store"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = PerChannel::<GroundTruthSets>::default();
    let mut test = PerChannel::<GroundTruthSets>::default();

    let mut units: Vec<(usize, PairKind)> = Vec::new();
    let mut val_cursor = Channel::Off;
    let mut test_cursor = Channel::Off;
    for user in 0..store.n_users() {
        units.clear();
        units.extend(store.user_pairs(user));
        if units.is_empty() {
            continue;
        }
        units.shuffle(&mut rng);

        let n = units.len();
        let n_holdout = n / 5;
        let n_train = n - 2 * n_holdout;
        let (train_part, rest) = units.split_at(n_train);
        let (val_part, test_part) = rest.split_at(n_holdout);

        train.extend(
            train_part
                .iter()
                .map(|&(item, kind)| TrainingExample::positive(user, item, kind)),
        );
        assign_ground_truth(user, val_part, &mut val, &mut val_cursor);
        assign_ground_truth(user, test_part, &mut test, &mut test_cursor);
    }

    let mut bundle = DatasetBundle {
        train,
        val,
        test,
        train_items: PerChannel::default(),
        overlapping_users: store.overlapping_users(),
        vocab: store.vocab().clone(),
    };
    bundle.index_train_items();

    // Ground truth never repeats an item the user already bought in train
    // on the same channel.
    for c in Channel::ALL {
        let seen = &bundle.train_items[c];
        for sets in [&mut bundle.val[c], &mut bundle.test[c]] {
            for (user, items) in sets.iter_mut() {
                if let Some(train_items) = seen.get(user) {
                    items.retain(|i| !train_items.contains(i));
                }
            }
            sets.retain(|_, items| !items.is_empty());
        }
    }
    Ok(bundle)
}

fn assign_ground_truth(
    user: usize,
    segment: &[(usize, PairKind)],
    out: &mut PerChannel<GroundTruthSets>,
    next_both: &mut Channel,
) {
    for &(item, kind) in segment {
        let channel = kind.exclusive_channel().unwrap_or_else(|| {
            let c = *next_both;
            *next_both = c.other();
            c
        });
        out[channel].entry(user).or_default().insert(item);
    }
}
