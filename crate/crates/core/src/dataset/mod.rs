//! Interaction data: ingestion, the off/on/both partition, splitting and
//! negative sampling.
//!
//! Every interaction is a `(user, item, channel)` triple over dense indices.
//! A `(user, item)` pair that occurs in both channels belongs to the *both*
//! partition; otherwise it is exclusive to the channel it was observed in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod io;
mod negatives;
mod split;
mod stats;

pub use io::{
    load_interactions, load_split_dir, read_interactions, write_interactions, write_split_dir,
    SplitMetadata,
};
pub use negatives::{sample_negatives, NegativeSummary};
pub use split::{split, DatasetBundle, GroundTruthSets, TrainingExample};
pub use stats::{stats, ChannelStats, StatsReport};

/// Sales channel in which an interaction occurred. `Off` sorts before `On`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Off,
    On,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Off, Channel::On];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Channel::Off => 0,
            Channel::On => 1,
        }
    }

    #[inline]
    pub fn other(self) -> Channel {
        match self {
            Channel::Off => Channel::On,
            Channel::On => Channel::Off,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Off => "off",
            Channel::On => "on",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(Channel::Off),
            "on" => Ok(Channel::On),
            other => Err(Error::Validation(format!(
                "unknown channel token `{other}` (expected `off` or `on`)"
            ))),
        }
    }
}

/// A value held once per channel.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerChannel<T> {
    pub off: T,
    pub on: T,
}

impl<T> PerChannel<T> {
    pub fn new(off: T, on: T) -> Self {
        PerChannel { off, on }
    }

    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        PerChannel {
            off: f(Channel::Off),
            on: f(Channel::On),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Channel, &T) -> U) -> PerChannel<U> {
        PerChannel {
            off: f(Channel::Off, &self.off),
            on: f(Channel::On, &self.on),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &T)> {
        [(Channel::Off, &self.off), (Channel::On, &self.on)].into_iter()
    }
}

impl<T> Index<Channel> for PerChannel<T> {
    type Output = T;

    fn index(&self, channel: Channel) -> &T {
        match channel {
            Channel::Off => &self.off,
            Channel::On => &self.on,
        }
    }
}

impl<T> IndexMut<Channel> for PerChannel<T> {
    fn index_mut(&mut self, channel: Channel) -> &mut T {
        match channel {
            Channel::Off => &mut self.off,
            Channel::On => &mut self.on,
        }
    }
}

/// One purchase record over dense indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub channel: Channel,
}

/// Which partition a `(user, item)` pair falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    OffOnly,
    OnOnly,
    Both,
}

impl PairKind {
    /// Exclusive pairs carry the channel they were observed in.
    pub fn exclusive_channel(self) -> Option<Channel> {
        match self {
            PairKind::OffOnly => Some(Channel::Off),
            PairKind::OnOnly => Some(Channel::On),
            PairKind::Both => None,
        }
    }

    pub fn occurs_in(self, channel: Channel) -> bool {
        match self {
            PairKind::Both => true,
            kind => kind.exclusive_channel() == Some(channel),
        }
    }
}

/// Which channels a user has purchased in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserCategory {
    OffOnly,
    OnOnly,
    Overlapping,
}

/// Raw string ids and their dense indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: Vec<String>,
    pub items: Vec<String>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
    #[serde(skip)]
    item_index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from ordered raw id lists. Duplicates are rejected.
    pub fn from_ids(users: Vec<String>, items: Vec<String>) -> Result<Self> {
        let mut vocab = Vocab::new();
        for u in users {
            if vocab.user_index.contains_key(&u) {
                return Err(Error::Validation(format!("duplicate user id `{u}`")));
            }
            vocab.intern_user(&u);
        }
        for i in items {
            if vocab.item_index.contains_key(&i) {
                return Err(Error::Validation(format!("duplicate item id `{i}`")));
            }
            vocab.intern_item(&i);
        }
        Ok(vocab)
    }

    /// Dense ids are assigned in first-appearance order.
    pub fn intern_user(&mut self, raw: &str) -> usize {
        if let Some(&idx) = self.user_index.get(raw) {
            return idx;
        }
        let idx = self.users.len();
        self.users.push(raw.to_owned());
        self.user_index.insert(raw.to_owned(), idx);
        idx
    }

    pub fn intern_item(&mut self, raw: &str) -> usize {
        if let Some(&idx) = self.item_index.get(raw) {
            return idx;
        }
        let idx = self.items.len();
        self.items.push(raw.to_owned());
        self.item_index.insert(raw.to_owned(), idx);
        idx
    }

    pub fn user(&self, raw: &str) -> Option<usize> {
        self.user_index.get(raw).copied()
    }

    pub fn item(&self, raw: &str) -> Option<usize> {
        self.item_index.get(raw).copied()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Restores the reverse maps after deserialization.
    pub fn reindex(&mut self) {
        self.user_index = self
            .users
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        self.item_index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }
}

/// Deduplicated interaction set with its derived channel partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionStore {
    vocab: Vocab,
    interactions: BTreeSet<Interaction>,
    users: PerChannel<BTreeSet<usize>>,
    items: PerChannel<BTreeSet<usize>>,
    pair_partition: BTreeMap<(usize, usize), PairKind>,
}

impl InteractionStore {
    /// Builds a store over `vocab`; duplicate triples collapse.
    pub fn new(vocab: Vocab, interactions: impl IntoIterator<Item = Interaction>) -> Result<Self> {
        let (n_users, n_items) = (vocab.n_users(), vocab.n_items());
        let mut set = BTreeSet::new();
        for it in interactions {
            if it.user >= n_users {
                return Err(Error::OutOfRange {
                    kind: "user",
                    id: it.user,
                    size: n_users,
                });
            }
            if it.item >= n_items {
                return Err(Error::OutOfRange {
                    kind: "item",
                    id: it.item,
                    size: n_items,
                });
            }
            set.insert(it);
        }

        let mut users = PerChannel::<BTreeSet<usize>>::default();
        let mut items = PerChannel::<BTreeSet<usize>>::default();
        let mut pair_partition = BTreeMap::new();
        for it in &set {
            users[it.channel].insert(it.user);
            items[it.channel].insert(it.item);
            let kind = match it.channel {
                Channel::Off => PairKind::OffOnly,
                Channel::On => PairKind::OnOnly,
            };
            pair_partition
                .entry((it.user, it.item))
                .and_modify(|k: &mut PairKind| {
                    if *k != kind {
                        *k = PairKind::Both;
                    }
                })
                .or_insert(kind);
        }

        Ok(InteractionStore {
            vocab,
            interactions: set,
            users,
            items,
            pair_partition,
        })
    }

    /// Builds a store from raw string-id rows, interning ids in order.
    pub fn from_raw<S: AsRef<str>>(
        rows: impl IntoIterator<Item = (S, S, Channel)>,
    ) -> Result<Self> {
        let mut vocab = Vocab::new();
        let mut list = Vec::new();
        for (u, i, channel) in rows {
            let user = vocab.intern_user(u.as_ref());
            let item = vocab.intern_item(i.as_ref());
            list.push(Interaction {
                user,
                item,
                channel,
            });
        }
        Self::new(vocab, list)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.vocab.n_items()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Triples in `(user, item, channel)` order.
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.interactions.iter()
    }

    pub fn contains(&self, user: usize, item: usize, channel: Channel) -> bool {
        self.interactions.contains(&Interaction {
            user,
            item,
            channel,
        })
    }

    pub fn users(&self, channel: Channel) -> &BTreeSet<usize> {
        &self.users[channel]
    }

    pub fn items(&self, channel: Channel) -> &BTreeSet<usize> {
        &self.items[channel]
    }

    pub fn pair_kind(&self, user: usize, item: usize) -> Option<PairKind> {
        self.pair_partition.get(&(user, item)).copied()
    }

    /// All `(user, item)` pairs with their partition, ordered by user then item.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), PairKind)> + '_ {
        self.pair_partition.iter().map(|(&k, &v)| (k, v))
    }

    /// Pairs for a single user, ordered by item.
    pub fn user_pairs(&self, user: usize) -> impl Iterator<Item = (usize, PairKind)> + '_ {
        self.pair_partition
            .range((user, 0)..(user + 1, 0))
            .map(|(&(_, item), &kind)| (item, kind))
    }

    pub fn count_pairs(&self, kind: PairKind) -> usize {
        self.pair_partition.values().filter(|&&k| k == kind).count()
    }

    pub fn user_category(&self, user: usize) -> Option<UserCategory> {
        match (
            self.users.off.contains(&user),
            self.users.on.contains(&user),
        ) {
            (true, true) => Some(UserCategory::Overlapping),
            (true, false) => Some(UserCategory::OffOnly),
            (false, true) => Some(UserCategory::OnOnly),
            (false, false) => None,
        }
    }

    pub fn overlapping_users(&self) -> BTreeSet<usize> {
        self.users
            .off
            .intersection(&self.users.on)
            .copied()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_tokens_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
        assert!("online".parse::<Channel>().is_err());
        assert!(Channel::Off < Channel::On);
    }

    #[test]
    fn duplicate_rows_collapse() {
        let store =
            InteractionStore::from_raw([("u1", "i1", Channel::Off), ("u1", "i1", Channel::Off)])
                .unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.pair_kind(0, 0), Some(PairKind::OffOnly));
    }

    #[test]
    fn both_channels_make_a_both_pair() {
        let store =
            InteractionStore::from_raw([("u1", "i1", Channel::Off), ("u1", "i1", Channel::On)])
                .unwrap();
        assert_eq!(store.pair_kind(0, 0), Some(PairKind::Both));
        assert_eq!(store.user_category(0), Some(UserCategory::Overlapping));
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let vocab = Vocab::from_ids(vec!["a".into()], vec!["x".into()]).unwrap();
        let err = InteractionStore::new(
            vocab,
            [Interaction {
                user: 1,
                item: 0,
                channel: Channel::On,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::OutOfRange { kind: "user", .. }));
    }

    #[test]
    fn user_pairs_are_scoped_to_one_user() {
        let store = InteractionStore::from_raw([
            ("a", "x", Channel::Off),
            ("b", "x", Channel::On),
            ("a", "y", Channel::On),
            ("a", "y", Channel::Off),
        ])
        .unwrap();
        let a: Vec<_> = store.user_pairs(0).collect();
        assert_eq!(a, vec![(0, PairKind::OffOnly), (1, PairKind::Both)]);
        let b: Vec<_> = store.user_pairs(1).collect();
        assert_eq!(b, vec![(0, PairKind::OnOnly)]);
    }
}
