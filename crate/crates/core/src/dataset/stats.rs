use serde::{Deserialize, Serialize};

use super::{Channel, InteractionStore, PerChannel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// `1 - interactions / (users * items)`
    pub sparsity: f64,
}

/// Per-channel dataset summary with cross-channel overlaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub channels: PerChannel<ChannelStats>,
    pub user_overlap: usize,
    pub item_overlap: usize,
    pub both_pairs: usize,
}

pub fn stats(store: &InteractionStore) -> Result<StatsReport> {
    if store.is_empty() {
        return Err(Error::Empty("interaction store"));
    }
    let mut counts = PerChannel::new(0usize, 0usize);
    for it in store.interactions() {
        counts[it.channel] += 1;
    }
    let channels = PerChannel::from_fn(|c: Channel| {
        let users = store.users(c).len();
        let items = store.items(c).len();
        let interactions = counts[c];
        let cells = users * items;
        let sparsity = if cells == 0 {
            1.0
        } else {
            1.0 - interactions as f64 / cells as f64
        };
        ChannelStats {
            users,
            items,
            interactions,
            sparsity,
        }
    });
    Ok(StatsReport {
        channels,
        user_overlap: store
            .users(Channel::Off)
            .intersection(store.users(Channel::On))
            .count(),
        item_overlap: store
            .items(Channel::Off)
            .intersection(store.items(Channel::On))
            .count(),
        both_pairs: store.count_pairs(super::PairKind::Both),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Vocab;

    #[test]
    fn single_interaction() {
        let store = InteractionStore::from_raw([("u", "i", Channel::Off)]).unwrap();
        let report = stats(&store).unwrap();
        assert_eq!(report.channels.off.users, 1);
        assert_eq!(report.channels.off.items, 1);
        assert_eq!(report.channels.off.sparsity, 0.0);
        assert_eq!(report.user_overlap, 0);
        assert_eq!(report.item_overlap, 0);
        assert_eq!(report.channels.on.interactions, 0);
    }

    #[test]
    fn complete_channel_has_zero_sparsity() {
        let mut rows = Vec::new();
        for u in 0..3 {
            for i in 0..4 {
                rows.push((format!("u{u}"), format!("i{i}"), Channel::On));
            }
        }
        rows.push(("u0".into(), "i0".into(), Channel::Off));
        let report = stats(&InteractionStore::from_raw(rows).unwrap()).unwrap();
        assert_eq!(report.channels.on.sparsity, 0.0);
        assert_eq!(report.user_overlap, 1);
        assert_eq!(report.item_overlap, 1);
        assert_eq!(report.both_pairs, 1);
    }

    #[test]
    fn empty_store_errors() {
        let store = InteractionStore::new(Vocab::new(), []).unwrap();
        assert!(stats(&store).is_err());
    }
}
