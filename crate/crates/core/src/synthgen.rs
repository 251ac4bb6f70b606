//! Synthetic two-channel purchase data with planted shared and
//! channel-specific preferences.
//!
//! Every user has shared factors `z_u` and per-channel offsets `δ_u^c`; every
//! item has factors `w_v`. The channel affinity is
//! `s^c(u, v) = z_u·w_v + γ δ_u^c·w_v`, so `γ = 0` makes both channels agree.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, Interaction, InteractionStore, PerChannel, Vocab};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::metrics::top_k;
use crate::model::checkpoint::{
    read_bytes, read_tensor, read_u32, write_bytes, write_tensor, write_u32,
};

pub const SIDECAR_MAGIC: &[u8; 7] = b"C2RGTv1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    pub gamma: f64,
    /// Share of users active in both channels; the rest are split evenly
    /// between the two single-channel groups.
    pub overlap_user_frac: f64,
    /// Share of items sold in both channels; the rest are split evenly
    /// between the two channel-exclusive pools.
    pub overlap_item_frac: f64,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub dup_prob: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 600,
            n_items: 300,
            latent_dim: 8,
            gamma: 1.0,
            overlap_user_frac: 0.4,
            overlap_item_frac: 0.7,
            min_interactions: 20,
            max_interactions: 40,
            dup_prob: 0.2,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "n_users, n_items and latent_dim must be positive".into(),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("overlap_user_frac", self.overlap_user_frac),
            ("overlap_item_frac", self.overlap_item_frac),
            ("dup_prob", self.dup_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.min_interactions == 0 || self.min_interactions > self.max_interactions {
            return Err(Error::Config(format!(
                "interaction range {}..={} is empty or starts at zero",
                self.min_interactions, self.max_interactions
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub gamma: f64,
    /// Shared user factors, `|U| x f`.
    pub z: Matrix,
    /// Channel offsets, `|U| x f` each.
    pub delta: PerChannel<Matrix>,
    /// Item factors, `|V| x f`.
    pub w: Matrix,
}

impl GroundTruth {
    pub fn n_users(&self) -> usize {
        self.z.rows()
    }

    pub fn n_items(&self) -> usize {
        self.w.rows()
    }

    pub fn affinity(&self, user: usize, item: usize, channel: Channel) -> f64 {
        let w = self.w.row(item);
        dot(self.z.row(user), w) + self.gamma * dot(self.delta[channel].row(user), w)
    }

    pub fn affinities(&self, user: usize, channel: Channel) -> Vec<f64> {
        (0..self.n_items())
            .map(|v| self.affinity(user, v, channel))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    /// Same framing as model checkpoints: magic, a JSON header, then named
    /// `f32` tensors.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(SIDECAR_MAGIC)?;
        let header = serde_json::to_vec(&serde_json::json!({ "gamma": self.gamma }))
            .map_err(std::io::Error::other)?;
        write_bytes(w, &header)?;
        let tensors = self.tensors();
        write_u32(w, tensors.len())?;
        for (name, m) in tensors {
            write_tensor(w, name, m)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated input: {e}")))?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::Checkpoint("bad ground-truth magic".into()));
        }
        let header: serde_json::Value = serde_json::from_slice(&read_bytes(r)?)?;
        let gamma = header["gamma"]
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("header lacks gamma".into()))?;
        let count = read_u32(r)?;
        if count != 4 {
            return Err(Error::Checkpoint(format!(
                "expected 4 tensors, found {count}"
            )));
        }
        let mut take = |want: &str| -> Result<Matrix> {
            let (name, m) = read_tensor(r)?;
            if name != want {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{want}`, found `{name}`"
                )));
            }
            Ok(m)
        };
        let z = take("z")?;
        let off = take("delta_off")?;
        let on = take("delta_on")?;
        let w = take("w")?;
        if off.shape() != z.shape() || on.shape() != z.shape() || w.cols() != z.cols() {
            return Err(Error::Checkpoint(
                "ground-truth tensor shapes disagree".into(),
            ));
        }
        Ok(GroundTruth {
            gamma,
            z,
            delta: PerChannel::new(off, on),
            w,
        })
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("z", &self.z),
            ("delta_off", &self.delta.off),
            ("delta_on", &self.delta.on),
            ("w", &self.w),
        ]
    }
}

/// Exact top-`k` items by `s^c(u, ·)`, ties broken by ascending item index.
pub fn oracle_topk(gt: &GroundTruth, user: usize, channel: Channel, k: usize) -> Vec<usize> {
    top_k(&gt.affinities(user, channel), None, k)
}

/// Counters kept while emitting interactions. They match what
/// [`crate::dataset::stats`] reports for the generated store.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenCounts {
    pub interactions: PerChannel<usize>,
    pub users: PerChannel<usize>,
    pub items: PerChannel<usize>,
    pub user_overlap: usize,
    pub item_overlap: usize,
    pub both_pairs: usize,
    /// Pairs copied to the other channel by the duplication step, counting
    /// only copies that were not already present.
    pub mirrored: usize,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub store: InteractionStore,
    pub truth: GroundTruth,
    pub counts: GenCounts,
}

struct Emitter {
    seen: HashSet<(usize, usize, Channel)>,
    users: PerChannel<Vec<bool>>,
    items: PerChannel<Vec<bool>>,
    rows: Vec<Interaction>,
    counts: GenCounts,
}

impl Emitter {
    fn new(n_users: usize, n_items: usize) -> Self {
        Emitter {
            seen: HashSet::new(),
            users: PerChannel::from_fn(|_| vec![false; n_users]),
            items: PerChannel::from_fn(|_| vec![false; n_items]),
            rows: Vec::new(),
            counts: GenCounts::default(),
        }
    }

    fn emit(&mut self, user: usize, item: usize, channel: Channel) -> bool {
        if !self.seen.insert((user, item, channel)) {
            return false;
        }
        let other = channel.other();
        let c = &mut self.counts;
        c.interactions[channel] += 1;
        if !self.users[channel][user] {
            self.users[channel][user] = true;
            c.users[channel] += 1;
            if self.users[other][user] {
                c.user_overlap += 1;
            }
        }
        if !self.items[channel][item] {
            self.items[channel][item] = true;
            c.items[channel] += 1;
            if self.items[other][item] {
                c.item_overlap += 1;
            }
        }
        if self.seen.contains(&(user, item, other)) {
            c.both_pairs += 1;
        }
        self.rows.push(Interaction {
            user,
            item,
            channel,
        });
        true
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_users, n_items, f) = (cfg.n_users, cfg.n_items, cfg.latent_dim);

    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let item_dist = Normal::new(0.0, 1.0 / (f as f64).sqrt()).expect("valid normal");
    let mut sample =
        |rows: usize, dist: &Normal<f64>| Matrix::from_fn(rows, f, |_, _| dist.sample(&mut rng));
    let z = sample(n_users, &unit);
    let delta = PerChannel::new(sample(n_users, &unit), sample(n_users, &unit));
    let w = sample(n_items, &item_dist);
    let truth = GroundTruth {
        gamma: cfg.gamma,
        z,
        delta,
        w,
    };

    // user groups
    let mut users: Vec<usize> = (0..n_users).collect();
    users.shuffle(&mut rng);
    let n_overlap = (cfg.overlap_user_frac * n_users as f64).round() as usize;
    let mut active: Vec<PerChannel<bool>> = vec![PerChannel::new(true, true); n_users];
    for (pos, &u) in users.iter().enumerate().skip(n_overlap) {
        let off = (pos - n_overlap).is_multiple_of(2);
        active[u] = PerChannel::new(off, !off);
    }

    // item pools
    let mut items: Vec<usize> = (0..n_items).collect();
    items.shuffle(&mut rng);
    let n_shared = (cfg.overlap_item_frac * n_items as f64).round() as usize;
    let mut in_pool: Vec<PerChannel<bool>> = vec![PerChannel::new(true, true); n_items];
    for (pos, &v) in items.iter().enumerate().skip(n_shared) {
        let off = (pos - n_shared).is_multiple_of(2);
        in_pool[v] = PerChannel::new(off, !off);
    }
    let pools: PerChannel<Vec<usize>> =
        PerChannel::from_fn(|c| (0..n_items).filter(|&v| in_pool[v][c]).collect());
    for c in Channel::ALL {
        let needed = if active.iter().any(|a| a[c]) {
            cfg.max_interactions
        } else {
            0
        };
        if needed > pools[c].len() {
            return Err(Error::Infeasible(format!(
                "{c} pool has {} items but up to {needed} draws per user",
                pools[c].len()
            )));
        }
    }

    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let mut out = Emitter::new(n_users, n_items);
    let mut keys = Vec::with_capacity(n_items);
    for (u, act) in active.iter().enumerate() {
        let overlapping = act.off && act.on;
        for c in Channel::ALL {
            if !act[c] {
                continue;
            }
            let n = rng.random_range(cfg.min_interactions..=cfg.max_interactions);
            // Gumbel-top-n samples n items without replacement from the
            // softmax over the pool
            keys.clear();
            keys.extend(
                pools[c]
                    .iter()
                    .map(|&v| truth.affinity(u, v, c) + gumbel.sample(&mut rng)),
            );
            for idx in top_k(&keys, None, n) {
                let v = pools[c][idx];
                out.emit(u, v, c);
                let mirror = overlapping && rng.random::<f64>() < cfg.dup_prob;
                if mirror && in_pool[v][c.other()] && out.emit(u, v, c.other()) {
                    out.counts.mirrored += 1;
                }
            }
        }
    }

    let vocab = Vocab::from_ids(
        (0..n_users).map(|u| format!("u{u:05}")).collect(),
        (0..n_items).map(|v| format!("i{v:05}")).collect(),
    )?;
    let store = InteractionStore::new(vocab, out.rows)?;
    Ok(Generated {
        store,
        truth,
        counts: out.counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{stats, PairKind};

    fn small(gamma: f64, seed: u64) -> GenConfig {
        GenConfig {
            n_users: 60,
            n_items: 50,
            latent_dim: 4,
            gamma,
            min_interactions: 3,
            max_interactions: 8,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn counters_match_stats() {
        for seed in 0..5 {
            let g = generate(&small(1.0, seed)).unwrap();
            let s = stats(&g.store).unwrap();
            for c in Channel::ALL {
                assert_eq!(s.channels[c].interactions, g.counts.interactions[c]);
                assert_eq!(s.channels[c].users, g.counts.users[c]);
                assert_eq!(s.channels[c].items, g.counts.items[c]);
            }
            assert_eq!(s.user_overlap, g.counts.user_overlap);
            assert_eq!(s.item_overlap, g.counts.item_overlap);
            assert_eq!(s.both_pairs, g.counts.both_pairs);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small(2.0, 9)).unwrap();
        let b = generate(&small(2.0, 9)).unwrap();
        assert_eq!(
            a.store.interactions().collect::<Vec<_>>(),
            b.store.interactions().collect::<Vec<_>>()
        );
        assert_eq!(a.truth, b.truth);
        let c = generate(&small(2.0, 10)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn full_duplication_leaves_no_exclusive_pairs_for_overlapping_users() {
        let cfg = GenConfig {
            gamma: 0.0,
            dup_prob: 1.0,
            overlap_user_frac: 1.0,
            overlap_item_frac: 1.0,
            ..small(0.0, 4)
        };
        let g = generate(&cfg).unwrap();
        assert_eq!(g.store.overlapping_users().len(), cfg.n_users);
        for (_, kind) in g.store.pairs() {
            assert_eq!(kind, PairKind::Both);
        }
    }

    #[test]
    fn no_user_overlap_when_fraction_is_zero() {
        let g = generate(&GenConfig {
            overlap_user_frac: 0.0,
            ..small(1.0, 2)
        })
        .unwrap();
        assert!(g.store.overlapping_users().is_empty());
        assert_eq!(g.counts.user_overlap, 0);
    }

    #[test]
    fn infeasible_draws_are_rejected() {
        let cfg = GenConfig {
            n_items: 10,
            min_interactions: 9,
            max_interactions: 9,
            overlap_item_frac: 0.2,
            ..small(1.0, 0)
        };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
        let bad = GenConfig {
            dup_prob: 1.5,
            ..small(1.0, 0)
        };
        assert!(matches!(generate(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn draws_stay_inside_channel_pools() {
        let cfg = GenConfig {
            overlap_item_frac: 0.5,
            ..small(1.0, 6)
        };
        let g = generate(&cfg).unwrap();
        let off_items = g.store.items(Channel::Off);
        let on_items = g.store.items(Channel::On);
        // exclusive pools hold a quarter of the catalogue each
        let shared = off_items.intersection(on_items).count();
        assert!(shared <= 25);
        assert!(off_items.len() <= 50 && on_items.len() <= 50);
    }

    fn ranks(values: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut r = vec![0.0; values.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn gamma_lowers_cross_channel_rank_correlation() {
        let mean_rho = |gamma: f64| {
            let g = generate(&small(gamma, 1)).unwrap();
            let rhos: Vec<f64> = (0..g.truth.n_users())
                .map(|u| {
                    spearman(
                        &g.truth.affinities(u, Channel::Off),
                        &g.truth.affinities(u, Channel::On),
                    )
                })
                .collect();
            rhos.iter().sum::<f64>() / rhos.len() as f64
        };
        let flat = mean_rho(0.0);
        assert!((flat - 1.0).abs() < 1e-12);
        assert!(mean_rho(3.0) < flat - 0.3);
    }

    #[test]
    fn oracle_topk_matches_full_sort() {
        let g = generate(&small(1.5, 8)).unwrap();
        for u in 0..10 {
            for c in Channel::ALL {
                let s = g.truth.affinities(u, c);
                let mut brute: Vec<usize> = (0..s.len()).collect();
                brute.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                assert_eq!(oracle_topk(&g.truth, u, c, s.len()), brute);
                assert_eq!(oracle_topk(&g.truth, u, c, 7), brute[..7]);
            }
        }
        let flat = generate(&small(0.0, 8)).unwrap();
        assert_eq!(
            oracle_topk(&flat.truth, 3, Channel::Off, 10),
            oracle_topk(&flat.truth, 3, Channel::On, 10)
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let g = generate(&small(2.0, 3)).unwrap();
        let mut buf = Vec::new();
        g.truth.write_to(&mut buf).unwrap();
        let back = GroundTruth::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.gamma, 2.0);
        for (a, b) in back.z.as_slice().iter().zip(g.truth.z.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(GroundTruth::read_from(&mut &b"C2RECv1...."[..]).is_err());
    }
}
