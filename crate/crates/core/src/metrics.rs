//! Top-k ranking evaluation: HR@k and NDCG@k over full item rankings.
//!
//! For a user with ground-truth set `G` and ranked list `r`:
//!
//! ```text
//! HR@k   = |top_k(r) ∩ G| / min(k, |G|)
//! DCG@k  = sum_{i <= k, r_i in G} 1 / log2(i + 1)
//! IDCG@k = sum_{i <= min(k, |G|)} 1 / log2(i + 1)
//! NDCG@k = DCG@k / IDCG@k
//! ```
//!
//! Ties in score are broken by ascending item index.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, DatasetBundle, GroundTruthSets, PerChannel};
use crate::error::{Error, Result};

/// Scores `(user, item)` pairs for a channel. Higher ranks first.
pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize, channel: Channel) -> f64;

    /// Scores every item for `user`; `out.len()` is the item count.
    fn score_items(&self, user: usize, channel: Channel, out: &mut [f64]) {
        for (item, s) in out.iter_mut().enumerate() {
            *s = self.score(user, item, channel);
        }
    }
}

impl<F> Scorer for F
where
    F: Fn(usize, usize, Channel) -> f64 + Sync,
{
    fn score(&self, user: usize, item: usize, channel: Channel) -> f64 {
        self(user, item, channel)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Drop the user's train items in the target channel before ranking.
    #[default]
    WithoutPurchased,
    /// Rank the entire item set.
    WithPurchased,
}

impl CandidateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateMode::WithoutPurchased => "without_purchased",
            CandidateMode::WithPurchased => "with_purchased",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserFilter {
    #[default]
    All,
    OverlappingOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Validation,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Ascending cutoffs, each at least 1.
    pub k_values: Vec<usize>,
    pub candidate_mode: CandidateMode,
    pub channel: Channel,
    pub split: EvalSplit,
    /// Score users on the rayon pool; results are reduced in user order.
    pub parallel: bool,
}

impl EvalProtocol {
    pub fn new(channel: Channel) -> Self {
        EvalProtocol {
            k_values: vec![5, 10],
            candidate_mode: CandidateMode::WithoutPurchased,
            channel,
            split: EvalSplit::Test,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::Config("k_values is empty".into()));
        }
        if self.k_values[0] == 0 || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "k_values must be strictly ascending and >= 1, got {:?}",
                self.k_values
            )));
        }
        Ok(())
    }

    fn max_k(&self) -> usize {
        *self.k_values.last().unwrap_or(&1)
    }
}

/// Metrics for one `(channel, k)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub channel: Channel,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub n_users: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: CandidateMode,
    pub user_filter: UserFilter,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, channel: Channel, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.channel == channel && r.k == k)
    }

    pub fn ndcg(&self, channel: Channel, k: usize) -> Option<f64> {
        self.get(channel, k).map(|r| r.ndcg)
    }

    pub fn hr(&self, channel: Channel, k: usize) -> Option<f64> {
        self.get(channel, k).map(|r| r.hr)
    }
}

/// Best-first order of the non-excluded items, truncated to `k`.
pub fn top_k(scores: &[f64], excluded: Option<&BTreeSet<usize>>, k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.is_none_or(|ex| !ex.contains(i)))
        .collect();
    let order =
        |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    if k < candidates.len() {
        if k > 0 {
            candidates.select_nth_unstable_by(k - 1, order);
        }
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    candidates
}

/// Ranks the candidate items for `user` and returns the top `max(k_values)`.
pub fn rank_items(
    scorer: &dyn Scorer,
    user: usize,
    protocol: &EvalProtocol,
    bundle: &DatasetBundle,
) -> Result<Vec<usize>> {
    protocol.validate()?;
    let mut scores = vec![0.0; bundle.n_items()];
    rank_with_buffer(
        scorer,
        user,
        protocol,
        bundle,
        protocol.channel,
        &mut scores,
    )
}

fn rank_with_buffer(
    scorer: &dyn Scorer,
    user: usize,
    protocol: &EvalProtocol,
    bundle: &DatasetBundle,
    filter_channel: Channel,
    scores: &mut [f64],
) -> Result<Vec<usize>> {
    scorer.score_items(user, protocol.channel, scores);
    let excluded = match protocol.candidate_mode {
        CandidateMode::WithoutPurchased => bundle.train_items_of(user, filter_channel),
        CandidateMode::WithPurchased => None,
    };
    let ranked = top_k(scores, excluded, protocol.max_k());
    if ranked.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    Ok(ranked)
}

/// `|top_k ∩ GT| / min(k, |GT|)`
pub fn hr_at_k(ranked: &[usize], ground_truth: &BTreeSet<usize>, k: usize) -> f64 {
    if ground_truth.is_empty() || k == 0 {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| ground_truth.contains(i))
        .count();
    hits as f64 / k.min(ground_truth.len()) as f64
}

pub fn ndcg_at_k(ranked: &[usize], ground_truth: &BTreeSet<usize>, k: usize) -> f64 {
    if ground_truth.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| ground_truth.contains(i))
        .map(|(rank, _)| 1.0 / (rank as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(ground_truth.len()))
        .map(|rank| 1.0 / (rank as f64 + 2.0).log2())
        .sum();
    dcg / idcg
}

fn ground_truth(bundle: &DatasetBundle, split: EvalSplit) -> &PerChannel<GroundTruthSets> {
    match split {
        EvalSplit::Validation => &bundle.val,
        EvalSplit::Test => &bundle.test,
    }
}

/// Averages HR@k and NDCG@k over every evaluable user of the protocol's
/// channel.
pub fn evaluate(
    scorer: &dyn Scorer,
    bundle: &DatasetBundle,
    protocol: &EvalProtocol,
    user_filter: UserFilter,
) -> Result<MetricReport> {
    evaluate_against(scorer, bundle, protocol, user_filter, protocol.channel)
}

/// Like [`evaluate`], but candidate filtering uses the train items of
/// `filter_channel` instead of the evaluated channel. Scores are always
/// requested for the evaluated channel.
pub fn evaluate_against(
    scorer: &dyn Scorer,
    bundle: &DatasetBundle,
    protocol: &EvalProtocol,
    user_filter: UserFilter,
    filter_channel: Channel,
) -> Result<MetricReport> {
    protocol.validate()?;
    let gt = &ground_truth(bundle, protocol.split)[protocol.channel];
    let users: Vec<(usize, &BTreeSet<usize>)> = gt
        .iter()
        .filter(|(u, items)| {
            !items.is_empty()
                && (user_filter == UserFilter::All || bundle.overlapping_users.contains(u))
        })
        .map(|(&u, items)| (u, items))
        .collect();
    if users.is_empty() {
        return Err(Error::Empty("evaluable users"));
    }

    let per_user = |(user, items): &(usize, &BTreeSet<usize>), scores: &mut Vec<f64>| {
        let ranked = rank_with_buffer(scorer, *user, protocol, bundle, filter_channel, scores)?;
        Ok(protocol
            .k_values
            .iter()
            .map(|&k| (hr_at_k(&ranked, items, k), ndcg_at_k(&ranked, items, k)))
            .collect::<Vec<_>>())
    };
    let n_items = bundle.n_items();
    let results: Vec<Vec<(f64, f64)>> = if protocol.parallel {
        users
            .par_iter()
            .map_init(|| vec![0.0; n_items], |buf, entry| per_user(entry, buf))
            .collect::<Result<_>>()?
    } else {
        let mut buf = vec![0.0; n_items];
        users
            .iter()
            .map(|entry| per_user(entry, &mut buf))
            .collect::<Result<_>>()?
    };

    let n = users.len();
    let rows = protocol
        .k_values
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (hr, ndcg) = results
                .iter()
                .fold((0.0, 0.0), |(h, g), r| (h + r[j].0, g + r[j].1));
            MetricRow {
                channel: protocol.channel,
                k,
                hr: hr / n as f64,
                ndcg: ndcg / n as f64,
                n_users: n,
            }
        })
        .collect();
    Ok(MetricReport {
        protocol: protocol.candidate_mode,
        user_filter,
        rows,
    })
}

/// Evaluates both channels with the same settings; a channel without
/// evaluable users is skipped, and an error is returned only if both are.
pub fn evaluate_channels(
    scorer: &dyn Scorer,
    bundle: &DatasetBundle,
    template: &EvalProtocol,
    user_filter: UserFilter,
) -> Result<MetricReport> {
    let mut rows = Vec::new();
    for c in Channel::ALL {
        let protocol = EvalProtocol {
            channel: c,
            ..template.clone()
        };
        match evaluate(scorer, bundle, &protocol, user_filter) {
            Ok(report) => rows.extend(report.rows),
            Err(Error::Empty(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("evaluable users"));
    }
    Ok(MetricReport {
        protocol: template.candidate_mode,
        user_filter,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

/// One `(channel, k)` cell aggregated across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub channel: Channel,
    pub k: usize,
    pub protocol: CandidateMode,
    pub n_users: usize,
    pub seeds: Vec<u64>,
    pub hr: MeanStd,
    pub ndcg: MeanStd,
}

/// Aggregates same-shaped per-seed reports cell by cell.
pub fn summarize(runs: &[(u64, MetricReport)]) -> Vec<SummaryRow> {
    let Some((_, first)) = runs.first() else {
        return Vec::new();
    };
    let seeds: Vec<u64> = runs.iter().map(|(s, _)| *s).collect();
    first
        .rows
        .iter()
        .map(|row| {
            let cells: Vec<&MetricRow> = runs
                .iter()
                .filter_map(|(_, r)| r.get(row.channel, row.k))
                .collect();
            let hr: Vec<f64> = cells.iter().map(|c| c.hr).collect();
            let ndcg: Vec<f64> = cells.iter().map(|c| c.ndcg).collect();
            SummaryRow {
                channel: row.channel,
                k: row.k,
                protocol: first.protocol,
                n_users: row.n_users,
                seeds: seeds.clone(),
                hr: MeanStd::of(&hr),
                ndcg: MeanStd::of(&ndcg),
            }
        })
        .collect()
}
