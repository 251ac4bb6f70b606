//! BPR matrix factorisation and the self-match / cross-match probe.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, DatasetBundle, PerChannel};
use crate::error::{Error, Result};
use crate::matrix::{dot, sigmoid, Matrix};
use crate::metrics::{
    evaluate, evaluate_channels, CandidateMode, EvalProtocol, EvalSplit, MetricReport, MetricRow,
    Scorer, UserFilter,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BprConfig {
    pub d: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    /// Standard deviation of the initial factors. Zero gives all-zero factors.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            d: 64,
            epochs: 50,
            lr: 0.01,
            reg: 1e-4,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BprParams {
    /// User factors, `|U| x d`.
    pub p: Matrix,
    /// Item factors, `|V| x d`.
    pub q: Matrix,
}

impl BprParams {
    pub fn zeros(n_users: usize, n_items: usize, d: usize) -> Self {
        BprParams {
            p: Matrix::zeros(n_users, d),
            q: Matrix::zeros(n_items, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite()
    }
}

/// `P_u · Q_v`
pub fn bpr_score(params: &BprParams, user: usize, item: usize) -> Result<f64> {
    if user >= params.p.rows() {
        return Err(Error::OutOfRange {
            kind: "user",
            id: user,
            size: params.p.rows(),
        });
    }
    if item >= params.q.rows() {
        return Err(Error::OutOfRange {
            kind: "item",
            id: item,
            size: params.q.rows(),
        });
    }
    Ok(dot(params.p.row(user), params.q.row(item)))
}

/// Per-triple BPR loss `-ln σ(x_ui - x_uj)`.
pub fn bpr_loss(params: &BprParams, user: usize, pos: usize, neg: usize) -> f64 {
    let x = dot(params.p.row(user), params.q.row(pos)) - dot(params.p.row(user), params.q.row(neg));
    -sigmoid(x).ln()
}

/// Trains BPR by SGD on shuffled `(u, i, j)` triples, one uniformly drawn
/// unobserved item `j` per positive per epoch. Users who bought every item
/// contribute no triples.
pub fn bpr_train(
    pairs: &[(usize, usize)],
    n_users: usize,
    n_items: usize,
    cfg: &BprConfig,
) -> Result<BprParams> {
    if pairs.is_empty() {
        return Err(Error::Empty("BPR training pairs"));
    }
    if cfg.d == 0 {
        return Err(Error::Config(
            "BPR factor dimension must be positive".into(),
        ));
    }
    for &(u, v) in pairs {
        if u >= n_users {
            return Err(Error::OutOfRange {
                kind: "user",
                id: u,
                size: n_users,
            });
        }
        if v >= n_items {
            return Err(Error::OutOfRange {
                kind: "item",
                id: v,
                size: n_items,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = BprParams::zeros(n_users, n_items, cfg.d);
    if cfg.init_std > 0.0 {
        let normal =
            Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(format!("init_std: {e}")))?;
        for x in params
            .p
            .as_mut_slice()
            .iter_mut()
            .chain(params.q.as_mut_slice())
        {
            *x = normal.sample(&mut rng);
        }
    }

    let positives: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let mut per_user = vec![0usize; n_users];
    for &(u, _) in &positives {
        per_user[u] += 1;
    }
    let mut order: Vec<(usize, usize)> = positives.iter().copied().collect();
    order.sort_unstable();

    let d = cfg.d;
    let mut pu = vec![0.0; d];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &(u, i) in &order {
            if per_user[u] == n_items {
                continue;
            }
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !positives.contains(&(u, j)) {
                    break j;
                }
            };
            pu.copy_from_slice(params.p.row(u));
            let x = dot(&pu, params.q.row(i)) - dot(&pu, params.q.row(j));
            // d(-ln σ(x))/dx = -σ(-x)
            let g = sigmoid(-x);
            {
                let qi = params.q.row(i).to_vec();
                let qj = params.q.row(j);
                let p_row = params.p.row_mut(u);
                for k in 0..d {
                    p_row[k] += cfg.lr * (g * (qi[k] - qj[k]) - cfg.reg * pu[k]);
                }
            }
            let qi = params.q.row_mut(i);
            for k in 0..d {
                qi[k] += cfg.lr * (g * pu[k] - cfg.reg * qi[k]);
            }
            let qj = params.q.row_mut(j);
            for k in 0..d {
                qj[k] += cfg.lr * (-g * pu[k] - cfg.reg * qj[k]);
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Validation("BPR factors diverged".into()));
    }
    Ok(params)
}

/// A single BPR model ignores the channel argument.
impl Scorer for BprParams {
    fn score(&self, user: usize, item: usize, _channel: Channel) -> f64 {
        dot(self.p.row(user), self.q.row(item))
    }

    fn score_items(&self, user: usize, _channel: Channel, out: &mut [f64]) {
        let pu = self.p.row(user);
        for (v, s) in out.iter_mut().enumerate() {
            *s = dot(pu, self.q.row(v));
        }
    }
}

/// One BPR model per channel, dispatched on the channel argument.
#[derive(Clone, Debug)]
pub struct ChannelBpr(pub PerChannel<BprParams>);

impl Scorer for ChannelBpr {
    fn score(&self, user: usize, item: usize, channel: Channel) -> f64 {
        self.0[channel].score(user, item, channel)
    }

    fn score_items(&self, user: usize, channel: Channel, out: &mut [f64]) {
        self.0[channel].score_items(user, channel, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BprRegime {
    /// A separate model per channel, trained on that channel's positives.
    PerChannel,
    /// One model trained on the union of both channels' positives.
    Integration,
}

/// Train positives of one channel, or of either channel when `channel` is
/// `None`. Each `(user, item)` appears once.
pub fn train_pairs(bundle: &DatasetBundle, channel: Option<Channel>) -> Vec<(usize, usize)> {
    let set: BTreeSet<(usize, usize)> = bundle
        .train
        .iter()
        .filter(|ex| match channel {
            Some(c) => ex.label(c),
            None => ex.is_positive,
        })
        .map(|ex| (ex.user, ex.item))
        .collect();
    set.into_iter().collect()
}

pub fn train_channel_bpr(bundle: &DatasetBundle, cfg: &BprConfig) -> Result<ChannelBpr> {
    let fit = |c: Channel| {
        bpr_train(
            &train_pairs(bundle, Some(c)),
            bundle.n_users(),
            bundle.n_items(),
            cfg,
        )
    };
    Ok(ChannelBpr(PerChannel::new(
        fit(Channel::Off)?,
        fit(Channel::On)?,
    )))
}

pub fn train_integration_bpr(bundle: &DatasetBundle, cfg: &BprConfig) -> Result<BprParams> {
    bpr_train(
        &train_pairs(bundle, None),
        bundle.n_users(),
        bundle.n_items(),
        cfg,
    )
}

/// Test metrics of a BPR regime on both channels.
pub fn bpr_report(
    bundle: &DatasetBundle,
    regime: BprRegime,
    cfg: &BprConfig,
    template: &EvalProtocol,
    filter: UserFilter,
) -> Result<MetricReport> {
    match regime {
        BprRegime::PerChannel => {
            evaluate_channels(&train_channel_bpr(bundle, cfg)?, bundle, template, filter)
        }
        BprRegime::Integration => evaluate_channels(
            &train_integration_bpr(bundle, cfg)?,
            bundle,
            template,
            filter,
        ),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRegime {
    SelfMatch,
    CrossMatch,
}

impl ProbeRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeRegime::SelfMatch => "self_match",
            ProbeRegime::CrossMatch => "cross_match",
        }
    }

    /// Channel whose model scores users evaluated on `target`.
    pub fn source(self, target: Channel) -> Channel {
        match self {
            ProbeRegime::SelfMatch => target,
            ProbeRegime::CrossMatch => target.other(),
        }
    }
}

/// Runs the probe with per-channel models that are already trained.
///
/// Rows are labelled by the target (test) channel. Only overlapping users are
/// evaluated, at k = 5 and 10. Candidate filtering under
/// [`CandidateMode::WithoutPurchased`] removes the user's train items of the
/// target channel.
pub fn probe_with_models(
    bundle: &DatasetBundle,
    models: &ChannelBpr,
    regime: ProbeRegime,
    candidate_mode: CandidateMode,
) -> Result<MetricReport> {
    if bundle.overlapping_users.is_empty() {
        return Err(Error::Validation("probe needs overlapping users".into()));
    }
    let mut rows: Vec<MetricRow> = Vec::new();
    for target in Channel::ALL {
        let model = &models.0[regime.source(target)];
        let protocol = EvalProtocol {
            k_values: vec![5, 10],
            candidate_mode,
            channel: target,
            split: EvalSplit::Test,
            parallel: false,
        };
        match evaluate(model, bundle, &protocol, UserFilter::OverlappingOnly) {
            Ok(r) => rows.extend(r.rows),
            Err(Error::Empty(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("overlapping users with test items"));
    }
    Ok(MetricReport {
        protocol: candidate_mode,
        user_filter: UserFilter::OverlappingOnly,
        rows,
    })
}

/// Trains per-channel BPR models and evaluates one probe row.
pub fn probe_experiment(
    bundle: &DatasetBundle,
    regime: ProbeRegime,
    candidate_mode: CandidateMode,
    cfg: &BprConfig,
) -> Result<MetricReport> {
    if bundle.overlapping_users.is_empty() {
        return Err(Error::Validation("probe needs overlapping users".into()));
    }
    let models = train_channel_bpr(bundle, cfg)?;
    probe_with_models(bundle, &models, regime, candidate_mode)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub regime: ProbeRegime,
    pub candidate_mode: CandidateMode,
    pub report: MetricReport,
}

/// Every `(regime, candidate mode)` combination, sharing one pair of trained
/// models.
pub fn probe_table(bundle: &DatasetBundle, cfg: &BprConfig) -> Result<Vec<ProbeRow>> {
    if bundle.overlapping_users.is_empty() {
        return Err(Error::Validation("probe needs overlapping users".into()));
    }
    let models = train_channel_bpr(bundle, cfg)?;
    let mut out = Vec::with_capacity(4);
    for regime in [ProbeRegime::SelfMatch, ProbeRegime::CrossMatch] {
        for mode in [
            CandidateMode::WithoutPurchased,
            CandidateMode::WithPurchased,
        ] {
            out.push(ProbeRow {
                regime,
                candidate_mode: mode,
                report: probe_with_models(bundle, &models, regime, mode)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_factors_give_ln2_and_zero_scores() {
        let p = BprParams::zeros(2, 3, 4);
        assert!((bpr_loss(&p, 0, 1, 2) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(bpr_score(&p, 1, 2).unwrap(), 0.0);
        // gradient of -ln σ(δ) at 0 is -σ(0) = -0.5
        assert_eq!(-sigmoid(0.0), -0.5);
    }

    #[test]
    fn score_is_the_dot_product() {
        let mut p = BprParams::zeros(2, 2, 3);
        p.p.row_mut(0).copy_from_slice(&[1.0, 0.0, 0.0]);
        p.q.row_mut(1).copy_from_slice(&[0.0, 1.0, 0.0]);
        assert_eq!(bpr_score(&p, 0, 1).unwrap(), 0.0);
        p.p.row_mut(1).copy_from_slice(&[0.5, -2.0, 3.0]);
        p.q.row_mut(0).copy_from_slice(&[4.0, 0.25, -1.0]);
        assert_eq!(bpr_score(&p, 1, 0).unwrap(), 0.5 * 4.0 - 2.0 * 0.25 - 3.0);
        assert!(matches!(bpr_score(&p, 2, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(bpr_score(&p, 0, 5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn dominant_item_ranks_first_for_every_user() {
        // every user bought item 0; items 1..3 have one buyer each
        let pairs = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 2)];
        let cfg = BprConfig {
            d: 4,
            epochs: 300,
            lr: 0.05,
            seed: 3,
            ..BprConfig::default()
        };
        let params = bpr_train(&pairs, 3, 4, &cfg).unwrap();
        for u in 0..3 {
            let scores: Vec<f64> = (0..4).map(|v| bpr_score(&params, u, v).unwrap()).collect();
            let best = (0..4)
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap();
            assert_eq!(best, 0, "user {u}: {scores:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_validates_input() {
        let pairs = [(0, 1), (1, 2), (2, 0)];
        let cfg = BprConfig {
            d: 3,
            epochs: 5,
            ..BprConfig::default()
        };
        assert_eq!(
            bpr_train(&pairs, 3, 4, &cfg).unwrap(),
            bpr_train(&pairs, 3, 4, &cfg).unwrap()
        );
        assert!(matches!(bpr_train(&[], 3, 4, &cfg), Err(Error::Empty(_))));
        assert!(matches!(
            bpr_train(&[(3, 0)], 3, 4, &cfg),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn integration_scores_do_not_depend_on_channel() {
        let cfg = BprConfig {
            d: 3,
            epochs: 2,
            ..BprConfig::default()
        };
        let params = bpr_train(&[(0, 1), (1, 0)], 2, 3, &cfg).unwrap();
        let mut off = vec![0.0; 3];
        let mut on = vec![0.0; 3];
        for u in 0..2 {
            params.score_items(u, Channel::Off, &mut off);
            params.score_items(u, Channel::On, &mut on);
            assert_eq!(off, on);
        }
    }
}
