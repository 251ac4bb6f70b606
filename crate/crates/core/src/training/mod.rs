//! Mini-batch Adam training with validation-based early stopping, plus the
//! hyper-parameter grid search.

mod adam;
mod grid;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use grid::{grid_search, Grid, GridOutcome, GridPoint, SeedRun};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, DatasetBundle, PerChannel, TrainingExample};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, evaluate_channels, CandidateMode, EvalProtocol, EvalSplit, MetricReport, UserFilter,
};
use crate::model::{
    backward_into, batch_losses, Gradients, LossBreakdown, ModelConfig, ModelScorer, Parameters,
    Variant,
};

/// NDCG cutoff used for model selection.
pub const SELECTION_K: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    /// Score validation users on the rayon pool.
    pub parallel_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 20,
            seed: 0,
            negatives_per_positive: 10,
            parallel_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-averaged loss terms.
    pub loss: LossBreakdown,
    /// Validation NDCG@10 per channel; `None` when a channel has no
    /// validation users.
    pub val_ndcg: PerChannel<Option<f64>>,
    /// Mean of the available channel scores.
    pub selection: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best_params: Parameters,
    /// 1-based epoch that produced `best_params`.
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EpochRecord>,
}

pub fn train(
    bundle: &DatasetBundle,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_with(bundle, model_cfg, train_cfg, |_| {})
}

/// Trains from a fresh initialisation, calling `observer` after every epoch.
///
/// The parameters of the best validation epoch are returned; ties keep the
/// earliest. Training stops once `patience` epochs pass without improvement.
pub fn train_with(
    bundle: &DatasetBundle,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    if Channel::ALL
        .iter()
        .all(|&c| bundle.val[c].values().all(|s| s.is_empty()))
    {
        return Err(Error::Empty("validation users"));
    }

    let mut params = Parameters::init(
        bundle.n_users(),
        bundle.n_items(),
        model_cfg,
        train_cfg.seed,
    );
    let mut state = AdamState::new(&params);
    let mut grads = Gradients::zeros_like(&params);
    let adam = train_cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();
    let mut batch: Vec<TrainingExample> = Vec::with_capacity(train_cfg.batch_size);

    let mut best: Option<(Parameters, usize, f64)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| bundle.train[i]));
            let (loss, cache) = batch_losses(&batch, &params, model_cfg)?;
            grads.clear();
            backward_into(&batch, &params, model_cfg, &cache, &mut grads);
            adam_step(&mut params, &grads, &mut state, &adam)?;
            sum.l_on += loss.l_on;
            sum.l_off += loss.l_off;
            sum.l_cls += loss.l_cls;
            sum.l_attn += loss.l_attn;
            sum.total += loss.total;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let loss = LossBreakdown {
            l_on: sum.l_on / nb,
            l_off: sum.l_off / nb,
            l_cls: sum.l_cls / nb,
            l_attn: sum.l_attn / nb,
            total: sum.total / nb,
        };

        let val_ndcg =
            validation_ndcg(&params, model_cfg.variant, bundle, train_cfg.parallel_eval)?;
        let present: Vec<f64> = Channel::ALL.iter().filter_map(|&c| val_ndcg[c]).collect();
        let selection = present.iter().sum::<f64>() / present.len() as f64;
        let record = EpochRecord {
            epoch,
            loss,
            val_ndcg,
            selection,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5}, val ndcg@{SELECTION_K} {:.5}",
            loss.total,
            selection
        );
        observer(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(_, _, s)| selection > *s) {
            best = Some((params.clone(), epoch, selection));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_params, best_epoch, best_score) = best.expect("at least one epoch ran");
    Ok(TrainResult {
        best_params,
        best_epoch,
        best_score,
        history,
    })
}

/// Validation NDCG@10 per channel under the purchased-items-removed protocol.
pub fn validation_ndcg(
    params: &Parameters,
    variant: Variant,
    bundle: &DatasetBundle,
    parallel: bool,
) -> Result<PerChannel<Option<f64>>> {
    let scorer = ModelScorer::new(params, variant);
    let mut out = PerChannel::new(None, None);
    for c in Channel::ALL {
        let protocol = EvalProtocol {
            k_values: vec![SELECTION_K],
            candidate_mode: CandidateMode::WithoutPurchased,
            channel: c,
            split: EvalSplit::Validation,
            parallel,
        };
        match evaluate(&scorer, bundle, &protocol, UserFilter::All) {
            Ok(report) => out[c] = report.ndcg(c, SELECTION_K),
            Err(Error::Empty(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Test-split HR/NDCG at `k_values` for both channels.
pub fn test_report(
    params: &Parameters,
    variant: Variant,
    bundle: &DatasetBundle,
    k_values: &[usize],
    mode: CandidateMode,
    filter: UserFilter,
    parallel: bool,
) -> Result<MetricReport> {
    let scorer = ModelScorer::new(params, variant);
    let template = EvalProtocol {
        k_values: k_values.to_vec(),
        candidate_mode: mode,
        channel: Channel::Off,
        split: EvalSplit::Test,
        parallel,
    };
    evaluate_channels(&scorer, bundle, &template, filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;
    use crate::dataset::{sample_negatives, split, InteractionStore, Vocab};

    pub(crate) fn toy_bundle() -> DatasetBundle {
        let n_users = 12;
        let n_items = 20;
        let vocab = Vocab::from_ids(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
        )
        .unwrap();
        let mut rows = Vec::new();
        for u in 0..n_users {
            // two taste groups, each with a preferred half of the catalogue
            let base = if u % 2 == 0 { 0 } else { 10 };
            for j in 0..6 {
                let item = base + (u + j * 3) % 10;
                let channel = if j % 2 == 0 {
                    Channel::Off
                } else {
                    Channel::On
                };
                rows.push(Interaction {
                    user: u,
                    item,
                    channel,
                });
                if j == 0 {
                    rows.push(Interaction {
                        user: u,
                        item,
                        channel: Channel::On,
                    });
                }
            }
        }
        let store = InteractionStore::new(vocab, rows).unwrap();
        let bundle = split(&store, 3).unwrap();
        sample_negatives(&bundle, &store, 3, 3).0
    }

    fn small_cfg() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                d: 8,
                d_prime: 4,
                clf_hidden: 4,
                ..ModelConfig::default()
            },
            TrainConfig {
                epochs: 6,
                batch_size: 16,
                learning_rate: 1e-2,
                patience: 10,
                seed: 5,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let bundle = toy_bundle();
        let (m, t) = small_cfg();
        let a = train(&bundle, &m, &t).unwrap();
        let b = train(&bundle, &m, &t).unwrap();
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn training_loss_goes_down() {
        let bundle = toy_bundle();
        let (m, mut t) = small_cfg();
        t.epochs = 15;
        t.patience = 100;
        let r = train(&bundle, &m, &t).unwrap();
        let first = r.history.first().unwrap().loss.total;
        let last = r.history.last().unwrap().loss.total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn patience_one_with_flat_validation_stops_at_epoch_two() {
        let bundle = toy_bundle();
        let (m, mut t) = small_cfg();
        // steps this small cannot reorder any ranking
        t.learning_rate = 1e-15;
        t.patience = 1;
        t.epochs = 50;
        let r = train(&bundle, &m, &t).unwrap();
        assert_eq!(r.history.len(), 2);
        assert_eq!(r.best_epoch, 1);
        assert_eq!(r.history[0].selection, r.history[1].selection);
    }

    #[test]
    fn best_epoch_maximises_selection() {
        let bundle = toy_bundle();
        let (m, t) = small_cfg();
        let r = train(&bundle, &m, &t).unwrap();
        let max = r
            .history
            .iter()
            .map(|h| h.selection)
            .fold(f64::MIN, f64::max);
        assert_eq!(r.best_score, max);
        let first_max = r.history.iter().find(|h| h.selection == max).unwrap().epoch;
        assert_eq!(r.best_epoch, first_max);
        let reeval = validation_ndcg(&r.best_params, m.variant, &bundle, false).unwrap();
        let present: Vec<f64> = Channel::ALL.iter().filter_map(|&c| reeval[c]).collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        assert!((mean - max).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs_and_empty_data() {
        let bundle = toy_bundle();
        let (m, t) = small_cfg();
        let bad = TrainConfig {
            batch_size: 0,
            ..t.clone()
        };
        assert!(matches!(train(&bundle, &m, &bad), Err(Error::Config(_))));
        let mut empty = bundle.clone();
        empty.train.clear();
        assert!(matches!(train(&empty, &m, &t), Err(Error::Empty(_))));
    }
}
