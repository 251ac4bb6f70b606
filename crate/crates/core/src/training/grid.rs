use serde::{Deserialize, Serialize};

use super::{test_report, train, TrainConfig};
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::metrics::{summarize, CandidateMode, MetricReport, SummaryRow, UserFilter};
use crate::model::ModelConfig;

/// Candidate values per searched hyper-parameter. Everything else comes from
/// the base configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d_prime: Vec<usize>,
    pub clf_hidden: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub lambda_cls: Vec<f64>,
    pub lambda_attn: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            d_prime: vec![64, 128, 256],
            clf_hidden: vec![64, 128],
            learning_rate: vec![1e-4, 5e-4, 1e-3],
            lambda_cls: vec![0.1, 0.3, 0.5],
            lambda_attn: vec![0.01, 0.05, 0.1, 0.3, 0.5],
        }
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        self.d_prime.len()
            * self.clf_hidden.len()
            * self.learning_rate.len()
            * self.lambda_cls.len()
            * self.lambda_attn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, in lexicographic order of the fields above.
    pub fn combinations(
        &self,
        base_model: &ModelConfig,
        base_train: &TrainConfig,
    ) -> Vec<(ModelConfig, TrainConfig)> {
        let mut out = Vec::with_capacity(self.len());
        for &d_prime in &self.d_prime {
            for &clf_hidden in &self.clf_hidden {
                for &learning_rate in &self.learning_rate {
                    for &lambda_cls in &self.lambda_cls {
                        for &lambda_attn in &self.lambda_attn {
                            out.push((
                                ModelConfig {
                                    d_prime,
                                    clf_hidden,
                                    lambda_cls,
                                    lambda_attn,
                                    ..base_model.clone()
                                },
                                TrainConfig {
                                    learning_rate,
                                    ..base_train.clone()
                                },
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPoint {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub val_score: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub val_score: f64,
    pub best_epoch: usize,
    pub test: MetricReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best_model: ModelConfig,
    pub best_train: TrainConfig,
    pub points: Vec<GridPoint>,
    pub seed_runs: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
}

/// Searches the grid with the first seed, then retrains the winner with every
/// seed and reports test metrics. Ties on validation score keep the earlier
/// grid point.
pub fn grid_search(
    bundle: &DatasetBundle,
    grid: &Grid,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    seeds: &[u64],
    mut on_point: impl FnMut(&GridPoint),
) -> Result<GridOutcome> {
    let &search_seed = seeds.first().ok_or(Error::Empty("seeds"))?;
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }

    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let combos = grid.combinations(
        base_model,
        &TrainConfig {
            seed: search_seed,
            ..base_train.clone()
        },
    );
    for (i, (m, t)) in combos.iter().enumerate() {
        let r = train(bundle, m, t)?;
        let point = GridPoint {
            model: m.clone(),
            learning_rate: t.learning_rate,
            val_score: r.best_score,
            best_epoch: r.best_epoch,
        };
        on_point(&point);
        if best.is_none_or(|(_, s)| r.best_score > s) {
            best = Some((i, r.best_score));
        }
        points.push(point);
    }
    let (best_idx, _) = best.expect("grid is non-empty");
    let (best_model, best_train) = combos[best_idx].clone();

    let mut seed_runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let t = TrainConfig {
            seed,
            ..best_train.clone()
        };
        let r = train(bundle, &best_model, &t)?;
        let test = test_report(
            &r.best_params,
            best_model.variant,
            bundle,
            &[5, 10],
            CandidateMode::WithoutPurchased,
            UserFilter::All,
            t.parallel_eval,
        )?;
        seed_runs.push(SeedRun {
            seed,
            val_score: r.best_score,
            best_epoch: r.best_epoch,
            test,
        });
    }
    let summary = summarize(
        &seed_runs
            .iter()
            .map(|r| (r.seed, r.test.clone()))
            .collect::<Vec<_>>(),
    );
    Ok(GridOutcome {
        best_model,
        best_train,
        points,
        seed_runs,
        summary,
    })
}
