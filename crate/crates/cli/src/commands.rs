use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use ccrec_core::baselines::{probe_table, BprConfig, ProbeRegime};
use ccrec_core::dataset::{
    load_interactions, load_split_dir, sample_negatives, split, stats, write_interactions,
    write_split_dir,
};
use ccrec_core::metrics::{
    evaluate_channels, summarize, CandidateMode, EvalProtocol, MeanStd, MetricReport,
};
use ccrec_core::model::checkpoint::Checkpoint;
use ccrec_core::model::{ModelScorer, Variant};
use ccrec_core::synthgen::generate;
use ccrec_core::training::{grid_search, test_report, train_with, Grid};
use ccrec_core::{Channel, UserFilter};

use crate::args::*;
use crate::manifest::RunManifest;

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let parallel = match cli.threads {
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
            true
        }
        None => false,
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, &argv),
        Command::Split(a) => cmd_split(&a, &argv),
        Command::Train(a) => cmd_train(&a, &argv, parallel),
        Command::Evaluate(a) => cmd_evaluate(&a, &argv, parallel),
        Command::Probe(a) => cmd_probe(&a, &argv),
        Command::Ablate(a) => cmd_ablate(&a, &argv, parallel),
        Command::Gridsearch(a) => cmd_gridsearch(&a, &argv, parallel),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn files(dir: &Path, names: &[&str]) -> Vec<PathBuf> {
    names.iter().map(|n| dir.join(n)).collect()
}

fn cmd_generate(a: &GenerateArgs, argv: &[String]) -> Result<()> {
    let cfg = a.config();
    let outputs = files(
        &a.out,
        &["interactions.csv", "ground_truth.bin", "counts.json"],
    );
    RunManifest::new(
        "generate",
        argv,
        &cfg,
        vec![a.seed],
        vec![],
        outputs.clone(),
    )?
    .write(&a.out)?;

    let g = generate(&cfg)?;
    let file =
        File::create(&outputs[0]).with_context(|| format!("creating {}", outputs[0].display()))?;
    write_interactions(&g.store, BufWriter::new(file))?;
    g.truth.save(&outputs[1])?;
    write_json(&outputs[2], &g.counts)?;
    log::info!(
        "wrote {} offline and {} online interactions to {}",
        g.counts.interactions.off,
        g.counts.interactions.on,
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs, argv: &[String]) -> Result<()> {
    let config = serde_json::json!({ "seed": a.seed, "negatives": a.negatives });
    let outputs = files(&a.out, &["split.json", "train.csv", "summary.json"]);
    RunManifest::new(
        "split",
        argv,
        config,
        vec![a.seed],
        vec![a.data.clone()],
        outputs.clone(),
    )?
    .write(&a.out)?;

    let store = load_interactions(&a.data)?;
    let report = stats(&store)?;
    let bundle = split(&store, a.seed)?;
    let (bundle, negatives) = sample_negatives(&bundle, &store, a.negatives, a.seed);
    write_split_dir(&bundle, &a.out, a.seed, a.negatives)?;
    write_json(
        &outputs[2],
        &serde_json::json!({
            "stats": report,
            "negatives": negatives,
            "train_examples": bundle.train.len(),
            "train_positives": bundle.n_positives(),
        }),
    )?;
    log::info!(
        "{} train examples written to {}",
        bundle.train.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, argv: &[String], parallel: bool) -> Result<()> {
    let model_cfg = a.model.config();
    let mut train_cfg = a.optim.config(a.seed, parallel);
    let outputs = files(&a.out, &["model.ckpt", "train_log.jsonl", "summary.json"]);
    let (bundle, meta) = load_split_dir(&a.data)?;
    train_cfg.negatives_per_positive = meta.negatives_per_positive;
    let config = serde_json::json!({ "model": &model_cfg, "train": &train_cfg });
    RunManifest::new(
        "train",
        argv,
        config,
        vec![a.seed],
        vec![a.data.clone()],
        outputs.clone(),
    )?
    .write(&a.out)?;

    let log_file =
        File::create(&outputs[1]).with_context(|| format!("creating {}", outputs[1].display()))?;
    let mut log = BufWriter::new(log_file);
    let mut log_error = None;
    let result = train_with(&bundle, &model_cfg, &train_cfg, |record| {
        if log_error.is_none() {
            let line = serde_json::to_string(record).expect("epoch records serialise");
            if let Err(e) = writeln!(log, "{line}") {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing the training log");
    }
    log.flush()?;

    Checkpoint {
        config: model_cfg,
        vocab: bundle.vocab.clone(),
        params: result.best_params,
    }
    .save(&outputs[0])?;
    write_json(
        &outputs[2],
        &serde_json::json!({
            "best_epoch": result.best_epoch,
            "best_val_ndcg10": result.best_score,
            "epochs_run": result.history.len(),
        }),
    )?;
    log::info!(
        "best epoch {} with validation NDCG@10 {:.4}",
        result.best_epoch,
        result.best_score
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, argv: &[String], parallel: bool) -> Result<()> {
    let template = EvalProtocol {
        k_values: a.k.clone(),
        candidate_mode: a.candidate_mode.into(),
        channel: Channel::Off,
        split: a.split.into(),
        parallel,
    };
    template.validate()?;
    let filter: UserFilter = a.user_filter.into();
    let report_path = a.out.join("report.json");
    let config = serde_json::json!({ "protocol": &template, "user_filter": filter });
    RunManifest::new(
        "evaluate",
        argv,
        config,
        vec![],
        vec![a.data.clone(), a.model.clone()],
        vec![report_path.clone()],
    )?
    .write(&a.out)?;

    let (bundle, _) = load_split_dir(&a.data)?;
    let ckpt = Checkpoint::load(&a.model)?;
    if ckpt.vocab != bundle.vocab {
        bail!(
            "checkpoint vocabulary does not match the split in {}",
            a.data.display()
        );
    }
    let scorer = ModelScorer::new(&ckpt.params, ckpt.config.variant);
    let report = evaluate_channels(&scorer, &bundle, &template, filter)?;
    write_json(&report_path, &report)
}

/// Metrics of one channel keyed by cutoff.
#[derive(Serialize)]
struct ProbeRow {
    regime: ProbeRegime,
    candidate_mode: CandidateMode,
    channel: Channel,
    n_users: usize,
    hr: BTreeMap<usize, f64>,
    ndcg: BTreeMap<usize, f64>,
}

fn channel_rows(
    report: &MetricReport,
    channel: Channel,
) -> (usize, BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let rows: Vec<_> = report
        .rows
        .iter()
        .filter(|r| r.channel == channel)
        .collect();
    (
        rows.first().map_or(0, |r| r.n_users),
        rows.iter().map(|r| (r.k, r.hr)).collect(),
        rows.iter().map(|r| (r.k, r.ndcg)).collect(),
    )
}

fn cmd_probe(a: &ProbeArgs, argv: &[String]) -> Result<()> {
    let cfg = BprConfig {
        d: a.bpr.d,
        epochs: a.bpr.epochs,
        lr: a.bpr.lr,
        reg: a.bpr.reg,
        seed: a.seed,
        ..BprConfig::default()
    };
    let report_path = a.out.join("report.json");
    RunManifest::new(
        "probe",
        argv,
        &cfg,
        vec![a.seed],
        vec![a.data.clone()],
        vec![report_path.clone()],
    )?
    .write(&a.out)?;

    let (bundle, _) = load_split_dir(&a.data)?;
    let mut rows = Vec::new();
    for probe in probe_table(&bundle, &cfg)? {
        for channel in Channel::ALL {
            let (n_users, hr, ndcg) = channel_rows(&probe.report, channel);
            if n_users > 0 {
                rows.push(ProbeRow {
                    regime: probe.regime,
                    candidate_mode: probe.candidate_mode,
                    channel,
                    n_users,
                    hr,
                    ndcg,
                });
            }
        }
    }
    write_json(&report_path, &serde_json::json!({ "rows": rows }))
}

#[derive(Serialize)]
struct AblationRow {
    variant: Variant,
    channel: Channel,
    n_users: usize,
    seeds: Vec<u64>,
    hr: BTreeMap<usize, MeanStd>,
    ndcg: BTreeMap<usize, MeanStd>,
}

fn cmd_ablate(a: &AblateArgs, argv: &[String], parallel: bool) -> Result<()> {
    if a.seeds.is_empty() {
        bail!("--seeds must name at least one seed");
    }
    let base = a.model.config();
    let report_path = a.out.join("report.json");
    let config = serde_json::json!({
        "model": &base,
        "train": a.optim.config(a.seeds[0], parallel),
        "variants": Variant::ALL,
    });
    RunManifest::new(
        "ablate",
        argv,
        config,
        a.seeds.clone(),
        vec![a.data.clone()],
        vec![report_path.clone()],
    )?
    .write(&a.out)?;

    let (bundle, _) = load_split_dir(&a.data)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let model_cfg = ccrec_core::ModelConfig {
            variant,
            ..base.clone()
        };
        let mut runs = Vec::with_capacity(a.seeds.len());
        for &seed in &a.seeds {
            let train_cfg = a.optim.config(seed, parallel);
            let result = train_with(&bundle, &model_cfg, &train_cfg, |_| {})?;
            let report = test_report(
                &result.best_params,
                variant,
                &bundle,
                &[5, 10],
                CandidateMode::WithoutPurchased,
                UserFilter::All,
                parallel,
            )?;
            log::info!("{variant} seed {seed}: best epoch {}", result.best_epoch);
            runs.push((seed, report));
        }
        let summary = summarize(&runs);
        for channel in Channel::ALL {
            let cells: Vec<_> = summary.iter().filter(|r| r.channel == channel).collect();
            let Some(first) = cells.first() else { continue };
            rows.push(AblationRow {
                variant,
                channel,
                n_users: first.n_users,
                seeds: a.seeds.clone(),
                hr: cells.iter().map(|r| (r.k, r.hr)).collect(),
                ndcg: cells.iter().map(|r| (r.k, r.ndcg)).collect(),
            });
        }
    }
    write_json(&report_path, &serde_json::json!({ "rows": rows }))
}

fn cmd_gridsearch(a: &GridArgs, argv: &[String], parallel: bool) -> Result<()> {
    let grid: Grid = match &a.grid {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Grid::default(),
    };
    let base_model = a.model.config();
    let base_train = a
        .optim
        .config(a.seeds.first().copied().unwrap_or(0), parallel);
    let outputs = files(&a.out, &["grid_points.jsonl", "report.json"]);
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.grid.clone());
    let config = serde_json::json!({ "grid": &grid, "model": &base_model, "train": &base_train });
    RunManifest::new(
        "gridsearch",
        argv,
        config,
        a.seeds.clone(),
        inputs,
        outputs.clone(),
    )?
    .write(&a.out)?;

    let (bundle, _) = load_split_dir(&a.data)?;
    let points_file =
        File::create(&outputs[0]).with_context(|| format!("creating {}", outputs[0].display()))?;
    let mut points = BufWriter::new(points_file);
    let mut write_error = None;
    let outcome = grid_search(&bundle, &grid, &base_model, &base_train, &a.seeds, |p| {
        log::info!("grid point validation NDCG@10 {:.4}", p.val_score);
        if write_error.is_none() {
            let line = serde_json::to_string(p).expect("grid points serialise");
            if let Err(e) = writeln!(points, "{line}") {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context("writing grid points");
    }
    points.flush()?;
    write_json(&outputs[1], &outcome)
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let argv: Vec<String> = std::iter::once("ccrec".to_string())
        .chain(manifest.argv.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&argv)
        .with_context(|| format!("{} holds an invalid command line", a.manifest.display()))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a manifest cannot replay another replay");
    }
    log::info!(
        "replaying `{}` from {}",
        manifest.command,
        a.manifest.display()
    );
    run(cli, manifest.argv)
}
