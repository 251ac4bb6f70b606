//! CSV ingestion and the on-disk split layout.
//!
//! A split directory holds `train.csv`, `val_{off,on}.csv`, `test_{off,on}.csv`
//! and `split.json` with the id vocabulary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Channel, DatasetBundle, GroundTruthSets, InteractionStore, PerChannel, TrainingExample, Vocab,
};
use crate::error::{Error, Result};

const INTERACTIONS_HEADER: [&str; 3] = ["user_id", "item_id", "channel"];
const TRAIN_HEADER: [&str; 6] = [
    "user_id",
    "item_id",
    "label_off",
    "label_on",
    "specificity",
    "is_positive",
];
const PAIR_HEADER: [&str; 2] = ["user_id", "item_id"];

pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file))
}

/// Parses `user_id,item_id,channel` rows.
pub fn read_interactions(reader: impl Read) -> Result<InteractionStore> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    check_header(&mut rdr, &INTERACTIONS_HEADER)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let user = non_empty(&record[0], "user_id", line)?;
        let item = non_empty(&record[1], "item_id", line)?;
        let channel: Channel = record[2]
            .parse()
            .map_err(|e: Error| Error::Validation(format!("line {line}: {e}")))?;
        rows.push((user.to_owned(), item.to_owned(), channel));
    }
    InteractionStore::from_raw(rows)
}

pub fn write_interactions(store: &InteractionStore, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(INTERACTIONS_HEADER)?;
    let vocab = store.vocab();
    for it in store.interactions() {
        wtr.write_record([
            vocab.users[it.user].as_str(),
            vocab.items[it.item].as_str(),
            it.channel.as_str(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Contents of `split.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetadata {
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub overlapping_users: Vec<String>,
}

pub fn write_split_dir(
    bundle: &DatasetBundle,
    dir: impl AsRef<Path>,
    seed: u64,
    negatives_per_positive: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = &bundle.vocab;

    let meta = SplitMetadata {
        seed,
        negatives_per_positive,
        users: vocab.users.clone(),
        items: vocab.items.clone(),
        overlapping_users: bundle
            .overlapping_users
            .iter()
            .map(|&u| vocab.users[u].clone())
            .collect(),
    };
    let meta_path = dir.join("split.json");
    let file = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &meta)?;

    let train_path = dir.join("train.csv");
    let file = File::create(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    wtr.write_record(TRAIN_HEADER)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for ex in &bundle.train {
        wtr.write_record([
            vocab.users[ex.user].as_str(),
            vocab.items[ex.item].as_str(),
            flag(ex.label_off),
            flag(ex.label_on),
            flag(ex.specificity),
            flag(ex.is_positive),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io(&train_path, e))?;

    for c in Channel::ALL {
        write_pairs(&bundle.val[c], vocab, &dir.join(format!("val_{c}.csv")))?;
        write_pairs(&bundle.test[c], vocab, &dir.join(format!("test_{c}.csv")))?;
    }
    Ok(())
}

pub fn load_split_dir(dir: impl AsRef<Path>) -> Result<(DatasetBundle, SplitMetadata)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("split.json");
    let file = File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SplitMetadata = serde_json::from_reader(BufReader::new(file))?;
    let vocab = Vocab::from_ids(meta.users.clone(), meta.items.clone())?;

    let train_path = dir.join("train.csv");
    let file = File::open(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));
    check_header(&mut rdr, &TRAIN_HEADER)?;
    let mut train = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != TRAIN_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    TRAIN_HEADER.len(),
                    record.len()
                ),
            });
        }
        let (user, item) = lookup(&vocab, &record[0], &record[1], line)?;
        let ex = TrainingExample {
            user,
            item,
            label_off: parse_flag(&record[2], line)?,
            label_on: parse_flag(&record[3], line)?,
            specificity: parse_flag(&record[4], line)?,
            is_positive: parse_flag(&record[5], line)?,
        };
        if !ex.is_consistent() {
            return Err(Error::Validation(format!(
                "line {line}: inconsistent labels for training row"
            )));
        }
        train.push(ex);
    }

    let mut val = PerChannel::<GroundTruthSets>::default();
    let mut test = PerChannel::<GroundTruthSets>::default();
    for c in Channel::ALL {
        val[c] = read_pairs(&vocab, &dir.join(format!("val_{c}.csv")))?;
        test[c] = read_pairs(&vocab, &dir.join(format!("test_{c}.csv")))?;
    }

    let overlapping_users = meta
        .overlapping_users
        .iter()
        .map(|raw| {
            vocab
                .user(raw)
                .ok_or_else(|| Error::Validation(format!("unknown overlapping user `{raw}`")))
        })
        .collect::<Result<_>>()?;

    let mut bundle = DatasetBundle {
        train,
        val,
        test,
        train_items: PerChannel::default(),
        overlapping_users,
        vocab,
    };
    bundle.index_train_items();
    Ok((bundle, meta))
}

fn write_pairs(sets: &GroundTruthSets, vocab: &Vocab, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    wtr.write_record(PAIR_HEADER)?;
    for (&user, items) in sets {
        for &item in items {
            wtr.write_record([vocab.users[user].as_str(), vocab.items[item].as_str()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_pairs(vocab: &Vocab, path: &Path) -> Result<GroundTruthSets> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));
    check_header(&mut rdr, &PAIR_HEADER)?;
    let mut sets = GroundTruthSets::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let (user, item) = lookup(vocab, &record[0], &record[1], line)?;
        sets.entry(user).or_default().insert(item);
    }
    Ok(sets)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "unexpected header `{}` (expected `{}`)",
                found.join(","),
                expected.join(",")
            ),
        });
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn non_empty<'a>(field: &'a str, name: &str, line: usize) -> Result<&'a str> {
    let field = field.trim();
    if field.is_empty() {
        return Err(Error::Parse {
            line,
            message: format!("empty {name}"),
        });
    }
    Ok(field)
}

fn parse_flag(field: &str, line: usize) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            message: format!("expected 0 or 1, found `{other}`"),
        }),
    }
}

fn lookup(vocab: &Vocab, user: &str, item: &str, line: usize) -> Result<(usize, usize)> {
    let u = vocab
        .user(user.trim())
        .ok_or_else(|| Error::Validation(format!("line {line}: unknown user `{user}`")))?;
    let i = vocab
        .item(item.trim())
        .ok_or_else(|| Error::Validation(format!("line {line}: unknown item `{item}`")))?;
    Ok((u, i))
}
