//! Sampling QA pools into instruction-tuning records and writing them out.
//!
//! Output layout under the target directory:
//!
//! | file | content |
//! |------|---------|
//! | `images/<id>.svg` | one rendered diagram per record |
//! | `data.jsonl` | `{"id","image","conversations":[human, gpt]}` per line |
//! | `holdout.jsonl` | same schema, only with a non-zero holdout fraction |
//! | `meta.jsonl` | category, task, scenario, seed, format per record |
//! | `manifest.json` | counts, seed, version and SHA-256 checksums |
//!
//! Records are written in id order and nothing time- or host-dependent is
//! recorded, so identical inputs give identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::Scenario;
use crate::qa::{Category, Format, QaPair};
use crate::seed;
use crate::svg::render_svg;
use crate::wavejson::WaveDocument;

pub const IMAGE_TOKEN: &str = "<image>";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{pool} pool has {available} items, {requested} requested")]
    PoolTooSmall {
        pool: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("record `{0}` has no image")]
    MissingImage(String),
    #[error("image `{0}` belongs to no record")]
    OrphanImage(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("holdout fraction {0} outside [0, 1)")]
    BadHoldout(f64),
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// One picture with its one question.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub id: String,
    pub wave: WaveDocument,
    pub qa: QaPair,
    pub task: Option<String>,
    pub scenario: Option<Scenario>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub image: String,
    pub conversations: Vec<Turn>,
}

impl DatasetRecord {
    pub fn from_item(item: &PoolItem) -> Self {
        DatasetRecord {
            id: item.id.clone(),
            image: image_path(&item.id),
            conversations: vec![
                Turn {
                    from: "human".into(),
                    value: format!("{IMAGE_TOKEN}\n{}", item.qa.question),
                },
                Turn {
                    from: "gpt".into(),
                    value: item.qa.answer.clone(),
                },
            ],
        }
    }

    pub fn question(&self) -> Option<&str> {
        self.conversations.first()?.value.strip_prefix(IMAGE_TOKEN)?.strip_prefix('\n')
    }

    pub fn answer(&self) -> Option<&str> {
        self.conversations.get(1).map(|t| t.value.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub category: Category,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub seed: u64,
    pub source_td: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordChecksum {
    pub record: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub by_category: BTreeMap<String, usize>,
    pub by_task: BTreeMap<String, usize>,
    pub by_format: BTreeMap<String, usize>,
    pub by_split: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub seed: u64,
    pub total: usize,
    pub counts: Counts,
    /// SHA-256 of each JSONL file.
    pub files: BTreeMap<String, String>,
    pub records: BTreeMap<String, RecordChecksum>,
}

impl Manifest {
    /// Every tally sums to the record total.
    pub fn counts_consistent(&self) -> bool {
        let c = &self.counts;
        [&c.by_category, &c.by_task, &c.by_format, &c.by_split]
            .iter()
            .all(|m| m.values().sum::<usize>() == self.total)
            && self.records.len() == self.total
    }
}

pub fn image_path(id: &str) -> String {
    format!("images/{id}.svg")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Uniform draw without replacement of `n_caption` and `n_reasoning`
/// items. Caption picks come first, each group in draw order.
pub fn sample_mix(
    caption_pool: &[PoolItem],
    reasoning_pool: &[PoolItem],
    n_caption: usize,
    n_reasoning: usize,
    seed: u64,
) -> Result<Vec<PoolItem>, DatasetError> {
    let mut out = Vec::with_capacity(n_caption + n_reasoning);
    for (pool, name, n, stream) in [(caption_pool, "caption", n_caption, 1), (reasoning_pool, "reasoning", n_reasoning, 2)] {
        if pool.len() < n {
            return Err(DatasetError::PoolTooSmall {
                pool: name,
                requested: n,
                available: pool.len(),
            });
        }
        let mut rng = seed::rng(seed::derive(seed, stream));
        out.extend(index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}

fn split_of(id: &str, seed: u64, holdout: f64) -> Split {
    if holdout <= 0.0 {
        return Split::Train;
    }
    let h = Sha256::digest(format!("{seed}:{id}").as_bytes());
    let x = u64::from_be_bytes(h[..8].try_into().expect("8 bytes")) as f64 / 2f64.powi(64);
    if x < holdout {
        Split::Holdout
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackageOptions {
    pub seed: u64,
    /// Fraction of records routed to `holdout.jsonl`.
    pub holdout: f64,
}

struct Rendered {
    line: String,
    meta: String,
    svg: String,
    split: Split,
}

/// Writes `items` under `out_dir`, replacing a previous package there.
pub fn package(items: &[PoolItem], out_dir: &Path, opts: PackageOptions) -> Result<Manifest, DatasetError> {
    if !(0.0..1.0).contains(&opts.holdout) {
        return Err(DatasetError::BadHoldout(opts.holdout));
    }
    let mut sorted: Vec<&PoolItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DatasetError::DuplicateId(w[0].id.clone()));
    }
    let rendered: Vec<Rendered> = sorted
        .par_iter()
        .map(|item| {
            let split = split_of(&item.id, opts.seed, opts.holdout);
            let meta = RecordMeta {
                id: item.id.clone(),
                category: item.qa.category,
                format: item.qa.format,
                task: item.task.clone(),
                scenario: item.scenario,
                seed: item.seed,
                source_td: item.qa.source_td.clone(),
                template: item.qa.template.clone(),
                split,
            };
            Rendered {
                line: serde_json::to_string(&DatasetRecord::from_item(item)).expect("serializable"),
                meta: serde_json::to_string(&meta).expect("serializable"),
                svg: render_svg(&item.wave),
                split,
            }
        })
        .collect();

    let staging = out_dir.join(".staging");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io(&staging))?;
    }
    let images = staging.join("images");
    fs::create_dir_all(&images).map_err(io(&images))?;
    sorted.par_iter().zip(rendered.par_iter()).try_for_each(|(item, r)| {
        let p = staging.join(image_path(&item.id));
        fs::write(&p, &r.svg).map_err(io(&p))
    })?;

    let mut counts = Counts::default();
    let mut records = BTreeMap::new();
    let (mut train, mut held, mut meta) = (String::new(), String::new(), String::new());
    for (item, r) in sorted.iter().zip(&rendered) {
        let target = if r.split == Split::Train { &mut train } else { &mut held };
        target.push_str(&r.line);
        target.push('\n');
        meta.push_str(&r.meta);
        meta.push('\n');
        *counts.by_category.entry(item.qa.category.to_string()).or_default() += 1;
        *counts.by_task.entry(item.task.clone().unwrap_or_else(|| "external".into())).or_default() += 1;
        *counts.by_format.entry(format!("{:?}", item.qa.format)).or_default() += 1;
        let split = if r.split == Split::Train { "train" } else { "holdout" };
        *counts.by_split.entry(split.into()).or_default() += 1;
        records.insert(
            item.id.clone(),
            RecordChecksum {
                record: sha256_hex(r.line.as_bytes()),
                image: sha256_hex(r.svg.as_bytes()),
            },
        );
    }
    let mut files = BTreeMap::new();
    let mut outputs = vec![("data.jsonl", train), ("meta.jsonl", meta)];
    if opts.holdout > 0.0 {
        outputs.push(("holdout.jsonl", held));
    }
    for (name, text) in &outputs {
        files.insert(name.to_string(), sha256_hex(text.as_bytes()));
        let p = staging.join(name);
        fs::write(&p, text).map_err(io(&p))?;
    }
    let manifest = Manifest {
        toolkit_version: TOOLKIT_VERSION.into(),
        seed: opts.seed,
        total: sorted.len(),
        counts,
        files,
        records,
    };
    let p = staging.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    fs::write(&p, text).map_err(io(&p))?;

    for name in ["images", "data.jsonl", "meta.jsonl", "holdout.jsonl", "manifest.json"] {
        let (from, to) = (staging.join(name), out_dir.join(name));
        if to.is_dir() {
            fs::remove_dir_all(&to).map_err(io(&to))?;
        } else if to.exists() {
            fs::remove_file(&to).map_err(io(&to))?;
        }
        if from.exists() {
            fs::rename(&from, &to).map_err(io(&to))?;
        }
    }
    fs::remove_dir_all(&staging).map_err(io(&staging))?;
    Ok(manifest)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .map(|l| {
            serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// All records of a package, training split first.
pub fn read_records(dir: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out: Vec<DatasetRecord> = read_lines(&dir.join("data.jsonl"))?;
    let held = dir.join("holdout.jsonl");
    if held.exists() {
        out.extend(read_lines::<DatasetRecord>(&held)?);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<Vec<RecordMeta>, DatasetError> {
    read_lines(&dir.join("meta.jsonl"))
}

/// Re-reads a package and checks it against its manifest: file and record
/// checksums, one image per record, no stray images, consistent counts.
pub fn verify_package(dir: &Path) -> Result<Manifest, DatasetError> {
    let mp = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mp).map_err(io(&mp))?).map_err(|e| DatasetError::Parse {
        path: mp.display().to_string(),
        msg: e.to_string(),
    })?;
    for (name, sum) in &manifest.files {
        let p = dir.join(name);
        if &sha256_hex(&fs::read(&p).map_err(io(&p))?) != sum {
            return Err(DatasetError::ChecksumMismatch(name.clone()));
        }
    }
    let mut seen = HashSet::new();
    for name in manifest.files.keys().filter(|n| *n != "meta.jsonl") {
        let p = dir.join(name);
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        for line in text.lines() {
            let r: DatasetRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            let sums = manifest.records.get(&r.id).ok_or_else(|| DatasetError::ChecksumMismatch(r.id.clone()))?;
            if sha256_hex(line.as_bytes()) != sums.record {
                return Err(DatasetError::ChecksumMismatch(r.id.clone()));
            }
            let img = dir.join(&r.image);
            let bytes = fs::read(&img).map_err(|_| DatasetError::MissingImage(r.id.clone()))?;
            if sha256_hex(&bytes) != sums.image {
                return Err(DatasetError::ChecksumMismatch(r.image.clone()));
            }
            if !seen.insert(r.image.clone()) {
                return Err(DatasetError::DuplicateId(r.id));
            }
        }
    }
    if seen.len() != manifest.total || !manifest.counts_consistent() {
        return Err(DatasetError::ChecksumMismatch("manifest counts".into()));
    }
    let images = dir.join("images");
    let on_disk: BTreeSet<String> = fs::read_dir(&images)
        .map_err(io(&images))?
        .map(|e| e.map(|e| format!("images/{}", e.file_name().to_string_lossy())))
        .collect::<Result<_, _>>()
        .map_err(io(&images))?;
    if let Some(orphan) = on_disk.iter().find(|p| !seen.contains(*p)) {
        return Err(DatasetError::OrphanImage(orphan.clone()));
    }
    Ok(manifest)
}

/// Paths of every file in a package, relative to `dir`, sorted.
pub fn package_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(io(&d))? {
            let p = e.map_err(io(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("below dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}
