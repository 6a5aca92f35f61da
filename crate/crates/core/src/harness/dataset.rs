use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::canonical::{parse, sha256_hex, to_canonical_line};
use super::config::{ExperimentConfig, FORMAT_VERSION};
use super::{read_text, write_text, HarnessError, Result};
use crate::sim::{
    generate_catalog, generate_users, simulate_interventional, simulate_observational, split_dataset, Catalog, Event,
    Item, Split, UserProfile,
};

pub const CATALOG_FILE: &str = "catalog.json";
pub const USERS_FILE: &str = "users.jsonl";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const DATASET_FILES: [&str; 4] = [CATALOG_FILE, USERS_FILE, SEQUENCES_FILE, SPLITS_FILE];

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub user_id: u64,
    pub prefs: Vec<f64>,
    pub obs: Vec<Event>,
    pub intv: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub users: Vec<UserProfile>,
    /// Indexed by user id.
    pub records: Vec<SequenceRecord>,
    pub split: Split,
}

impl Dataset {
    pub fn record(&self, user_id: u64) -> Result<&SequenceRecord> {
        self.records
            .get(user_id as usize)
            .filter(|r| r.user_id == user_id)
            .ok_or_else(|| HarnessError::Format(format!("no record for user {user_id}")))
    }

    pub fn obs_of(&self, ids: &[u64]) -> Result<Vec<Vec<Event>>> {
        ids.iter().map(|&u| Ok(self.record(u)?.obs.clone())).collect()
    }

    pub fn intv_of(&self, ids: &[u64]) -> Result<Vec<Vec<Event>>> {
        ids.iter().map(|&u| Ok(self.record(u)?.intv.clone())).collect()
    }
}

/// Simulates catalog, users, both regimes and the user split.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let s = &cfg.simulator;
    let catalog = generate_catalog(s.n_genres, s.items_per_genre, cfg.seed)?;
    let mut users = generate_users(s.n_users, s.n_genres, cfg.seed)?;
    for u in &mut users {
        u.drift_rate = s.drift_rate;
    }
    let records = users
        .par_iter()
        .map(|u| {
            let obs = simulate_observational(u, &s.decision, &catalog, s.obs_policy, s.obs_len, cfg.seed)?;
            let intv = simulate_interventional(u, &s.decision, &catalog, s.intv_policy, s.intv_len, cfg.seed)?;
            Ok(SequenceRecord { user_id: u.user_id, prefs: u.prefs.clone(), obs: obs.events, intv: intv.events })
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = users.iter().map(|u| u.user_id).collect();
    let split = split_dataset(&ids, s.split, cfg.seed)?;
    Ok(Dataset { catalog, users, records, split })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    format_version: u32,
    n_genres: usize,
    items: Vec<Item>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserLine {
    format_version: u32,
    user_id: u64,
    prefs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drift_rate: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    format_version: u32,
    user_id: u64,
    prefs: Vec<f64>,
    obs: Vec<Event>,
    intv: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    format_version: u32,
    train: Vec<u64>,
    valid: Vec<u64>,
    test: Vec<u64>,
}

/// File contents keyed by file name.
pub fn render_dataset(ds: &Dataset) -> Result<BTreeMap<&'static str, String>> {
    let mut files = BTreeMap::new();
    files.insert(
        CATALOG_FILE,
        to_canonical_line(&CatalogFile {
            format_version: FORMAT_VERSION,
            n_genres: ds.catalog.n_genres,
            items: ds.catalog.items.clone(),
        })?,
    );
    let mut users = String::new();
    for u in &ds.users {
        users.push_str(&to_canonical_line(&UserLine {
            format_version: FORMAT_VERSION,
            user_id: u.user_id,
            prefs: u.prefs.clone(),
            drift_rate: u.drift_rate,
        })?);
    }
    files.insert(USERS_FILE, users);
    let mut seqs = String::new();
    for r in &ds.records {
        seqs.push_str(&to_canonical_line(&SequenceLine {
            format_version: FORMAT_VERSION,
            user_id: r.user_id,
            prefs: r.prefs.clone(),
            obs: r.obs.clone(),
            intv: r.intv.clone(),
        })?);
    }
    files.insert(SEQUENCES_FILE, seqs);
    files.insert(
        SPLITS_FILE,
        to_canonical_line(&SplitFile {
            format_version: FORMAT_VERSION,
            train: ds.split.train.clone(),
            valid: ds.split.valid.clone(),
            test: ds.split.test.clone(),
        })?,
    );
    Ok(files)
}

/// Writes the dataset files and returns their SHA-256 digests.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<BTreeMap<String, String>> {
    let mut hashes = BTreeMap::new();
    for (name, text) in render_dataset(ds)? {
        write_text(&dir.join(name), &text)?;
        hashes.insert(name.to_string(), sha256_hex(text.as_bytes()));
    }
    Ok(hashes)
}

/// Digest over the per-file digests in file-name order.
pub fn dataset_hash(file_hashes: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (name, h) in file_hashes {
        s.push_str(&format!("{name} {h}\n"));
    }
    sha256_hex(s.as_bytes())
}

pub fn hash_dataset_dir(dir: &Path) -> Result<String> {
    let mut hashes = BTreeMap::new();
    for name in DATASET_FILES {
        let text = read_text(&dir.join(name))?;
        hashes.insert(name.to_string(), sha256_hex(text.as_bytes()));
    }
    Ok(dataset_hash(&hashes))
}

fn check_version(v: u32, origin: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(HarnessError::Format(format!("{origin}: unsupported format_version {v}")));
    }
    Ok(())
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse(l, name).map_err(|e| match e {
                HarnessError::Parse { column, message, .. } => {
                    HarnessError::Parse { origin: name.to_string(), line: i + 1, column, message }
                }
                other => other,
            })
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let cat: CatalogFile = parse(&read_text(&dir.join(CATALOG_FILE))?, CATALOG_FILE)?;
    check_version(cat.format_version, CATALOG_FILE)?;
    for (k, item) in cat.items.iter().enumerate() {
        if item.id != k || item.genre >= cat.n_genres {
            return Err(HarnessError::Format(format!("{CATALOG_FILE}: bad item {k}")));
        }
    }
    let catalog = Catalog { n_genres: cat.n_genres, items: cat.items };

    let user_lines: Vec<UserLine> = parse_lines(&read_text(&dir.join(USERS_FILE))?, USERS_FILE)?;
    let mut users = Vec::with_capacity(user_lines.len());
    for (k, u) in user_lines.into_iter().enumerate() {
        check_version(u.format_version, USERS_FILE)?;
        if u.user_id != k as u64 || u.prefs.len() != catalog.n_genres {
            return Err(HarnessError::Format(format!("{USERS_FILE}: bad user on line {}", k + 1)));
        }
        users.push(UserProfile { user_id: u.user_id, prefs: u.prefs, drift_rate: u.drift_rate });
    }

    let seq_lines: Vec<SequenceLine> = parse_lines(&read_text(&dir.join(SEQUENCES_FILE))?, SEQUENCES_FILE)?;
    let mut records = Vec::with_capacity(seq_lines.len());
    for (k, line) in seq_lines.into_iter().enumerate() {
        check_version(line.format_version, SEQUENCES_FILE)?;
        let r = SequenceRecord { user_id: line.user_id, prefs: line.prefs, obs: line.obs, intv: line.intv };
        let in_catalog = r.obs.iter().chain(&r.intv).all(|e| e.item < catalog.len());
        if r.user_id != k as u64 || !in_catalog || r.obs.is_empty() || r.intv.is_empty() {
            return Err(HarnessError::Format(format!("{SEQUENCES_FILE}: bad record on line {}", k + 1)));
        }
        records.push(r);
    }
    if records.len() != users.len() {
        return Err(HarnessError::Format(format!("{} users but {} sequence records", users.len(), records.len())));
    }

    let sp: SplitFile = parse(&read_text(&dir.join(SPLITS_FILE))?, SPLITS_FILE)?;
    check_version(sp.format_version, SPLITS_FILE)?;
    let n = users.len() as u64;
    if sp.train.iter().chain(&sp.valid).chain(&sp.test).any(|&u| u >= n) {
        return Err(HarnessError::Format(format!("{SPLITS_FILE}: unknown user id")));
    }
    Ok(Dataset { catalog, users, records, split: Split { train: sp.train, valid: sp.valid, test: sp.test } })
}
