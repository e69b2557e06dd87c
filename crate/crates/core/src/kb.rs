//! On-disk knowledge base and the counting filter used to share UE routes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::eval::MetricsReport;
use crate::ingest::{MonitoringRecord, GNB_ID, SCENARIO, UE_ID};
use crate::models::{ModelArtifact, ModelKind};
use crate::table::DataTable;

const MANIFEST: &str = "kb.json";
const FEEDBACK: &str = "feedback.jsonl";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Raw,
    Processed,
    FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub kind: DatasetKind,
    pub scenario: String,
    pub row_count: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    /// Filled in by [`KnowledgeBase::put_dataset`].
    #[serde(default)]
    pub checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl DatasetMeta {
    pub fn new(id: impl Into<String>, kind: DatasetKind, scenario: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            scenario: scenario.into(),
            row_count: 0,
            created_at: 0,
            checksum: String::new(),
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    Share,
    Redact,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySet {
    /// Fields not listed are shared.
    pub sharing_filters: BTreeMap<String, Sharing>,
    /// Highest priority first.
    pub slice_priorities: Vec<String>,
    /// Unordered gNB pairs between which handover is forbidden.
    pub handover_restrictions: Vec<(String, String)>,
}

impl PolicySet {
    pub fn validate(&self, known_gnbs: &[String]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.slice_priorities {
            if !seen.insert(s) {
                return Err(Error::Policy(format!("slice `{s}` listed twice in priorities")));
            }
        }
        for (a, b) in &self.handover_restrictions {
            for g in [a, b] {
                if !known_gnbs.contains(g) {
                    return Err(Error::Policy(format!("handover restriction names unknown gNB `{g}`")));
                }
            }
        }
        Ok(())
    }

    pub fn handover_allowed(&self, from: &str, to: &str) -> bool {
        !self
            .handover_restrictions
            .iter()
            .any(|(a, b)| (a == from && b == to) || (a == to && b == from))
    }

    fn redacts(&self, field: &str) -> bool {
        self.sharing_filters.get(field) == Some(&Sharing::Redact)
    }
}

/// Removes every field the policy marks as redacted. The timestamp is never
/// removed.
pub fn apply_sharing_filter(policy: &PolicySet, record: &MonitoringRecord) -> MonitoringRecord {
    let mut out = record.clone();
    if policy.redacts(UE_ID) {
        out.ue_id = None;
    }
    if policy.redacts(GNB_ID) {
        out.gnb_id = None;
    }
    if policy.redacts(SCENARIO) {
        out.scenario = None;
    }
    out.metrics.retain(|k, _| !policy.redacts(k));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub model_kind: ModelKind,
    pub feature_set_id: String,
    /// Present once the model has been validated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    /// Relative to the KB root.
    pub artifact_path: PathBuf,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub tick: u64,
    pub predicted: f64,
    pub observed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_taken: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    datasets: Vec<DatasetMeta>,
    models: Vec<ModelRecord>,
    policies: PolicySet,
    feedback_path: PathBuf,
}

/// Directory-backed store of datasets, models, policies and runtime feedback.
///
/// One writer at a time; concurrent readers of a committed KB are fine.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    root: PathBuf,
    manifest: Manifest,
    last_tick: Option<u64>,
}

impl KnowledgeBase {
    /// Opens the KB at `root`, creating an empty one if none exists.
    pub fn init(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let path = root.join(MANIFEST);
        if path.exists() {
            return Self::open(root);
        }
        let kb = Self {
            manifest: Manifest {
                datasets: Vec::new(),
                models: Vec::new(),
                policies: PolicySet::default(),
                feedback_path: PathBuf::from(FEEDBACK),
            },
            root,
            last_tick: None,
        };
        kb.save()?;
        let fb = kb.feedback_file();
        fs::File::create(&fb).map_err(io_err(&fb))?;
        Ok(kb)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut kb = Self { root, manifest, last_tick: None };
        kb.last_tick = kb.feedback()?.last().map(|e| e.tick);
        Ok(kb)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn datasets(&self) -> &[DatasetMeta] {
        &self.manifest.datasets
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.manifest.models
    }

    pub fn policies(&self) -> &PolicySet {
        &self.manifest.policies
    }

    pub fn set_policies(&mut self, policies: PolicySet) -> Result<()> {
        self.manifest.policies = policies;
        self.save()
    }

    pub fn dataset_meta(&self, id: &str) -> Option<&DatasetMeta> {
        self.manifest.datasets.iter().find(|d| d.id == id)
    }

    fn dataset_path(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id).join("data.csv")
    }

    /// Stores a table as CSV and records it in the manifest. Row count and
    /// checksum in `meta` are overwritten with the actual values.
    pub fn put_dataset(&mut self, table: &DataTable, mut meta: DatasetMeta) -> Result<String> {
        if self.dataset_meta(&meta.id).is_some() {
            return Err(Error::Conflict(format!("dataset `{}` already exists", meta.id)));
        }
        match (&meta.kind, &meta.parent) {
            (DatasetKind::Processed, None) => {
                return Err(Error::Conflict(format!("processed dataset `{}` needs a parent", meta.id)))
            }
            (_, Some(p)) if self.dataset_meta(p).is_none() => {
                return Err(Error::NotFound(format!("parent dataset `{p}`")))
            }
            _ => {}
        }
        let bytes = table.to_csv_bytes()?;
        let path = self.dataset_path(&meta.id);
        let dir = path.parent().expect("dataset path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        meta.row_count = table.row_count();
        meta.checksum = sha256_hex(&bytes);
        let id = meta.id.clone();
        self.manifest.datasets.push(meta);
        self.save()?;
        Ok(id)
    }

    /// Raw stored bytes, verified against the recorded checksum.
    pub fn dataset_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let meta = self.dataset_meta(id).ok_or_else(|| Error::NotFound(format!("dataset `{id}`")))?;
        let path = self.dataset_path(id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != meta.checksum {
            return Err(Error::ChecksumMismatch { id: id.to_string() });
        }
        Ok(bytes)
    }

    pub fn get_dataset(&self, id: &str) -> Result<DataTable> {
        DataTable::read_csv_from(self.dataset_bytes(id)?.as_slice())
    }

    /// Writes a model artifact and registers it, replacing an older record
    /// with the same id.
    pub fn put_model(&mut self, artifact: &ModelArtifact, metrics: Option<MetricsReport>) -> Result<ModelRecord> {
        let rel = PathBuf::from("models").join(format!("{}.json", artifact.id));
        let path = self.root.join(&rel);
        let dir = path.parent().expect("model path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json = artifact.to_json()?;
        fs::write(&path, &json).map_err(io_err(&path))?;
        let rec = ModelRecord {
            id: artifact.id.clone(),
            model_kind: artifact.kind(),
            feature_set_id: artifact.feature_set_id.clone(),
            metrics,
            artifact_path: rel,
            checksum: sha256_hex(json.as_bytes()),
        };
        self.manifest.models.retain(|m| m.id != rec.id);
        self.manifest.models.push(rec.clone());
        self.save()?;
        Ok(rec)
    }

    pub fn set_model_metrics(&mut self, id: &str, metrics: MetricsReport) -> Result<()> {
        let rec = self
            .manifest
            .models
            .iter_mut()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::NotFound(format!("model `{id}`")))?;
        rec.metrics = Some(metrics);
        self.save()
    }

    pub fn model_record(&self, id: &str) -> Option<&ModelRecord> {
        self.manifest.models.iter().find(|m| m.id == id)
    }

    pub fn get_model(&self, id: &str) -> Result<ModelArtifact> {
        let rec = self.model_record(id).ok_or_else(|| Error::NotFound(format!("model `{id}`")))?;
        let path = self.root.join(&rec.artifact_path);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        if sha256_hex(text.as_bytes()) != rec.checksum {
            return Err(Error::ChecksumMismatch { id: id.to_string() });
        }
        ModelArtifact::from_json(&text)
    }

    /// Stores an auxiliary JSON document (feature sets, cluster models, ...)
    /// under `<category>/<id>.json` and returns its checksum.
    pub fn put_json<T: Serialize>(&self, category: &str, id: &str, value: &T) -> Result<String> {
        let dir = self.root.join(category);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{id}.json"));
        let json = serde_json::to_string_pretty(value)?;
        fs::write(&path, &json).map_err(io_err(&path))?;
        Ok(sha256_hex(json.as_bytes()))
    }

    pub fn get_json<T: DeserializeOwned>(&self, category: &str, id: &str) -> Result<T> {
        let path = self.root.join(category).join(format!("{id}.json"));
        if !path.exists() {
            return Err(Error::NotFound(format!("{category}/{id}")));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn feedback_file(&self) -> PathBuf {
        self.root.join(&self.manifest.feedback_path)
    }

    /// Appends entries to the feedback log. Ticks must not go backwards.
    pub fn append_feedback(&mut self, entries: &[FeedbackEntry]) -> Result<()> {
        let mut last = self.last_tick;
        for e in entries {
            if let Some(l) = last {
                if e.tick < l {
                    return Err(Error::FeedbackOrder { tick: e.tick, last: l });
                }
            }
            last = Some(e.tick);
        }
        let path = self.feedback_file();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e)?);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        self.last_tick = last;
        Ok(())
    }

    pub fn feedback(&self) -> Result<Vec<FeedbackEntry>> {
        let path = self.feedback_file();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?,
            );
        }
        Ok(out)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Counting Bloom filter: `k` seeded hashes over `m` counters, query returns
/// the minimum counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingFilter {
    pub counters: Vec<u32>,
    pub hash_count: usize,
    pub seed: u64,
}

impl CountingFilter {
    pub const DEFAULT_M: usize = 4096;
    pub const DEFAULT_K: usize = 3;

    pub fn new(m: usize, k: usize, seed: u64) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::Config(format!("counting filter needs m >= 1 and k >= 1, got m={m} k={k}")));
        }
        Ok(Self { counters: vec![0; m], hash_count: k, seed })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_M, Self::DEFAULT_K, seed).expect("defaults are valid")
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.iter().all(|&c| c == 0)
    }

    fn index(&self, item: &[u8], i: usize) -> usize {
        let mut h = FNV_OFFSET ^ crate::models::splitmix64(self.seed ^ crate::models::splitmix64(i as u64));
        for &b in item {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (crate::models::splitmix64(h) % self.counters.len() as u64) as usize
    }

    fn indices(&self, item: &[u8]) -> Vec<usize> {
        (0..self.hash_count).map(|i| self.index(item, i)).collect()
    }

    /// Increments one counter per hash. Nothing changes if any of them would
    /// overflow.
    pub fn insert(&mut self, item: &[u8]) -> Result<()> {
        let idx = self.indices(item);
        let mut bumps: BTreeMap<usize, u32> = BTreeMap::new();
        for &i in &idx {
            *bumps.entry(i).or_default() += 1;
        }
        for (&i, &b) in &bumps {
            if self.counters[i].checked_add(b).is_none() {
                return Err(Error::CounterSaturated { index: i });
            }
        }
        for (i, b) in bumps {
            self.counters[i] += b;
        }
        Ok(())
    }

    pub fn query(&self, item: &[u8]) -> u32 {
        self.indices(item).into_iter().map(|i| self.counters[i]).min().unwrap_or(0)
    }

    pub fn compatible(&self, other: &CountingFilter) -> bool {
        self.counters.len() == other.counters.len() && self.hash_count == other.hash_count && self.seed == other.seed
    }

    /// Element-wise sum of two filters built with the same parameters.
    pub fn merge(&self, other: &CountingFilter) -> Result<CountingFilter> {
        if !self.compatible(other) {
            return Err(Error::IncompatibleFilter(format!(
                "(m={}, k={}, seed={}) vs (m={}, k={}, seed={})",
                self.counters.len(),
                self.hash_count,
                self.seed,
                other.counters.len(),
                other.hash_count,
                other.seed
            )));
        }
        let mut counters = Vec::with_capacity(self.counters.len());
        for (i, (a, b)) in self.counters.iter().zip(&other.counters).enumerate() {
            counters.push(a.checked_add(*b).ok_or(Error::CounterSaturated { index: i })?);
        }
        Ok(CountingFilter { counters, hash_count: self.hash_count, seed: self.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MonitoringRecord {
        MonitoringRecord {
            timestamp_ms: 5,
            ue_id: Some("ue0".into()),
            gnb_id: Some("gnb0".into()),
            scenario: Some("static".into()),
            metrics: [("rsrp".to_string(), -80.0), ("wb_cqi".to_string(), 9.0)].into_iter().collect(),
        }
    }

    #[test]
    fn sharing_filter_cases() {
        let r = record();
        let mut p = PolicySet::default();
        assert_eq!(apply_sharing_filter(&p, &r), r);
        p.sharing_filters.insert("ue_id".into(), Sharing::Redact);
        let f = apply_sharing_filter(&p, &r);
        assert_eq!(f.ue_id, None);
        assert_eq!(f.metrics, r.metrics);
        for k in ["gnb_id", "scenario", "rsrp", "wb_cqi"] {
            p.sharing_filters.insert(k.into(), Sharing::Redact);
        }
        let all = apply_sharing_filter(&p, &r);
        assert_eq!(all, MonitoringRecord { timestamp_ms: 5, ue_id: None, gnb_id: None, scenario: None, metrics: BTreeMap::new() });
        assert_eq!(apply_sharing_filter(&p, &all), all);
    }

    #[test]
    fn policy_validation() {
        let gnbs = vec!["a".to_string(), "b".to_string()];
        let mut p = PolicySet { slice_priorities: vec!["x".into(), "y".into()], ..PolicySet::default() };
        p.handover_restrictions.push(("a".into(), "b".into()));
        p.validate(&gnbs).unwrap();
        assert!(!p.handover_allowed("b", "a"));
        p.handover_restrictions.push(("a".into(), "zz".into()));
        assert!(p.validate(&gnbs).is_err());
        p.handover_restrictions.pop();
        p.slice_priorities.push("x".into());
        assert!(p.validate(&gnbs).is_err());
    }

    #[test]
    fn filter_counts() {
        let mut f = CountingFilter::with_defaults(7);
        assert_eq!(f.query(b"y"), 0);
        f.insert(b"x").unwrap();
        assert!(f.query(b"x") >= 1);
        f.insert(b"x").unwrap();
        assert!(f.query(b"x") >= 2);
        let empty = CountingFilter::with_defaults(7);
        assert_eq!(f.merge(&empty).unwrap(), f);
        assert!(matches!(f.merge(&CountingFilter::with_defaults(8)), Err(Error::IncompatibleFilter(_))));
    }

    #[test]
    fn saturation_leaves_filter_untouched() {
        let mut f = CountingFilter::new(1, 1, 0).unwrap();
        f.counters[0] = u32::MAX;
        let before = f.clone();
        assert!(matches!(f.insert(b"a"), Err(Error::CounterSaturated { index: 0 })));
        assert_eq!(f, before);
    }
}
