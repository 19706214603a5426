//! Experience records and the fixed-capacity store that holds them.
//!
//! On disk a store is a directory with `manifest.json` and one
//! `<id>.exp.json` per entry. Every write goes to a temporary file first and
//! is renamed into place.

mod bootstrap;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::devices::{validate_schedule, ActionSchedule, DeviceSpecs};
use crate::harness::{reward, DispatchSummary, RewardConfig};
use crate::scenario::Forecast;

pub use bootstrap::{bootstrap_store, stratify};

pub const SCHEMA_VERSION: &str = "exp-v1";
const MANIFEST: &str = "manifest.json";
const REWARD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("need at least {needed} days to bootstrap, got {available}")]
    InsufficientDays { needed: usize, available: usize },
    #[error("experience {0} not found")]
    NotFound(ExperienceId),
    #[error("candidate reward {candidate} does not beat incumbent {incumbent}")]
    NotAnImprovement { candidate: f64, incumbent: f64 },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("store schema {found:?} is not supported (expected {SCHEMA_VERSION:?})")]
    VersionMismatch { found: String },
    #[error("invalid experience: {0}")]
    InvalidEntry(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Store-assigned identifier; larger ids are newer. Rendered as `e000042`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExperienceId(pub u64);

impl fmt::Display for ExperienceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{:06}", self.0)
    }
}

impl FromStr for ExperienceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('e')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(ExperienceId)
            .ok_or_else(|| format!("malformed experience id {s:?}"))
    }
}

impl Serialize for ExperienceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExperienceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Context, reasoning, final actions and dispatch results of one solved day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub id: ExperienceId,
    /// Day the experience was produced from.
    pub source_day: u32,
    pub context: Forecast,
    pub reasoning: String,
    pub actions: ActionSchedule,
    pub results: DispatchSummary,
    pub reward: f64,
}

impl Experience {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experience serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: String,
    capacity: usize,
    device_specs: DeviceSpecs,
    reward_config: RewardConfig,
    next_id: u64,
    ids: Vec<ExperienceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceStore {
    capacity: usize,
    entries: Vec<Experience>,
    device_specs: DeviceSpecs,
    reward_config: RewardConfig,
    next_id: u64,
}

impl ExperienceStore {
    /// Builds a full store, assigning fresh ids `1..=K` in entry order.
    pub fn new(
        device_specs: DeviceSpecs,
        reward_config: RewardConfig,
        entries: Vec<Experience>,
    ) -> Result<Self, StoreError> {
        if entries.is_empty() {
            return Err(StoreError::InvalidEntry("a store needs at least one experience".into()));
        }
        let mut store = Self {
            capacity: entries.len(),
            entries: Vec::with_capacity(entries.len()),
            device_specs,
            reward_config,
            next_id: 1,
        };
        for mut e in entries {
            store.check_entry(&e)?;
            e.id = store.mint();
            store.entries.push(e);
        }
        Ok(store)
    }

    fn mint(&mut self) -> ExperienceId {
        let id = ExperienceId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Actions must be valid and the cached reward must match its results.
    pub fn check_entry(&self, e: &Experience) -> Result<(), StoreError> {
        let verdict = validate_schedule(&e.actions, &self.device_specs);
        if !verdict.is_valid() {
            return Err(StoreError::InvalidEntry(format!("{}: {}", e.id, verdict.describe())));
        }
        let recomputed = reward(&e.results, &self.reward_config);
        if !((recomputed - e.reward).abs() <= REWARD_TOLERANCE) {
            return Err(StoreError::InvalidEntry(format!(
                "{}: stored reward {} but results give {recomputed}",
                e.id, e.reward
            )));
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Experience] {
        &self.entries
    }

    pub fn device_specs(&self) -> &DeviceSpecs {
        &self.device_specs
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_config
    }

    pub fn get(&self, id: ExperienceId) -> Option<&Experience> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn min_reward(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.reward)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.reward).collect()
    }

    /// Swaps `old_id` for `candidate`, which must strictly outperform it.
    /// The candidate takes the slot of the old entry under a newly minted id.
    pub fn replace(
        &mut self,
        old_id: ExperienceId,
        mut candidate: Experience,
    ) -> Result<ExperienceId, StoreError> {
        let slot = self
            .entries
            .iter()
            .position(|e| e.id == old_id)
            .ok_or(StoreError::NotFound(old_id))?;
        let incumbent = self.entries[slot].reward;
        if !(candidate.reward > incumbent) {
            return Err(StoreError::NotAnImprovement {
                candidate: candidate.reward,
                incumbent,
            });
        }
        self.check_entry(&candidate)?;
        candidate.id = self.mint();
        let id = candidate.id;
        self.entries[slot] = candidate;
        Ok(id)
    }

    /// As [`replace`](Self::replace), then writes the new entry and manifest
    /// to `dir` and removes the old entry's file.
    pub fn replace_persisted(
        &mut self,
        dir: &Path,
        old_id: ExperienceId,
        candidate: Experience,
    ) -> Result<ExperienceId, StoreError> {
        let id = self.replace(old_id, candidate)?;
        let entry = self.get(id).expect("just inserted");
        write_atomic(&entry_path(dir, id), entry.to_json().as_bytes())?;
        write_atomic(&dir.join(MANIFEST), self.manifest_json().as_bytes())?;
        let old = entry_path(dir, old_id);
        std::fs::remove_file(&old).map_err(|e| io_err(&old, e))?;
        Ok(id)
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            schema: SCHEMA_VERSION.to_string(),
            capacity: self.capacity,
            device_specs: self.device_specs.clone(),
            reward_config: self.reward_config.clone(),
            next_id: self.next_id,
            ids: self.entries.iter().map(|e| e.id).collect(),
        }
    }

    fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    /// SHA-256 over the manifest and every entry, for run provenance.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_json());
        for e in &self.entries {
            h.update(e.to_json());
        }
        hex(&h.finalize())
    }

    /// Writes the store into `dir`, creating it if needed and removing
    /// entry files no longer referenced.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for e in &self.entries {
            write_atomic(&entry_path(dir, e.id), e.to_json().as_bytes())?;
        }
        write_atomic(&dir.join(MANIFEST), self.manifest_json().as_bytes())?;
        let keep: HashSet<PathBuf> = self.entries.iter().map(|e| entry_path(dir, e.id)).collect();
        for item in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
            let path = item.map_err(|e| io_err(dir, e))?.path();
            let is_entry = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".exp.json"));
            if is_entry && !keep.contains(&path) {
                std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
        let schema = raw.get("schema").and_then(|s| s.as_str()).unwrap_or_default();
        if schema != SCHEMA_VERSION {
            return Err(StoreError::VersionMismatch {
                found: schema.to_string(),
            });
        }
        let manifest: Manifest = serde_json::from_value(raw)
            .map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
        if manifest.ids.len() != manifest.capacity || manifest.capacity == 0 {
            return Err(StoreError::Corrupt(format!(
                "manifest lists {} entries for capacity {}",
                manifest.ids.len(),
                manifest.capacity
            )));
        }
        let unique: HashSet<_> = manifest.ids.iter().collect();
        if unique.len() != manifest.ids.len() {
            return Err(StoreError::Corrupt("duplicate ids in manifest".into()));
        }
        if manifest.ids.iter().any(|id| id.0 >= manifest.next_id) {
            return Err(StoreError::Corrupt("an id is not below next_id".into()));
        }
        let mut store = Self {
            capacity: manifest.capacity,
            entries: Vec::with_capacity(manifest.capacity),
            device_specs: manifest.device_specs,
            reward_config: manifest.reward_config,
            next_id: manifest.next_id,
        };
        for id in manifest.ids {
            let path = entry_path(dir, id);
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let e: Experience = serde_json::from_str(&text)
                .map_err(|err| StoreError::Corrupt(format!("{}: {err}", path.display())))?;
            if e.id != id {
                return Err(StoreError::Corrupt(format!("{} holds id {}", path.display(), e.id)));
            }
            store
                .check_entry(&e)
                .map_err(|err| StoreError::Corrupt(err.to_string()))?;
            store.entries.push(e);
        }
        Ok(store)
    }
}

pub fn entry_path(dir: &Path, id: ExperienceId) -> PathBuf {
    dir.join(format!("{id}.exp.json"))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
