use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use super::{DsisError, Stimulus};
use crate::TumorClass;

/// Pool listing inside a stimulus directory.
pub const STIMULI_FILE: &str = "stimuli.csv";

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct PoolRow {
    id: String,
    reference: PathBuf,
    processed: PathBuf,
    class: String,
    is_decoy: bool,
}

/// Stimuli available for sessions, keyed by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StimulusPool {
    pub root: PathBuf,
    stimuli: BTreeMap<String, Stimulus>,
}

impl StimulusPool {
    pub fn new(root: impl Into<PathBuf>, stimuli: Vec<Stimulus>) -> Result<Self, DsisError> {
        let mut map = BTreeMap::new();
        for s in stimuli {
            if s.id.is_empty() {
                return Err(DsisError::Pool("empty stimulus id".into()));
            }
            if let Some(prev) = map.insert(s.id.clone(), s) {
                return Err(DsisError::Pool(format!("duplicate stimulus id {}", prev.id)));
            }
        }
        Ok(Self { root: root.into(), stimuli: map })
    }

    pub fn get(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.get(id)
    }

    /// Stimuli in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Stimulus> {
        self.stimuli.values()
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn of_class(&self, class: TumorClass, decoy: bool) -> Vec<&Stimulus> {
        self.iter().filter(|s| s.class == class && s.is_decoy == decoy).collect()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn save(&self) -> Result<(), DsisError> {
        let mut w = csv::Writer::from_path(self.root.join(STIMULI_FILE))?;
        for s in self.iter() {
            w.serialize(PoolRow {
                id: s.id.clone(),
                reference: s.reference.clone(),
                processed: s.processed.clone(),
                class: s.class.name().to_string(),
                is_decoy: s.is_decoy,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `stimuli.csv` from `root`; every referenced image must exist.
    pub fn load(root: impl AsRef<Path>) -> Result<Self, DsisError> {
        let root = root.as_ref();
        let mut r = csv::Reader::from_path(root.join(STIMULI_FILE))?;
        let mut stimuli = Vec::new();
        let mut seen = HashSet::new();
        for row in r.deserialize() {
            let row: PoolRow = row?;
            let class = TumorClass::parse(&row.class)
                .ok_or_else(|| DsisError::Pool(format!("{}: unknown class {:?}", row.id, row.class)))?;
            for p in [&row.reference, &row.processed] {
                if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(DsisError::Pool(format!("{}: path {} escapes the pool", row.id, p.display())));
                }
                if !root.join(p).is_file() {
                    return Err(DsisError::Pool(format!("{}: missing {}", row.id, p.display())));
                }
            }
            if !seen.insert(row.id.clone()) {
                return Err(DsisError::Pool(format!("duplicate stimulus id {}", row.id)));
            }
            stimuli.push(Stimulus {
                id: row.id,
                reference: row.reference,
                processed: row.processed,
                class,
                is_decoy: row.is_decoy,
            });
        }
        Self::new(root, stimuli)
    }
}
