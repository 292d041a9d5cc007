//! Double-stimulus impairment-scale rating sessions.
//!
//! A rater sees a reference slice next to a processed one (the segmentation
//! overlay) and grades it on the five-level impairment scale plus a 0-100
//! percentage. Some processed images are decoys: deliberately wrong
//! segmentations that keep raters honest. Raters never see class labels or
//! decoy flags.

mod analysis;
mod engine;
mod plan;
mod pool;
mod store;

pub use analysis::{
    compute_mos, decoy_sensitivity, export_csv, export_summary_csv, import_csv, AnnotatedRating, CohortSummary,
    DecoySensitivity, GroupSummary, RATINGS_CSV_HEADER,
};
pub use engine::{CreatedSession, DsisEngine, NextStimulus, Progress, SharedEngine, StimulusView};
pub use plan::{build_plan, PlanConfig, SessionPlan, DEFAULT_DECOYS_PER_CLASS, STIMULI_PER_CLASS};
pub use pool::{StimulusPool, STIMULI_FILE};
pub use store::{Clock, FixedStepClock, RatingStore, SystemClock, RATINGS_FILE, SESSIONS_FILE};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TumorClass;

/// Five-level impairment scale, worst to best.
pub const SCALE_LABELS: [&str; 5] = [
    "Very fallacious",
    "Fallacious",
    "Slightly fallacious",
    "Localized but not segmented accurately",
    "Accurately localized and segmented",
];
pub const SCALE_MIN: i64 = 1;
pub const SCALE_MAX: i64 = 5;
pub const PERCENT_MAX: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Neurologist,
    MedicalOfficer,
    InternHouseOfficer,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Neurologist, Cohort::MedicalOfficer, Cohort::InternHouseOfficer];

    pub fn name(self) -> &'static str {
        match self {
            Cohort::Neurologist => "neurologist",
            Cohort::MedicalOfficer => "medical_officer",
            Cohort::InternHouseOfficer => "intern_house_officer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterProfile {
    /// Anonymized identifier; never a name.
    pub rater_id: String,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    /// Path of the unprocessed slice, relative to the pool directory.
    pub reference: PathBuf,
    /// Path of the overlay, relative to the pool directory.
    pub processed: PathBuf,
    pub class: TumorClass,
    pub is_decoy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub stimulus_id: String,
    pub scale: u8,
    pub percent: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Error)]
pub enum DsisError {
    #[error("pool has {decoys} decoy and {genuine} genuine {class} stimuli; need {need_decoys} decoy and {need_genuine} genuine")]
    InsufficientPool { class: TumorClass, decoys: usize, genuine: usize, need_decoys: usize, need_genuine: usize },
    #[error("invalid plan config: {0}")]
    PlanConfig(String),
    #[error("scale {0} outside 1..=5")]
    ScaleRange(i64),
    #[error("percent {0} outside 0..=100")]
    PercentRange(i64),
    #[error("stimulus {stimulus} already rated in session {session}")]
    Duplicate { session: String, stimulus: String },
    #[error("stimulus {stimulus} is not part of session {session}")]
    UnknownStimulus { session: String, stimulus: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no decoy ratings present")]
    NoDecoys,
    #[error("stimulus pool: {0}")]
    Pool(String),
    #[error("{file}:{line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl DsisError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DsisError::InsufficientPool { .. } => "insufficient_pool",
            DsisError::PlanConfig(_) => "plan_config",
            DsisError::ScaleRange(_) => "scale_out_of_range",
            DsisError::PercentRange(_) => "percent_out_of_range",
            DsisError::Duplicate { .. } => "duplicate_rating",
            DsisError::UnknownStimulus { .. } => "unknown_stimulus",
            DsisError::UnknownSession(_) => "unknown_session",
            DsisError::NoDecoys => "no_decoys",
            DsisError::Pool(_) => "pool",
            DsisError::Corrupt { .. } => "corrupt_store",
            DsisError::Csv(_) => "csv",
            DsisError::Io(_) => "io",
        }
    }
}

/// Range checks for one rating.
pub fn validate_rating(scale: i64, percent: i64) -> Result<(u8, u8), DsisError> {
    if !(SCALE_MIN..=SCALE_MAX).contains(&scale) {
        return Err(DsisError::ScaleRange(scale));
    }
    if !(0..=PERCENT_MAX).contains(&percent) {
        return Err(DsisError::PercentRange(percent));
    }
    Ok((scale as u8, percent as u8))
}
