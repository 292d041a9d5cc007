use serde::{Deserialize, Serialize};

use super::{DsisError, RaterProfile, StimulusPool};
use crate::rng::SplitMix64;
use crate::TumorClass;

pub const STIMULI_PER_CLASS: usize = 12;
pub const DEFAULT_DECOYS_PER_CLASS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanConfig {
    pub per_class: usize,
    /// Decoys among each class's stimuli; at least 1.
    pub decoys_per_class: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { per_class: STIMULI_PER_CLASS, decoys_per_class: DEFAULT_DECOYS_PER_CLASS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    /// Presentation order.
    pub stimuli: Vec<String>,
    pub rater: RaterProfile,
    pub seed: u64,
}

impl SessionPlan {
    pub fn contains(&self, stimulus_id: &str) -> bool {
        self.stimuli.iter().any(|s| s == stimulus_id)
    }
}

/// Selects `per_class` stimuli of each class, `decoys_per_class` of them
/// decoys, and shuffles the union. Deterministic in `(pool, seed)`.
pub fn build_plan(
    pool: &StimulusPool,
    rater: RaterProfile,
    seed: u64,
    session_id: impl Into<String>,
    cfg: &PlanConfig,
) -> Result<SessionPlan, DsisError> {
    if cfg.decoys_per_class == 0 || cfg.decoys_per_class > cfg.per_class {
        return Err(DsisError::PlanConfig(format!(
            "decoys_per_class must be in 1..={}, got {}",
            cfg.per_class, cfg.decoys_per_class
        )));
    }
    let need_genuine = cfg.per_class - cfg.decoys_per_class;
    let mut rng = SplitMix64::new(seed);
    let mut chosen = Vec::with_capacity(2 * cfg.per_class);
    for class in TumorClass::ALL {
        let mut decoys = pool.of_class(class, true);
        let mut genuine = pool.of_class(class, false);
        if decoys.len() < cfg.decoys_per_class || genuine.len() < need_genuine {
            return Err(DsisError::InsufficientPool {
                class,
                decoys: decoys.len(),
                genuine: genuine.len(),
                need_decoys: cfg.decoys_per_class,
                need_genuine,
            });
        }
        rng.shuffle(&mut decoys);
        rng.shuffle(&mut genuine);
        chosen.extend(decoys[..cfg.decoys_per_class].iter().map(|s| s.id.clone()));
        chosen.extend(genuine[..need_genuine].iter().map(|s| s.id.clone()));
    }
    rng.shuffle(&mut chosen);
    Ok(SessionPlan { session_id: session_id.into(), stimuli: chosen, rater, seed })
}
