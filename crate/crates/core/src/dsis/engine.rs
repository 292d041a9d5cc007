use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::{
    build_plan, compute_mos, decoy_sensitivity, export_csv, validate_rating, AnnotatedRating, Clock, CohortSummary,
    DecoySensitivity, DsisError, PlanConfig, RaterProfile, RatingRecord, RatingStore, SessionPlan, StimulusPool,
};

/// URL prefix under which pool files are served.
pub const STIMULI_ROUTE: &str = "/stimuli";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub total: usize,
}

/// What a rater may see of a stimulus: no class, no decoy flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusView {
    pub stimulus_id: String,
    pub reference_url: String,
    pub processed_url: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rated: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextStimulus {
    pub session_id: String,
    /// `None` once every stimulus is rated.
    pub stimulus: Option<StimulusView>,
    pub progress: Progress,
}

pub struct DsisEngine {
    pool: StimulusPool,
    plan_config: PlanConfig,
    store: RatingStore,
    clock: Box<dyn Clock>,
    session_index: HashMap<String, usize>,
}

fn url_for(rel: &std::path::Path) -> String {
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    format!("{STIMULI_ROUTE}/{}", parts.join("/"))
}

impl DsisEngine {
    pub fn new(pool: StimulusPool, store: RatingStore, clock: Box<dyn Clock>, plan_config: PlanConfig) -> Self {
        let session_index = store.sessions().iter().enumerate().map(|(i, s)| (s.session_id.clone(), i)).collect();
        Self { pool, plan_config, store, clock, session_index }
    }

    pub fn pool(&self) -> &StimulusPool {
        &self.pool
    }

    pub fn store(&self) -> &RatingStore {
        &self.store
    }

    pub fn session(&self, id: &str) -> Result<&SessionPlan, DsisError> {
        self.session_index
            .get(id)
            .map(|&i| &self.store.sessions()[i])
            .ok_or_else(|| DsisError::UnknownSession(id.to_string()))
    }

    /// Plans and persists a new session with the next sequential id.
    pub fn create_session(&mut self, rater: RaterProfile, seed: u64) -> Result<CreatedSession, DsisError> {
        let id = format!("S{:04}", self.store.sessions().len() + 1);
        let plan = build_plan(&self.pool, rater, seed, id.clone(), &self.plan_config)?;
        let total = plan.stimuli.len();
        self.store.append_session(plan)?;
        self.session_index.insert(id.clone(), self.store.sessions().len() - 1);
        Ok(CreatedSession { session_id: id, total })
    }

    pub fn progress(&self, session_id: &str) -> Result<Progress, DsisError> {
        let plan = self.session(session_id)?;
        let rated = plan.stimuli.iter().filter(|s| self.store.is_rated(session_id, s)).count();
        Ok(Progress { rated, total: plan.stimuli.len() })
    }

    /// First unrated stimulus in presentation order.
    pub fn next_stimulus(&self, session_id: &str) -> Result<NextStimulus, DsisError> {
        let plan = self.session(session_id)?;
        let progress = self.progress(session_id)?;
        let stimulus = plan
            .stimuli
            .iter()
            .find(|s| !self.store.is_rated(session_id, s))
            .map(|id| {
                let s = self.pool.get(id).ok_or_else(|| DsisError::Pool(format!("stimulus {id} missing from pool")))?;
                Ok::<_, DsisError>(StimulusView {
                    stimulus_id: s.id.clone(),
                    reference_url: url_for(&s.reference),
                    processed_url: url_for(&s.processed),
                })
            })
            .transpose()?;
        Ok(NextStimulus { session_id: session_id.to_string(), stimulus, progress })
    }

    /// Validates and appends one rating. Stimuli may be rated in any order,
    /// each at most once.
    pub fn submit_rating(
        &mut self,
        session_id: &str,
        stimulus_id: &str,
        scale: i64,
        percent: i64,
    ) -> Result<RatingRecord, DsisError> {
        let plan = self.session(session_id)?;
        if !plan.contains(stimulus_id) {
            return Err(DsisError::UnknownStimulus { session: session_id.into(), stimulus: stimulus_id.into() });
        }
        let (scale, percent) = validate_rating(scale, percent)?;
        if self.store.is_rated(session_id, stimulus_id) {
            return Err(DsisError::Duplicate { session: session_id.into(), stimulus: stimulus_id.into() });
        }
        let record = RatingRecord {
            session_id: session_id.into(),
            stimulus_id: stimulus_id.into(),
            scale,
            percent,
            timestamp: self.clock.now_ms(),
        };
        self.store.append_rating(record.clone())?;
        Ok(record)
    }

    /// Joins every stored rating with its rater cohort and stimulus truth.
    /// Ratings whose session or stimulus is no longer known are skipped.
    pub fn annotated(&self) -> Vec<AnnotatedRating> {
        self.store
            .records()
            .iter()
            .filter_map(|r| {
                let plan = self.session(&r.session_id).ok()?;
                let s = self.pool.get(&r.stimulus_id)?;
                Some(AnnotatedRating {
                    cohort: plan.rater.cohort,
                    class: s.class,
                    is_decoy: s.is_decoy,
                    scale: r.scale,
                    percent: r.percent,
                })
            })
            .collect()
    }

    pub fn summary(&self) -> CohortSummary {
        compute_mos(&self.annotated())
    }

    pub fn decoy_sensitivity(&self) -> Result<Vec<DecoySensitivity>, DsisError> {
        decoy_sensitivity(&self.annotated())
    }

    pub fn export(&self, out: impl Write) -> Result<(), DsisError> {
        export_csv(self.store.records(), out)
    }
}

/// Engine behind one lock: writes are serialized and every read sees a
/// consistent snapshot.
#[derive(Clone)]
pub struct SharedEngine(Arc<Mutex<DsisEngine>>);

impl SharedEngine {
    pub fn new(engine: DsisEngine) -> Self {
        Self(Arc::new(Mutex::new(engine)))
    }

    pub fn lock(&self) -> MutexGuard<'_, DsisEngine> {
        // A panic mid-request cannot leave a half-written record: appends
        // touch memory only after the log write succeeds.
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsis::{Cohort, FixedStepClock, Stimulus};
    use crate::TumorClass;

    fn engine() -> DsisEngine {
        let mut v = Vec::new();
        for class in TumorClass::ALL {
            for i in 0..14 {
                let id = format!("{}{i:02}", &class.name()[..1]);
                v.push(Stimulus {
                    reference: format!("reference/{id}.pgm").into(),
                    processed: format!("processed/{id}.pgm").into(),
                    id,
                    class,
                    is_decoy: i < 3,
                });
            }
        }
        let pool = StimulusPool::new("/pool", v).unwrap();
        DsisEngine::new(pool, RatingStore::in_memory(), Box::new(FixedStepClock::new(1000, 1)), PlanConfig::default())
    }

    fn rater() -> RaterProfile {
        RaterProfile { rater_id: "anon-1".into(), cohort: Cohort::InternHouseOfficer }
    }

    #[test]
    fn full_session_walkthrough() {
        let mut e = engine();
        let created = e.create_session(rater(), 42).unwrap();
        assert_eq!(created, CreatedSession { session_id: "S0001".into(), total: 24 });
        for k in 0..24 {
            let next = e.next_stimulus("S0001").unwrap();
            assert_eq!(next.progress, Progress { rated: k, total: 24 });
            let s = next.stimulus.unwrap();
            assert!(s.reference_url.starts_with("/stimuli/reference/"));
            let rec = e.submit_rating("S0001", &s.stimulus_id, 4, 80).unwrap();
            assert_eq!(rec.timestamp, 1000 + k as u64);
        }
        let done = e.next_stimulus("S0001").unwrap();
        assert_eq!(done.stimulus, None);
        assert_eq!(done.progress.rated, 24);
        assert_eq!(e.summary().total, 24);
    }

    #[test]
    fn distinct_errors() {
        let mut e = engine();
        let id = e.create_session(rater(), 1).unwrap().session_id;
        let first = e.next_stimulus(&id).unwrap().stimulus.unwrap().stimulus_id;
        assert!(matches!(e.submit_rating("S9999", &first, 3, 50), Err(DsisError::UnknownSession(_))));
        assert!(matches!(e.submit_rating(&id, "zz", 3, 50), Err(DsisError::UnknownStimulus { .. })));
        assert!(matches!(e.submit_rating(&id, &first, 0, 50), Err(DsisError::ScaleRange(0))));
        assert!(matches!(e.submit_rating(&id, &first, 3, 101), Err(DsisError::PercentRange(101))));
        e.submit_rating(&id, &first, 3, 50).unwrap();
        assert!(matches!(e.submit_rating(&id, &first, 3, 50), Err(DsisError::Duplicate { .. })));
        assert_eq!(e.store().records().len(), 1);
    }

    #[test]
    fn views_hide_truth() {
        let mut e = engine();
        let id = e.create_session(rater(), 5).unwrap().session_id;
        let json = serde_json::to_string(&e.next_stimulus(&id).unwrap()).unwrap();
        for banned in ["decoy", "class", "glioma", "meningioma"] {
            assert!(!json.contains(banned), "{json}");
        }
    }
}
