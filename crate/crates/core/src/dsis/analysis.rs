use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Cohort, DsisError, RatingRecord};
use crate::metrics::mean_confidence_interval;
use crate::TumorClass;

/// A rating joined with what the rater was not shown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatedRating {
    pub cohort: Cohort,
    pub class: TumorClass,
    pub is_decoy: bool,
    pub scale: u8,
    pub percent: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub cohort: Cohort,
    pub class: TumorClass,
    pub count: usize,
    /// Mean opinion score on the 1-5 scale.
    pub mos: f64,
    pub mean_percent: f64,
    /// 95% half-widths; `None` below two ratings.
    pub mos_half_width: Option<f64>,
    pub percent_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CohortSummary {
    /// Ordered by cohort, then class; only non-empty groups.
    pub groups: Vec<GroupSummary>,
    pub total: usize,
}

/// Per cohort x class means over all given ratings, decoys included.
pub fn compute_mos(ratings: &[AnnotatedRating]) -> CohortSummary {
    let mut groups: BTreeMap<(Cohort, TumorClass), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in ratings {
        let g = groups.entry((r.cohort, r.class)).or_default();
        g.0.push(r.scale as f64);
        g.1.push(r.percent as f64);
    }
    let groups = groups
        .into_iter()
        .map(|((cohort, class), (scales, percents))| {
            let n = scales.len();
            GroupSummary {
                cohort,
                class,
                count: n,
                mos: scales.iter().sum::<f64>() / n as f64,
                mean_percent: percents.iter().sum::<f64>() / n as f64,
                mos_half_width: mean_confidence_interval(&scales).ok().map(|c| c.half_width),
                percent_half_width: mean_confidence_interval(&percents).ok().map(|c| c.half_width),
            }
        })
        .collect();
    CohortSummary { groups, total: ratings.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoySensitivity {
    pub cohort: Cohort,
    pub decoy_count: usize,
    pub genuine_count: usize,
    /// `None` when the cohort rated no stimulus of that kind.
    pub decoy_mean: Option<f64>,
    pub genuine_mean: Option<f64>,
    /// `genuine_mean - decoy_mean`; near zero means the cohort did not tell
    /// wrong segmentations from real ones.
    pub difference: Option<f64>,
}

pub fn decoy_sensitivity(ratings: &[AnnotatedRating]) -> Result<Vec<DecoySensitivity>, DsisError> {
    if !ratings.iter().any(|r| r.is_decoy) {
        return Err(DsisError::NoDecoys);
    }
    let mut out = Vec::new();
    for cohort in Cohort::ALL {
        let (mut ds, mut dn, mut gs, mut gn) = (0.0, 0usize, 0.0, 0usize);
        for r in ratings.iter().filter(|r| r.cohort == cohort) {
            if r.is_decoy {
                ds += r.scale as f64;
                dn += 1;
            } else {
                gs += r.scale as f64;
                gn += 1;
            }
        }
        if dn + gn == 0 {
            continue;
        }
        let decoy_mean = (dn > 0).then(|| ds / dn as f64);
        let genuine_mean = (gn > 0).then(|| gs / gn as f64);
        let difference = decoy_mean.zip(genuine_mean).map(|(d, g)| g - d);
        out.push(DecoySensitivity { cohort, decoy_count: dn, genuine_count: gn, decoy_mean, genuine_mean, difference });
    }
    Ok(out)
}

pub const RATINGS_CSV_HEADER: &str = "session_id,stimulus_id,scale,percent,timestamp";

/// Ratings sorted by `(session_id, stimulus_id)`.
pub fn export_csv(records: &[RatingRecord], out: impl Write) -> Result<(), DsisError> {
    let mut sorted: Vec<&RatingRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.session_id, &a.stimulus_id).cmp(&(&b.session_id, &b.stimulus_id)));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RATINGS_CSV_HEADER.split(','))?;
    for r in sorted {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_csv(input: impl Read) -> Result<Vec<RatingRecord>, DsisError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RATINGS_CSV_HEADER {
        return Err(DsisError::Corrupt { file: "ratings csv".into(), line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: RatingRecord = row?;
        super::validate_rating(rec.scale as i64, rec.percent as i64)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn export_summary_csv(summary: &CohortSummary, out: impl Write) -> Result<(), DsisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cohort", "class", "count", "mos", "mean_percent", "mos_half_width", "percent_half_width"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for g in &summary.groups {
        w.write_record([
            g.cohort.name().to_string(),
            g.class.name().to_string(),
            g.count.to_string(),
            g.mos.to_string(),
            g.mean_percent.to_string(),
            opt(g.mos_half_width),
            opt(g.percent_half_width),
        ])?;
    }
    w.flush()?;
    Ok(())
}
