//! Cohorts with time-dependent exposure levels, strata, and at-risk intervals.
//!
//! Covariate and stratum paths are piecewise constant and left continuous: the
//! value at time `t` is the value set by the last change strictly before `t`.
//! A subject is at risk at `t` when some risk interval `(start, end]` contains
//! it; in particular a failing subject is still at risk at its own failure
//! time.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("level scores must start at 0, be strictly increasing, and have at least two entries")]
    InvalidLevelSet,
    #[error("time horizon must be positive")]
    InvalidTau,
    #[error("subject {0}: records out of time order")]
    RecordsOutOfOrder(String),
    #[error("subject {0}: enter at t={1} while already at risk")]
    OverlappingRiskIntervals(String, f64),
    #[error("subject {0}: {1} at t={2} while not at risk")]
    NotAtRisk(String, &'static str, f64),
    #[error("subject {0}: re-entry after failure")]
    ReentryAfterFailure(String),
    #[error("subject {0}: unknown level label {1:?}")]
    UnknownLevel(String, String),
    #[error("subject {0}: event time {1} outside (0, tau]")]
    TimeOutOfRange(String, f64),
    #[error("query time {0} outside (0, tau]")]
    QueryOutOfRange(f64),
    #[error("subject {0}: not at risk at t={1}")]
    SubjectNotAtRisk(String, f64),
    #[error("unknown subject id {0:?}")]
    UnknownSubject(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("record {0}: bad event kind {1:?}")]
    BadEventKind(usize, String),
    #[error("record {0}: bad time {1:?}")]
    BadTime(usize, String),
}

/// Ordered exposure scores `alpha_0 < alpha_1 < ... < alpha_eta`, `alpha_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    alphas: Vec<f64>,
}

impl LevelSet {
    pub fn new(alphas: Vec<f64>) -> Result<Self, CohortError> {
        if alphas.len() < 2 || alphas[0] != 0.0 {
            return Err(CohortError::InvalidLevelSet);
        }
        if alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CohortError::InvalidLevelSet);
        }
        Ok(Self { alphas })
    }

    /// The classical dichotomous-exposure scores (0, 1).
    pub fn classical() -> Self {
        Self { alphas: vec![0.0, 1.0] }
    }

    /// Number of levels, `eta + 1`.
    pub fn count(&self) -> usize {
        self.alphas.len()
    }

    pub fn eta(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Index of a score, matched exactly.
    pub fn index_of(&self, score: f64) -> Option<usize> {
        self.alphas.iter().position(|&a| a == score)
    }
}

/// One parsed line of the event-record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub subject_id: String,
    pub time: f64,
    pub event: EventKind,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Enter,
    Exit,
    Fail,
    Cov,
    Stratum,
}

impl EventKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "enter" => Some(Self::Enter),
            "exit" => Some(Self::Exit),
            "fail" => Some(Self::Fail),
            "cov" => Some(Self::Cov),
            "stratum" => Some(Self::Stratum),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Enter => "enter",
            Self::Exit => "exit",
            Self::Fail => "fail",
            Self::Cov => "cov",
            Self::Stratum => "stratum",
        }
    }
}

/// A path value change; applies for times strictly after `time`.
#[derive(Debug, Clone, Copy)]
struct PathStep {
    time: f64,
    value: usize,
}

/// Piecewise-constant, left-continuous index path.
#[derive(Debug, Clone)]
pub struct StepPath {
    steps: Vec<PathStep>,
}

impl StepPath {
    fn new(initial: usize) -> Self {
        Self { steps: vec![PathStep { time: f64::NEG_INFINITY, value: initial }] }
    }

    fn push(&mut self, time: f64, value: usize) {
        self.steps.push(PathStep { time, value });
    }

    /// Value at `t`: last change strictly before `t`.
    pub fn value_at(&self, t: f64) -> usize {
        let pos = self.steps.partition_point(|s| s.time < t);
        self.steps[pos - 1].value
    }
}

/// A half-open at-risk interval; membership at `t` means `start < t <= end`.
#[derive(Debug, Clone, Copy)]
pub struct RiskInterval {
    pub start: f64,
    pub end: f64,
    pub ends_in_failure: bool,
}

#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub risk_intervals: Vec<RiskInterval>,
    covariate_path: StepPath,
    stratum_path: StepPath,
}

impl Subject {
    pub fn at_risk(&self, t: f64) -> bool {
        self.risk_intervals.iter().any(|iv| iv.start < t && t <= iv.end)
    }

    pub fn level_at(&self, t: f64) -> usize {
        self.covariate_path.value_at(t)
    }

    pub fn stratum_at(&self, t: f64) -> usize {
        self.stratum_path.value_at(t)
    }
}

/// One observed failure, ordered by `(time, subject id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub time: f64,
    pub case_id: String,
    pub case_level: usize,
    /// Index of the case in `Cohort::subjects`.
    pub case_index: usize,
    pub case_stratum: usize,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    subjects: Vec<Subject>,
    id_index: HashMap<String, usize>,
    tau: f64,
    levels: LevelSet,
    strata: Vec<String>,
    failures: Vec<FailureEvent>,
}

/// Risk-set snapshot at a failure time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSet {
    pub time: f64,
    /// Indices into `Cohort::subjects`.
    pub members: Vec<usize>,
    pub n_t: usize,
    /// `n_k(t)` per level.
    pub level_counts: Vec<usize>,
    /// `c_l(t)` per stratum.
    pub stratum_counts: Vec<usize>,
    /// `n_{k,l}(t)` indexed `[level][stratum]`.
    pub cross_counts: Vec<Vec<usize>>,
    /// Level of each member at `time`, aligned with `members`.
    pub member_levels: Vec<usize>,
    /// Stratum of each member at `time`, aligned with `members`.
    pub member_strata: Vec<usize>,
}

impl Cohort {
    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn levels(&self) -> &LevelSet {
        &self.levels
    }

    pub fn strata(&self) -> &[String] {
        &self.strata
    }

    pub fn failures(&self) -> &[FailureEvent] {
        &self.failures
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Risk set at time `t`, including any subject failing exactly at `t`.
    pub fn risk_set(&self, t: f64) -> Result<RiskSet, CohortError> {
        if !(t > 0.0 && t <= self.tau) {
            return Err(CohortError::QueryOutOfRange(t));
        }
        Ok(self.risk_set_excluding(t, &[]))
    }

    /// Risk set at `t` with some subject indices removed. Used when
    /// processing tied failures sequentially: earlier-processed tied cases
    /// leave the risk set of later ones.
    pub(crate) fn risk_set_excluding(&self, t: f64, exclude: &[usize]) -> RiskSet {
        let n_levels = self.levels.count();
        let n_strata = self.strata.len();
        let mut members = Vec::new();
        let mut member_levels = Vec::new();
        let mut member_strata = Vec::new();
        let mut level_counts = vec![0usize; n_levels];
        let mut stratum_counts = vec![0usize; n_strata];
        let mut cross_counts = vec![vec![0usize; n_strata]; n_levels];
        for (idx, s) in self.subjects.iter().enumerate() {
            if !s.at_risk(t) || exclude.contains(&idx) {
                continue;
            }
            let k = s.level_at(t);
            let l = s.stratum_at(t);
            members.push(idx);
            member_levels.push(k);
            member_strata.push(l);
            level_counts[k] += 1;
            stratum_counts[l] += 1;
            cross_counts[k][l] += 1;
        }
        RiskSet {
            time: t,
            n_t: members.len(),
            members,
            level_counts,
            stratum_counts,
            cross_counts,
            member_levels,
            member_strata,
        }
    }

    /// Level index of a subject at time `t` (left-continuous lookup).
    pub fn level_index(&self, subject_id: &str, t: f64) -> Result<usize, CohortError> {
        let idx = self
            .subject_index(subject_id)
            .ok_or_else(|| CohortError::UnknownSubject(subject_id.to_string()))?;
        let s = &self.subjects[idx];
        if !s.at_risk(t) {
            return Err(CohortError::SubjectNotAtRisk(subject_id.to_string(), t));
        }
        Ok(s.level_at(t))
    }
}

struct SubjectBuilder {
    id: String,
    intervals: Vec<RiskInterval>,
    open_start: Option<f64>,
    failed: bool,
    cov_steps: Vec<(f64, usize)>,
    stratum_steps: Vec<(f64, String)>,
    last_time: f64,
    failure_time: Option<f64>,
}

/// Build a validated cohort from event records.
///
/// Records must be in ascending time order within each subject. Subjects start
/// at level 0 and stratum `"0"` unless `cov`/`stratum` records say otherwise;
/// a record at the entry time sets the value from entry on. The stratum label
/// set is the sorted set of labels seen. Returns the cohort together with the
/// failure events ordered by `(time, subject id)`.
pub fn build_cohort(
    records: &[EventRecord],
    levels: LevelSet,
    tau: f64,
) -> Result<(Cohort, Vec<FailureEvent>), CohortError> {
    if !(tau > 0.0) {
        return Err(CohortError::InvalidTau);
    }

    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, SubjectBuilder> = HashMap::new();
    for rec in records {
        let b = builders.entry(rec.subject_id.clone()).or_insert_with(|| {
            order.push(rec.subject_id.clone());
            SubjectBuilder {
                id: rec.subject_id.clone(),
                intervals: Vec::new(),
                open_start: None,
                failed: false,
                cov_steps: Vec::new(),
                stratum_steps: Vec::new(),
                last_time: f64::NEG_INFINITY,
                failure_time: None,
            }
        });
        if rec.time < b.last_time {
            return Err(CohortError::RecordsOutOfOrder(b.id.clone()));
        }
        b.last_time = rec.time;
        match rec.event {
            EventKind::Enter => {
                if b.failed {
                    return Err(CohortError::ReentryAfterFailure(b.id.clone()));
                }
                if b.open_start.is_some() {
                    return Err(CohortError::OverlappingRiskIntervals(b.id.clone(), rec.time));
                }
                if let Some(prev) = b.intervals.last() {
                    if rec.time < prev.end {
                        return Err(CohortError::OverlappingRiskIntervals(b.id.clone(), rec.time));
                    }
                }
                b.open_start = Some(rec.time);
            }
            EventKind::Exit | EventKind::Fail => {
                let start = b.open_start.take().ok_or(CohortError::NotAtRisk(
                    b.id.clone(),
                    rec.event.as_str(),
                    rec.time,
                ))?;
                // a failure at the interval start would contradict (start, end] membership
                if rec.event == EventKind::Fail && rec.time <= start {
                    return Err(CohortError::NotAtRisk(b.id.clone(), "fail", rec.time));
                }
                if rec.event == EventKind::Fail && !(rec.time > 0.0 && rec.time <= tau) {
                    return Err(CohortError::TimeOutOfRange(b.id.clone(), rec.time));
                }
                let fails = rec.event == EventKind::Fail;
                b.intervals.push(RiskInterval { start, end: rec.time, ends_in_failure: fails });
                if fails {
                    b.failed = true;
                    b.failure_time = Some(rec.time);
                }
            }
            EventKind::Cov => {
                let score: f64 = rec
                    .value
                    .trim()
                    .parse()
                    .map_err(|_| CohortError::UnknownLevel(b.id.clone(), rec.value.clone()))?;
                let k = levels
                    .index_of(score)
                    .ok_or_else(|| CohortError::UnknownLevel(b.id.clone(), rec.value.clone()))?;
                b.cov_steps.push((rec.time, k));
            }
            EventKind::Stratum => {
                b.stratum_steps.push((rec.time, rec.value.trim().to_string()));
            }
        }
    }

    // assemble the stratum label set; subjects without stratum records get "0"
    let mut labels: Vec<String> = builders
        .values()
        .flat_map(|b| b.stratum_steps.iter().map(|(_, l)| l.clone()))
        .collect();
    if builders.values().any(|b| b.stratum_steps.is_empty()) || labels.is_empty() {
        labels.push("0".to_string());
    }
    labels.sort();
    labels.dedup();
    let label_index: HashMap<String, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let default_stratum = label_index.get("0").copied().unwrap_or(0);

    let mut subjects = Vec::with_capacity(order.len());
    let mut id_index = HashMap::new();
    let mut failures = Vec::new();
    for id in &order {
        let b = builders.remove(id).unwrap();
        let mut intervals = b.intervals;
        if let Some(start) = b.open_start {
            // still at risk at the horizon: administrative censoring at tau
            intervals.push(RiskInterval { start, end: tau, ends_in_failure: false });
        }
        let mut cov = StepPath::new(0);
        for (t, k) in &b.cov_steps {
            // a value recorded at the entry boundary applies from entry on
            cov.push(if *t <= 0.0 { f64::NEG_INFINITY } else { *t }, *k);
        }
        let mut strat = StepPath::new(default_stratum);
        for (t, l) in &b.stratum_steps {
            strat.push(if *t <= 0.0 { f64::NEG_INFINITY } else { *t }, label_index[l]);
        }
        let subject = Subject {
            id: b.id.clone(),
            risk_intervals: intervals,
            covariate_path: cov,
            stratum_path: strat,
        };
        if let Some(ft) = b.failure_time {
            failures.push(FailureEvent {
                time: ft,
                case_id: b.id.clone(),
                case_level: subject.level_at(ft),
                case_index: subjects.len(),
                case_stratum: subject.stratum_at(ft),
            });
        }
        id_index.insert(b.id, subjects.len());
        subjects.push(subject);
    }

    failures.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then_with(|| a.case_id.cmp(&b.case_id))
    });

    let cohort = Cohort { subjects, id_index, tau, levels, strata: labels, failures: failures.clone() };
    Ok((cohort, failures))
}

/// Read event records from CSV with header `subject_id,time,event,value`.
pub fn read_event_csv<R: Read>(reader: R) -> Result<Vec<EventRecord>, CohortError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let time: f64 = row
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| CohortError::BadTime(i, row.get(1).unwrap_or("").to_string()))?;
        let kind = EventKind::parse(row.get(2).unwrap_or("").trim())
            .ok_or_else(|| CohortError::BadEventKind(i, row.get(2).unwrap_or("").to_string()))?;
        out.push(EventRecord {
            subject_id: row.get(0).unwrap_or("").trim().to_string(),
            time,
            event: kind,
            value: row.get(3).unwrap_or("").trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read_event_csv_path(path: &Path) -> Result<Vec<EventRecord>, CohortError> {
    let file = std::fs::File::open(path).map_err(|e| {
        CohortError::Csv(csv::Error::from(e))
    })?;
    read_event_csv(file)
}

/// Write event records as CSV.
pub fn write_event_csv<W: Write>(writer: W, records: &[EventRecord]) -> Result<(), CohortError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "time", "event", "value"])?;
    for r in records {
        let mut t = String::new();
        fmt_f64(&mut t, r.time);
        w.write_record([r.subject_id.as_str(), t.as_str(), r.event.as_str(), r.value.as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Shortest round-trip float formatting shared by the CSV writers.
pub(crate) fn fmt_f64(buf: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(buf, "{}", v);
}
