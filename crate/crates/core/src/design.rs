//! Risk-set sampling designs and the sampled failures they produce.
//!
//! Four designs are supported: full cohort, simple random sampling of `m-1`
//! controls, matching (controls from the case's stratum), and counter-matching
//! (a fixed number drawn from every stratum). Each sampled member carries the
//! design weight `w_i(t, r)` satisfying `pi_t(r|i) = pi_t(r) w_i(t, r)`; the
//! member weights of a set always sum to `n(t)`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{fmt_f64, Cohort, FailureEvent, RiskSet};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("simple random sampling needs m >= 2, got {0}")]
    BadSrsSize(usize),
    #[error("per-stratum sizes must all be >= 1")]
    BadStratumSizes,
    #[error("design needs {expected} per-stratum sizes, got {got}")]
    StratumCountMismatch { expected: usize, got: usize },
    #[error("case {case} not in the risk set at t={time}")]
    CaseNotAtRisk { case: String, time: f64 },
    #[error("risk set at t={time} has {available} members in stratum {stratum}, need {needed}")]
    DeficientStratum { time: f64, stratum: usize, available: usize, needed: usize },
    #[error("risk set at t={time} has {available} members, need {needed}")]
    DeficientRiskSet { time: f64, available: usize, needed: usize },
    #[error("sampled set at t={0} is malformed: {1}")]
    MalformedSample(f64, &'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sampled csv row {0}: {1}")]
    BadRow(usize, String),
}

/// Which sampling scheme selects the controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    FullCohort,
    Srs { m: usize },
    /// `m[l]` is the sampled-set size within stratum `l`.
    Matching { m: Vec<usize> },
    /// `m[l]` members are sampled from every stratum `l`.
    CounterMatching { m: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// When a stratum (or the risk set) cannot supply the requested number of
    /// controls, shrink the request to what is available instead of failing.
    /// This departs from the sampling model the weights are derived under.
    #[serde(default)]
    pub clamp: bool,
}

impl DesignSpec {
    pub fn new(kind: DesignKind) -> Result<Self, DesignError> {
        match &kind {
            DesignKind::Srs { m } if *m < 2 => return Err(DesignError::BadSrsSize(*m)),
            DesignKind::Matching { m } | DesignKind::CounterMatching { m }
                if (m.is_empty() || m.contains(&0)) => {
                    return Err(DesignError::BadStratumSizes);
                }
            _ => {}
        }
        Ok(Self { kind, clamp: false })
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    fn stratum_sizes(&self) -> Option<&[usize]> {
        match &self.kind {
            DesignKind::Matching { m } | DesignKind::CounterMatching { m } => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMember {
    pub id: String,
    pub level: usize,
    pub stratum: String,
    pub weight: f64,
}

/// One failure together with its sampled risk set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFailure {
    pub time: f64,
    pub case_id: String,
    pub case_level: usize,
    pub n_t: usize,
    pub members: Vec<SampledMember>,
}

impl SampledFailure {
    pub fn validate(&self) -> Result<(), DesignError> {
        if !self.members.iter().any(|m| m.id == self.case_id) {
            return Err(DesignError::MalformedSample(self.time, "case not among members"));
        }
        if self.members.iter().any(|m| !(m.weight > 0.0)) {
            return Err(DesignError::MalformedSample(self.time, "non-positive weight"));
        }
        Ok(())
    }

    /// Per-level weight sums over the sampled set.
    pub fn level_weight_sums(&self, n_levels: usize) -> Vec<f64> {
        let mut sums = vec![0.0; n_levels];
        for m in &self.members {
            sums[m.level] += m.weight;
        }
        sums
    }
}

/// Sufficient statistics of one sampled failure for estimation and baseline
/// computations: everything downstream depends on the sampled set only
/// through the per-level weight sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureStats {
    pub time: f64,
    pub case_level: usize,
    pub case_stratum: usize,
    pub n_t: f64,
    pub level_weight_sums: Vec<f64>,
}

impl FailureStats {
    pub fn from_sampled(sf: &SampledFailure, n_levels: usize) -> Self {
        Self {
            time: sf.time,
            case_level: sf.case_level,
            case_stratum: 0,
            n_t: sf.n_t as f64,
            level_weight_sums: sf.level_weight_sums(n_levels),
        }
    }

    /// Increment vector `s_k = n(t)^{-1} sum of weights at level k`.
    pub fn s_vector(&self) -> Vec<f64> {
        self.level_weight_sums.iter().map(|w| w / self.n_t).collect()
    }
}

/// Positions (into `risk_set.members`) of the drawn set plus their weights.
struct Draw {
    positions: Vec<usize>,
    weights: Vec<f64>,
}

fn case_position(risk_set: &RiskSet, failure: &FailureEvent) -> Result<usize, DesignError> {
    risk_set
        .members
        .iter()
        .position(|&idx| idx == failure.case_index)
        .ok_or_else(|| DesignError::CaseNotAtRisk { case: failure.case_id.clone(), time: failure.time })
}

/// Partial Fisher-Yates draw of `k` distinct entries from `pool`.
fn draw_k<R: Rng>(pool: &mut Vec<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(j));
    }
    out
}

fn draw_for_design<R: Rng>(
    design: &DesignSpec,
    risk_set: &RiskSet,
    failure: &FailureEvent,
    rng: &mut R,
) -> Result<Draw, DesignError> {
    let case_pos = case_position(risk_set, failure)?;
    let n_t = risk_set.n_t;
    match &design.kind {
        DesignKind::FullCohort => Ok(Draw {
            positions: (0..n_t).collect(),
            weights: vec![1.0; n_t],
        }),
        DesignKind::Srs { m } => {
            let m_eff = if n_t >= *m {
                *m
            } else if design.clamp {
                n_t
            } else {
                return Err(DesignError::DeficientRiskSet { time: failure.time, available: n_t, needed: *m });
            };
            let mut pool: Vec<usize> = (0..n_t).filter(|&p| p != case_pos).collect();
            let mut positions = vec![case_pos];
            positions.extend(draw_k(&mut pool, m_eff - 1, rng));
            let w = n_t as f64 / m_eff as f64;
            Ok(Draw { weights: vec![w; positions.len()], positions })
        }
        DesignKind::Matching { m } => {
            check_stratum_count(m, risk_set, failure.time)?;
            let l = risk_set.member_strata[case_pos];
            let c_l = risk_set.stratum_counts[l];
            let m_eff = effective_size(m[l], c_l, design.clamp, failure.time, l)?;
            let mut pool: Vec<usize> = (0..n_t)
                .filter(|&p| p != case_pos && risk_set.member_strata[p] == l)
                .collect();
            let mut positions = vec![case_pos];
            positions.extend(draw_k(&mut pool, m_eff - 1, rng));
            let w = n_t as f64 / m_eff as f64;
            Ok(Draw { weights: vec![w; positions.len()], positions })
        }
        DesignKind::CounterMatching { m } => {
            check_stratum_count(m, risk_set, failure.time)?;
            let case_stratum = risk_set.member_strata[case_pos];
            let mut positions = Vec::new();
            let mut weights = Vec::new();
            for (l, &m_l) in m.iter().enumerate() {
                let c_l = risk_set.stratum_counts[l];
                if c_l == 0 && l != case_stratum {
                    if design.clamp {
                        continue;
                    }
                    return Err(DesignError::DeficientStratum {
                        time: failure.time,
                        stratum: l,
                        available: 0,
                        needed: m_l,
                    });
                }
                let m_eff = effective_size(m_l, c_l, design.clamp, failure.time, l)?;
                let w = c_l as f64 / m_eff as f64;
                let mut pool: Vec<usize> = (0..n_t)
                    .filter(|&p| risk_set.member_strata[p] == l && (l != case_stratum || p != case_pos))
                    .collect();
                let take = if l == case_stratum { m_eff - 1 } else { m_eff };
                if l == case_stratum {
                    positions.push(case_pos);
                    weights.push(w);
                }
                for p in draw_k(&mut pool, take, rng) {
                    positions.push(p);
                    weights.push(w);
                }
            }
            Ok(Draw { positions, weights })
        }
    }
}

fn check_stratum_count(m: &[usize], risk_set: &RiskSet, time: f64) -> Result<(), DesignError> {
    if m.len() != risk_set.stratum_counts.len() {
        return Err(DesignError::StratumCountMismatch {
            expected: risk_set.stratum_counts.len(),
            got: m.len(),
        });
    }
    let _ = time;
    Ok(())
}

fn effective_size(
    m_l: usize,
    c_l: usize,
    clamp: bool,
    time: f64,
    stratum: usize,
) -> Result<usize, DesignError> {
    if c_l >= m_l {
        Ok(m_l)
    } else if clamp && c_l > 0 {
        Ok(c_l)
    } else {
        Err(DesignError::DeficientStratum { time, stratum, available: c_l, needed: m_l })
    }
}

fn materialize(cohort: &Cohort, risk_set: &RiskSet, failure: &FailureEvent, draw: Draw) -> SampledFailure {
    let members = draw
        .positions
        .iter()
        .zip(&draw.weights)
        .map(|(&p, &w)| SampledMember {
            id: cohort.subjects()[risk_set.members[p]].id.clone(),
            level: risk_set.member_levels[p],
            stratum: cohort.strata()[risk_set.member_strata[p]].clone(),
            weight: w,
        })
        .collect();
    SampledFailure {
        time: failure.time,
        case_id: failure.case_id.clone(),
        case_level: failure.case_level,
        n_t: risk_set.n_t,
        members,
    }
}

fn stats_from_draw(n_levels: usize, risk_set: &RiskSet, failure: &FailureEvent, draw: &Draw) -> FailureStats {
    let mut sums = vec![0.0; n_levels];
    for (&p, &w) in draw.positions.iter().zip(&draw.weights) {
        sums[risk_set.member_levels[p]] += w;
    }
    FailureStats {
        time: failure.time,
        case_level: failure.case_level,
        case_stratum: failure.case_stratum,
        n_t: risk_set.n_t as f64,
        level_weight_sums: sums,
    }
}

/// Full-cohort sampled set: everyone at risk, unit weights.
pub fn sample_full(
    cohort: &Cohort,
    risk_set: &RiskSet,
    failure: &FailureEvent,
) -> Result<SampledFailure, DesignError> {
    let design = DesignSpec::new(DesignKind::FullCohort)?;
    let draw = draw_for_design(&design, risk_set, failure, &mut stream(0, &[]))?;
    Ok(materialize(cohort, risk_set, failure, draw))
}

/// Case plus a simple random sample of `m - 1` controls; every weight `n(t)/m`.
pub fn sample_srs<R: Rng>(
    cohort: &Cohort,
    risk_set: &RiskSet,
    failure: &FailureEvent,
    m: usize,
    rng: &mut R,
) -> Result<SampledFailure, DesignError> {
    let design = DesignSpec::new(DesignKind::Srs { m })?;
    let draw = draw_for_design(&design, risk_set, failure, rng)?;
    Ok(materialize(cohort, risk_set, failure, draw))
}

/// Case plus `m_l - 1` controls from the case's stratum; weights `n(t)/m_l`.
pub fn sample_matching<R: Rng>(
    cohort: &Cohort,
    risk_set: &RiskSet,
    failure: &FailureEvent,
    m_per_stratum: &[usize],
    rng: &mut R,
) -> Result<SampledFailure, DesignError> {
    let design = DesignSpec::new(DesignKind::Matching { m: m_per_stratum.to_vec() })?;
    let draw = draw_for_design(&design, risk_set, failure, rng)?;
    Ok(materialize(cohort, risk_set, failure, draw))
}

/// `m_l` members from each stratum (the case replacing one draw in its own);
/// member weights `c_l(t)/m_l` by stratum.
pub fn sample_counter_matching<R: Rng>(
    cohort: &Cohort,
    risk_set: &RiskSet,
    failure: &FailureEvent,
    m_per_stratum: &[usize],
    rng: &mut R,
) -> Result<SampledFailure, DesignError> {
    let design = DesignSpec::new(DesignKind::CounterMatching { m: m_per_stratum.to_vec() })?;
    let draw = draw_for_design(&design, risk_set, failure, rng)?;
    Ok(materialize(cohort, risk_set, failure, draw))
}

fn tie_exclusions(failures: &[FailureEvent], fi: usize) -> Vec<usize> {
    let t = failures[fi].time;
    failures[..fi]
        .iter()
        .rev()
        .take_while(|f| f.time == t)
        .map(|f| f.case_index)
        .collect()
}

/// Sample every failure of a cohort under one design.
///
/// Failure `i` draws from the stream keyed `(seed, i)`, so results do not
/// depend on processing order. Tied failures are processed in ascending
/// subject-id order; an already-processed tied case leaves the risk set.
pub fn sample_failures(
    cohort: &Cohort,
    design: &DesignSpec,
    seed: u64,
) -> Result<Vec<SampledFailure>, DesignError> {
    let failures = cohort.failures();
    let mut out = Vec::with_capacity(failures.len());
    for (fi, failure) in failures.iter().enumerate() {
        let exclude = tie_exclusions(failures, fi);
        let rs = cohort.risk_set_excluding(failure.time, &exclude);
        let mut rng = stream(seed, &[fi as u64]);
        let draw = draw_for_design(design, &rs, failure, &mut rng)?;
        out.push(materialize(cohort, &rs, failure, draw));
    }
    Ok(out)
}

/// Like [`sample_failures`] but keeping only per-failure sufficient
/// statistics. Draws are stream-identical to `sample_failures`.
pub fn sample_stats(
    cohort: &Cohort,
    design: &DesignSpec,
    seed: u64,
) -> Result<Vec<FailureStats>, DesignError> {
    let failures = cohort.failures();
    let n_levels = cohort.levels().count();
    if let Some(m) = design.stratum_sizes() {
        if m.len() != cohort.strata().len() {
            return Err(DesignError::StratumCountMismatch {
                expected: cohort.strata().len(),
                got: m.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(failures.len());
    for (fi, failure) in failures.iter().enumerate() {
        let exclude = tie_exclusions(failures, fi);
        let rs = cohort.risk_set_excluding(failure.time, &exclude);
        if matches!(design.kind, DesignKind::FullCohort) {
            // sums are just the level counts; skip materializing the draw
            out.push(FailureStats {
                time: failure.time,
                case_level: failure.case_level,
                case_stratum: failure.case_stratum,
                n_t: rs.n_t as f64,
                level_weight_sums: rs.level_counts.iter().map(|&c| c as f64).collect(),
            });
            continue;
        }
        let mut rng = stream(seed, &[fi as u64]);
        let draw = draw_for_design(design, &rs, failure, &mut rng)?;
        out.push(stats_from_draw(n_levels, &rs, failure, &draw));
    }
    Ok(out)
}

/// Write sampled failures as CSV, one row per member, grouped by failure.
pub fn write_sampled_csv<W: Write>(writer: W, sampled: &[SampledFailure]) -> Result<(), DesignError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["failure_time", "n_at_risk", "case_id", "member_id", "level_index", "stratum", "weight"])?;
    for sf in sampled {
        for m in &sf.members {
            let mut t = String::new();
            fmt_f64(&mut t, sf.time);
            let mut wt = String::new();
            fmt_f64(&mut wt, m.weight);
            w.write_record([
                t.as_str(),
                &sf.n_t.to_string(),
                sf.case_id.as_str(),
                m.id.as_str(),
                &m.level.to_string(),
                m.stratum.as_str(),
                wt.as_str(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Read sampled failures back from CSV. Rows of one failure must be adjacent.
pub fn read_sampled_csv<R: Read>(reader: R) -> Result<Vec<SampledFailure>, DesignError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<SampledFailure> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |j: usize| row.get(j).unwrap_or("").trim().to_string();
        let time: f64 = get(0).parse().map_err(|_| DesignError::BadRow(i, "bad failure_time".into()))?;
        let n_t: usize = get(1).parse().map_err(|_| DesignError::BadRow(i, "bad n_at_risk".into()))?;
        let case_id = get(2);
        let member = SampledMember {
            id: get(3),
            level: get(4).parse().map_err(|_| DesignError::BadRow(i, "bad level_index".into()))?,
            stratum: get(5),
            weight: get(6).parse().map_err(|_| DesignError::BadRow(i, "bad weight".into()))?,
        };
        let is_new = out
            .last()
            .map(|sf: &SampledFailure| sf.time != time || sf.case_id != case_id)
            .unwrap_or(true);
        if is_new {
            out.push(SampledFailure { time, case_id, case_level: 0, n_t, members: Vec::new() });
        }
        let sf = out.last_mut().unwrap();
        if sf.n_t != n_t {
            return Err(DesignError::BadRow(i, "n_at_risk differs within one failure".into()));
        }
        sf.members.push(member);
    }
    for sf in &mut out {
        let case = sf
            .members
            .iter()
            .find(|m| m.id == sf.case_id)
            .ok_or(DesignError::MalformedSample(sf.time, "case not among members"))?;
        sf.case_level = case.level;
        sf.validate()?;
    }
    Ok(out)
}
