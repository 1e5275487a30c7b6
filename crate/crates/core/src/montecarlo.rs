//! Replicated simulation of cohorts under the multiplicative-intensity model,
//! with sampling and estimation per replicate and cross-replicate summaries.
//!
//! Failure times are drawn by inverse transform on the piecewise-constant
//! cumulative hazard, so the event-time law is exact. Replicate `r` uses
//! random streams keyed by `(seed, r)`; replicates are independent of
//! execution order and may run in parallel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::baseline_variance;
use crate::cohort::{build_cohort, Cohort, CohortError, EventKind, EventRecord, FailureEvent, LevelSet};
use crate::design::{sample_stats, DesignError, DesignSpec};
use crate::estimator::{estimate, EstimateError, EstimateOptions, EstimateResult};
use crate::population::PopulationModel;
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum McError {
    #[error("scenario needs n >= 2, reps >= 1, phi0 > 0")]
    BadScenario,
    #[error("population has {pop} levels but the level set has {levels}")]
    LevelMismatch { pop: usize, levels: usize },
    #[error("fewer than two usable replicates ({0})")]
    TooFewResults(usize),
    #[error("cohort: {0}")]
    Cohort(#[from] CohortError),
    #[error("design: {0}")]
    Design(#[from] DesignError),
    #[error("estimate: {0}")]
    Estimate(#[from] EstimateError),
}

/// Everything one Monte Carlo experiment needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub phi0: f64,
    pub levels: LevelSet,
    /// Generation-side model: level/stratum cells at time zero and the
    /// baseline hazard; `tau` is the administrative censoring horizon.
    pub population: PopulationModel<f64>,
    /// Optional independent uniform censoring on `(0, max)`.
    pub censor_uniform_max: Option<f64>,
    pub design: DesignSpec,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub options: EstimateOptions,
    #[serde(default)]
    pub compute_baseline: bool,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n < 2 || self.reps < 1 || !(self.phi0 > 0.0) {
            return Err(McError::BadScenario);
        }
        if self.population.level_count() != self.levels.count() {
            return Err(McError::LevelMismatch {
                pop: self.population.level_count(),
                levels: self.levels.count(),
            });
        }
        Ok(())
    }
}

/// Baseline diagnostics of one replicate, evaluated at the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineDiag {
    pub lambda_tau: f64,
    pub sigma2_lambda_tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub failures: usize,
    pub result: Option<EstimateResult>,
    pub baseline: Option<BaselineDiag>,
    pub degenerate: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCSummary {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    pub excluded: usize,
    pub mean_phi_hat: f64,
    /// Empirical variance of `sqrt(n) (phi_hat - phi0)`.
    pub empirical_var_scaled: f64,
    pub mean_sigma2_hat: f64,
    pub coverage95: f64,
    pub mean_failures: f64,
    pub min_failures: usize,
    pub max_failures: usize,
    pub mean_lambda_tau: Option<f64>,
    /// Empirical variance of `sqrt(n) (Lambda_hat(tau) - Lambda0(tau))`.
    pub empirical_var_lambda_scaled: Option<f64>,
    pub mean_sigma2_lambda_tau: Option<f64>,
}

fn draw_cell<R: Rng>(pop: &PopulationModel<f64>, rng: &mut R) -> (usize, usize) {
    let seg = &pop.segments()[0];
    match &seg.strata {
        Some(mix) => {
            let l = draw_index(&mix.q, rng);
            let k = draw_index(&mix.f_within[l], rng);
            (k, l)
        }
        None => (draw_index(&seg.f, rng), 0),
    }
}

fn draw_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Invert the cumulative hazard `target = phi^alpha * Lambda0(t)`.
fn invert_hazard(pop: &PopulationModel<f64>, cumulative: &[f64], target: f64) -> Option<f64> {
    if target >= *cumulative.last().unwrap() {
        return None;
    }
    let idx = cumulative.partition_point(|&c| c <= target) - 1;
    let seg = &pop.segments()[idx];
    Some(pop.breaks()[idx] + (target - cumulative[idx]) / seg.lambda0)
}

/// Simulate one cohort as raw event records: levels and strata drawn from
/// the time-zero cells, failure times by inverse transform, administrative
/// censoring at `tau`.
pub fn simulate_events(scenario: &ScenarioSpec, rep_index: usize) -> Result<Vec<EventRecord>, McError> {
    scenario.validate()?;
    let pop = &scenario.population;
    let tau = pop.tau();
    let cumulative = pop.cumulative_hazard_at_breaks();
    let mut rng = stream(scenario.seed, &[1, rep_index as u64]);
    let mut records = Vec::with_capacity(scenario.n * 4);
    let has_strata = pop.has_strata();
    for i in 0..scenario.n {
        let id = format!("s{:06}", i);
        let (level, stratum) = draw_cell(pop, &mut rng);
        let exp_draw = -(1.0 - rng.gen::<f64>()).ln();
        let alpha = scenario.levels.alpha(level);
        let failure_time = invert_hazard(pop, &cumulative, exp_draw / scenario.phi0.powf(alpha));
        let censor = match scenario.censor_uniform_max {
            Some(max) => tau.min(rng.gen::<f64>() * max),
            None => tau,
        };
        records.push(EventRecord { subject_id: id.clone(), time: 0.0, event: EventKind::Enter, value: String::new() });
        if level > 0 {
            records.push(EventRecord {
                subject_id: id.clone(),
                time: 0.0,
                event: EventKind::Cov,
                value: format!("{}", alpha),
            });
        }
        if has_strata {
            records.push(EventRecord {
                subject_id: id.clone(),
                time: 0.0,
                event: EventKind::Stratum,
                value: format!("{:02}", stratum),
            });
        }
        match failure_time {
            Some(t) if t > 0.0 && t <= censor => {
                records.push(EventRecord { subject_id: id, time: t, event: EventKind::Fail, value: String::new() });
            }
            _ => {
                if censor < tau {
                    records.push(EventRecord { subject_id: id, time: censor, event: EventKind::Exit, value: String::new() });
                }
                // still at risk at tau: build_cohort closes the interval there
            }
        }
    }
    Ok(records)
}

/// Simulate one cohort, validated and with its ordered failure list.
pub fn simulate_cohort(
    scenario: &ScenarioSpec,
    rep_index: usize,
) -> Result<(Cohort, Vec<FailureEvent>), McError> {
    let records = simulate_events(scenario, rep_index)?;
    Ok(build_cohort(&records, scenario.levels.clone(), scenario.population.tau())?)
}

/// Simulate, sample, and estimate one replicate. Deterministic in
/// `(scenario.seed, rep_index)`.
pub fn run_replication(scenario: &ScenarioSpec, rep_index: usize) -> Result<ReplicationOutcome, McError> {
    let (cohort, failures) = simulate_cohort(scenario, rep_index)?;
    if failures.is_empty() {
        return Ok(ReplicationOutcome {
            rep: rep_index,
            failures: 0,
            result: None,
            baseline: None,
            degenerate: Some("no failures".into()),
        });
    }
    let sampling_seed = stream(scenario.seed, &[2, rep_index as u64]).gen::<u64>();
    let stats = sample_stats(&cohort, &scenario.design, sampling_seed)?;
    let outcome = estimate(&stats, &scenario.levels, scenario.n, &scenario.options);
    let (result, degenerate) = match outcome {
        Ok(r) => {
            if r.sigma2.is_none() || !r.degenerate_flags.is_empty() {
                let flag = r.degenerate_flags.join("; ");
                (Some(r), Some(if flag.is_empty() { "no variance".to_string() } else { flag }))
            } else {
                (Some(r), None)
            }
        }
        Err(
            e @ (EstimateError::NoFiniteRoot
            | EstimateError::NonInformative
            | EstimateError::NoRootInWindow
            | EstimateError::ZeroGamma),
        ) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let baseline = match (&result, degenerate.is_none(), scenario.compute_baseline) {
        (Some(r), true, true) => {
            let alphas = scenario.levels.alphas().to_vec();
            let report =
                baseline_variance(&stats, &alphas, r.phi_hat, r.sigma2.unwrap(), scenario.n);
            let tau = scenario.population.tau();
            Some(BaselineDiag {
                lambda_tau: report.lambda_hat.value(tau),
                sigma2_lambda_tau: report.sigma2_lambda(tau, tau),
            })
        }
        _ => None,
    };
    Ok(ReplicationOutcome {
        rep: rep_index,
        failures: failures.len(),
        result,
        baseline,
        degenerate,
    })
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Reduce replicate outcomes; degenerate replicates are excluded and counted.
pub fn mc_summary(outcomes: &[ReplicationOutcome], scenario: &ScenarioSpec) -> Result<MCSummary, McError> {
    let usable: Vec<&ReplicationOutcome> =
        outcomes.iter().filter(|o| o.degenerate.is_none() && o.result.is_some()).collect();
    if usable.len() < 2 {
        return Err(McError::TooFewResults(usable.len()));
    }
    let n = scenario.n as f64;
    let phis: Vec<f64> = usable.iter().map(|o| o.result.as_ref().unwrap().phi_hat).collect();
    let (mean_phi, var_phi) = mean_var(&phis);
    let sigma2s: Vec<f64> =
        usable.iter().map(|o| o.result.as_ref().unwrap().sigma2.unwrap()).collect();
    let covered = usable
        .iter()
        .filter(|o| {
            let r = o.result.as_ref().unwrap();
            r.ci_low.unwrap() <= scenario.phi0 && scenario.phi0 <= r.ci_high.unwrap()
        })
        .count();
    let failure_counts: Vec<usize> = outcomes.iter().map(|o| o.failures).collect();

    let (mean_lambda, var_lambda, mean_s2_lambda) = if usable.iter().all(|o| o.baseline.is_some()) {
        let lams: Vec<f64> = usable.iter().map(|o| o.baseline.as_ref().unwrap().lambda_tau).collect();
        let (ml, vl) = mean_var(&lams);
        let ms2 = usable
            .iter()
            .map(|o| o.baseline.as_ref().unwrap().sigma2_lambda_tau)
            .sum::<f64>()
            / usable.len() as f64;
        (Some(ml), Some(n * vl), Some(ms2))
    } else {
        (None, None, None)
    };

    Ok(MCSummary {
        scenario: scenario.clone(),
        replicates: usable.len(),
        excluded: outcomes.len() - usable.len(),
        mean_phi_hat: mean_phi,
        empirical_var_scaled: n * var_phi,
        mean_sigma2_hat: sigma2s.iter().sum::<f64>() / sigma2s.len() as f64,
        coverage95: covered as f64 / usable.len() as f64,
        mean_failures: failure_counts.iter().sum::<usize>() as f64 / failure_counts.len() as f64,
        min_failures: failure_counts.iter().copied().min().unwrap_or(0),
        max_failures: failure_counts.iter().copied().max().unwrap_or(0),
        mean_lambda_tau: mean_lambda,
        empirical_var_lambda_scaled: var_lambda,
        mean_sigma2_lambda_tau: mean_s2_lambda,
    })
}

fn threads_from_env() -> usize {
    std::env::var("MH_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

/// Run all replicates in parallel (thread count from `MH_THREADS`, default
/// automatic), ordered by replicate index.
pub fn run_mc_outcomes(scenario: &ScenarioSpec) -> Result<Vec<ReplicationOutcome>, McError> {
    scenario.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads_from_env())
        .build()
        .expect("thread pool");
    pool.install(|| {
        (0..scenario.reps)
            .into_par_iter()
            .map(|r| run_replication(scenario, r))
            .collect()
    })
}

/// Run all replicates and summarize.
pub fn run_mc(scenario: &ScenarioSpec) -> Result<MCSummary, McError> {
    let outcomes = run_mc_outcomes(scenario)?;
    mc_summary(&outcomes, scenario)
}
