//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use mh_core::population::{PopulationModel, Segment, SensSpecModel, StrataMix};

/// Population limits implied by the simulation model itself: everyone enters
/// at time zero, `lambda0 = 1`, no censoring before `tau`. The level-`k`
/// survival is `exp(-phi0^{alpha_k} t)`, so `p(t)` and the level frequencies
/// drift as exposed subjects fail faster. Discretized on `nseg` segments with
/// midpoint values.
pub fn survival_population(phi0: f64, alphas: &[f64], f0_cells: &[f64], tau: f64, nseg: usize) -> PopulationModel<f64> {
    let mut breaks = Vec::with_capacity(nseg + 1);
    let mut segments = Vec::with_capacity(nseg);
    for i in 0..=nseg {
        breaks.push(tau * i as f64 / nseg as f64);
    }
    for i in 0..nseg {
        let t = tau * (i as f64 + 0.5) / nseg as f64;
        let masses: Vec<f64> = f0_cells
            .iter()
            .zip(alphas)
            .map(|(&f, &a)| f * (-phi0.powf(a) * t).exp())
            .collect();
        let p: f64 = masses.iter().sum();
        let f: Vec<f64> = masses.iter().map(|m| m / p).collect();
        segments.push(Segment { p, lambda0: 1.0, f, strata: None });
    }
    PopulationModel::from_segments(breaks, segments).unwrap()
}

/// Same construction for the two-stratum surrogate model: the joint cells
/// `pi_{k,l}(0)` decay with the level-specific survival, and `q_l(t)`,
/// `f_{k,l}(t)` are recomputed per segment.
pub fn survival_population_cm(phi0: f64, model: &SensSpecModel, tau: f64, nseg: usize) -> PopulationModel<f64> {
    let f1 = model.f1;
    let f0 = 1.0 - f1;
    // cells[l][k] at time zero
    let cells0 = [
        [model.gamma_spec * f0, (1.0 - model.delta) * f1],
        [(1.0 - model.gamma_spec) * f0, model.delta * f1],
    ];
    let mut breaks = Vec::with_capacity(nseg + 1);
    for i in 0..=nseg {
        breaks.push(tau * i as f64 / nseg as f64);
    }
    let mut segments = Vec::with_capacity(nseg);
    for i in 0..nseg {
        let t = tau * (i as f64 + 0.5) / nseg as f64;
        let surv = [(-t).exp(), (-phi0 * t).exp()];
        let cells: Vec<Vec<f64>> = (0..2)
            .map(|l| (0..2).map(|k| cells0[l][k] * surv[k]).collect())
            .collect();
        let p: f64 = cells.iter().flatten().sum();
        let q: Vec<f64> = cells.iter().map(|row| row.iter().sum::<f64>() / p).collect();
        let f_within: Vec<Vec<f64>> = cells
            .iter()
            .zip(&q)
            .map(|(row, &ql)| row.iter().map(|&c| c / (ql * p)).collect())
            .collect();
        segments.push(Segment { p, lambda0: 1.0, f: Vec::new(), strata: Some(StrataMix { q, f_within }) });
    }
    PopulationModel::from_segments(breaks, segments).unwrap()
}

/// Horizon giving the requested expected failure fraction under
/// `lambda0 = 1` with level mix `f0_cells` and scores `alphas`.
pub fn tau_for_failure_fraction(phi0: f64, alphas: &[f64], f0_cells: &[f64], frac: f64) -> f64 {
    let failure_frac = |tau: f64| -> f64 {
        f0_cells
            .iter()
            .zip(alphas)
            .map(|(&f, &a)| f * (1.0 - (-phi0.powf(a) * tau).exp()))
            .sum()
    };
    let (mut lo, mut hi) = (1e-6, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if failure_frac(mid) < frac {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sample_var(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn se_mean(values: &[f64]) -> f64 {
    (sample_var(values) / values.len() as f64).sqrt()
}
