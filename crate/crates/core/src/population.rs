//! Piecewise-constant population limits driving the asymptotic calculators
//! and the simulation harness.
//!
//! A model carries, per time segment: the at-risk probability `p(t)`, the
//! baseline hazard `lambda0(t)`, level frequencies `f_k(t)` among those at
//! risk, and optionally stratum frequencies `q_l(t)` with within-stratum level
//! frequencies `f_{k,l}(t)`. When strata are present the marginal `f` is
//! derived as `f_k = sum_l f_{k,l} q_l`, so the mixture identity holds by
//! construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("segments and breaks are inconsistent")]
    BadBreaks,
    #[error("segment {0}: frequencies must be nonnegative and sum to one")]
    BadFrequencies(usize),
    #[error("segment {0}: p must lie in (0, 1]")]
    BadAtRisk(usize),
    #[error("segment {0}: lambda0 must be positive and finite")]
    BadHazard(usize),
    #[error("segment {0}: stratum {1} is degenerate (q = 0)")]
    DegenerateStratum(usize, usize),
    #[error("sensitivity/specificity parameters must lie in [0, 1]")]
    BadSensSpec,
    #[error("model has no stratum structure")]
    NoStrata,
}

/// Stratum mixture within one time segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataMix<F> {
    /// `q_l`, stratum frequencies among those at risk.
    pub q: Vec<F>,
    /// `f_{k,l}` indexed `[stratum][level]`.
    pub f_within: Vec<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment<F> {
    pub p: F,
    pub lambda0: F,
    /// Marginal level frequencies `f_k`; derived from the strata when present.
    pub f: Vec<F>,
    pub strata: Option<StrataMix<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel<F> {
    breaks: Vec<F>,
    segments: Vec<Segment<F>>,
}

fn check_simplex<F: Real>(v: &[F]) -> bool {
    !v.is_empty()
        && v.iter().all(|&x| x >= F::zero())
        && (v.iter().copied().sum::<F>() - F::one()).abs() < F::from_f64_(1e-9)
}

impl<F: Real> PopulationModel<F> {
    /// Build from explicit breakpoints `0 = t_0 < ... < t_S = tau`.
    pub fn from_segments(breaks: Vec<F>, mut segments: Vec<Segment<F>>) -> Result<Self, PopulationError> {
        if breaks.len() != segments.len() + 1
            || segments.is_empty()
            || breaks[0] != F::zero()
            || breaks.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(PopulationError::BadBreaks);
        }
        for (i, seg) in segments.iter_mut().enumerate() {
            if !(seg.p > F::zero() && seg.p <= F::one()) {
                return Err(PopulationError::BadAtRisk(i));
            }
            if !(seg.lambda0 > F::zero() && seg.lambda0.is_finite()) {
                return Err(PopulationError::BadHazard(i));
            }
            if let Some(mix) = &seg.strata {
                if !check_simplex(&mix.q) {
                    return Err(PopulationError::BadFrequencies(i));
                }
                for (l, fl) in mix.f_within.iter().enumerate() {
                    if mix.q[l] == F::zero() {
                        return Err(PopulationError::DegenerateStratum(i, l));
                    }
                    if !check_simplex(fl) {
                        return Err(PopulationError::BadFrequencies(i));
                    }
                }
                // marginal consistency by construction
                let k_levels = mix.f_within[0].len();
                let mut f = vec![F::zero(); k_levels];
                for (l, fl) in mix.f_within.iter().enumerate() {
                    for (k, &v) in fl.iter().enumerate() {
                        f[k] += v * mix.q[l];
                    }
                }
                seg.f = f;
            } else if !check_simplex(&seg.f) {
                return Err(PopulationError::BadFrequencies(i));
            }
        }
        Ok(Self { breaks, segments })
    }

    /// Time-constant population without strata.
    pub fn time_constant(p: F, f: Vec<F>, lambda0: F, tau: F) -> Result<Self, PopulationError> {
        Self::from_segments(
            vec![F::zero(), tau],
            vec![Segment { p, lambda0, f, strata: None }],
        )
    }

    /// Time-constant population with strata.
    pub fn time_constant_strata(
        p: F,
        q: Vec<F>,
        f_within: Vec<Vec<F>>,
        lambda0: F,
        tau: F,
    ) -> Result<Self, PopulationError> {
        Self::from_segments(
            vec![F::zero(), tau],
            vec![Segment { p, lambda0, f: Vec::new(), strata: Some(StrataMix { q, f_within }) }],
        )
    }

    pub fn tau(&self) -> F {
        *self.breaks.last().unwrap()
    }

    pub fn segments(&self) -> &[Segment<F>] {
        &self.segments
    }

    pub fn breaks(&self) -> &[F] {
        &self.breaks
    }

    pub fn level_count(&self) -> usize {
        self.segments[0].f.len()
    }

    pub fn has_strata(&self) -> bool {
        self.segments.iter().all(|s| s.strata.is_some())
    }

    pub fn duration(&self, i: usize) -> F {
        self.breaks[i + 1] - self.breaks[i]
    }

    /// Exact integral `int g(seg(t)) lambda0(t) dt` over `[0, tau]` for a
    /// segment-wise constant integrand.
    pub fn integrate_hazard<G: Fn(&Segment<F>) -> F>(&self, g: G) -> F {
        let mut total = F::zero();
        for (i, seg) in self.segments.iter().enumerate() {
            total += g(seg) * seg.lambda0 * self.duration(i);
        }
        total
    }

    /// Cumulative baseline hazard at the breakpoints.
    pub fn cumulative_hazard_at_breaks(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.breaks.len());
        let mut acc = F::zero();
        out.push(acc);
        for (i, seg) in self.segments.iter().enumerate() {
            acc += seg.lambda0 * self.duration(i);
            out.push(acc);
        }
        out
    }
}

/// Exposure prevalence plus the sensitivity and specificity of a binary
/// surrogate used as the counter-matching stratum variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensSpecModel {
    pub f1: f64,
    pub delta: f64,
    pub gamma_spec: f64,
}

impl SensSpecModel {
    pub fn new(f1: f64, delta: f64, gamma_spec: f64) -> Result<Self, PopulationError> {
        for v in [f1, delta, gamma_spec] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PopulationError::BadSensSpec);
            }
        }
        Ok(Self { f1, delta, gamma_spec })
    }
}

/// Two-stratum mixture implied by a surrogate with the given sensitivity and
/// specificity: joint cells are `pi_11 = delta f_1`, `pi_10 = (1-delta) f_1`,
/// `pi_01 = (1-gamma) f_0`, `pi_00 = gamma f_0`. Returns `(q, f_within)` with
/// stratum 1 the surrogate-positive one.
pub fn cm_mix<F: Real>(model: &SensSpecModel) -> Result<(Vec<F>, Vec<Vec<F>>), PopulationError> {
    let f1 = F::from_f64_(model.f1);
    let f0 = F::one() - f1;
    let delta = F::from_f64_(model.delta);
    let gamma = F::from_f64_(model.gamma_spec);
    let pi11 = delta * f1;
    let pi10 = (F::one() - delta) * f1;
    let pi01 = (F::one() - gamma) * f0;
    let pi00 = gamma * f0;
    let q0 = pi00 + pi10;
    let q1 = pi01 + pi11;
    if q0 == F::zero() {
        return Err(PopulationError::DegenerateStratum(0, 0));
    }
    if q1 == F::zero() {
        return Err(PopulationError::DegenerateStratum(0, 1));
    }
    let f_within = vec![vec![pi00 / q0, pi10 / q0], vec![pi01 / q1, pi11 / q1]];
    Ok((vec![q0, q1], f_within))
}

/// Time-constant two-stratum population from a surrogate model.
pub fn cm_population<F: Real>(
    model: &SensSpecModel,
    p: F,
    lambda0: F,
    tau: F,
) -> Result<PopulationModel<F>, PopulationError> {
    let (q, f_within) = cm_mix(model)?;
    PopulationModel::time_constant_strata(p, q, f_within, lambda0, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_surrogate_cells() {
        let m = SensSpecModel::new(0.2, 1.0, 1.0).unwrap();
        let (q, fw) = cm_mix::<f64>(&m).unwrap();
        assert!((q[1] - 0.2).abs() < 1e-15);
        assert!((fw[1][1] - 1.0).abs() < 1e-15);
        assert!((fw[0][1] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn uninformative_surrogate() {
        let m = SensSpecModel::new(0.2, 0.5, 0.5).unwrap();
        let (_, fw) = cm_mix::<f64>(&m).unwrap();
        assert!((fw[0][1] - 0.2).abs() < 1e-12);
        assert!((fw[1][1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn marginals_recovered_exactly() {
        for (f1, d, g) in [(0.2, 0.9, 0.9), (0.3, 0.7, 0.8), (0.2, 0.5, 0.5)] {
            let m = SensSpecModel::new(f1, d, g).unwrap();
            let pop = cm_population::<f64>(&m, 1.0, 1.0, 1.0).unwrap();
            let seg = &pop.segments()[0];
            assert!((seg.f[1] - f1).abs() < 1e-12, "f1 marginal");
        }
    }

    #[test]
    fn eq11_null_factor() {
        // delta = gamma = 0.9: h01 factor (1-d)(1-g) + gd = 0.82
        let m = SensSpecModel::new(0.2, 0.9, 0.9).unwrap();
        let (q, fw) = cm_mix::<f64>(&m).unwrap();
        let cross: f64 = (0..2).map(|l| fw[l][0] * fw[l][1] * q[l] * q[l]).sum();
        let f0f1 = 0.8 * 0.2;
        let factor = (f0f1 - cross) / f0f1;
        assert!((factor - 0.82).abs() < 1e-12, "{}", factor);
    }

    #[test]
    fn integration_is_segment_exact() {
        let pop = PopulationModel::from_segments(
            vec![0.0, 0.5, 2.0],
            vec![
                Segment { p: 1.0, lambda0: 2.0, f: vec![0.8, 0.2], strata: None },
                Segment { p: 0.5, lambda0: 1.0, f: vec![0.6, 0.4], strata: None },
            ],
        )
        .unwrap();
        let v: f64 = pop.integrate_hazard(|s| s.p);
        assert!((v - (1.0 * 2.0 * 0.5 + 0.5 * 1.0 * 1.5)).abs() < 1e-15);
        assert_eq!(pop.cumulative_hazard_at_breaks(), vec![0.0, 1.0, 2.5]);
    }

    #[test]
    fn degenerate_stratum_rejected() {
        let m = SensSpecModel::new(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(cm_mix::<f64>(&m), Err(PopulationError::DegenerateStratum(_, _))));
    }

    #[test]
    fn bad_frequencies_rejected() {
        let r = PopulationModel::time_constant(1.0, vec![0.7, 0.2], 1.0, 1.0);
        assert!(matches!(r, Err(PopulationError::BadFrequencies(0))));
    }
}
