//! Closed-form asymptotic calculators: design-specific limit functions,
//! asymptotic variances, baseline-limit ingredients, and efficiency curves
//! against the maximum partial likelihood estimator.
//!
//! All limits reduce to moments of the sampled-set composition: full-cohort
//! ratios, a single multinomial for simple random sampling, a stratum mixture
//! of multinomials for matching, and a product of per-stratum multinomials for
//! counter-matching (summarized through the stratum-weighted level totals
//! `U_k = sum_l X_{k,l} q_l / m_l`).

use std::io::Write;

use thiserror::Error;

use crate::cohort::fmt_f64;
use crate::design::DesignKind;
use crate::hypergeom::{multinomial_expect, multinomial_moment, MomentError};
use crate::num::Real;
use crate::population::{PopulationModel, Segment, StrataMix};

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("design needs stratum structure in the population model")]
    MissingStrata,
    #[error("design needs {expected} per-stratum sizes, got {got}")]
    StratumCountMismatch { expected: usize, got: usize },
    #[error("operation is defined for the dichotomous exposure only")]
    ClassicalOnly,
    #[error("non-informative population: zero denominator")]
    NonInformative,
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Segment-wise values of a limit function, evaluable on `[0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseValues<F> {
    pub breaks: Vec<F>,
    pub values: Vec<F>,
}

impl<F: Real> PiecewiseValues<F> {
    /// Value on the segment containing `t` (right-open, last segment closed).
    pub fn value_at(&self, t: F) -> F {
        let pos = self.breaks[1..self.breaks.len() - 1].partition_point(|&b| b <= t);
        self.values[pos.min(self.values.len() - 1)]
    }
}

fn strata_of<'a, F: Real>(seg: &'a Segment<F>, m: &[usize]) -> Result<&'a StrataMix<F>, AsymptoticsError> {
    let mix = seg.strata.as_ref().ok_or(AsymptoticsError::MissingStrata)?;
    if mix.q.len() != m.len() {
        return Err(AsymptoticsError::StratumCountMismatch { expected: mix.q.len(), got: m.len() });
    }
    Ok(mix)
}

/// `E[g(U_0, ..., U_eta)]` for independent per-stratum multinomials, where
/// `U_k = sum_l X_{k,l} q_l / m_l` is the weighted level total of a
/// counter-matched set.
fn weighted_set_expect<F: Real, G: Fn(&[F]) -> F + Copy>(
    mix: &StrataMix<F>,
    m: &[usize],
    g: G,
) -> Result<F, AsymptoticsError> {
    for &m_l in m {
        if m_l > 30 {
            return Err(AsymptoticsError::Moment(MomentError::EnumerationTooLarge(m_l)));
        }
    }
    let k_levels = mix.f_within[0].len();
    fn rec<F: Real, G: Fn(&[F]) -> F + Copy>(
        mix: &StrataMix<F>,
        m: &[usize],
        l: usize,
        u: &mut Vec<F>,
        g: G,
    ) -> Result<F, MomentError> {
        if l == mix.q.len() {
            return Ok(g(u));
        }
        let scale = mix.q[l] / F::from_usize_(m[l]);
        multinomial_expect(&mix.f_within[l], m[l], |x| {
            for (k, &xk) in x.iter().enumerate() {
                u[k] += F::from_usize_(xk) * scale;
            }
            let inner = rec(mix, m, l + 1, u, g).expect("inner enumeration within guard");
            for (k, &xk) in x.iter().enumerate() {
                u[k] -= F::from_usize_(xk) * scale;
            }
            inner
        })
    }
    let mut u = vec![F::zero(); k_levels];
    Ok(rec(mix, m, 0, &mut u, g)?)
}

fn h_segment<F: Real>(design: &DesignKind, seg: &Segment<F>, v: &[usize]) -> Result<F, AsymptoticsError> {
    let value = match design {
        DesignKind::FullCohort => {
            let mut prod = F::one();
            for &k in v {
                prod *= seg.f[k];
            }
            seg.p * prod
        }
        DesignKind::Srs { m } => {
            let moment = multinomial_moment(&seg.f, *m, v)?;
            seg.p * moment / F::from_usize_(*m).powi(v.len() as i32)
        }
        DesignKind::Matching { m } => {
            let mix = strata_of(seg, m)?;
            let mut total = F::zero();
            for (l, &q_l) in mix.q.iter().enumerate() {
                let moment = multinomial_moment(&mix.f_within[l], m[l], v)?;
                total += q_l * moment / F::from_usize_(m[l]).powi(v.len() as i32);
            }
            seg.p * total
        }
        DesignKind::CounterMatching { m } => {
            let mix = strata_of(seg, m)?;
            let expect = weighted_set_expect(mix, m, |u: &[F]| {
                let mut prod = F::one();
                for &k in v {
                    prod *= u[k];
                }
                prod
            })?;
            seg.p * expect
        }
    };
    Ok(value)
}

/// The limit `h_v(t)` of the scaled set sums, segment by segment.
pub fn h_limit<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    v: &[usize],
) -> Result<PiecewiseValues<F>, AsymptoticsError> {
    let values = population
        .segments()
        .iter()
        .map(|seg| h_segment(design, seg, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PiecewiseValues { breaks: population.breaks().to_vec(), values })
}

fn integral_of_h<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    v: &[usize],
) -> Result<F, AsymptoticsError> {
    let h = h_limit(design, population, v)?;
    let mut total = F::zero();
    for (i, seg) in population.segments().iter().enumerate() {
        total += h.values[i] * seg.lambda0 * population.duration(i);
    }
    Ok(total)
}

fn pairs(k_levels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..k_levels {
        for k in j + 1..k_levels {
            out.push((j, k));
        }
    }
    out
}

/// Asymptotic variance of `sqrt(n) (phi_hat - phi_0)` under a design, with
/// equal pair weights.
pub fn sigma2_mh<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    phi0: F,
    alphas: &[F],
) -> Result<F, AsymptoticsError> {
    let k_levels = alphas.len();
    let plist = pairs(k_levels);

    let mut beta = vec![F::zero(); plist.len()];
    for (pi, &(j, k)) in plist.iter().enumerate() {
        let i_jk = integral_of_h(design, population, &[j, k])?;
        beta[pi] = (alphas[k] - alphas[j]) * phi0.powf(alphas[k] + alphas[j] - F::one()) * i_jk;
    }
    let gamma: F = beta.iter().map(|&b| b * b).sum();
    if gamma == F::zero() {
        return Err(AsymptoticsError::NonInformative);
    }

    let ind = |a: usize, b: usize| if a == b { F::one() } else { F::zero() };
    let mut v2 = F::zero();
    for (pi, &(j, k)) in plist.iter().enumerate() {
        for (qi, &(p, q)) in plist.iter().enumerate() {
            let t1 = phi0.powf(alphas[j] + alphas[k] + alphas[q])
                * (ind(j, p) - ind(k, p))
                * integral_of_h(design, population, &[j, k, q])?;
            let t2 = phi0.powf(alphas[j] + alphas[k] + alphas[p])
                * (ind(k, q) - ind(j, q))
                * integral_of_h(design, population, &[j, k, p])?;
            v2 += beta[pi] * (t1 + t2) * beta[qi];
        }
    }
    Ok(v2 / (gamma * gamma))
}

/// The baseline-limit functions `e(phi0, t)` and `psi(phi0, t)`, segment-wise.
///
/// `e` is the limiting weighted mean of `S^(1)/S^(0)` over sampled sets and
/// `psi` the limit of `n sum_r pi_t(r)^2 / S_r^(0)`; the latter always carries
/// a `1/p(t)` factor, which at the null makes `psi = 1/p(t)` for every design.
pub fn e_psi<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    phi0: F,
    alphas: &[F],
) -> Result<(PiecewiseValues<F>, PiecewiseValues<F>), AsymptoticsError> {
    let mut e_vals = Vec::new();
    let mut psi_vals = Vec::new();
    let num_of = |x: &[F]| -> F {
        let mut s = F::zero();
        for (k, &a) in alphas.iter().enumerate() {
            if a != F::zero() {
                s += a * phi0.powf(a - F::one()) * x[k];
            }
        }
        s
    };
    let den_of = |x: &[F]| -> F {
        let mut s = F::zero();
        for (k, &a) in alphas.iter().enumerate() {
            s += phi0.powf(a) * x[k];
        }
        s
    };
    for seg in population.segments() {
        let (e, psi) = match design {
            DesignKind::FullCohort => {
                let den = den_of(&seg.f);
                if den == F::zero() {
                    return Err(AsymptoticsError::NonInformative);
                }
                (num_of(&seg.f) / den, F::one() / (seg.p * den))
            }
            DesignKind::Srs { m } => {
                let to_f = |x: &[usize]| -> Vec<F> {
                    x.iter().map(|&v| F::from_usize_(v)).collect()
                };
                let e = multinomial_expect(&seg.f, *m, |x| {
                    let xf = to_f(x);
                    let den = den_of(&xf);
                    if den == F::zero() { F::zero() } else { num_of(&xf) / den }
                })?;
                let inv = multinomial_expect(&seg.f, *m, |x| {
                    let den = den_of(&to_f(x));
                    if den == F::zero() { F::zero() } else { F::one() / den }
                })?;
                (e, F::from_usize_(*m) * inv / seg.p)
            }
            DesignKind::Matching { m } => {
                let mix = strata_of(seg, m)?;
                let mut e = F::zero();
                let mut psi = F::zero();
                for (l, &q_l) in mix.q.iter().enumerate() {
                    let to_f = |x: &[usize]| -> Vec<F> {
                        x.iter().map(|&v| F::from_usize_(v)).collect()
                    };
                    e += q_l
                        * multinomial_expect(&mix.f_within[l], m[l], |x| {
                            let xf = to_f(x);
                            let den = den_of(&xf);
                            if den == F::zero() { F::zero() } else { num_of(&xf) / den }
                        })?;
                    psi += q_l
                        * F::from_usize_(m[l])
                        * multinomial_expect(&mix.f_within[l], m[l], |x| {
                            let den = den_of(&to_f(x));
                            if den == F::zero() { F::zero() } else { F::one() / den }
                        })?;
                }
                (e, psi / seg.p)
            }
            DesignKind::CounterMatching { m } => {
                let mix = strata_of(seg, m)?;
                let e = weighted_set_expect(mix, m, |u: &[F]| {
                    let den = den_of(u);
                    if den == F::zero() { F::zero() } else { num_of(u) / den }
                })?;
                let inv = weighted_set_expect(mix, m, |u: &[F]| {
                    let den = den_of(u);
                    if den == F::zero() { F::zero() } else { F::one() / den }
                })?;
                (e, inv / seg.p)
            }
        };
        e_vals.push(e);
        psi_vals.push(psi);
    }
    let breaks = population.breaks().to_vec();
    Ok((
        PiecewiseValues { breaks: breaks.clone(), values: e_vals },
        PiecewiseValues { breaks, values: psi_vals },
    ))
}

/// Asymptotic variance of the maximum partial likelihood estimator, on the
/// log-rate-ratio and rate-ratio scales. Dichotomous exposure only.
///
/// The information integrand is the limit of
/// `n^{-1} sum_r (S^(2)/S^(0) - (S^(1)/S^(0))^2) S^(0)`, which under the
/// log-link reduces per design to a moment of `phi X_0 X_1 / (X_0 + phi X_1)`
/// over the limiting sampled-set composition.
pub struct MpleVariance<F> {
    pub theta_scale: F,
    pub phi_scale: F,
}

pub fn mple_variance<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    phi0: F,
    alphas: &[F],
) -> Result<MpleVariance<F>, AsymptoticsError> {
    if alphas.len() != 2 || alphas[1] != F::one() {
        return Err(AsymptoticsError::ClassicalOnly);
    }
    let ratio = move |x0: F, x1: F| -> F {
        let den = x0 + phi0 * x1;
        if den == F::zero() { F::zero() } else { phi0 * x0 * x1 / den }
    };
    let mut info = F::zero();
    for (i, seg) in population.segments().iter().enumerate() {
        let integrand = match design {
            DesignKind::FullCohort => seg.p * ratio(seg.f[0], seg.f[1]),
            DesignKind::Srs { m } => {
                let e = multinomial_expect(&seg.f, *m, |x| {
                    ratio(F::from_usize_(x[0]), F::from_usize_(x[1]))
                })?;
                seg.p * e / F::from_usize_(*m)
            }
            DesignKind::Matching { m } => {
                let mix = strata_of(seg, m)?;
                let mut total = F::zero();
                for (l, &q_l) in mix.q.iter().enumerate() {
                    let e = multinomial_expect(&mix.f_within[l], m[l], |x| {
                        ratio(F::from_usize_(x[0]), F::from_usize_(x[1]))
                    })?;
                    total += q_l * e / F::from_usize_(m[l]);
                }
                seg.p * total
            }
            DesignKind::CounterMatching { m } => {
                let mix = strata_of(seg, m)?;
                seg.p * weighted_set_expect(mix, m, |u: &[F]| ratio(u[0], u[1]))?
            }
        };
        info += integrand * seg.lambda0 * population.duration(i);
    }
    if info <= F::zero() {
        return Err(AsymptoticsError::NonInformative);
    }
    let theta_scale = F::one() / info;
    Ok(MpleVariance { theta_scale, phi_scale: theta_scale * phi0 * phi0 })
}

/// One row of an efficiency table.
#[derive(Debug, Clone, PartialEq)]
pub struct AreRow<F> {
    pub log_phi: F,
    pub sigma2_mh_theta: F,
    pub sigma2_mple_theta: F,
    pub are: F,
}

/// Asymptotic relative efficiency of the estimating-equation estimator
/// against the partial likelihood, on the log scale, over a grid of log
/// rate ratios. Dichotomous exposure only.
pub fn are_curve<F: Real>(
    design: &DesignKind,
    population: &PopulationModel<F>,
    log_phi_grid: &[F],
) -> Result<Vec<AreRow<F>>, AsymptoticsError> {
    let alphas = [F::zero(), F::one()];
    let mut out = Vec::with_capacity(log_phi_grid.len());
    for &lp in log_phi_grid {
        let phi = lp.exp();
        let mh = sigma2_mh(design, population, phi, &alphas)? / (phi * phi);
        let mple = mple_variance(design, population, phi, &alphas)?.theta_scale;
        out.push(AreRow { log_phi: lp, sigma2_mh_theta: mh, sigma2_mple_theta: mple, are: mple / mh });
    }
    Ok(out)
}

/// Write an efficiency table as CSV.
pub fn write_are_csv<W: Write>(writer: W, rows: &[AreRow<f64>]) -> Result<(), AsymptoticsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["log_phi", "sigma2_mh_theta", "sigma2_mple_theta", "are"])?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(4);
        for v in [r.log_phi, r.sigma2_mh_theta, r.sigma2_mple_theta, r.are] {
            let mut s = String::new();
            fmt_f64(&mut s, v);
            rec.push(s);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub use crate::num::falling_factorial;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{cm_population, SensSpecModel};

    fn classical_pop(p: f64, f1: f64, lambda0: f64, tau: f64) -> PopulationModel<f64> {
        PopulationModel::time_constant(p, vec![1.0 - f1, f1], lambda0, tau).unwrap()
    }

    const A01: [f64; 2] = [0.0, 1.0];

    #[test]
    fn full_cohort_pair_limit() {
        let pop = classical_pop(0.9, 0.2, 1.0, 1.0);
        let h = h_limit(&DesignKind::FullCohort, &pop, &[0, 1]).unwrap();
        assert!((h.values[0] - 0.9 * 0.8 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn srs_pair_limit_has_design_factor() {
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        for m in 2..=6 {
            let h = h_limit(&DesignKind::Srs { m }, &pop, &[0, 1]).unwrap();
            let expect = (m as f64 - 1.0) / m as f64 * 0.8 * 0.2;
            assert!((h.values[0] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn cm_pair_limit_matches_closed_form() {
        // h_01 = p (f0 f1 - sum_l f_{0,l} f_{1,l} q_l^2 / m_l)
        let model = SensSpecModel::new(0.2, 0.9, 0.7).unwrap();
        let pop = cm_population::<f64>(&model, 0.8, 1.0, 1.0).unwrap();
        let seg = &pop.segments()[0];
        let mix = seg.strata.as_ref().unwrap();
        for m in [[1usize, 1], [2, 1], [1, 2], [2, 2]] {
            let h = h_limit(&DesignKind::CounterMatching { m: m.to_vec() }, &pop, &[0, 1]).unwrap();
            let cross: f64 = (0..2)
                .map(|l| mix.f_within[l][0] * mix.f_within[l][1] * mix.q[l] * mix.q[l] / m[l] as f64)
                .sum();
            let expect = seg.p * (seg.f[0] * seg.f[1] - cross);
            assert!((h.values[0] - expect).abs() < 1e-12, "m={:?}", m);
        }
    }

    #[test]
    fn cm_triple_limit_matches_closed_form() {
        // h_011 closed form for the classical counter-matched design
        let model = SensSpecModel::new(0.2, 0.9, 0.9).unwrap();
        let pop = cm_population::<f64>(&model, 1.0, 1.0, 1.0).unwrap();
        let seg = &pop.segments()[0];
        let mix = seg.strata.as_ref().unwrap();
        let (f0, f1) = (seg.f[0], seg.f[1]);
        for m in [[1usize, 1], [2, 1], [1, 2], [2, 2]] {
            let h = h_limit(&DesignKind::CounterMatching { m: m.to_vec() }, &pop, &[0, 1, 1]).unwrap();
            let s1: f64 = (0..2)
                .map(|l| mix.f_within[l][0] * mix.f_within[l][1] * mix.q[l] * mix.q[l] / m[l] as f64)
                .sum();
            let s2: f64 = (0..2).map(|l| (1.0 - 3.0 * mix.f_within[l][1]) * mix.q[l]).sum();
            let s3: f64 = (0..2)
                .map(|l| {
                    mix.f_within[l][0]
                        * mix.f_within[l][1]
                        * (1.0 - 2.0 * mix.f_within[l][1])
                        * mix.q[l].powi(3)
                        / (m[l] * m[l]) as f64
                })
                .sum();
            let expect = seg.p * (f0 * f1 * f1 + s1 * s2 - s3);
            assert!((h.values[0] - expect).abs() < 1e-12, "m={:?}: {} vs {}", m, h.values[0], expect);
        }
    }

    #[test]
    fn null_identity_h011_plus_h100_is_h01() {
        let pop = classical_pop(0.7, 0.3, 2.0, 1.5);
        let model = SensSpecModel::new(0.3, 0.85, 0.75).unwrap();
        let pop_cm = cm_population::<f64>(&model, 0.7, 2.0, 1.5).unwrap();
        let designs: Vec<(DesignKind, &PopulationModel<f64>)> = vec![
            (DesignKind::FullCohort, &pop),
            (DesignKind::Srs { m: 4 }, &pop),
            (DesignKind::Matching { m: vec![2, 3] }, &pop_cm),
            (DesignKind::CounterMatching { m: vec![1, 2] }, &pop_cm),
        ];
        for (d, p) in designs {
            let h01 = h_limit(&d, p, &[0, 1]).unwrap();
            let h011 = h_limit(&d, p, &[0, 1, 1]).unwrap();
            let h100 = h_limit(&d, p, &[1, 0, 0]).unwrap();
            assert!(
                (h011.values[0] + h100.values[0] - h01.values[0]).abs() < 1e-12,
                "{:?}",
                d
            );
        }
    }

    #[test]
    fn full_cohort_null_sigma2() {
        // int p f0 f1 lambda0 = 0.16 -> sigma2 = 6.25
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        let s2 = sigma2_mh(&DesignKind::FullCohort, &pop, 1.0, &A01).unwrap();
        assert!((s2 - 6.25).abs() < 1e-10);
    }

    #[test]
    fn srs_null_relative_efficiency() {
        let pop = classical_pop(0.85, 0.25, 1.3, 2.0);
        let full = sigma2_mh(&DesignKind::FullCohort, &pop, 1.0, &A01).unwrap();
        for m in 2..=10 {
            let srs = sigma2_mh(&DesignKind::Srs { m }, &pop, 1.0, &A01).unwrap();
            let ratio = srs / full;
            let expect = m as f64 / (m as f64 - 1.0);
            assert!((ratio - expect).abs() < 1e-12, "m={}", m);
        }
    }

    #[test]
    fn srs_classical_closed_form() {
        // general-phi closed form for simple random sampling
        let (p, f1, lam, tau) = (0.9, 0.2, 1.4, 1.2);
        let pop = classical_pop(p, f1, lam, tau);
        let f0 = 1.0 - f1;
        for m in [2usize, 3, 5] {
            for phi in [0.3, 1.0, 2.5] {
                let s2 = sigma2_mh(&DesignKind::Srs { m }, &pop, phi, &A01).unwrap();
                let integral = p * f0 * f1 * lam * tau;
                let num = phi * p * f0 * f1 * ((1.0 + phi) + (f0 + phi * f1) * (m as f64 - 2.0)) * lam * tau;
                let expect = num / ((m as f64 - 1.0) * integral * integral);
                assert!((s2 - expect).abs() < 1e-9 * expect, "m={} phi={}", m, phi);
            }
        }
    }

    #[test]
    fn cm_perfect_surrogate_equals_full_cohort() {
        let model = SensSpecModel::new(0.2, 1.0, 1.0).unwrap();
        let pop_cm = cm_population::<f64>(&model, 1.0, 1.0, 1.0).unwrap();
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        let cm = sigma2_mh(&DesignKind::CounterMatching { m: vec![1, 1] }, &pop_cm, 1.0, &A01).unwrap();
        let full = sigma2_mh(&DesignKind::FullCohort, &pop, 1.0, &A01).unwrap();
        assert!((cm - full).abs() < 1e-12);
    }

    #[test]
    fn matching_single_stratum_equals_srs() {
        let pop_m = PopulationModel::time_constant_strata(
            0.8,
            vec![1.0],
            vec![vec![0.75, 0.25]],
            1.1,
            1.4,
        )
        .unwrap();
        let pop_s = classical_pop(0.8, 0.25, 1.1, 1.4);
        for m in 2..=5 {
            for phi in [0.5, 1.0, 3.0] {
                let a = sigma2_mh(&DesignKind::Matching { m: vec![m] }, &pop_m, phi, &A01).unwrap();
                let b = sigma2_mh(&DesignKind::Srs { m }, &pop_s, phi, &A01).unwrap();
                assert!((a - b).abs() < 1e-12 * b.max(1.0), "m={} phi={}", m, phi);
                for v in [vec![0, 1], vec![0, 1, 1], vec![0, 0, 1]] {
                    let ha = h_limit(&DesignKind::Matching { m: vec![m] }, &pop_m, &v).unwrap();
                    let hb = h_limit(&DesignKind::Srs { m }, &pop_s, &v).unwrap();
                    assert!((ha.values[0] - hb.values[0]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn e_psi_null_values() {
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        // full cohort at the null with p = 1: e = f1, psi = 1
        let (e, psi) = e_psi(&DesignKind::FullCohort, &pop, 1.0, &A01).unwrap();
        assert!((e.values[0] - 0.2).abs() < 1e-14);
        assert!((psi.values[0] - 1.0).abs() < 1e-14);

        // simple random sampling at the null: psi = 1/p
        let pop_cens = classical_pop(0.6, 0.2, 1.0, 1.0);
        let (e_srs, psi_srs) = e_psi(&DesignKind::Srs { m: 3 }, &pop_cens, 1.0, &A01).unwrap();
        assert!((e_srs.values[0] - 0.2).abs() < 1e-12);
        assert!((psi_srs.values[0] - 1.0 / 0.6).abs() < 1e-12);

        // counter-matching at the null: e = sum_l f_{1,l} q_l = f1
        let model = SensSpecModel::new(0.2, 0.9, 0.8).unwrap();
        let pop_cm = cm_population::<f64>(&model, 0.6, 1.0, 1.0).unwrap();
        let (e_cm, psi_cm) =
            e_psi(&DesignKind::CounterMatching { m: vec![1, 1] }, &pop_cm, 1.0, &A01).unwrap();
        assert!((e_cm.values[0] - 0.2).abs() < 1e-12);
        assert!((psi_cm.values[0] - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn mple_equals_mh_at_null() {
        let pop = classical_pop(0.75, 0.3, 1.2, 0.9);
        let model = SensSpecModel::new(0.3, 0.8, 0.85).unwrap();
        let pop_cm = cm_population::<f64>(&model, 0.75, 1.2, 0.9).unwrap();
        let designs: Vec<(DesignKind, &PopulationModel<f64>)> = vec![
            (DesignKind::FullCohort, &pop),
            (DesignKind::Srs { m: 3 }, &pop),
            (DesignKind::Matching { m: vec![2, 2] }, &pop_cm),
            (DesignKind::CounterMatching { m: vec![1, 1] }, &pop_cm),
        ];
        for (d, p) in designs {
            let mh = sigma2_mh(&d, p, 1.0, &A01).unwrap();
            let mple = mple_variance(&d, p, 1.0, &A01).unwrap();
            assert!((mh * (1.0 / mple.theta_scale) - 1.0).abs() < 1e-9, "{:?}", d);
        }
    }

    #[test]
    fn are_flat_at_one_for_m2() {
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        let grid: Vec<f64> = (-6..=6).map(|i| i as f64 / 2.0).collect();
        let rows = are_curve(&DesignKind::Srs { m: 2 }, &pop, &grid).unwrap();
        for r in rows {
            assert!((r.are - 1.0).abs() < 1e-9, "log_phi={} are={}", r.log_phi, r.are);
        }
    }

    #[test]
    fn are_figure_anchors() {
        let pop = classical_pop(1.0, 0.2, 1.0, 1.0);
        let r3 = are_curve(&DesignKind::Srs { m: 3 }, &pop, &[-2.8]).unwrap();
        assert!((r3[0].are - 0.942).abs() < 0.02, "{}", r3[0].are);
        let r10 = are_curve(&DesignKind::Srs { m: 10 }, &pop, &[2.8]).unwrap();
        assert!((r10[0].are - 0.879).abs() < 0.02, "{}", r10[0].are);

        let model = SensSpecModel::new(0.2, 0.9, 0.9).unwrap();
        let pop_cm = cm_population::<f64>(&model, 1.0, 1.0, 1.0).unwrap();
        let rcm = are_curve(&DesignKind::CounterMatching { m: vec![1, 1] }, &pop_cm, &[2.8]).unwrap();
        assert!((rcm[0].are - 0.990).abs() < 0.02, "{}", rcm[0].are);
    }

    #[test]
    fn information_ordering_full_vs_srs() {
        let pop = classical_pop(0.9, 0.2, 1.0, 1.0);
        for phi in [0.2, 1.0, 4.0] {
            let full = sigma2_mh(&DesignKind::FullCohort, &pop, phi, &A01).unwrap();
            for m in [2usize, 3, 8] {
                let srs = sigma2_mh(&DesignKind::Srs { m }, &pop, phi, &A01).unwrap();
                assert!(full <= srs + 1e-12, "phi={} m={}", phi, m);
            }
        }
    }

    #[test]
    fn piecewise_values_evaluate_by_segment() {
        let pop = PopulationModel::from_segments(
            vec![0.0, 0.5, 2.0],
            vec![
                crate::population::Segment { p: 1.0, lambda0: 1.0, f: vec![0.8, 0.2], strata: None },
                crate::population::Segment { p: 0.5, lambda0: 1.0, f: vec![0.5, 0.5], strata: None },
            ],
        )
        .unwrap();
        let h = h_limit(&DesignKind::FullCohort, &pop, &[0, 1]).unwrap();
        assert!((h.value_at(0.0f64) - 0.16).abs() < 1e-15);
        assert!((h.value_at(0.49) - 0.16f64).abs() < 1e-15);
        assert!((h.value_at(0.5) - 0.125f64).abs() < 1e-15);
        assert!((h.value_at(2.0) - 0.125f64).abs() < 1e-15);
    }

    #[test]
    fn generic_scalar_f32_path() {
        let pop = PopulationModel::time_constant(1.0f32, vec![0.8, 0.2], 1.0, 1.0).unwrap();
        let s2 = sigma2_mh(&DesignKind::FullCohort, &pop, 1.0f32, &[0.0, 1.0]).unwrap();
        assert!((s2 - 6.25).abs() < 1e-3);
    }

    #[test]
    fn multilevel_sigma2_full_vs_srs_limit() {
        // three exposure levels; simple random sampling approaches the full
        // cohort as m grows
        let alphas = [0.0, 1.0, 2.0];
        let pop = PopulationModel::time_constant(1.0, vec![0.6, 0.3, 0.1], 1.0, 1.0).unwrap();
        let full = sigma2_mh(&DesignKind::FullCohort, &pop, 1.5, &alphas).unwrap();
        let m20 = sigma2_mh(&DesignKind::Srs { m: 20 }, &pop, 1.5, &alphas).unwrap();
        let m5 = sigma2_mh(&DesignKind::Srs { m: 5 }, &pop, 1.5, &alphas).unwrap();
        assert!(full < m20 && m20 < m5);
        assert!((m20 - full) / full < 0.2);
    }
}
