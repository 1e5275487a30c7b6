//! Weighted Breslow-type estimator of the integrated baseline hazard.
//!
//! Each failure contributes a jump `1 / sum_i phi^{Z_i} w_i` over its sampled
//! set. The variance function combines the optional-variation term with a
//! drift correction for the estimation error in `phi`:
//! `sigma2_lambda(s, t) = omega2(min(s, t)) + B(s) sigma2_n B(t)`, all on the
//! scale of `sqrt(n) (Lambda_hat - Lambda)`.

use std::io::Write;

use thiserror::Error;

use crate::cohort::fmt_f64;
use crate::design::FailureStats;
use crate::num::Real;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Right-continuous nondecreasing step function with value 0 at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<F> {
    jump_times: Vec<F>,
    jump_sizes: Vec<F>,
    cumulative: Vec<F>,
}

impl<F: Real> StepFunction<F> {
    pub fn new(jump_times: Vec<F>, jump_sizes: Vec<F>) -> Self {
        assert_eq!(jump_times.len(), jump_sizes.len());
        debug_assert!(jump_times.windows(2).all(|w| w[0] <= w[1]));
        let mut cumulative = Vec::with_capacity(jump_sizes.len());
        let mut acc = F::zero();
        for &s in &jump_sizes {
            acc += s;
            cumulative.push(acc);
        }
        Self { jump_times, jump_sizes, cumulative }
    }

    pub fn zero() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    /// `sum of jump sizes at times <= t`.
    pub fn value(&self, t: F) -> F {
        let pos = self.jump_times.partition_point(|&jt| jt <= t);
        if pos == 0 {
            F::zero()
        } else {
            self.cumulative[pos - 1]
        }
    }

    pub fn jump_times(&self) -> &[F] {
        &self.jump_times
    }

    pub fn jump_sizes(&self) -> &[F] {
        &self.jump_sizes
    }

    pub fn total(&self) -> F {
        self.cumulative.last().copied().unwrap_or_else(F::zero)
    }
}

/// Baseline estimate with its variance ingredients.
#[derive(Debug, Clone)]
pub struct BaselineReport<F> {
    pub lambda_hat: StepFunction<F>,
    pub omega2_hat: StepFunction<F>,
    pub b_hat: StepFunction<F>,
    /// Variance estimate for `sqrt(n) (phi_hat - phi_0)` plugged into the
    /// drift term.
    pub sigma2_n: F,
    pub n: usize,
}

fn weighted_sums<F: Real>(stats: &FailureStats, alphas: &[F], phi: F) -> (F, F) {
    let mut s0 = F::zero();
    let mut s1 = F::zero();
    for (k, &w) in stats.level_weight_sums.iter().enumerate() {
        let wf = F::from_f64_(w);
        let a = alphas[k];
        s0 += phi.powf(a) * wf;
        s1 += a * phi.powf(a - F::one()) * wf;
    }
    (s0, s1)
}

/// The cumulative baseline hazard estimate; failures with an empty
/// denominator contribute zero jumps. Constant after the last failure time.
pub fn baseline_cumhaz<F: Real>(stats: &[FailureStats], alphas: &[F], phi: F) -> StepFunction<F> {
    let mut times = Vec::with_capacity(stats.len());
    let mut sizes = Vec::with_capacity(stats.len());
    for st in stats {
        let (s0, _) = weighted_sums(st, alphas, phi);
        times.push(F::from_f64_(st.time));
        sizes.push(if s0 > F::zero() { F::one() / s0 } else { F::zero() });
    }
    StepFunction::new(times, sizes)
}

/// Baseline estimate plus the uniformly consistent variance pieces.
pub fn baseline_variance<F: Real>(
    stats: &[FailureStats],
    alphas: &[F],
    phi: F,
    sigma2_n: F,
    n: usize,
) -> BaselineReport<F> {
    let nf = F::from_usize_(n);
    let mut times = Vec::with_capacity(stats.len());
    let mut lam = Vec::with_capacity(stats.len());
    let mut om = Vec::with_capacity(stats.len());
    let mut bb = Vec::with_capacity(stats.len());
    for st in stats {
        let (s0, s1) = weighted_sums(st, alphas, phi);
        times.push(F::from_f64_(st.time));
        if s0 > F::zero() {
            lam.push(F::one() / s0);
            om.push(nf / (s0 * s0));
            bb.push(s1 / (s0 * s0));
        } else {
            lam.push(F::zero());
            om.push(F::zero());
            bb.push(F::zero());
        }
    }
    BaselineReport {
        lambda_hat: StepFunction::new(times.clone(), lam),
        omega2_hat: StepFunction::new(times.clone(), om),
        b_hat: StepFunction::new(times, bb),
        sigma2_n,
        n,
    }
}

impl<F: Real> BaselineReport<F> {
    /// Covariance of `sqrt(n) (Lambda_hat - Lambda)` at `(s, t)`.
    pub fn sigma2_lambda(&self, s: F, t: F) -> F {
        let m = if s < t { s } else { t };
        self.omega2_hat.value(m) + self.b_hat.value(s) * self.sigma2_n * self.b_hat.value(t)
    }

    /// Standard error of `Lambda_hat(t)` itself.
    pub fn se_lambda(&self, t: F) -> F {
        (self.sigma2_lambda(t, t) / F::from_usize_(self.n)).sqrt()
    }
}

/// Write `t, lambda_hat, omega2_hat, B_hat, se_lambda` at each jump time.
pub fn write_baseline_csv<W: Write>(writer: W, report: &BaselineReport<f64>) -> Result<(), BaselineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "lambda_hat", "omega2_hat", "B_hat", "se_lambda"])?;
    for &t in report.lambda_hat.jump_times() {
        let mut row: Vec<String> = Vec::with_capacity(5);
        for v in [
            t,
            report.lambda_hat.value(t),
            report.omega2_hat.value(t),
            report.b_hat.value(t),
            report.se_lambda(t),
        ] {
            let mut s = String::new();
            fmt_f64(&mut s, v);
            row.push(s);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
