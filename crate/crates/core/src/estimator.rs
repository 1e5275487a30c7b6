//! The rate-ratio estimating equation, its solver, and variance estimators.
//!
//! Accumulated over failures, `R_jk` is the weighted frequency of level-`k`
//! members in the sampled sets of level-`j` cases. For each level pair
//! `j < k`, `G_jk(phi) = phi^{a_k} R_jk - phi^{a_j} R_kj` has mean zero at the
//! true rate ratio; the estimator solves
//! `U(phi) = n^{-1} sum c_jk G_jk(phi) G'_jk(phi) = 0`, which for the
//! dichotomous exposure reduces to the classical ratio `R_10 / R_01`.
//!
//! Everything downstream of accumulation depends on a failure only through
//! its increment vector `s_k = n(t)^{-1} sum of level-k weights`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::LevelSet;
use crate::design::{FailureStats, SampledFailure};
use crate::num::{falling_factorial, Real};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no failures to accumulate")]
    EmptyFailures,
    #[error("failure at t={0}: case level {1} out of range")]
    BadCaseLevel(f64, usize),
    #[error("failure at t={0}: non-positive weight sum")]
    BadWeights(f64),
    #[error("estimating equation is non-informative: no pair with c > 0 and R_jk + R_kj > 0")]
    NonInformative,
    #[error("classical estimator undefined: R_01 = 0")]
    NoFiniteRoot,
    #[error("no sign change of the score inside the search window")]
    NoRootInWindow,
    #[error("gamma estimate is zero; variance unavailable")]
    ZeroGamma,
    #[error("pair covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("model-based variation: zero denominator at t={0}")]
    ZeroDenominator(f64),
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    #[error("custom c weights: expected {expected}, got {got}")]
    BadCustomWeights { expected: usize, got: usize },
    #[error("stratified estimation: sampled set at t={0} spans more than one stratum")]
    MixedStrata(f64),
}

/// Per-failure increment retained for variance estimation.
#[derive(Debug, Clone)]
pub struct Increment<F> {
    pub case_level: usize,
    pub case_stratum: usize,
    pub n_t: F,
    /// `s_k = n(t)^{-1} sum_{i in sampled set, Z_i = alpha_k} w_i`.
    pub s: Vec<F>,
}

/// Accumulated estimating-equation state.
#[derive(Debug, Clone)]
pub struct EstimatorState<F> {
    alphas: Vec<F>,
    /// Row-major `(eta+1) x (eta+1)`; `r[j][k]` sums `s_k` over level-`j` cases.
    r: Vec<F>,
    increments: Vec<Increment<F>>,
    n: usize,
    c: Vec<F>,
}

fn pair_count(k: usize) -> usize {
    k * (k - 1) / 2
}

fn pairs(k_levels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pair_count(k_levels));
    for j in 0..k_levels {
        for k in j + 1..k_levels {
            out.push((j, k));
        }
    }
    out
}

impl<F: Real> EstimatorState<F> {
    /// Build a state from a raw `R` matrix; no increments, so variance
    /// estimation is unavailable. Intended for solver-level work.
    pub fn from_r_matrix(alphas: Vec<F>, r: Vec<F>, n: usize) -> Self {
        let k = alphas.len();
        assert_eq!(r.len(), k * k);
        let c = vec![F::one(); pair_count(k)];
        Self { alphas, r, increments: Vec::new(), n, c }
    }

    pub fn level_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self, j: usize, k: usize) -> F {
        self.r[j * self.alphas.len() + k]
    }

    pub fn increments(&self) -> &[Increment<F>] {
        &self.increments
    }

    pub fn c_weights(&self) -> &[F] {
        &self.c
    }

    pub fn set_c(&mut self, c: Vec<F>) -> Result<(), EstimateError> {
        let expected = pair_count(self.alphas.len());
        if c.len() != expected {
            return Err(EstimateError::BadCustomWeights { expected, got: c.len() });
        }
        self.c = c;
        Ok(())
    }

    /// `d^p/dphi^p G_jk(phi)` for `j < k`, using falling factorials.
    pub fn g_value(&self, j: usize, k: usize, phi: F, p: usize) -> F {
        let (aj, ak) = (self.alphas[j], self.alphas[k]);
        let term_k = falling_factorial(ak, p) * phi.powf(ak - F::from_usize_(p)) * self.r(j, k);
        let term_j = falling_factorial(aj, p) * phi.powf(aj - F::from_usize_(p)) * self.r(k, j);
        term_k - term_j
    }

    /// The estimating function `U(phi) = n^{-1} sum c_jk G_jk G'_jk`.
    pub fn score(&self, phi: F) -> F {
        let mut total = F::zero();
        for (p, (j, k)) in pairs(self.alphas.len()).into_iter().enumerate() {
            total += self.c[p] * self.g_value(j, k, phi, 0) * self.g_value(j, k, phi, 1);
        }
        total / F::from_usize_(self.n)
    }

    fn score_derivative(&self, phi: F) -> F {
        let mut total = F::zero();
        for (p, (j, k)) in pairs(self.alphas.len()).into_iter().enumerate() {
            let g0 = self.g_value(j, k, phi, 0);
            let g1 = self.g_value(j, k, phi, 1);
            let g2 = self.g_value(j, k, phi, 2);
            total += self.c[p] * (g1 * g1 + g0 * g2);
        }
        total / F::from_usize_(self.n)
    }

    /// The weighted sum of squares `n^{-1} sum c_jk G_jk^2`.
    pub fn ssq(&self, phi: F) -> F {
        let mut total = F::zero();
        for (p, (j, k)) in pairs(self.alphas.len()).into_iter().enumerate() {
            let g = self.g_value(j, k, phi, 0);
            total += self.c[p] * g * g;
        }
        total / F::from_usize_(self.n)
    }

    fn non_trivial(&self) -> bool {
        pairs(self.alphas.len())
            .into_iter()
            .enumerate()
            .any(|(p, (j, k))| self.c[p] > F::zero() && self.r(j, k) + self.r(k, j) > F::zero())
    }

    /// Solve `U(phi) = 0`.
    ///
    /// The dichotomous case returns `R_10 / R_01` exactly. Otherwise the score
    /// is scanned on a log grid over the search window, every sign-change
    /// bracket is refined by safeguarded Newton, and among the refined roots
    /// the weighted-SSQ minimizer is returned.
    pub fn solve_phi(&self, options: &SolveOptions) -> Result<PhiSolution<F>, EstimateError> {
        if !self.non_trivial() {
            return Err(EstimateError::NonInformative);
        }
        let k_levels = self.alphas.len();
        if k_levels == 2 && self.alphas[1] == F::one() {
            let (r10, r01) = (self.r(1, 0), self.r(0, 1));
            if r01 == F::zero() {
                return Err(EstimateError::NoFiniteRoot);
            }
            if r10 == F::zero() {
                return Ok(PhiSolution { phi: F::zero(), degenerate: vec!["phi at zero boundary".into()] });
            }
            return Ok(PhiSolution { phi: r10 / r01, degenerate: Vec::new() });
        }

        let lo = F::from_f64_(options.window.0).ln();
        let hi = F::from_f64_(options.window.1).ln();
        let points = options.grid_points.max(8);
        let step = (hi - lo) / F::from_usize_(points - 1);
        let mut brackets = Vec::new();
        let mut prev_theta = lo;
        let mut prev_u = self.score(prev_theta.exp());
        for i in 1..points {
            let theta = lo + step * F::from_usize_(i);
            let u = self.score(theta.exp());
            if prev_u == F::zero() || prev_u.signum() != u.signum() {
                brackets.push((prev_theta, theta, prev_u, u));
            }
            prev_theta = theta;
            prev_u = u;
        }
        if brackets.is_empty() {
            return Err(EstimateError::NoRootInWindow);
        }

        let mut best: Option<(F, F)> = None;
        for (tlo, thi, ulo, uhi) in brackets {
            let theta = self.refine_root(tlo, thi, ulo, uhi);
            let phi = theta.exp();
            let ssq = self.ssq(phi);
            if best.map(|(_, s)| ssq < s).unwrap_or(true) {
                best = Some((phi, ssq));
            }
        }
        let (phi, _) = best.unwrap();
        Ok(PhiSolution { phi, degenerate: Vec::new() })
    }

    /// Safeguarded Newton on the log scale within a sign-change bracket.
    fn refine_root(&self, mut lo: F, mut hi: F, mut ulo: F, _uhi: F) -> F {
        let mut theta = (lo + hi) / F::two();
        for _ in 0..200 {
            let phi = theta.exp();
            let u = self.score(phi);
            if u == F::zero() {
                return theta;
            }
            if u.signum() == ulo.signum() {
                lo = theta;
                ulo = u;
            } else {
                hi = theta;
            }
            // d/dtheta U(e^theta) = phi U'(phi)
            let du = phi * self.score_derivative(phi);
            let newton = theta - u / du;
            theta = if du != F::zero() && newton > lo && newton < hi {
                newton
            } else {
                (lo + hi) / F::two()
            };
            if hi - lo < F::from_f64_(1e-15) {
                break;
            }
        }
        theta
    }

    /// Scaled optional-variation estimate of the integrals `I_jk`, `I_jkq`.
    pub fn optional_variation(&self, phi_hat: F) -> IhatTensors<F> {
        let k = self.alphas.len();
        // u[iota][a][b] = sum over level-iota-case failures of s_a s_b
        let mut u = vec![F::zero(); k * k * k];
        for inc in &self.increments {
            let base = inc.case_level * k * k;
            for a in 0..k {
                if inc.s[a] == F::zero() {
                    continue;
                }
                for b in 0..k {
                    u[base + a * k + b] += inc.s[a] * inc.s[b];
                }
            }
        }
        let nf = F::from_usize_(self.n);
        let mut triple = vec![F::zero(); k * k * k];
        for a in 0..k {
            for b in a..k {
                for c in b..k {
                    let perms = distinct_perms3(a, b, c);
                    let xi = F::one() / F::from_usize_(perms.len());
                    let mut total = F::zero();
                    for (i0, k1, k2) in perms {
                        total += xi * phi_hat.powf(-self.alphas[i0]) * u[i0 * k * k + k1 * k + k2];
                    }
                    let val = total / nf;
                    write_sym3(&mut triple, k, a, b, c, val);
                }
            }
        }
        IhatTensors { k, pair: self.pair_ihat(phi_hat), triple }
    }

    /// Model-based (estimated predictable variation) alternative to
    /// [`Self::optional_variation`]; every failure contributes.
    pub fn model_variation(&self, phi_hat: F) -> Result<IhatTensors<F>, EstimateError> {
        let k = self.alphas.len();
        let mut triple = vec![F::zero(); k * k * k];
        let nf = F::from_usize_(self.n);
        for inc in &self.increments {
            let mut denom = F::zero();
            for a in 0..k {
                denom += phi_hat.powf(self.alphas[a]) * inc.s[a];
            }
            if denom <= F::zero() {
                return Err(EstimateError::ZeroDenominator(inc.n_t.to_f64().unwrap_or(f64::NAN)));
            }
            for a in 0..k {
                for b in a..k {
                    for c in b..k {
                        let val = inc.s[a] * inc.s[b] * inc.s[c] / denom;
                        add_sym3(&mut triple, k, a, b, c, val);
                    }
                }
            }
        }
        for v in triple.iter_mut() {
            *v /= nf;
        }
        Ok(IhatTensors { k, pair: self.pair_ihat(phi_hat), triple })
    }

    fn pair_ihat(&self, phi_hat: F) -> Vec<F> {
        let k = self.alphas.len();
        let nf = F::from_usize_(self.n);
        let half = F::one() / F::two();
        let mut pair = vec![F::zero(); k * k];
        for j in 0..k {
            for q in 0..k {
                if j == q {
                    continue;
                }
                let v = half
                    * (phi_hat.powf(-self.alphas[j]) * self.r(j, q)
                        + phi_hat.powf(-self.alphas[q]) * self.r(q, j))
                    / nf;
                pair[j * k + q] = v;
            }
        }
        pair
    }

    /// Assemble the sandwich variance from estimated integrals.
    pub fn variance(&self, ihat: &IhatTensors<F>, phi_hat: F, method: VarianceMethod) -> Result<VarianceReport<F>, EstimateError> {
        let k = self.alphas.len();
        let plist = pairs(k);
        let beta: Vec<F> = plist
            .iter()
            .map(|&(j, q)| {
                (self.alphas[q] - self.alphas[j])
                    * phi_hat.powf(self.alphas[q] + self.alphas[j] - F::one())
                    * ihat.pair(j, q)
            })
            .collect();
        let np = plist.len();
        let mut gamma_mat = vec![F::zero(); np * np];
        for (pi, &(j, kk)) in plist.iter().enumerate() {
            for (qi, &(p, q)) in plist.iter().enumerate() {
                let ind = |a: usize, b: usize| if a == b { F::one() } else { F::zero() };
                let term1 = phi_hat.powf(self.alphas[j] + self.alphas[kk] + self.alphas[q])
                    * (ind(j, p) - ind(kk, p))
                    * ihat.triple(j, kk, q);
                let term2 = phi_hat.powf(self.alphas[j] + self.alphas[kk] + self.alphas[p])
                    * (ind(kk, q) - ind(j, q))
                    * ihat.triple(j, kk, p);
                gamma_mat[pi * np + qi] = term1 + term2;
            }
        }
        let gamma_hat: F = (0..np).map(|p| self.c[p] * beta[p] * beta[p]).sum();
        if gamma_hat == F::zero() {
            return Err(EstimateError::ZeroGamma);
        }
        let mut v2 = F::zero();
        for p in 0..np {
            for q in 0..np {
                v2 += self.c[p] * beta[p] * gamma_mat[p * np + q] * beta[q] * self.c[q];
            }
        }
        let sigma2 = v2 / (gamma_hat * gamma_hat);
        Ok(VarianceReport {
            phi_hat,
            sigma2,
            sigma2_theta: sigma2 / (phi_hat * phi_hat),
            beta,
            gamma_mat,
            gamma_hat,
            ihat: ihat.clone(),
            method,
        })
    }
}

fn sym3_index(k: usize, a: usize, b: usize, c: usize) -> usize {
    a * k * k + b * k + c
}

fn write_sym3<F: Real>(t: &mut [F], k: usize, a: usize, b: usize, c: usize, val: F) {
    for (x, y, z) in distinct_perms3(a, b, c) {
        t[sym3_index(k, x, y, z)] = val;
    }
}

fn add_sym3<F: Real>(t: &mut [F], k: usize, a: usize, b: usize, c: usize, val: F) {
    for (x, y, z) in distinct_perms3(a, b, c) {
        t[sym3_index(k, x, y, z)] += val;
    }
}

fn distinct_perms3(a: usize, b: usize, c: usize) -> Vec<(usize, usize, usize)> {
    let all = [
        (a, b, c),
        (a, c, b),
        (b, a, c),
        (b, c, a),
        (c, a, b),
        (c, b, a),
    ];
    let mut out: Vec<(usize, usize, usize)> = Vec::with_capacity(6);
    for p in all {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Estimated integrals: `pair(j, k)` approximates `I_jk`, `triple(j, k, q)`
/// approximates `I_jkq`; both symmetric in their indices.
#[derive(Debug, Clone)]
pub struct IhatTensors<F> {
    k: usize,
    pair: Vec<F>,
    triple: Vec<F>,
}

impl<F: Real> IhatTensors<F> {
    pub fn pair(&self, j: usize, q: usize) -> F {
        self.pair[j * self.k + q]
    }

    pub fn triple(&self, a: usize, b: usize, c: usize) -> F {
        self.triple[sym3_index(self.k, a, b, c)]
    }
}

#[derive(Debug, Clone)]
pub struct PhiSolution<F> {
    pub phi: F,
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Search window for phi, scanned on the log scale.
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_window() -> (f64, f64) {
    (1e-6, 1e6)
}

fn default_grid_points() -> usize {
    400
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { window: default_window(), grid_points: default_grid_points() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    #[default]
    Optional,
    Model,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CWeights {
    #[default]
    Equal,
    Optimal,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EstimateOptions {
    #[serde(default)]
    pub c: CWeights,
    #[serde(default)]
    pub variance: VarianceMethod,
    #[serde(default)]
    pub solve: SolveOptions,
}

/// Variance estimate bundle for one solve.
#[derive(Debug, Clone)]
pub struct VarianceReport<F> {
    pub phi_hat: F,
    /// Asymptotic variance of `sqrt(n) (phi_hat - phi_0)`.
    pub sigma2: F,
    /// Same on the log scale, `sigma2 / phi_hat^2`.
    pub sigma2_theta: F,
    pub beta: Vec<F>,
    /// Pair-by-pair covariance estimates, row-major.
    pub gamma_mat: Vec<F>,
    pub gamma_hat: F,
    /// The estimated integrals the pieces above were assembled from.
    pub ihat: IhatTensors<F>,
    pub method: VarianceMethod,
}

/// Final result of an estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub phi_hat: f64,
    pub theta_hat: f64,
    pub sigma2: Option<f64>,
    pub sigma2_theta: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    pub failures: usize,
    pub c_weights: Vec<f64>,
    pub variance_method: String,
    pub degenerate_flags: Vec<String>,
}

/// Accumulate failure statistics into estimating-equation state.
pub fn accumulate(stats: &[FailureStats], levels: &LevelSet, n: usize) -> Result<EstimatorState<f64>, EstimateError> {
    if stats.is_empty() {
        return Err(EstimateError::EmptyFailures);
    }
    let k = levels.count();
    let alphas: Vec<f64> = levels.alphas().to_vec();
    let mut r = vec![0.0; k * k];
    let mut increments = Vec::with_capacity(stats.len());
    for st in stats {
        if st.case_level >= k {
            return Err(EstimateError::BadCaseLevel(st.time, st.case_level));
        }
        let total: f64 = st.level_weight_sums.iter().sum();
        if !(total > 0.0) {
            return Err(EstimateError::BadWeights(st.time));
        }
        let s: Vec<f64> = st.level_weight_sums.iter().map(|w| w / st.n_t).collect();
        for (kk, sk) in s.iter().enumerate() {
            r[st.case_level * k + kk] += sk;
        }
        increments.push(Increment { case_level: st.case_level, case_stratum: st.case_stratum, n_t: st.n_t, s });
    }
    Ok(EstimatorState { alphas, r, increments, n, c: vec![1.0; pair_count(k)] })
}

/// Accumulate from fully materialized sampled failures.
pub fn accumulate_sampled(sampled: &[SampledFailure], levels: &LevelSet, n: usize) -> Result<EstimatorState<f64>, EstimateError> {
    let stats: Vec<FailureStats> =
        sampled.iter().map(|sf| FailureStats::from_sampled(sf, levels.count())).collect();
    accumulate(&stats, levels, n)
}

/// Optimal pair weights minimizing the asymptotic variance.
///
/// With `B = diag(beta)` and `Gamma` the pair covariance matrix, factor
/// `B Gamma B = M' M` (Cholesky); the optimizer is `c = M^{-1} d` with `d`
/// the top eigenvector of the rank-one `X = (M^{-1})' B^2 11' B^2 M^{-1}`,
/// computed directly as the solution of `(B Gamma B) c = B^2 1`. Returns the
/// weights and the optimal variance `1 / lambda_max`.
pub fn optimal_c<F: Real>(beta: &[F], gamma_mat: &[F]) -> Result<(Vec<F>, F), EstimateError> {
    let np = beta.len();
    assert_eq!(gamma_mat.len(), np * np);
    let mut a = vec![F::zero(); np * np];
    for p in 0..np {
        for q in 0..np {
            a[p * np + q] = beta[p] * gamma_mat[p * np + q] * beta[q];
        }
    }
    let chol = cholesky(&a, np).ok_or(EstimateError::NotPositiveDefinite)?;
    let rhs: Vec<F> = beta.iter().map(|&b| b * b).collect();
    let c = chol_solve(&chol, np, &rhs);
    let lambda: F = (0..np).map(|p| rhs[p] * c[p]).sum();
    if !(lambda > F::zero()) {
        return Err(EstimateError::NotPositiveDefinite);
    }
    // scale-invariant: normalize the largest weight to one for reporting
    let max = c.iter().fold(F::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
    let c = if max > F::zero() { c.iter().map(|&v| v / max).collect() } else { c };
    Ok((c, F::one() / lambda))
}

/// Evaluate `sigma^2(c) = (c' B Gamma B c) / (1' B^2 c)^2` for any weights.
pub fn sigma2_for_c<F: Real>(beta: &[F], gamma_mat: &[F], c: &[F]) -> F {
    let np = beta.len();
    let mut v2 = F::zero();
    for p in 0..np {
        for q in 0..np {
            v2 += c[p] * beta[p] * gamma_mat[p * np + q] * beta[q] * c[q];
        }
    }
    let gamma: F = (0..np).map(|p| c[p] * beta[p] * beta[p]).sum();
    v2 / (gamma * gamma)
}

fn cholesky<F: Real>(a: &[F], n: usize) -> Option<Vec<F>> {
    let mut l = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= F::zero() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn chol_solve<F: Real>(l: &[F], n: usize, b: &[F]) -> Vec<F> {
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

fn wald_ci(theta_hat: f64, sigma2_theta: f64, n: usize) -> (f64, f64) {
    let se = (sigma2_theta / n as f64).sqrt();
    ((theta_hat - 1.96 * se).exp(), (theta_hat + 1.96 * se).exp())
}

fn run_estimate(
    mut state: EstimatorState<f64>,
    options: &EstimateOptions,
) -> Result<EstimateResult, EstimateError> {
    match &options.c {
        CWeights::Equal => {}
        CWeights::Custom(c) => state.set_c(c.clone())?,
        CWeights::Optimal => {}
    }
    let failures = state.increments.len();
    let n = state.n;
    let sol = state.solve_phi(&options.solve)?;
    if !sol.degenerate.is_empty() {
        return Ok(EstimateResult {
            phi_hat: sol.phi,
            theta_hat: if sol.phi > 0.0 { sol.phi.ln() } else { f64::NEG_INFINITY },
            sigma2: None,
            sigma2_theta: None,
            ci_low: None,
            ci_high: None,
            n,
            failures,
            c_weights: state.c.clone(),
            variance_method: method_name(options.variance).into(),
            degenerate_flags: sol.degenerate,
        });
    }
    let mut phi = sol.phi;
    let mut degenerate = Vec::new();

    if matches!(options.c, CWeights::Optimal) && state.c.len() > 1 {
        // stage 1 at equal weights estimates beta and Gamma; stage 2 re-solves
        let ihat = variation(&state, phi, options.variance)?;
        let report = state.variance(&ihat, phi, options.variance)?;
        match optimal_c(&report.beta, &report.gamma_mat) {
            Ok((c_opt, _)) => {
                state.set_c(c_opt)?;
                let sol2 = state.solve_phi(&options.solve)?;
                if sol2.degenerate.is_empty() {
                    phi = sol2.phi;
                } else {
                    degenerate.extend(sol2.degenerate);
                }
            }
            Err(EstimateError::NotPositiveDefinite) => {
                degenerate.push("estimated pair covariance not positive definite; kept equal c".into());
            }
            Err(e) => return Err(e),
        }
    }

    let ihat = variation(&state, phi, options.variance)?;
    let report = state.variance(&ihat, phi, options.variance)?;
    let theta = phi.ln();
    let (lo, hi) = wald_ci(theta, report.sigma2_theta, n);
    Ok(EstimateResult {
        phi_hat: phi,
        theta_hat: theta,
        sigma2: Some(report.sigma2),
        sigma2_theta: Some(report.sigma2_theta),
        ci_low: Some(lo),
        ci_high: Some(hi),
        n,
        failures,
        c_weights: state.c.clone(),
        variance_method: method_name(options.variance).into(),
        degenerate_flags: degenerate,
    })
}

fn variation(
    state: &EstimatorState<f64>,
    phi: f64,
    method: VarianceMethod,
) -> Result<IhatTensors<f64>, EstimateError> {
    match method {
        VarianceMethod::Optional => Ok(state.optional_variation(phi)),
        VarianceMethod::Model => state.model_variation(phi),
    }
}

fn method_name(m: VarianceMethod) -> &'static str {
    match m {
        VarianceMethod::Optional => "optional",
        VarianceMethod::Model => "model",
    }
}

/// Full estimation pipeline over failure statistics.
pub fn estimate(
    stats: &[FailureStats],
    levels: &LevelSet,
    n: usize,
    options: &EstimateOptions,
) -> Result<EstimateResult, EstimateError> {
    let state = accumulate(stats, levels, n)?;
    run_estimate(state, options)
}

/// Estimation for matched data with stratum-specific baselines.
///
/// Each failure's sampled set must lie within a single stratum. The point
/// estimate coincides with the pooled [`estimate`]; the variance integrals
/// are accumulated stratum by stratum and summed, which is the estimator the
/// stratified-baseline asymptotics call for.
pub fn estimate_stratified(
    sampled: &[SampledFailure],
    levels: &LevelSet,
    n: usize,
    options: &EstimateOptions,
) -> Result<EstimateResult, EstimateError> {
    if sampled.is_empty() {
        return Err(EstimateError::EmptyFailures);
    }
    let mut strata: Vec<String> = Vec::new();
    let mut stats = Vec::with_capacity(sampled.len());
    for sf in sampled {
        let first = &sf.members[0].stratum;
        if sf.members.iter().any(|m| &m.stratum != first) {
            return Err(EstimateError::MixedStrata(sf.time));
        }
        let sidx = match strata.iter().position(|s| s == first) {
            Some(i) => i,
            None => {
                strata.push(first.clone());
                strata.len() - 1
            }
        };
        let mut st = FailureStats::from_sampled(sf, levels.count());
        st.case_stratum = sidx;
        stats.push(st);
    }
    // per-stratum accumulation; the pooled state is their exact sum
    let state = accumulate(&stats, levels, n)?;
    run_estimate(state, options)
}
