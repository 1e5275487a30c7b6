//! Exact enumeration of design probabilities on small risk sets.
//!
//! For every supported set `r` and every potential case `i` the oracle tables
//! `pi_t(r|i)`, `pi_t(r)`, and the closed-form weight `w_i(t, r)` in rational
//! arithmetic, so the identity `pi_t(r|i) = pi_t(r) w_i(t, r)` and the
//! normalization sums can be checked bit-exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::cohort::RiskSet;
use crate::design::{DesignKind, DesignSpec};

#[derive(Debug, Error)]
pub enum EnumerateError {
    #[error("risk set of size {0} exceeds the enumeration guard of {1}")]
    RiskSetTooLarge(usize, usize),
    #[error("stratum {stratum} has {available} members, need {needed}")]
    DeficientStratum { stratum: usize, available: usize, needed: usize },
    #[error("risk set has {available} members, need {needed}")]
    DeficientRiskSet { available: usize, needed: usize },
    #[error("design needs {expected} per-stratum sizes, got {got}")]
    StratumCountMismatch { expected: usize, got: usize },
}

const MAX_ENUM: usize = 12;

/// One `(r, i)` row of the oracle table. `set` holds positions into
/// `risk_set.members`, as does `case`.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub set: Vec<usize>,
    pub case: usize,
    pub pi_cond: BigRational,
    pub pi_set: BigRational,
    pub weight: BigRational,
}

#[derive(Debug, Clone)]
pub struct DesignTable {
    pub n_t: usize,
    pub rows: Vec<OracleRow>,
}

fn big(n: usize) -> BigInt {
    BigInt::from(n)
}

fn ratio(n: BigInt, d: BigInt) -> BigRational {
    BigRational::new(n, d)
}

pub fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut out = BigInt::one();
    for i in 0..k.min(n - k) {
        out = out * big(n - i) / big(i + 1);
    }
    out
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > pool.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // advance the index vector
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + pool.len() - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive table of `(r, i, pi_t(r|i), pi_t(r), w_i(t, r))` for a design.
pub fn enumerate_design(risk_set: &RiskSet, design: &DesignSpec) -> Result<DesignTable, EnumerateError> {
    let n_t = risk_set.n_t;
    if n_t > MAX_ENUM {
        return Err(EnumerateError::RiskSetTooLarge(n_t, MAX_ENUM));
    }
    let positions: Vec<usize> = (0..n_t).collect();
    let mut rows = Vec::new();

    match &design.kind {
        DesignKind::FullCohort => {
            let set = positions.clone();
            for &i in &set {
                rows.push(OracleRow {
                    set: set.clone(),
                    case: i,
                    pi_cond: BigRational::one(),
                    pi_set: BigRational::one(),
                    weight: BigRational::one(),
                });
            }
        }
        DesignKind::Srs { m } => {
            if n_t < *m {
                return Err(EnumerateError::DeficientRiskSet { available: n_t, needed: *m });
            }
            let pi_cond = ratio(BigInt::one(), binomial(n_t - 1, m - 1));
            let pi_set = ratio(BigInt::one(), binomial(n_t, *m));
            let weight = ratio(big(n_t), big(*m));
            for set in combinations(&positions, *m) {
                for &i in &set {
                    rows.push(OracleRow {
                        set: set.clone(),
                        case: i,
                        pi_cond: pi_cond.clone(),
                        pi_set: pi_set.clone(),
                        weight: weight.clone(),
                    });
                }
            }
        }
        DesignKind::Matching { m } => {
            let n_strata = risk_set.stratum_counts.len();
            if m.len() != n_strata {
                return Err(EnumerateError::StratumCountMismatch { expected: n_strata, got: m.len() });
            }
            for l in 0..n_strata {
                let c_l = risk_set.stratum_counts[l];
                if c_l == 0 {
                    continue;
                }
                if c_l < m[l] {
                    return Err(EnumerateError::DeficientStratum { stratum: l, available: c_l, needed: m[l] });
                }
                let members_l: Vec<usize> =
                    positions.iter().copied().filter(|&p| risk_set.member_strata[p] == l).collect();
                let pi_cond = ratio(BigInt::one(), binomial(c_l - 1, m[l] - 1));
                let pi_set = ratio(big(c_l), big(n_t)) * ratio(BigInt::one(), binomial(c_l, m[l]));
                let weight = ratio(big(n_t), big(m[l]));
                for set in combinations(&members_l, m[l]) {
                    for &i in &set {
                        rows.push(OracleRow {
                            set: set.clone(),
                            case: i,
                            pi_cond: pi_cond.clone(),
                            pi_set: pi_set.clone(),
                            weight: weight.clone(),
                        });
                    }
                }
            }
        }
        DesignKind::CounterMatching { m } => {
            let n_strata = risk_set.stratum_counts.len();
            if m.len() != n_strata {
                return Err(EnumerateError::StratumCountMismatch { expected: n_strata, got: m.len() });
            }
            let mut denom = BigInt::one();
            let mut per_stratum_sets: Vec<Vec<Vec<usize>>> = Vec::new();
            for l in 0..n_strata {
                let c_l = risk_set.stratum_counts[l];
                if c_l < m[l] {
                    return Err(EnumerateError::DeficientStratum { stratum: l, available: c_l, needed: m[l] });
                }
                denom *= binomial(c_l, m[l]);
                let members_l: Vec<usize> =
                    positions.iter().copied().filter(|&p| risk_set.member_strata[p] == l).collect();
                per_stratum_sets.push(combinations(&members_l, m[l]));
            }
            let pi_set = ratio(BigInt::one(), denom.clone());
            // cartesian product of per-stratum choices
            let mut sets: Vec<Vec<usize>> = vec![Vec::new()];
            for choices in &per_stratum_sets {
                let mut next = Vec::with_capacity(sets.len() * choices.len());
                for s in &sets {
                    for c in choices {
                        let mut merged = s.clone();
                        merged.extend_from_slice(c);
                        next.push(merged);
                    }
                }
                sets = next;
            }
            for mut set in sets {
                set.sort_unstable();
                for &i in &set {
                    let l = risk_set.member_strata[i];
                    let weight = ratio(big(risk_set.stratum_counts[l]), big(m[l]));
                    rows.push(OracleRow {
                        set: set.clone(),
                        case: i,
                        pi_cond: pi_set.clone() * weight.clone(),
                        pi_set: pi_set.clone(),
                        weight,
                    });
                }
            }
        }
    }

    Ok(DesignTable { n_t, rows })
}

impl DesignTable {
    /// `pi_t(r|i) = pi_t(r) w_i(t, r)` on every row, exactly.
    pub fn identity_holds(&self) -> bool {
        self.rows.iter().all(|r| r.pi_cond == &r.pi_set * &r.weight)
    }

    /// `pi_t(r) = n(t)^{-1} sum_{i in r} pi_t(r|i)` on every set, exactly.
    pub fn pi_set_consistent(&self) -> bool {
        let n = ratio(big(self.n_t), BigInt::one());
        self.grouped_sets().into_iter().all(|(set, pi_set)| {
            let total: BigRational = self
                .rows
                .iter()
                .filter(|r| r.set == set)
                .map(|r| r.pi_cond.clone())
                .sum();
            total / &n == pi_set
        })
    }

    /// Sum of `pi_t(r)` over all supported sets.
    pub fn sum_pi_sets(&self) -> BigRational {
        self.grouped_sets().into_iter().map(|(_, p)| p).sum()
    }

    /// Sum of `pi_t(r|i)` over all rows; equals `n(t)` for a valid design.
    pub fn total_pi_cond(&self) -> BigRational {
        self.rows.iter().map(|r| r.pi_cond.clone()).sum()
    }

    /// Sum of `pi_t(r|i)` over sets containing a fixed member; equals one.
    pub fn member_row_sum(&self, position: usize) -> BigRational {
        self.rows.iter().filter(|r| r.case == position).map(|r| r.pi_cond.clone()).sum()
    }

    /// All design identities at once: the weight factorization, the set-law
    /// consistency and normalization, and the per-member row sums.
    pub fn verify(&self) -> bool {
        self.identity_holds()
            && self.pi_set_consistent()
            && self.sum_pi_sets() == BigRational::one()
            && self.total_pi_cond() == BigRational::from_integer(self.n_t.into())
            && (0..self.n_t).all(|p| self.member_row_sum(p) == BigRational::one())
    }

    fn grouped_sets(&self) -> Vec<(Vec<usize>, BigRational)> {
        let mut out: Vec<(Vec<usize>, BigRational)> = Vec::new();
        for row in &self.rows {
            if out.last().map(|(s, _)| s != &row.set).unwrap_or(true) {
                out.push((row.set.clone(), row.pi_set.clone()));
            }
        }
        out
    }
}
