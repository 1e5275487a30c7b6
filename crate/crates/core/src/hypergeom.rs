//! Multivariate hypergeometric moments (exact) and multinomial expectations.
//!
//! The hypergeometric side runs in rational arithmetic: moments can be taken
//! either by enumerating the pmf over its support or through the closed
//! factorial-moment identities, and the two must agree exactly. The
//! multinomial side provides the large-population limits used by the
//! asymptotic calculators.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::enumerate::binomial;
use crate::num::{falling_factorial, Real};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("moment order {0} exceeds the supported maximum of 3")]
    OrderTooHigh(usize),
    #[error("sample size {m} exceeds population {n}")]
    SampleTooLarge { m: usize, n: usize },
    #[error("multinomial enumeration guard: m={0} > 30")]
    EnumerationTooLarge(usize),
    #[error("index {0} out of range for {1} categories")]
    BadIndex(usize, usize),
}

fn big(n: usize) -> BigInt {
    BigInt::from(n)
}

/// Enumerate the support of `H(n_vec, m)` and apply `g` to each point.
pub fn hypergeom_expect<G>(n_vec: &[usize], m: usize, mut g: G) -> Result<BigRational, MomentError>
where
    G: FnMut(&[usize]) -> BigRational,
{
    let n: usize = n_vec.iter().sum();
    if m > n {
        return Err(MomentError::SampleTooLarge { m, n });
    }
    let denom = binomial(n, m);
    let mut x = vec![0usize; n_vec.len()];
    let mut total = BigRational::zero();
    fn rec<G: FnMut(&[usize]) -> BigRational>(
        n_vec: &[usize],
        x: &mut Vec<usize>,
        j: usize,
        left: usize,
        coef: BigInt,
        total: &mut BigRational,
        g: &mut G,
    ) {
        if j + 1 == n_vec.len() {
            if left > n_vec[j] {
                return;
            }
            x[j] = left;
            let c = coef * binomial(n_vec[j], left);
            *total += BigRational::from(c) * g(x);
            return;
        }
        for v in 0..=left.min(n_vec[j]) {
            x[j] = v;
            rec(n_vec, x, j + 1, left - v, coef.clone() * binomial(n_vec[j], v), total, g);
        }
    }
    rec(n_vec, &mut x, 0, m, BigInt::one(), &mut total, &mut g);
    Ok(total / BigRational::from(denom))
}

/// Exact `E[prod_{k in v} X_k]` by pmf enumeration, `|v| <= 3` with repeats
/// meaning powers.
pub fn hypergeom_moment(n_vec: &[usize], m: usize, v: &[usize]) -> Result<BigRational, MomentError> {
    if v.len() > 3 {
        return Err(MomentError::OrderTooHigh(v.len()));
    }
    for &k in v {
        if k >= n_vec.len() {
            return Err(MomentError::BadIndex(k, n_vec.len()));
        }
    }
    hypergeom_expect(n_vec, m, |x| {
        let mut prod = BigInt::one();
        for &k in v {
            prod *= big(x[k]);
        }
        BigRational::from(prod)
    })
}

fn falling_big(n: usize, p: usize) -> BigInt {
    let mut out = BigInt::one();
    for i in 0..p {
        if i > n {
            return BigInt::zero();
        }
        out *= big(n - i);
    }
    out
}

/// Multiplicity pattern of a moment multiset: sorted (index, power) pairs.
fn powers(v: &[usize]) -> Vec<(usize, usize)> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for k in sorted {
        match out.last_mut() {
            Some((idx, p)) if *idx == k => *p += 1,
            _ => out.push((k, 1)),
        }
    }
    out
}

/// Exact `E[prod X_k]` via factorial-moment identities,
/// `E[(X_j)_a (X_k)_b ...] = (m)_{a+b+...} (n_j)_a (n_k)_b ... / (n)_{a+b+...}`,
/// expanded to power moments for total order up to 3.
pub fn hypergeom_moment_closed(n_vec: &[usize], m: usize, v: &[usize]) -> Result<BigRational, MomentError> {
    let n: usize = n_vec.iter().sum();
    if m > n {
        return Err(MomentError::SampleTooLarge { m, n });
    }
    for &k in v {
        if k >= n_vec.len() {
            return Err(MomentError::BadIndex(k, n_vec.len()));
        }
    }
    let fact = |orders: &[(usize, usize)]| -> BigRational {
        let total: usize = orders.iter().map(|&(_, p)| p).sum();
        let mut num = falling_big(m, total);
        if num.is_zero() {
            // (X)_p vanishes identically when p > m
            return BigRational::zero();
        }
        for &(k, p) in orders {
            num *= falling_big(n_vec[k], p);
        }
        BigRational::new(num, falling_big(n, total))
    };
    let pw = powers(v);
    let r = match (pw.len(), v.len()) {
        (_, 0) => BigRational::one(),
        (1, 1) => fact(&pw),
        (2, 2) => fact(&pw),
        // E[X^2] = E[(X)_2] + E[X]
        (1, 2) => {
            let j = pw[0].0;
            fact(&[(j, 2)]) + fact(&[(j, 1)])
        }
        (3, 3) => fact(&pw),
        // E[X_j^2 X_k] = E[(X_j)_2 X_k] + E[X_j X_k]
        (2, 3) => {
            let (&(a, pa), &(b, _)) = (&pw[0], &pw[1]);
            let (j, k) = if pa == 2 { (a, b) } else { (b, a) };
            fact(&[(j, 2), (k, 1)]) + fact(&[(j, 1), (k, 1)])
        }
        // E[X^3] = E[(X)_3] + 3 E[(X)_2] + E[X]
        (1, 3) => {
            let j = pw[0].0;
            fact(&[(j, 3)]) + BigRational::from(big(3)) * fact(&[(j, 2)]) + fact(&[(j, 1)])
        }
        _ => return Err(MomentError::OrderTooHigh(v.len())),
    };
    Ok(r)
}

/// Multinomial limit `E[prod_{k in v} Y_k]` for `Y ~ M(f, m)`, order <= 3.
pub fn multinomial_moment<F: Real>(f: &[F], m: usize, v: &[usize]) -> Result<F, MomentError> {
    for &k in v {
        if k >= f.len() {
            return Err(MomentError::BadIndex(k, f.len()));
        }
    }
    let mf = F::from_usize_(m);
    let pw = powers(v);
    let fm = |p: usize| falling_factorial(mf, p);
    let r = match (pw.len(), v.len()) {
        (_, 0) => F::one(),
        (1, 1) => fm(1) * f[pw[0].0],
        (2, 2) => fm(2) * f[pw[0].0] * f[pw[1].0],
        (1, 2) => {
            let fj = f[pw[0].0];
            fm(1) * fj + fm(2) * fj * fj
        }
        (3, 3) => fm(3) * f[pw[0].0] * f[pw[1].0] * f[pw[2].0],
        (2, 3) => {
            let (&(a, pa), &(b, _)) = (&pw[0], &pw[1]);
            let (j, k) = if pa == 2 { (a, b) } else { (b, a) };
            fm(2) * f[j] * f[k] + fm(3) * f[j] * f[j] * f[k]
        }
        (1, 3) => {
            let fj = f[pw[0].0];
            fm(1) * fj + F::from_usize_(3) * fm(2) * fj * fj + fm(3) * fj * fj * fj
        }
        _ => return Err(MomentError::OrderTooHigh(v.len())),
    };
    Ok(r)
}

/// `E[g(Y)]` for `Y ~ M(f, m)` by enumerating all compositions of `m`.
pub fn multinomial_expect<F, G>(f: &[F], m: usize, mut g: G) -> Result<F, MomentError>
where
    F: Real,
    G: FnMut(&[usize]) -> F,
{
    if m > 30 {
        return Err(MomentError::EnumerationTooLarge(m));
    }
    let k = f.len();
    let mut x = vec![0usize; k];
    let mut total = F::zero();
    // multinomial coefficients stay within u128 for m <= 30
    fn rec<F: Real, G: FnMut(&[usize]) -> F>(
        f: &[F],
        x: &mut Vec<usize>,
        j: usize,
        left: usize,
        coef: u128,
        prob: F,
        total: &mut F,
        g: &mut G,
    ) {
        if j + 1 == f.len() {
            x[j] = left;
            let p = prob * f[j].powi(left as i32) * F::from_f64_(coef as f64);
            *total += g(x) * p;
            return;
        }
        let mut c = coef;
        let mut pr = prob;
        for v in 0..=left {
            x[j] = v;
            rec(f, x, j + 1, left - v, c, pr, total, g);
            // extend the coefficient: choose one more of type j out of the remainder
            c = c * (left - v) as u128 / (v + 1) as u128;
            pr *= f[j];
        }
    }
    rec(f, &mut x, 0, m, 1, F::one(), &mut total, &mut g);
    Ok(total)
}
