//! Combinatorial identities in exact arithmetic and the convergence radii and
//! majorants of the cluster-expansion series.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{KineticError, Result};

pub const MAX_RISING_ARG: u32 = 30;
pub const MAX_NESTED_ARG: u32 = 20;

/// Named convergence radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceConstants {
    /// `e^{-1}`: radius of the one-particle series.
    pub bbgky_radius: f64,
    /// `e^{-10} / (1 + e^{-9})`: existence of the collision integral.
    pub enskog_collision: f64,
}

impl ConvergenceConstants {
    /// `e^{-(3s+2)}`: radius of the marginal functional of order `s`.
    pub fn functional_radius(&self, s: u32) -> f64 {
        (-(3.0 * s as f64 + 2.0)).exp()
    }

    /// `e^{-(3s+4)} / (1 + e^{-(3s+3)})`.
    pub fn equivalence_radius(&self, s: u32) -> f64 {
        let s = s as f64;
        (-(3.0 * s + 4.0)).exp() / (1.0 + (-(3.0 * s + 3.0)).exp())
    }
}

pub fn convergence_constants() -> ConvergenceConstants {
    ConvergenceConstants {
        bbgky_radius: (-1.0f64).exp(),
        enskog_collision: (-10.0f64).exp() / (1.0 + (-9.0f64).exp()),
    }
}

/// Named value list as printed by the command line.
pub fn named_constants(s: u32) -> Vec<(String, f64)> {
    let c = convergence_constants();
    vec![
        ("bbgky_radius".into(), c.bbgky_radius),
        ("enskog_collision".into(), c.enskog_collision),
        (format!("functional_radius(s={s})"), c.functional_radius(s)),
        (
            format!("equivalence_radius(s={s})"),
            c.equivalence_radius(s),
        ),
    ]
}

fn rising(k: u64, len: u64) -> BigUint {
    (0..len).fold(BigUint::one(), |acc, j| acc * BigUint::from(k + j))
}

/// `sum_{k=1}^n k(k+1)..(k+m) - n(n+1)..(n+m+1)/(m+2)`, exactly.
pub fn rising_sum_identity(n: u32, m: u32) -> Result<BigInt> {
    if n > MAX_RISING_ARG || m > MAX_RISING_ARG {
        return Err(KineticError::InvalidArgument(format!(
            "rising sum arguments must be <= {MAX_RISING_ARG}"
        )));
    }
    let (n, m) = (n as u64, m as u64);
    let lhs: BigUint = (1..=n).map(|k| rising(k, m + 1)).sum();
    let num = rising(n, m + 2);
    let rhs = &num / BigUint::from(m + 2);
    if &rhs * BigUint::from(m + 2) != num {
        // a non-integral right-hand side is reported through a nonzero residual
        return Ok(BigInt::from(lhs) * BigInt::from(m + 2) - BigInt::from(num));
    }
    Ok(BigInt::from(lhs) - BigInt::from(rhs))
}

/// Number of chains `m >= k_2 >= .. >= k_s >= 0`, computed level by level.
pub fn nested_chain_count(m: u32, s: u32) -> BigUint {
    if s <= 1 {
        return BigUint::one();
    }
    // ways[k] = number of ways to complete the chain below a value k
    let m = m as usize;
    let mut ways: Vec<BigUint> = vec![BigUint::one(); m + 1];
    for _ in 2..s {
        let mut next = vec![BigUint::zero(); m + 1];
        let mut acc = BigUint::zero();
        for k in 0..=m {
            acc += &ways[k];
            next[k] = acc.clone();
        }
        ways = next;
    }
    ways.iter().sum()
}

/// `(number of chains) - (m+1)(m+2)..(m+s-1)/(s-1)!`, exactly.
pub fn nested_sum_count(m: u32, s: u32) -> Result<BigInt> {
    if m > MAX_NESTED_ARG || s > MAX_NESTED_ARG || s == 0 {
        return Err(KineticError::InvalidArgument(format!(
            "nested sum arguments must satisfy m <= {MAX_NESTED_ARG}, 1 <= s <= {MAX_NESTED_ARG}"
        )));
    }
    let count = nested_chain_count(m, s);
    let num = rising(m as u64 + 1, s as u64 - 1);
    let den = rising(1, s as u64 - 1);
    if (&num % &den).is_zero() {
        Ok(BigInt::from(count) - BigInt::from(num / den))
    } else {
        Ok(BigInt::from(count) * BigInt::from(den) - BigInt::from(num))
    }
}

/// Outcome of a bound evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: Vec<(String, f64)>,
    /// Radius the computed quantity is compared against.
    pub bound: f64,
    pub computed: f64,
    pub satisfied: bool,
    /// Closed-form value of the geometric majorant, absent when it diverges.
    pub majorant: Option<f64>,
    pub divergent: bool,
}

/// Geometric majorant of the marginal functional of order `s`:
/// `N^s e^2 sum_{n>=0} (N e)^n + N^s e^{3s+2} sum_{n>=1} (N e^{3s+2})^n`.
pub fn functional_norm_majorant(s: u32, norm: f64) -> Result<BoundReport> {
    if !(norm >= 0.0 && norm.is_finite()) || s == 0 {
        return Err(KineticError::InvalidArgument(
            "norm must be finite and nonnegative, s >= 1".into(),
        ));
    }
    let e = std::f64::consts::E;
    let big = (3.0 * s as f64 + 2.0).exp();
    let r1 = norm * e;
    let r2 = norm * big;
    let divergent = r1 >= 1.0 || r2 >= 1.0;
    let majorant = (!divergent).then(|| {
        let ns = norm.powi(s as i32);
        ns * e * e / (1.0 - r1) + ns * big * r2 / (1.0 - r2)
    });
    let bound = convergence_constants().functional_radius(s);
    Ok(BoundReport {
        name: "functional_norm_majorant".into(),
        inputs: vec![("s".into(), s as f64), ("norm".into(), norm)],
        bound,
        computed: norm,
        satisfied: norm < bound,
        majorant,
        divergent,
    })
}
