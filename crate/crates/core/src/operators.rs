//! Evolution operators of the kinetic cluster expansions.
//!
//! An operator is represented as a finite sum of weighted compositions of
//! elementary operators (scattering cumulants, or masked backward cumulants),
//! and is only ever evaluated at concrete phase points. In a composition the
//! first element is the outermost operator: `[A, B]` applied to `f` is `A(B f)`.

use serde::Serialize;

use crate::cumulant::{apply_cumulant, apply_scattering_cumulant, ClusterSet, PhaseFn};
use crate::error::{KineticError, Result};
use crate::flow::{first_overlap, Dynamics, PhasePoint, SystemState};
use crate::mc::par_samples;

/// Largest expansion order materialized term by term.
pub const MAX_GENERAL_ORDER: usize = 4;

const PLATEAU_REL_TOL: f64 = 1e-10;
const PLATEAU_RUN: usize = 3;

/// Elementary operator acting on the particles of a cluster set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Op {
    /// `A_{1+n}(-t) I_{s+n} prod_i A_1(t, i)`
    Scattering(ClusterSet),
    /// `A_{1+n}(-t) I_{s+n}`
    BackwardMasked(ClusterSet),
}

/// Weighted composition of elementary operators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpTerm {
    pub coeff: f64,
    pub ops: Vec<Op>,
}

/// Sum of weighted compositions.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OperatorExpansion {
    pub terms: Vec<OpTerm>,
}

fn eval_ops(dynamics: &Dynamics, t: f64, ops: &[Op], f: &PhaseFn, x: &[PhasePoint]) -> Result<f64> {
    let Some((op, rest)) = ops.split_first() else {
        return f(x);
    };
    let inner = |y: &[PhasePoint]| eval_ops(dynamics, t, rest, f, y);
    match op {
        Op::Scattering(cs) => apply_scattering_cumulant(dynamics, t, cs, &inner, x),
        Op::BackwardMasked(cs) => {
            let labels: Vec<usize> = cs.labels().collect();
            let masked = |y: &[PhasePoint]| {
                let sub: Vec<PhasePoint> = labels.iter().map(|&l| y[l]).collect();
                if first_overlap(&sub, dynamics.dim, dynamics.sigma, None).is_some() {
                    Ok(0.0)
                } else {
                    inner(y)
                }
            };
            apply_cumulant(dynamics, t, cs, &masked, x)
        }
    }
}

impl OpTerm {
    pub fn evaluate(
        &self,
        dynamics: &Dynamics,
        t: f64,
        f: &PhaseFn,
        x: &[PhasePoint],
    ) -> Result<f64> {
        Ok(self.coeff * eval_ops(dynamics, t, &self.ops, f, x)?)
    }
}

impl OperatorExpansion {
    pub fn evaluate(
        &self,
        dynamics: &Dynamics,
        t: f64,
        f: &PhaseFn,
        x: &[PhasePoint],
    ) -> Result<f64> {
        let mut acc = 0.0;
        for term in &self.terms {
            acc += term.evaluate(dynamics, t, f, x)?;
        }
        Ok(acc)
    }

    fn push(&mut self, coeff: f64, ops: Vec<Op>) {
        self.terms.push(OpTerm { coeff, ops });
    }

    /// `self` followed (on the inside) by `tail` in every term.
    pub fn then(&self, coeff: f64, tail: &[Op]) -> OperatorExpansion {
        OperatorExpansion {
            terms: self
                .terms
                .iter()
                .map(|t| OpTerm {
                    coeff: coeff * t.coeff,
                    ops: t.ops.iter().chain(tail).cloned().collect(),
                })
                .collect(),
        }
    }
}

fn cs(cluster: Vec<usize>, free: Vec<usize>) -> ClusterSet {
    ClusterSet { cluster, free }
}

fn cluster(s: usize) -> Vec<usize> {
    (0..s).collect()
}

/// First-order operator of a cluster of `s` particles.
pub fn v1_expansion(s: usize) -> OperatorExpansion {
    let mut e = OperatorExpansion::default();
    e.push(1.0, vec![Op::Scattering(cs(cluster(s), vec![]))]);
    e
}

/// Second-order operator in closed form.
pub fn v2_expansion(s: usize) -> OperatorExpansion {
    let mut e = OperatorExpansion::default();
    e.push(1.0, vec![Op::Scattering(cs(cluster(s), vec![s]))]);
    for i in 0..s {
        e.push(
            -1.0,
            vec![
                Op::Scattering(cs(cluster(s), vec![])),
                Op::Scattering(cs(vec![i], vec![s])),
            ],
        );
    }
    e
}

/// Third-order operator in closed form, term by term as written.
pub fn v3_expansion(s: usize) -> OperatorExpansion {
    let y = || cluster(s);
    let (a, b) = (s, s + 1);
    let mut e = OperatorExpansion::default();
    e.push(1.0, vec![Op::Scattering(cs(y(), vec![a, b]))]);
    for i1 in 0..=s {
        e.push(
            -2.0,
            vec![
                Op::Scattering(cs(y(), vec![a])),
                Op::Scattering(cs(vec![i1], vec![b])),
            ],
        );
    }
    let a1 = || Op::Scattering(cs(y(), vec![]));
    for i1 in 0..s {
        e.push(-1.0, vec![a1(), Op::Scattering(cs(vec![i1], vec![a, b]))]);
    }
    for i1 in 0..s {
        for i2 in 0..=s {
            e.push(
                2.0,
                vec![
                    a1(),
                    Op::Scattering(cs(vec![i1], vec![a])),
                    Op::Scattering(cs(vec![i2], vec![b])),
                ],
            );
        }
    }
    for i1 in 0..s {
        for i2 in (i1 + 1)..s {
            e.push(
                -2.0,
                vec![
                    a1(),
                    Op::Scattering(cs(vec![i1], vec![a])),
                    Op::Scattering(cs(vec![i2], vec![b])),
                ],
            );
        }
    }
    e
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// All compositions of at most `n` into positive parts (including the empty one).
fn bounded_compositions(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    while let Some(c) = frontier.pop() {
        let used: usize = c.iter().sum();
        for m in 1..=(n - used) {
            let mut next: Vec<usize> = c.clone();
            next.push(m);
            out.push(next.clone());
            frontier.push(next);
        }
    }
    out.sort();
    out
}

/// Weak compositions of `total` into `parts` nonnegative parts.
fn weak_compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in weak_compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// One term of the nested-sum expansion of the evolution operator.
///
/// Step `j` removes `m[j]` particles and distributes them, in consecutive
/// label order, over the particles that remain; `shares[j][i]` is the number
/// handed to particle `i`. The chain `k^j` of non-increasing partial sums is
/// recovered by [`NestedIndexTerm::inner_indices`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedIndexTerm {
    pub k: usize,
    pub m: Vec<usize>,
    pub shares: Vec<Vec<usize>>,
    /// Positive magnitude; the sign is `(-1)^k`.
    pub coefficient: f64,
}

impl NestedIndexTerm {
    pub fn sign(&self) -> f64 {
        if self.k % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `k^j_1 = m_j >= k^j_2 >= ... >= k^j_{L_j + 1} = 0`, where
    /// `k^j_{L_j + 2 - i} = shares[j][0] + .. + shares[j][i - 2]`.
    pub fn inner_indices(&self, j: usize) -> Vec<usize> {
        let d = &self.shares[j];
        let len = d.len();
        let mut chain = vec![0; len + 1];
        let mut acc = 0;
        for i in 1..=len {
            chain[len + 1 - i] = acc;
            acc += d[i - 1];
        }
        chain[0] = acc;
        chain
    }

    fn ops(&self, s: usize, n: usize) -> Vec<Op> {
        let total: usize = self.m.iter().sum();
        let mut ops = vec![Op::Scattering(cs(cluster(s), (s..s + n - total).collect()))];
        let mut remaining = Vec::with_capacity(self.k);
        let mut used = 0;
        for j in 0..self.k {
            used += self.m[j];
            remaining.push(s + n - used);
        }
        for j in (0..self.k).rev() {
            let base = remaining[j];
            let mut offset = 0;
            for (i, &d) in self.shares[j].iter().enumerate() {
                if d > 0 {
                    let free = (base + offset..base + offset + d).collect();
                    ops.push(Op::Scattering(cs(vec![i], free)));
                }
                offset += d;
            }
        }
        ops
    }
}

/// Materializes the nested-sum expansion for a cluster of `s` and order `n`.
/// With `renormalized`, removed particles are only distributed over the
/// cluster members.
pub fn nested_terms(s: usize, n: usize, renormalized: bool) -> Result<Vec<NestedIndexTerm>> {
    if n > MAX_GENERAL_ORDER {
        return Err(KineticError::OrderCap {
            what: "expansion order n",
            value: n,
            max: MAX_GENERAL_ORDER,
        });
    }
    if s == 0 {
        return Err(KineticError::InvalidArgument(
            "cluster size must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    for m in bounded_compositions(n) {
        let k = m.len();
        let total: usize = m.iter().sum();
        // per step j, the list of admissible share vectors
        let mut per_step: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k);
        let mut used = 0;
        for &mj in &m {
            used += mj;
            let remaining = s + n - used;
            let parts = if renormalized { s } else { remaining };
            per_step.push(
                weak_compositions(mj, parts)
                    .into_iter()
                    .map(|mut d| {
                        d.resize(remaining, 0);
                        d
                    })
                    .collect(),
            );
        }
        let base = factorial(n) / factorial(n - total);
        let mut idx = vec![0usize; k];
        loop {
            let shares: Vec<Vec<usize>> = (0..k).map(|j| per_step[j][idx[j]].clone()).collect();
            let denom: f64 = shares.iter().flatten().map(|&d| factorial(d)).product();
            out.push(NestedIndexTerm {
                k,
                m: m.clone(),
                shares,
                coefficient: base / denom,
            });
            // odometer over the per-step choices
            let mut advanced = false;
            let mut j = k;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] < per_step[j].len() {
                    advanced = true;
                    break;
                }
                idx[j] = 0;
            }
            if !advanced {
                break;
            }
        }
    }
    Ok(out)
}

/// Expansion of the evolution operator of order `1 + n` from the nested sums.
pub fn general_expansion(s: usize, n: usize, renormalized: bool) -> Result<OperatorExpansion> {
    let terms = nested_terms(s, n, renormalized)?;
    Ok(OperatorExpansion {
        terms: terms
            .iter()
            .map(|t| OpTerm {
                coeff: t.sign() * t.coefficient,
                ops: t.ops(s, n),
            })
            .collect(),
    })
}

fn check_len(x: &[PhasePoint], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(KineticError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

pub fn v1(dynamics: &Dynamics, t: f64, s: usize, f: &PhaseFn, x: &[PhasePoint]) -> Result<f64> {
    check_len(x, s)?;
    v1_expansion(s).evaluate(dynamics, t, f, x)
}

pub fn v2(dynamics: &Dynamics, t: f64, s: usize, f: &PhaseFn, x: &[PhasePoint]) -> Result<f64> {
    check_len(x, s + 1)?;
    v2_expansion(s).evaluate(dynamics, t, f, x)
}

pub fn v3(dynamics: &Dynamics, t: f64, s: usize, f: &PhaseFn, x: &[PhasePoint]) -> Result<f64> {
    check_len(x, s + 2)?;
    v3_expansion(s).evaluate(dynamics, t, f, x)
}

/// Evolution operator of order `1 + n` (`n <= 4`) applied to `f` at `x`.
pub fn v_general(
    dynamics: &Dynamics,
    t: f64,
    s: usize,
    n: usize,
    f: &PhaseFn,
    x: &[PhasePoint],
) -> Result<f64> {
    let e = general_expansion(s, n, false)?;
    check_len(x, s + n)?;
    e.evaluate(dynamics, t, f, x)
}

/// Renormalized evolution operator of order `1 + n` applied to `f` at `x`.
pub fn v_renormalized(
    dynamics: &Dynamics,
    t: f64,
    s: usize,
    n: usize,
    f: &PhaseFn,
    x: &[PhasePoint],
) -> Result<f64> {
    let e = general_expansion(s, n, true)?;
    check_len(x, s + n)?;
    e.evaluate(dynamics, t, f, x)
}

/// Right-hand side of the kinetic cluster expansion of `A_{1+n}(-t) I_{s+n}`.
pub fn recurrence_rhs(s: usize, n: usize) -> Result<OperatorExpansion> {
    let mut rhs = OperatorExpansion::default();
    for k1 in 0..=n {
        let v = general_expansion(s, n - k1, false)?;
        let remaining = s + n - k1;
        let binom = factorial(n) / (factorial(k1) * factorial(n - k1));
        for d in weak_compositions(k1, remaining) {
            let multinomial = factorial(k1) / d.iter().map(|&di| factorial(di)).product::<f64>();
            let mut offset = 0;
            let tail: Vec<Op> = d
                .iter()
                .enumerate()
                .map(|(i, &di)| {
                    let free = (remaining + offset..remaining + offset + di).collect();
                    offset += di;
                    Op::BackwardMasked(cs(vec![i], free))
                })
                .collect();
            rhs.terms.extend(v.then(binom * multinomial, &tail).terms);
        }
    }
    Ok(rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub s: usize,
    pub n: usize,
    pub t: f64,
    pub samples: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
}

/// Checks the kinetic cluster expansion pointwise on the given states.
pub fn verify_recurrence(
    dynamics: &Dynamics,
    s: usize,
    n: usize,
    t: f64,
    samples: &[SystemState],
    f: &PhaseFn,
) -> Result<RecurrenceReport> {
    if n > 2 {
        return Err(KineticError::OrderCap {
            what: "recurrence order n",
            value: n,
            max: 2,
        });
    }
    let lhs = {
        let mut e = OperatorExpansion::default();
        e.push(1.0, vec![Op::BackwardMasked(ClusterSet::standard(s, n))]);
        e
    };
    let rhs = recurrence_rhs(s, n)?;
    let mut max_residual: f64 = 0.0;
    let mut sum = 0.0;
    for x in samples {
        check_len(&x.points, s + n)?;
        let l = lhs.evaluate(dynamics, t, f, &x.points)?;
        let r = rhs.evaluate(dynamics, t, f, &x.points)?;
        let res = (l - r).abs();
        max_residual = max_residual.max(res);
        sum += res;
    }
    Ok(RecurrenceReport {
        s,
        n,
        t,
        samples: samples.len(),
        max_residual,
        mean_residual: if samples.is_empty() {
            0.0
        } else {
            sum / samples.len() as f64
        },
    })
}

/// Allowed random states of `n_particles` rods (or spheres) packed into a box
/// of side `box_len`, with standard normal momenta.
pub fn random_allowed_states(
    seed: u64,
    count: usize,
    n_particles: usize,
    dim: usize,
    sigma: f64,
    box_len: f64,
) -> Vec<SystemState> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    par_samples(seed, count, |_, rng| loop {
        let points: Vec<PhasePoint> = (0..n_particles)
            .map(|_| {
                let mut pt = PhasePoint::default();
                for k in 0..dim {
                    pt.q[k] = rng.random::<f64>() * box_len;
                    pt.p[k] = StandardNormal.sample(rng);
                }
                pt
            })
            .collect();
        if first_overlap(&points, dim, sigma, None).is_none() {
            return SystemState { points, sigma, dim };
        }
    })
}

/// Plateau value of `S_n(-t) prod_i S_1(t) f` as `t` grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatteringEstimate {
    pub value: f64,
    /// First grid time from which the values stay on the plateau.
    pub plateau_time: f64,
    /// Time into the past of the last collision of the backward trajectory.
    pub last_collision_time: f64,
    pub values: Vec<(f64, f64)>,
}

/// Default grid `{1, 2, 4, .., 64} * sigma / p_mean`.
pub fn default_time_grid(x: &SystemState) -> Vec<f64> {
    let n = x.points.len().max(1) as f64;
    let p_mean = x
        .points
        .iter()
        .map(|pt| crate::flow::dot(&pt.p, &pt.p, x.dim).sqrt())
        .sum::<f64>()
        / n;
    let unit = if p_mean > 0.0 {
        x.sigma / p_mean
    } else {
        x.sigma
    };
    (0..7).map(|k| unit * (1u32 << k) as f64).collect()
}

/// Scattering operator applied to `f` at `x`, detected as a plateau on `t_grid`:
/// the trailing [`PLATEAU_RUN`] values must agree to a relative `1e-10`.
pub fn scattering_operator(
    dynamics: &Dynamics,
    x: &SystemState,
    t_grid: &[f64],
    f: &PhaseFn,
) -> Result<ScatteringEstimate> {
    if t_grid.len() < PLATEAU_RUN || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] < 0.0 {
        return Err(KineticError::InvalidArgument(
            "t_grid must hold at least three increasing nonnegative times".into(),
        ));
    }
    let labels: Vec<usize> = (0..x.len()).collect();
    if !dynamics.in_domain(&x.points, &labels) {
        let (i, j) = first_overlap(&x.points, x.dim, x.sigma, None).unwrap_or((0, 0));
        return Err(crate::FlowError::ForbiddenInitialConfiguration(i, j).into());
    }
    let mut values = Vec::with_capacity(t_grid.len());
    let mut last_collision_time: f64 = 0.0;
    for &t in t_grid {
        let mut y = x.points.clone();
        let log = dynamics.flow(&mut y, &labels, -t)?;
        if let Some(ev) = log.last() {
            last_collision_time = ev.time;
        }
        let z: Vec<PhasePoint> = y.iter().map(|pt| pt.streamed(t)).collect();
        values.push((t, f(&z)?));
    }
    let agree = |a: f64, b: f64| a == b || (a - b).abs() <= PLATEAU_REL_TOL * a.abs().max(b.abs());
    let last = values[values.len() - 1].1;
    let mut start = values.len() - 1;
    while start > 0 && agree(values[start - 1].1, last) {
        start -= 1;
    }
    if values.len() - start < PLATEAU_RUN {
        return Err(KineticError::NoPlateau {
            t_max: t_grid[t_grid.len() - 1],
            last: values.iter().rev().take(PLATEAU_RUN).map(|v| v.1).collect(),
        });
    }
    Ok(ScatteringEstimate {
        value: last,
        plateau_time: values[start].0,
        last_collision_time,
        values,
    })
}

/// Seeded random states for the recurrence check of the command line.
pub fn recurrence_samples(
    seed: u64,
    s: usize,
    n: usize,
    count: usize,
    sigma: f64,
) -> Vec<SystemState> {
    random_allowed_states(
        seed,
        count,
        s + n,
        1,
        sigma,
        2.0 * (s + n) as f64 * sigma + 1.0,
    )
}
