//! Truncated Monte Carlo evaluation of the one-particle series, the marginal
//! functionals and the correlation functional, observables, and the weak-form
//! residual of the kinetic equation.
//!
//! Extra particles of an order-`n` term are drawn uniformly in a ball around
//! the cluster whose radius covers every configuration that can interact
//! within the time window, with momenta from a Gaussian proposal matched to
//! the one-particle distribution. Terms of order `n >= 1` vanish outside that
//! ball, so the only truncation bias is the proposal's momentum cutoff, which
//! is reported as `tail_bound`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::collision::Proposal;
use crate::cumulant::{apply_cumulant, ClusterSet, PhaseFn};
use crate::distribution::{
    chaos_product, norm_guard, plain_product, scaled_norm_guard, GuardKind, GuardStatus,
    OneParticleDistribution,
};
use crate::error::{KineticError, Result};
use crate::flow::{allowed_mask, dot, Dynamics, PhasePoint, Vec3};
use crate::mc::{ball_volume, child_seed, in_ball, par_samples, Estimate, McRng};

/// Highest series order evaluated end to end.
pub const MAX_SERIES_ORDER: usize = 2;
pub const MIN_MC_SAMPLES: usize = 100;
/// Redraws allowed per sample after a pathological flow event.
pub const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationSpec {
    pub order: usize,
    /// Samples per order and evaluation point.
    pub mc_samples: usize,
    pub seed: u64,
    /// Momentum proposal cutoff in proposal standard deviations.
    pub p_cut_sigmas: f64,
    pub proposal_scale: Option<f64>,
    /// Refuse distributions outside the convergence radius.
    pub strict: bool,
    /// Guard the dimensionless norm `||F|| sigma^d / |support|` instead of `||F||`.
    pub scaled_guard: bool,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        TruncationSpec {
            order: 1,
            mc_samples: 10_000,
            seed: 0,
            p_cut_sigmas: 6.0,
            proposal_scale: None,
            strict: false,
            scaled_guard: false,
        }
    }
}

impl TruncationSpec {
    pub fn new(order: usize, mc_samples: usize, seed: u64) -> Self {
        TruncationSpec {
            order,
            mc_samples,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self, max_order: usize) -> Result<()> {
        if self.order > max_order {
            return Err(KineticError::OrderCap {
                what: "series truncation order",
                value: self.order,
                max: max_order,
            });
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(KineticError::InvalidArgument(format!(
                "mc_samples must be >= {MIN_MC_SAMPLES}"
            )));
        }
        if !(self.p_cut_sigmas > 0.0) {
            return Err(KineticError::InvalidArgument(
                "p_cut_sigmas must be positive".into(),
            ));
        }
        Ok(())
    }

    fn guard(&self, f: &OneParticleDistribution, sigma: f64) -> Result<GuardStatus> {
        if self.scaled_guard {
            scaled_norm_guard(f, sigma, GuardKind::F1Series, self.strict)
        } else {
            norm_guard(f, GuardKind::F1Series, self.strict)
        }
    }
}

/// Per-order values of a truncated series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEstimate {
    pub orders: Vec<Estimate>,
    /// Sum of the orders, errors combined in quadrature.
    pub total: Estimate,
    pub guard: Option<GuardStatus>,
    /// Samples redrawn after pathological flow events.
    pub rejected: usize,
    /// Set when the total is negative; values are never clamped.
    pub negative: bool,
    pub tail_bound: f64,
}

impl SeriesEstimate {
    pub fn from_orders(
        orders: Vec<Estimate>,
        guard: Option<GuardStatus>,
        rejected: usize,
        tail_bound: f64,
    ) -> Self {
        let total = orders.iter().fold(Estimate::exact(0.0), |a, e| a.add(*e));
        SeriesEstimate {
            negative: total.value < 0.0,
            orders,
            total,
            guard,
            rejected,
            tail_bound,
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn check_setup(dynamics: &Dynamics, f: &OneParticleDistribution, t: f64) -> Result<()> {
    if f.dim() != dynamics.dim {
        return Err(KineticError::DimensionMismatch {
            expected: dynamics.dim,
            got: f.dim(),
        });
    }
    if !t.is_finite() {
        return Err(KineticError::InvalidArgument("time must be finite".into()));
    }
    Ok(())
}

/// Radius beyond which `n` extra particles cannot join a cluster when every
/// particle moves at most `window * v_max` away from its initial position.
pub fn horizon_radius(n: usize, window: f64, sigma: f64, v_max: f64) -> f64 {
    n as f64 * (sigma + 2.0 * window.abs() * v_max)
}

/// Speed bound that holds under the flow of any subset of `pts`: in 1D speeds
/// are only exchanged, in 3D each subset conserves its kinetic energy.
fn speed_bound(pts: &[PhasePoint], dim: usize) -> f64 {
    if dim == 1 {
        pts.iter().map(|x| x.p[0].abs()).fold(0.0, f64::max)
    } else {
        pts.iter().map(|x| dot(&x.p, &x.p, dim)).sum::<f64>().sqrt()
    }
}

/// Draws extra particles around a cluster.
#[derive(Debug, Clone, Copy)]
struct ExtraSampler {
    proposal: Proposal,
    sigma: f64,
    dim: usize,
}

impl ExtraSampler {
    fn new(f: &OneParticleDistribution, trunc: &TruncationSpec, sigma: f64) -> Self {
        ExtraSampler {
            proposal: Proposal::matched(f, trunc.p_cut_sigmas, trunc.proposal_scale),
            sigma,
            dim: f.dim(),
        }
    }

    /// Appends `n` extras to the cluster in `pts`; returns the inverse
    /// sampling density, or `None` when a momentum falls beyond the cutoff.
    /// Momenta are drawn first; positions then fill the ball around the
    /// cluster centroid that any interacting extra must start in, given the
    /// total flow time `window`.
    fn draw(
        &self,
        rng: &mut McRng,
        n: usize,
        window: f64,
        pts: &mut Vec<PhasePoint>,
    ) -> Option<f64> {
        let dim = self.dim;
        let s = pts.len();
        let mut c = [0.0; 3];
        for x in pts.iter() {
            for k in 0..dim {
                c[k] += x.q[k] / s as f64;
            }
        }
        let spread = pts
            .iter()
            .map(|x| {
                let d: Vec3 = std::array::from_fn(|k| x.q[k] - c[k]);
                dot(&d, &d, dim).sqrt()
            })
            .fold(0.0, f64::max);
        let mut w = 1.0;
        for _ in 0..n {
            let (p, wp) = self.proposal.draw(rng)?;
            pts.push(PhasePoint::new([0.0; 3], p));
            w *= wp;
        }
        let radius = spread + horizon_radius(n, window, self.sigma, speed_bound(pts, dim));
        let vol = ball_volume(radius, dim);
        for x in pts[s..].iter_mut() {
            x.q = in_ball(rng, &c, radius, dim);
            w *= vol;
        }
        Some(w)
    }
}

/// Uniform point in the set of positions within `sigma` of the segment
/// `[a, b]`, with the set's volume.
fn capsule_point(rng: &mut McRng, a: &Vec3, b: &Vec3, sigma: f64, dim: usize) -> (Vec3, f64) {
    use rand::Rng;
    let axis: Vec3 = std::array::from_fn(|k| b[k] - a[k]);
    let len = dot(&axis, &axis, dim).sqrt();
    if dim == 1 {
        let (lo, hi) = (a[0].min(b[0]) - sigma, a[0].max(b[0]) + sigma);
        return ([rng.random_range(lo..hi), 0.0, 0.0], hi - lo);
    }
    let v_cyl = std::f64::consts::PI * sigma * sigma * len;
    let v_ball = ball_volume(sigma, dim);
    let vol = v_cyl + v_ball;
    if rng.random::<f64>() * vol < v_cyl {
        let e: Vec3 = std::array::from_fn(|k| axis[k] / len);
        let helper = if e[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let cross = |u: &Vec3, v: &Vec3| -> Vec3 {
            [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ]
        };
        let mut e1 = cross(&e, &helper);
        let n1 = dot(&e1, &e1, 3).sqrt();
        e1.iter_mut().for_each(|x| *x /= n1);
        let e2 = cross(&e, &e1);
        let along = rng.random::<f64>();
        let r = sigma * rng.random::<f64>().sqrt();
        let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let (c, sn) = (r * phi.cos(), r * phi.sin());
        (
            std::array::from_fn(|k| a[k] + along * axis[k] + c * e1[k] + sn * e2[k]),
            vol,
        )
    } else {
        // the two end caps together form one ball
        let u = in_ball(rng, &[0.0; 3], sigma, dim);
        let end = if len > 0.0 && dot(&u, &axis, dim) >= 0.0 {
            b
        } else {
            a
        };
        (std::array::from_fn(|k| end[k] + u[k]), vol)
    }
}

impl ExtraSampler {
    /// One extra next to the single particle in `pts`, drawn where the pair
    /// touches under free motion at some time in `[s_lo, s_hi]` (which holds 0);
    /// the order-1 cumulant of a lone particle vanishes everywhere else.
    fn draw_partner(
        &self,
        rng: &mut McRng,
        s_lo: f64,
        s_hi: f64,
        pts: &mut Vec<PhasePoint>,
    ) -> Option<f64> {
        let (p, wp) = self.proposal.draw(rng)?;
        let x1 = pts[0];
        let dv: Vec3 = std::array::from_fn(|k| p[k] - x1.p[k]);
        let a: Vec3 = std::array::from_fn(|k| x1.q[k] - s_lo * dv[k]);
        let b: Vec3 = std::array::from_fn(|k| x1.q[k] - s_hi * dv[k]);
        let (q, vol) = capsule_point(rng, &a, &b, self.sigma, self.dim);
        pts.push(PhasePoint::new(q, p));
        Some(wp * vol)
    }

    /// [`ExtraSampler::draw`], or [`ExtraSampler::draw_partner`] for one extra
    /// next to one particle.
    fn draw_for(
        &self,
        rng: &mut McRng,
        n: usize,
        s_lo: f64,
        s_hi: f64,
        pts: &mut Vec<PhasePoint>,
    ) -> Option<f64> {
        if n == 1 && pts.len() == 1 {
            self.draw_partner(rng, s_lo.min(0.0), s_hi.max(0.0), pts)
        } else {
            self.draw(rng, n, s_lo.abs().max(s_hi.abs()), pts)
        }
    }
}

/// Runs `body` until it returns something other than a flow error, at most
/// [`MAX_RESAMPLES`] times; returns the value and the number of redraws.
fn with_resampling<T>(
    rng: &mut McRng,
    mut body: impl FnMut(&mut McRng) -> Result<T>,
) -> Result<(T, usize)> {
    for rejected in 0..MAX_RESAMPLES {
        match body(rng) {
            Ok(v) => return Ok((v, rejected)),
            Err(KineticError::Flow(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(KineticError::InvalidArgument(format!(
        "{MAX_RESAMPLES} consecutive pathological samples"
    )))
}

fn collect_scalar(out: Vec<Result<(f64, usize)>>) -> Result<(Estimate, usize)> {
    let mut vals = Vec::with_capacity(out.len());
    let mut rejected = 0;
    for r in out {
        let (v, k) = r?;
        vals.push(v);
        rejected += k;
    }
    Ok((Estimate::from_samples(&vals), rejected))
}

/// Order-`n` term of the one-particle series at `x1`.
fn f1_order_term(
    dynamics: &Dynamics,
    f0: &OneParticleDistribution,
    t: f64,
    n: usize,
    x1: &PhasePoint,
    trunc: &TruncationSpec,
    seed: u64,
) -> Result<(Estimate, usize)> {
    if n == 0 {
        return Ok((Estimate::exact(f0.value(&x1.streamed(-t))), 0));
    }
    if t == 0.0 || f0.l1_norm() == 0.0 {
        return Ok((Estimate::exact(0.0), 0));
    }
    let sigma = dynamics.sigma;
    let sampler = ExtraSampler::new(f0, trunc, sigma);
    let cs = ClusterSet::standard(1, n);
    let chaos: &PhaseFn = &|y: &[PhasePoint]| Ok(chaos_product(f0, sigma, y));
    let norm = 1.0 / factorial(n);
    let out = par_samples(seed, trunc.mc_samples, |_, rng| {
        with_resampling(rng, |rng| {
            let mut pts = vec![*x1];
            let Some(w) = sampler.draw_for(rng, n, -t, -t, &mut pts) else {
                return Ok(0.0);
            };
            Ok(norm * w * apply_cumulant(dynamics, t, &cs, chaos, &pts)?)
        })
    });
    collect_scalar(out)
}

/// Truncated one-particle series `F_1(t, x)` at each of `points`.
pub fn solve_f1_series(
    dynamics: &Dynamics,
    f0: &OneParticleDistribution,
    t: f64,
    trunc: &TruncationSpec,
    points: &[PhasePoint],
) -> Result<Vec<SeriesEstimate>> {
    trunc.validate(MAX_SERIES_ORDER)?;
    check_setup(dynamics, f0, t)?;
    let guard = trunc.guard(f0, dynamics.sigma)?;
    let tail = Proposal::matched(f0, trunc.p_cut_sigmas, trunc.proposal_scale).tail_bound();
    points
        .iter()
        .enumerate()
        .map(|(i, x1)| {
            let mut orders = Vec::with_capacity(trunc.order + 1);
            let mut rejected = 0;
            for n in 0..=trunc.order {
                let seed = child_seed(child_seed(trunc.seed, i as u64), n as u64);
                let (e, r) = f1_order_term(dynamics, f0, t, n, x1, trunc, seed)?;
                orders.push(e);
                rejected += r;
            }
            Ok(SeriesEstimate::from_orders(
                orders,
                Some(guard.clone()),
                rejected,
                tail,
            ))
        })
        .collect()
}

/// Observable of a single phase point writing one value per output slot.
pub type ObservableFn<'a> = dyn Fn(&PhasePoint, &mut [f64]) + Sync + 'a;

/// Per-sample values of the order-`n` term of `(phi, F_1(tau))` for each
/// `tau` in `taus`, laid out as `[tau_index * n_obs + k]`.
///
/// Uses the observable form of the cumulant: the extras and particle 1 are
/// drawn at time zero and particle 1 is followed forward within every
/// sub-cluster containing it, with sign `(-1)^{n + 1 - |B|}`. The initial
/// weight is symmetric in the labels, so the observable is averaged over all
/// `n + 1` particles; this leaves the mean unchanged and, in 1D, turns the
/// velocity exchange at a collision into a shift by `sigma`.
fn pairing_order_samples(
    dynamics: &Dynamics,
    f0: &OneParticleDistribution,
    n: usize,
    taus: &[f64],
    obs: &ObservableFn,
    n_obs: usize,
    trunc: &TruncationSpec,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let width = taus.len() * n_obs;
    let mass = f0.l1_norm();
    if mass == 0.0 || (n > 0 && taus.iter().all(|t| *t == 0.0)) {
        return Ok((vec![vec![0.0; width]; trunc.mc_samples], 0));
    }
    let sigma = dynamics.sigma;
    let dim = f0.dim();
    let sampler = ExtraSampler::new(f0, trunc, sigma);
    let s_lo = taus.iter().fold(0.0_f64, |a, t| a.min(*t));
    let s_hi = taus.iter().fold(0.0_f64, |a, t| a.max(*t));
    let norm = mass / factorial(n);
    let out = par_samples(seed, trunc.mc_samples, |_, rng| {
        with_resampling(rng, |rng| {
            let mut row = vec![0.0; width];
            let y1 = f0.sample_with(rng)?;
            let mut pts = vec![y1];
            let Some(mut w) = sampler.draw_for(rng, n, s_lo, s_hi, &mut pts) else {
                return Ok(row);
            };
            // averaged over which particle carries the observable
            w *= norm * plain_product(f0, &pts[1..]) * allowed_mask(&pts, dim, sigma)
                / (n + 1) as f64;
            if w == 0.0 {
                return Ok(row);
            }
            let mut buf = vec![0.0; n_obs];
            for (ti, &tau) in taus.iter().enumerate() {
                // merge bitwise-equal end states so cancelling sub-clusters cancel exactly
                let mut merged: HashMap<[u64; 6], (PhasePoint, i64)> = HashMap::new();
                for subset in 1u32..(1 << (n + 1)) {
                    let labels: Vec<usize> = (0..=n).filter(|j| subset >> j & 1 == 1).collect();
                    let mut block: Vec<PhasePoint> = labels.iter().map(|&l| pts[l]).collect();
                    dynamics.flow(&mut block, &labels, tau)?;
                    let sign = if (n + 1 - labels.len()) % 2 == 0 {
                        1
                    } else {
                        -1
                    };
                    for end in block {
                        let key: [u64; 6] = std::array::from_fn(|k| {
                            if k < 3 {
                                end.q[k].to_bits()
                            } else {
                                end.p[k - 3].to_bits()
                            }
                        });
                        merged.entry(key).or_insert((end, 0)).1 += sign;
                    }
                }
                let mut entries: Vec<_> =
                    merged.into_iter().filter(|(_, (_, c))| *c != 0).collect();
                entries.sort_unstable_by_key(|(k, _)| *k);
                for (_, (end, c)) in entries {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    obs(&end, &mut buf);
                    for k in 0..n_obs {
                        row[ti * n_obs + k] += w * c as f64 * buf[k];
                    }
                }
            }
            Ok(row)
        })
    });
    let mut rows = Vec::with_capacity(out.len());
    let mut rejected = 0;
    for r in out {
        let (row, k) = r?;
        rows.push(row);
        rejected += k;
    }
    Ok((rows, rejected))
}

fn column_estimates(rows: &[Vec<f64>], width: usize) -> Vec<Estimate> {
    (0..width)
        .map(|k| Estimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

/// Truncated series for `(phi_k, F_1(t))`, one estimate per output slot of `obs`.
pub fn series_pairing(
    dynamics: &Dynamics,
    f0: &OneParticleDistribution,
    t: f64,
    trunc: &TruncationSpec,
    obs: &ObservableFn,
    n_obs: usize,
) -> Result<Vec<SeriesEstimate>> {
    trunc.validate(MAX_SERIES_ORDER)?;
    check_setup(dynamics, f0, t)?;
    let guard = trunc.guard(f0, dynamics.sigma)?;
    let tail = Proposal::matched(f0, trunc.p_cut_sigmas, trunc.proposal_scale).tail_bound();
    let mut per_order = Vec::with_capacity(trunc.order + 1);
    let mut rejected = 0;
    for n in 0..=trunc.order {
        let seed = child_seed(trunc.seed, n as u64);
        let (rows, r) = pairing_order_samples(dynamics, f0, n, &[t], obs, n_obs, trunc, seed)?;
        per_order.push(column_estimates(&rows, n_obs));
        rejected += r;
    }
    Ok((0..n_obs)
        .map(|k| {
            let orders = per_order.iter().map(|o| o[k]).collect();
            SeriesEstimate::from_orders(orders, Some(guard.clone()), rejected, tail)
        })
        .collect())
}

/// Mass of the truncated `F_1(t)` in position bins of the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSeries {
    pub edges: Vec<f64>,
    pub bins: Vec<SeriesEstimate>,
}

impl HistogramSeries {
    /// Bin totals using only orders `0..=order`.
    pub fn truncated(&self, order: usize) -> Vec<Estimate> {
        self.bins
            .iter()
            .map(|b| {
                b.orders
                    .iter()
                    .take(order + 1)
                    .fold(Estimate::exact(0.0), |a, e| a.add(*e))
            })
            .collect()
    }
}

/// Bin index of `x` for increasing `edges`, if inside.
pub fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    if edges.len() < 2 || !(x >= edges[0] && x < edges[edges.len() - 1]) {
        return None;
    }
    Some(edges.partition_point(|e| *e <= x) - 1)
}

pub fn f1_histogram(
    dynamics: &Dynamics,
    f0: &OneParticleDistribution,
    t: f64,
    trunc: &TruncationSpec,
    edges: &[f64],
) -> Result<HistogramSeries> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KineticError::InvalidArgument(
            "bin edges must increase".into(),
        ));
    }
    let nb = edges.len() - 1;
    let obs = |x: &PhasePoint, out: &mut [f64]| {
        if let Some(b) = bin_index(edges, x.q[0]) {
            out[b] = 1.0;
        }
    };
    let bins = series_pairing(dynamics, f0, t, trunc, &obs, nb)?;
    Ok(HistogramSeries {
        edges: edges.to_vec(),
        bins,
    })
}

fn check_cluster(dynamics: &Dynamics, xs: &[PhasePoint], s: usize) -> Result<()> {
    if xs.len() != s {
        return Err(KineticError::DimensionMismatch {
            expected: s,
            got: xs.len(),
        });
    }
    if !xs.iter().all(PhasePoint::is_finite) {
        return Err(crate::error::FlowError::NonFiniteInput("phase point").into());
    }
    let _ = dynamics;
    Ok(())
}

fn functional_series(
    dynamics: &Dynamics,
    s: usize,
    t: f64,
    f1: &OneParticleDistribution,
    trunc: &TruncationSpec,
    xs: &[PhasePoint],
    renormalized: bool,
    max_order: usize,
) -> Result<SeriesEstimate> {
    if !(2..=3).contains(&s) {
        return Err(KineticError::InvalidArgument(
            "marginal functionals take s in {2, 3}".into(),
        ));
    }
    trunc.validate(max_order)?;
    check_setup(dynamics, f1, t)?;
    check_cluster(dynamics, xs, s)?;
    let guard = trunc.guard(f1, dynamics.sigma)?;
    let sampler = ExtraSampler::new(f1, trunc, dynamics.sigma);
    let prod: &PhaseFn = &|y: &[PhasePoint]| Ok(plain_product(f1, y));
    let mut orders = Vec::with_capacity(trunc.order + 1);
    let mut rejected = 0;
    for n in 0..=trunc.order {
        let op = crate::operators::general_expansion(s, n, renormalized)?;
        if n == 0 {
            orders.push(Estimate::exact(op.evaluate(dynamics, t, prod, xs)?));
            continue;
        }
        if t == 0.0 || f1.l1_norm() == 0.0 {
            orders.push(Estimate::exact(0.0));
            continue;
        }
        // a composition holds at most n + 1 operators, each flowing for at most 2|t|
        let window = 2.0 * (n + 1) as f64 * t.abs();
        let norm = 1.0 / factorial(n);
        let seed = child_seed(trunc.seed, n as u64);
        let out = par_samples(seed, trunc.mc_samples, |_, rng| {
            with_resampling(rng, |rng| {
                let mut pts = xs.to_vec();
                let Some(w) = sampler.draw(rng, n, window, &mut pts) else {
                    return Ok(0.0);
                };
                Ok(norm * w * op.evaluate(dynamics, t, prod, &pts)?)
            })
        });
        let (e, r) = collect_scalar(out)?;
        orders.push(e);
        rejected += r;
    }
    let tail = sampler.proposal.tail_bound();
    Ok(SeriesEstimate::from_orders(
        orders,
        Some(guard),
        rejected,
        tail,
    ))
}

/// Marginal functional `F_s(t, x_1..x_s | F_1)` for `s` in `{2, 3}`.
pub fn marginal_functional(
    dynamics: &Dynamics,
    s: usize,
    t: f64,
    f1: &OneParticleDistribution,
    trunc: &TruncationSpec,
    xs: &[PhasePoint],
) -> Result<SeriesEstimate> {
    functional_series(dynamics, s, t, f1, trunc, xs, false, MAX_SERIES_ORDER)
}

/// [`marginal_functional`] built from the renormalized evolution operators.
/// The same seed draws the same extras, so the two are paired.
pub fn renormalized_marginal_functional(
    dynamics: &Dynamics,
    s: usize,
    t: f64,
    f1: &OneParticleDistribution,
    trunc: &TruncationSpec,
    xs: &[PhasePoint],
) -> Result<SeriesEstimate> {
    functional_series(dynamics, s, t, f1, trunc, xs, true, MAX_SERIES_ORDER)
}

/// Correlation functional `G_2 = F_2(. | F_1) - F_1 F_1`, truncated at order 1.
/// Shares its samples with [`marginal_functional`] at the same seed.
pub fn correlation_g2(
    dynamics: &Dynamics,
    t: f64,
    f1: &OneParticleDistribution,
    trunc: &TruncationSpec,
    x1: &PhasePoint,
    x2: &PhasePoint,
) -> Result<SeriesEstimate> {
    let mut f2 = functional_series(dynamics, 2, t, f1, trunc, &[*x1, *x2], false, 1)?;
    let ff = f1.value(x1) * f1.value(x2);
    f2.orders[0].value -= ff;
    Ok(SeriesEstimate::from_orders(
        f2.orders,
        f2.guard,
        f2.rejected,
        f2.tail_bound,
    ))
}

/// Comparison of a product of one-particle series with the joint expansion
/// of the product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductFormulaReport {
    /// `prod_i F_1(t, x_i)` from independent series evaluations.
    pub product: Estimate,
    /// Joint expansion over all extras at matched truncation.
    pub joint: Estimate,
    pub residual: f64,
    pub combined_std_error: f64,
}

impl ProductFormulaReport {
    pub fn within(&self, k: f64) -> bool {
        self.residual.abs()
            <= k * self.combined_std_error
                + 1e-12 * self.product.value.abs().max(self.joint.value.abs())
    }
}

/// Product formula for the one-particle series at `m <= 3` points, order <= 1.
pub fn verify_product_formula(
    dynamics: &Dynamics,
    t: f64,
    f0: &OneParticleDistribution,
    trunc: &TruncationSpec,
    xs: &[PhasePoint],
) -> Result<ProductFormulaReport> {
    if xs.is_empty() || xs.len() > 3 {
        return Err(KineticError::InvalidArgument(
            "product formula takes 1 to 3 points".into(),
        ));
    }
    trunc.validate(1)?;
    let factors = solve_f1_series(dynamics, f0, t, trunc, xs)?;
    let vals: Vec<f64> = factors.iter().map(|e| e.total.value).collect();
    let value: f64 = vals.iter().product();
    let var: f64 = (0..xs.len())
        .map(|i| {
            let others: f64 = (0..xs.len()).filter(|&j| j != i).map(|j| vals[j]).product();
            (others * factors[i].total.std_error).powi(2)
        })
        .sum();
    let product = Estimate {
        value,
        std_error: var.sqrt(),
        samples: trunc.mc_samples,
    };

    // joint: every factor's extras drawn in the same sample
    let sigma = dynamics.sigma;
    let sampler = ExtraSampler::new(f0, trunc, sigma);
    let chaos: &PhaseFn = &|y: &[PhasePoint]| Ok(chaos_product(f0, sigma, y));
    let cs = ClusterSet::standard(1, 1);
    let zeroth: Vec<f64> = xs.iter().map(|x| f0.value(&x.streamed(-t))).collect();
    let active = trunc.order >= 1 && t != 0.0 && f0.l1_norm() > 0.0;
    let seed = child_seed(trunc.seed, 0x9e37_79b9);
    let out = par_samples(seed, trunc.mc_samples, |_, rng| {
        with_resampling(rng, |rng| {
            let mut acc = 1.0;
            for (i, x) in xs.iter().enumerate() {
                let mut term = zeroth[i];
                if active {
                    let mut pts = vec![*x];
                    if let Some(w) = sampler.draw_for(rng, 1, -t, -t, &mut pts) {
                        term += w * apply_cumulant(dynamics, t, &cs, chaos, &pts)?;
                    }
                }
                acc *= term;
            }
            Ok(acc)
        })
    });
    let (joint, _) = collect_scalar(out)?;
    Ok(ProductFormulaReport {
        residual: product.value - joint.value,
        combined_std_error: product.std_error.hypot(joint.std_error),
        product,
        joint,
    })
}

/// Scalar observable of one phase point.
pub type PointFn<'a> = dyn Fn(&PhasePoint) -> f64 + Sync + 'a;
/// Scalar function of two phase points.
pub type PairFn<'a> = dyn Fn(&PhasePoint, &PhasePoint) -> f64 + Sync + 'a;

/// Samples used where an analytic representation has no tensor quadrature.
pub const OBSERVABLE_MC_SAMPLES: usize = 200_000;
const OBSERVABLE_SEED: u64 = 0x0b5e_7ab1e;

fn composite_gauss(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = crate::quadrature::gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for k in 0..panels {
        let mid = lo + (k as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((mid + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

/// `int a1(x) F(x) dx` with the representation's own quadrature: nodal
/// trapezoid on grids, weighted sums on ensembles, composite Gauss–Legendre
/// for one-dimensional analytic profiles and Monte Carlo in three dimensions.
pub fn mean_observable(a1: &PointFn, f: &OneParticleDistribution) -> Result<Estimate> {
    match f {
        OneParticleDistribution::Grid(g) => {
            let (hq, hp) = (g.hq(), g.hp());
            let node = |i: usize, j: usize| {
                let x = PhasePoint::new_1d(g.q_min + i as f64 * hq, g.p_min + j as f64 * hp);
                a1(&x) * g.values[i * g.np + j]
            };
            let mut s = 0.0;
            for i in 0..g.nq - 1 {
                for j in 0..g.np - 1 {
                    s += 0.25
                        * hq
                        * hp
                        * (node(i, j) + node(i + 1, j) + node(i, j + 1) + node(i + 1, j + 1));
                }
            }
            Ok(Estimate::exact(s))
        }
        OneParticleDistribution::Ensemble(e) => Ok(Estimate::exact(
            e.points
                .iter()
                .zip(&e.weights)
                .map(|(x, w)| w * a1(x))
                .sum(),
        )),
        OneParticleDistribution::Analytic(a) if a.dim == 1 => {
            if a.mass == 0.0 {
                return Ok(Estimate::exact(0.0));
            }
            let (lo, hi) = f.spatial_bounds();
            let (mean, std) = f.momentum_moments();
            let qs = composite_gauss(lo[0], hi[0], 16, 8);
            let ps = composite_gauss(mean[0] - 12.0 * std, mean[0] + 12.0 * std, 48, 8);
            let mut s = 0.0;
            for (q, wq) in &qs {
                for (p, wp) in &ps {
                    let x = PhasePoint::new_1d(*q, *p);
                    s += wq * wp * a1(&x) * f.value(&x);
                }
            }
            Ok(Estimate::exact(s))
        }
        OneParticleDistribution::Analytic(a) => {
            let mass = a.mass;
            if mass == 0.0 {
                return Ok(Estimate::exact(0.0));
            }
            let vals: Vec<f64> = par_samples(OBSERVABLE_SEED, OBSERVABLE_MC_SAMPLES, |_, rng| {
                f.sample_with(rng).map(|x| mass * a1(&x)).unwrap_or(0.0)
            });
            Ok(Estimate::from_samples(&vals))
        }
    }
}

/// Dispersion of the additive observable with one-particle part `a1`:
/// `int (a1^2 - <a1>^2) F_1 + int int a1(x1) a1(x2) G_2(x1, x2)`.
/// The pair integral is sampled from `F_1 x F_1`, so `g2` must vanish where
/// that product does.
pub fn dispersion_additive(
    a1: &PointFn,
    f1: &OneParticleDistribution,
    g2: Option<&PairFn>,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let mean = mean_observable(a1, f1)?;
    let second = mean_observable(&|x: &PhasePoint| a1(x) * a1(x), f1)?;
    let mut out = Estimate {
        value: second.value - mean.value * mean.value * f1.l1_norm(),
        std_error: second
            .std_error
            .hypot(2.0 * mean.value.abs() * mean.std_error * f1.l1_norm()),
        samples: second.samples,
    };
    if let Some(g2) = g2 {
        let norm = f1.l1_norm();
        if norm > 0.0 {
            let vals: Vec<f64> = par_samples(seed, samples.max(1), |_, rng| {
                let (Ok(x1), Ok(x2)) = (f1.sample_with(rng), f1.sample_with(rng)) else {
                    return 0.0;
                };
                let ff = f1.value(&x1) * f1.value(&x2);
                if ff == 0.0 {
                    return 0.0;
                }
                norm * norm * a1(&x1) * a1(&x2) * g2(&x1, &x2) / ff
            });
            out = out.add(Estimate::from_samples(&vals));
        }
    }
    Ok(out)
}

/// Smooth test function with its position gradient.
pub struct TestFunction<'a> {
    pub value: &'a PointFn<'a>,
    pub grad_q: &'a (dyn Fn(&PhasePoint) -> Vec3 + Sync + 'a),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormReport {
    pub dt: f64,
    /// Central difference of `(phi, F_1)` over `[t - dt, t + dt]`.
    pub time_derivative: Estimate,
    /// `(<p, grad_q phi>, F_1(t))`
    pub transport: Estimate,
    pub collision: Estimate,
    /// `time_derivative - transport - collision`
    pub residual: Estimate,
}

/// Weak-form residual of the kinetic equation for the order-`<= 1` series.
///
/// Both time levels of the difference quotient use the same draws, so the
/// quotient carries no `1/dt` noise amplification. The collision term pairs
/// `phi(q1, p1*) - phi(q1, p1)` with the lowest-order two-particle function
/// `S_2(-t) F_0 F_0 X`, which is what the order-1 series differentiates to.
pub fn weak_form_residual(
    dynamics: &Dynamics,
    phi: &TestFunction,
    t: f64,
    dts: &[f64],
    f0: &OneParticleDistribution,
    trunc: &TruncationSpec,
) -> Result<Vec<WeakFormReport>> {
    trunc.validate(1)?;
    check_setup(dynamics, f0, t)?;
    if dts.is_empty() || dts.iter().any(|dt| !(*dt > 0.0 && dt.is_finite())) {
        return Err(KineticError::InvalidArgument(
            "dt values must be positive".into(),
        ));
    }
    trunc.guard(f0, dynamics.sigma)?;
    if f0.l1_norm() == 0.0 {
        let z = Estimate::exact(0.0);
        return Ok(dts
            .iter()
            .map(|&dt| WeakFormReport {
                dt,
                time_derivative: z,
                transport: z,
                collision: z,
                residual: z,
            })
            .collect());
    }
    let dim = f0.dim();
    let mut taus = vec![t];
    for dt in dts {
        taus.push(t - dt);
        taus.push(t + dt);
    }
    let obs = |x: &PhasePoint, out: &mut [f64]| {
        out[0] = (phi.value)(x);
        out[1] = dot(&x.p, &(phi.grad_q)(x), dim);
    };
    let mut deriv = vec![Estimate::exact(0.0); dts.len()];
    let mut transport = Estimate::exact(0.0);
    let mut lhs = vec![Estimate::exact(0.0); dts.len()];
    for n in 0..=trunc.order {
        let seed = child_seed(trunc.seed, n as u64);
        let (rows, _) = pairing_order_samples(dynamics, f0, n, &taus, &obs, 2, trunc, seed)?;
        transport = transport.add(Estimate::from_samples(
            &rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
        ));
        for (k, dt) in dts.iter().enumerate() {
            let (lo, hi) = (2 * (2 * k + 1), 2 * (2 * k + 2));
            let d: Vec<f64> = rows.iter().map(|r| (r[hi] - r[lo]) / (2.0 * dt)).collect();
            let l: Vec<f64> = rows.iter().zip(&d).map(|(r, d)| d - r[1]).collect();
            deriv[k] = deriv[k].add(Estimate::from_samples(&d));
            lhs[k] = lhs[k].add(Estimate::from_samples(&l));
        }
    }
    let collision = if trunc.order >= 1 && dynamics.collisions && t != 0.0 {
        weak_collision_term(dynamics, phi.value, t, f0, trunc)?
    } else {
        Estimate::exact(0.0)
    };
    Ok(dts
        .iter()
        .enumerate()
        .map(|(k, &dt)| WeakFormReport {
            dt,
            time_derivative: deriv[k],
            transport,
            collision,
            residual: lhs[k].add(collision.scale(-1.0)),
        })
        .collect())
}

/// `sigma^{d-1} int dx1 dp2 deta <eta, p1 - p2>_+ (phi(q1, p1*) - phi(q1, p1))
/// (S_2(-t) F_0 F_0 X)(x1, q1 + sigma eta, p2)`.
fn weak_collision_term(
    dynamics: &Dynamics,
    phi: &PointFn,
    t: f64,
    f0: &OneParticleDistribution,
    trunc: &TruncationSpec,
) -> Result<Estimate> {
    let sigma = dynamics.sigma;
    let dim = f0.dim();
    let proposal = Proposal::matched(f0, trunc.p_cut_sigmas, trunc.proposal_scale);
    let (mut lo, mut hi) = f0.spatial_bounds();
    let pad = t.abs() * proposal.p_cut() + sigma;
    let mut vol = 1.0;
    for k in 0..dim {
        lo[k] -= pad;
        hi[k] += pad;
        vol *= hi[k] - lo[k];
    }
    let pre = sigma.powi(dim as i32 - 1);
    let seed = child_seed(trunc.seed, 0xc0_11);
    let out = par_samples(seed, trunc.mc_samples, |_, rng| {
        with_resampling(rng, |rng| {
            use rand::Rng;
            let q1: Vec3 = std::array::from_fn(|k| {
                if k < dim {
                    rng.random_range(lo[k]..hi[k])
                } else {
                    0.0
                }
            });
            let (Some((p1, w1)), Some((p2, w2))) = (proposal.draw(rng), proposal.draw(rng)) else {
                return Ok(0.0);
            };
            let x1 = PhasePoint::new(q1, p1);
            let etas: Vec<(Vec3, f64)> = if dim == 1 {
                vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)]
            } else {
                vec![(
                    crate::mc::unit_vector(rng, dim),
                    crate::mc::sphere_area(dim),
                )]
            };
            let mut acc = 0.0;
            for (eta, we) in etas {
                let Some(pp) = crate::collision::pair_points(&x1, &p2, &eta, sigma) else {
                    continue;
                };
                let jump = phi(&pp.gain[0]) - phi(&x1);
                if jump == 0.0 {
                    continue;
                }
                let mut pts = pp.loss.to_vec();
                if !dynamics.in_domain(&pts, &[0, 1]) {
                    continue;
                }
                dynamics.flow(&mut pts, &[0, 1], -t)?;
                acc += pre * pp.rate * we * jump * chaos_product(f0, sigma, &pts);
            }
            Ok(vol * w1 * w2 * acc)
        })
    });
    Ok(collect_scalar(out)?.0)
}
