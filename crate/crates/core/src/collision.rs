//! Collision integrals of the generalized Enskog equation.
//!
//! All integrals share one Monte Carlo layout: the partner momentum `p2` is
//! drawn from a Gaussian proposal matched to `F`, the impact direction `eta`
//! from the unit sphere (or a deterministic node rule), and gain and loss are
//! evaluated on the same draw so that their cancellation survives sampling.
//! In one dimension `eta` runs over `{+1, -1}` and the `sigma^{d-1}` prefactor is 1.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cumulant::PhaseFn;
use crate::distribution::{plain_product, OneParticleDistribution};
use crate::error::{KineticError, Result};
use crate::flow::{
    dot, first_overlap, sub, Dynamics, PhasePoint, SystemState, Vec3, CONTACT_REL_TOL,
};
use crate::mc::{ball_volume, in_ball, par_samples, sphere_area, unit_vector, Estimate, McRng};
use crate::operators::{general_expansion, scattering_operator, MAX_GENERAL_ORDER};
use crate::quadrature::{gauss_laguerre, gauss_legendre};

/// Highest collision-series order evaluated.
pub const MAX_COLLISION_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaRule {
    /// One uniform direction per sample.
    MonteCarlo,
    /// Gauss–Legendre in `cos(theta)` times uniform `phi`, all nodes per sample.
    Product { n_theta: usize, n_phi: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub mc_samples: usize,
    pub seed: u64,
    pub eta: EtaRule,
    /// Proposal cutoff in proposal standard deviations.
    pub p_cut_sigmas: f64,
    /// Overrides the proposal scale taken from `F`.
    pub proposal_scale: Option<f64>,
    pub laguerre_nodes: usize,
    /// Scale of the Laguerre variable for the hard-rod integral.
    pub laguerre_scale: f64,
    /// Radius, in diameters, of the third-particle ball of the Markovian correction.
    pub third_radius_sigmas: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            mc_samples: 100_000,
            seed: 0,
            eta: EtaRule::MonteCarlo,
            p_cut_sigmas: 8.0,
            proposal_scale: None,
            laguerre_nodes: 64,
            laguerre_scale: 1.0,
            third_radius_sigmas: 3.0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_samples(seed: u64, mc_samples: usize) -> Self {
        QuadratureSpec {
            seed,
            mc_samples,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionResult {
    pub value: f64,
    pub std_error: f64,
    pub gain: f64,
    pub loss: f64,
    pub samples: usize,
    /// Probability mass of the momentum proposal beyond its cutoff.
    pub tail_bound: f64,
    /// Samples discarded because the flow refused them.
    pub rejected: usize,
}

impl CollisionResult {
    fn exact_zero() -> Self {
        CollisionResult {
            value: 0.0,
            std_error: 0.0,
            gain: 0.0,
            loss: 0.0,
            samples: 0,
            tail_bound: 0.0,
            rejected: 0,
        }
    }

    fn from_pairs(pairs: &[Option<(f64, f64)>], tail_bound: f64) -> Self {
        let n = pairs.len();
        let rejected = pairs.iter().filter(|p| p.is_none()).count();
        let g: Vec<f64> = pairs.iter().map(|p| p.map_or(0.0, |v| v.0)).collect();
        let l: Vec<f64> = pairs.iter().map(|p| p.map_or(0.0, |v| v.1)).collect();
        let d: Vec<f64> = g.iter().zip(&l).map(|(a, b)| a - b).collect();
        let gain = Estimate::from_samples(&g).value;
        let loss = Estimate::from_samples(&l).value;
        CollisionResult {
            value: gain - loss,
            std_error: Estimate::from_samples(&d).std_error,
            gain,
            loss,
            samples: n,
            tail_bound,
            rejected,
        }
    }
}

/// `-1` when the centers are closer than `sigma`, `0` otherwise (contact included).
pub fn mayer_f(q1: &[f64], q2: &[f64], sigma: f64) -> f64 {
    let d2: f64 = q1.iter().zip(q2).map(|(a, b)| (a - b) * (a - b)).sum();
    if d2 < sigma * sigma * (1.0 - 2.0 * CONTACT_REL_TOL) {
        -1.0
    } else {
        0.0
    }
}

/// Volume of the intersection of two balls of radius `sigma` at center distance `sigma`.
pub fn lens_volume(sigma: f64) -> f64 {
    5.0 * PI / 12.0 * sigma.powi(3)
}

/// Hit-counting estimate of [`lens_volume`].
pub fn lens_volume_mc(sigma: f64, samples: usize, seed: u64) -> Estimate {
    let c2 = [sigma, 0.0, 0.0];
    let v = ball_volume(sigma, 3);
    let hits = par_samples(seed, samples, |_, rng| {
        let q = in_ball(rng, &[0.0; 3], sigma, 3);
        let d = sub(&q, &c2);
        if dot(&d, &d, 3) < sigma * sigma {
            v
        } else {
            0.0
        }
    });
    Estimate::from_samples(&hits)
}

/// Gaussian momentum proposal truncated at `cut` standard deviations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Proposal {
    pub(crate) mean: Vec3,
    pub(crate) scale: f64,
    pub(crate) cut: f64,
    pub(crate) dim: usize,
}

impl Proposal {
    fn new(f: &OneParticleDistribution, spec: &QuadratureSpec) -> Self {
        Self::matched(f, spec.p_cut_sigmas, spec.proposal_scale)
    }

    pub(crate) fn matched(f: &OneParticleDistribution, cut: f64, scale: Option<f64>) -> Self {
        let (mean, std) = f.momentum_moments();
        let scale = scale.unwrap_or(if std > 0.0 { std } else { 1.0 });
        Proposal {
            mean,
            scale,
            cut,
            dim: f.dim(),
        }
    }

    pub(crate) fn tail_bound(&self) -> f64 {
        ChiSquared::new(self.dim as f64)
            .map(|c| c.sf(self.cut * self.cut))
            .unwrap_or(0.0)
    }

    pub(crate) fn p_cut(&self) -> f64 {
        dot(&self.mean, &self.mean, self.dim).sqrt() + self.cut * self.scale
    }

    /// A momentum and its inverse density; `None` beyond the cutoff.
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(Vec3, f64)> {
        let mut z = [0.0; 3];
        for v in z.iter_mut().take(self.dim) {
            *v = StandardNormal.sample(rng);
        }
        let r2 = dot(&z, &z, self.dim);
        if r2 > self.cut * self.cut {
            return None;
        }
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.mean[k] + self.scale * z[k];
        }
        let norm = (2.0 * PI).powf(self.dim as f64 / 2.0) * self.scale.powi(self.dim as i32);
        Some((p, norm * (0.5 * r2).exp()))
    }
}

/// Impact directions with weights, for one sample.
fn eta_nodes(
    rng: &mut McRng,
    dim: usize,
    rule: &EtaRule,
    fixed: &[(Vec3, f64)],
) -> Vec<(Vec3, f64)> {
    if dim == 1 {
        return vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)];
    }
    match rule {
        EtaRule::MonteCarlo => vec![(unit_vector(rng, dim), sphere_area(dim))],
        EtaRule::Product { .. } => fixed.to_vec(),
    }
}

fn product_nodes(rule: &EtaRule) -> Vec<(Vec3, f64)> {
    let EtaRule::Product { n_theta, n_phi } = *rule else {
        return Vec::new();
    };
    let (x, w) = gauss_legendre(n_theta);
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for (c, wc) in x.iter().zip(&w) {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
            out.push((
                [s * phi.cos(), s * phi.sin(), *c],
                wc * 2.0 * PI / n_phi as f64,
            ));
        }
    }
    out
}

/// Gain and loss configurations of one collision.
#[derive(Debug, Clone, Copy)]
pub struct PairPoints {
    /// `(q1, p1*)`, `(q1 - sigma eta, p2*)`
    pub gain: [PhasePoint; 2],
    /// `(q1, p1)`, `(q1 + sigma eta, p2)`
    pub loss: [PhasePoint; 2],
    /// `<eta, p1 - p2>`, positive.
    pub rate: f64,
}

/// Collision geometry for `x1`, partner momentum `p2` and direction `eta`;
/// `None` outside the incoming hemisphere.
pub fn pair_points(x1: &PhasePoint, p2: &Vec3, eta: &Vec3, sigma: f64) -> Option<PairPoints> {
    let dp = sub(&x1.p, p2);
    let rate = dot(eta, &dp, 3);
    if rate <= 0.0 {
        return None;
    }
    let mut p1s = x1.p;
    let mut p2s = *p2;
    let mut qm = x1.q;
    let mut qp = x1.q;
    for k in 0..3 {
        p1s[k] -= eta[k] * rate;
        p2s[k] += eta[k] * rate;
        qm[k] -= sigma * eta[k];
        qp[k] += sigma * eta[k];
    }
    Some(PairPoints {
        gain: [PhasePoint::new(x1.q, p1s), PhasePoint::new(qm, p2s)],
        loss: [*x1, PhasePoint::new(qp, *p2)],
        rate,
    })
}

fn check_dim(f: &OneParticleDistribution, dims: &[usize]) -> Result<()> {
    if !dims.contains(&f.dim()) {
        return Err(KineticError::DimensionMismatch {
            expected: dims[0],
            got: f.dim(),
        });
    }
    Ok(())
}

fn prefactor(sigma: f64, dim: usize) -> f64 {
    sigma.powi(dim as i32 - 1)
}

/// Shared sampling loop: `body(rng, p2, p2_weight, eta, eta_weight)` returns
/// `(gain, loss)` contributions or `None` to reject.
fn gain_loss_mc<B>(
    f: &OneParticleDistribution,
    spec: &QuadratureSpec,
    body: B,
) -> Result<CollisionResult>
where
    B: Fn(&mut McRng, &Vec3, f64, &Vec3, f64) -> Result<Option<(f64, f64)>> + Sync,
{
    if spec.mc_samples == 0 {
        return Err(KineticError::InvalidArgument(
            "mc_samples must be positive".into(),
        ));
    }
    let proposal = Proposal::new(f, spec);
    let fixed = product_nodes(&spec.eta);
    let dim = f.dim();
    let out: Vec<Result<Option<(f64, f64)>>> = par_samples(spec.seed, spec.mc_samples, |_, rng| {
        let Some((p2, wp)) = proposal.draw(rng) else {
            return Ok(Some((0.0, 0.0)));
        };
        let mut acc = (0.0, 0.0);
        for (eta, we) in eta_nodes(rng, dim, &spec.eta, &fixed) {
            match body(rng, &p2, wp, &eta, we)? {
                Some((g, l)) => {
                    acc.0 += g;
                    acc.1 += l;
                }
                None => return Ok(None),
            }
        }
        Ok(Some(acc))
    });
    let pairs: Vec<Option<(f64, f64)>> = out.into_iter().collect::<Result<_>>()?;
    Ok(CollisionResult::from_pairs(&pairs, proposal.tail_bound()))
}

/// Boltzmann–Enskog collision integral at `x1`.
pub fn boltzmann_enskog(
    f: &OneParticleDistribution,
    x1: &PhasePoint,
    sigma: f64,
    spec: &QuadratureSpec,
) -> Result<CollisionResult> {
    check_dim(f, &[3, 1])?;
    if f.l1_norm() == 0.0 {
        return Ok(CollisionResult::exact_zero());
    }
    let pre = prefactor(sigma, f.dim());
    gain_loss_mc(f, spec, |_, p2, wp, eta, we| {
        let Some(pp) = pair_points(x1, p2, eta, sigma) else {
            return Ok(Some((0.0, 0.0)));
        };
        let w = pre * pp.rate * wp * we;
        Ok(Some((
            w * f.value(&pp.gain[0]) * f.value(&pp.gain[1]),
            w * f.value(&pp.loss[0]) * f.value(&pp.loss[1]),
        )))
    })
}

/// Order-`n` term of the collision series of the generalized Enskog equation.
pub fn generalized_enskog_term(
    dynamics: &Dynamics,
    n: usize,
    t: f64,
    f: &OneParticleDistribution,
    x1: &PhasePoint,
    spec: &QuadratureSpec,
) -> Result<CollisionResult> {
    if n > MAX_COLLISION_ORDER {
        return Err(KineticError::OrderCap {
            what: "collision series order",
            value: n,
            max: MAX_COLLISION_ORDER.min(MAX_GENERAL_ORDER),
        });
    }
    check_dim(f, &[1, 3])?;
    if f.dim() != dynamics.dim {
        return Err(KineticError::DimensionMismatch {
            expected: dynamics.dim,
            got: f.dim(),
        });
    }
    if f.l1_norm() == 0.0 {
        return Ok(CollisionResult::exact_zero());
    }
    let sigma = dynamics.sigma;
    let dim = f.dim();
    let op = general_expansion(2, n, false)?;
    let proposal = Proposal::new(f, spec);
    let radius = n as f64 * (sigma + 2.0 * t.abs() * proposal.p_cut()) + sigma;
    let vol = ball_volume(radius, dim);
    let pre = prefactor(sigma, dim) / (1..=n).map(|k| k as f64).product::<f64>();
    let prod = |y: &[PhasePoint]| Ok(plain_product(f, y));
    gain_loss_mc(f, spec, |rng, p2, wp, eta, we| {
        let Some(pp) = pair_points(x1, p2, eta, sigma) else {
            return Ok(Some((0.0, 0.0)));
        };
        let mut extra = Vec::with_capacity(n);
        let mut w = pre * pp.rate * wp * we;
        for _ in 0..n {
            let q = in_ball(rng, &x1.q, radius, dim);
            let Some((p, wq)) = proposal.draw(rng) else {
                return Ok(Some((0.0, 0.0)));
            };
            extra.push(PhasePoint::new(q, p));
            w *= vol * wq;
        }
        let gain_pts: Vec<PhasePoint> = pp.gain.iter().chain(&extra).copied().collect();
        let loss_pts: Vec<PhasePoint> = pp.loss.iter().chain(&extra).copied().collect();
        let g = op.evaluate(dynamics, t, &prod, &gain_pts);
        let l = op.evaluate(dynamics, t, &prod, &loss_pts);
        match (g, l) {
            (Ok(g), Ok(l)) => Ok(Some((w * g, w * l))),
            (Err(KineticError::Flow(_)), _) | (_, Err(KineticError::Flow(_))) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}

/// Two-particle function `F2(q1, p1, q2, p2)` of one-dimensional arguments.
pub type RodPairFn<'a> = dyn Fn(f64, f64, f64, f64) -> f64 + Sync + 'a;

/// Four-term hard-rod collision integral at `(q1, p1)`, by Gauss–Laguerre
/// quadrature over the momentum transfer `P`.
pub fn hard_rod_integral(
    f2: &RodPairFn,
    q1: f64,
    p1: f64,
    sigma: f64,
    spec: &QuadratureSpec,
) -> Result<CollisionResult> {
    if spec.laguerre_nodes < 2 || !(spec.laguerre_scale > 0.0) {
        return Err(KineticError::InvalidArgument(
            "laguerre rule needs >= 2 nodes and a positive scale".into(),
        ));
    }
    let lam = spec.laguerre_scale;
    let (u, lw) = gauss_laguerre(spec.laguerre_nodes, 1.0);
    let (mut gain, mut loss) = (0.0, 0.0);
    for (ui, lwi) in u.iter().zip(&lw) {
        let big_p = lam * ui;
        let w = lam * lam * (lwi + ui).exp();
        if !w.is_finite() {
            return Err(KineticError::InvalidArgument(
                "laguerre weight overflow".into(),
            ));
        }
        let g = f2(q1, p1 - big_p, q1 - sigma, p1) + f2(q1, p1 + big_p, q1 + sigma, p1);
        let l = f2(q1, p1, q1 - sigma, p1 + big_p) + f2(q1, p1, q1 + sigma, p1 - big_p);
        gain += w * g;
        loss += w * l;
    }
    Ok(CollisionResult {
        value: gain - loss,
        std_error: 0.0,
        gain,
        loss,
        samples: spec.laguerre_nodes,
        tail_bound: 0.0,
        rejected: 0,
    })
}

/// Collision-invariant moments `int dp1 psi(p1) I(p1)` for `psi = 1, p, |p|^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantMoments {
    pub mass: Estimate,
    pub momentum: Vec<Estimate>,
    pub energy: Estimate,
}

impl InvariantMoments {
    pub fn all(&self) -> Vec<Estimate> {
        std::iter::once(self.mass)
            .chain(self.momentum.iter().copied())
            .chain(std::iter::once(self.energy))
            .collect()
    }
}

/// Moments of the Boltzmann–Enskog integral of a spatially uniform `F`, at
/// the center of its spatial profile. `symmetrized` uses the pre/post
/// collision symmetrization; otherwise the integrand is sampled directly.
pub fn collision_invariant_moments(
    f: &OneParticleDistribution,
    sigma: f64,
    spec: &QuadratureSpec,
    symmetrized: bool,
) -> Result<InvariantMoments> {
    let dim = f.dim();
    let q1 = match f {
        OneParticleDistribution::Analytic(a) => match &a.spatial {
            crate::distribution::SpatialProfile::Uniform { lo, hi } => {
                let mut c = [0.0; 3];
                for k in 0..dim {
                    c[k] = 0.5 * (lo[k] + hi[k]);
                }
                c
            }
            crate::distribution::SpatialProfile::Gaussian { center, .. } => {
                let mut c = [0.0; 3];
                c[..dim].copy_from_slice(center);
                c
            }
        },
        _ => {
            return Err(KineticError::InvalidArgument(
                "invariant moments need an analytic distribution".into(),
            ))
        }
    };
    let n_psi = dim + 2;
    if f.l1_norm() == 0.0 {
        let z = Estimate::exact(0.0);
        return Ok(InvariantMoments {
            mass: z,
            momentum: vec![z; dim],
            energy: z,
        });
    }
    let proposal = Proposal::new(f, spec);
    let fixed = product_nodes(&spec.eta);
    let pre = prefactor(sigma, dim);
    let psi = |p: &Vec3| -> Vec<f64> {
        let mut v = Vec::with_capacity(n_psi);
        v.push(1.0);
        v.extend_from_slice(&p[..dim]);
        v.push(dot(p, p, dim));
        v
    };
    let rows: Vec<Vec<f64>> = par_samples(spec.seed, spec.mc_samples, |_, rng| {
        let mut acc = vec![0.0; n_psi];
        let (Some((p1, w1)), Some((p2, w2))) = (proposal.draw(rng), proposal.draw(rng)) else {
            return acc;
        };
        let x1 = PhasePoint::new(q1, p1);
        for (eta, we) in eta_nodes(rng, dim, &spec.eta, &fixed) {
            let Some(pp) = pair_points(&x1, &p2, &eta, sigma) else {
                continue;
            };
            let w = pre * pp.rate * w1 * w2 * we;
            if symmetrized {
                let base = w * f.value(&pp.loss[0]) * f.value(&pp.loss[1]);
                let (a, b) = (psi(&pp.gain[0].p), psi(&pp.gain[1].p));
                let (c, d) = (psi(&p1), psi(&p2));
                for k in 0..n_psi {
                    acc[k] += base * 0.5 * ((a[k] + b[k]) - (c[k] + d[k]));
                }
            } else {
                let diff = f.value(&pp.gain[0]) * f.value(&pp.gain[1])
                    - f.value(&pp.loss[0]) * f.value(&pp.loss[1]);
                let c = psi(&p1);
                for k in 0..n_psi {
                    acc[k] += w * c[k] * diff;
                }
            }
        }
        acc
    });
    let est = |k: usize| Estimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
    Ok(InvariantMoments {
        mass: est(0),
        momentum: (1..=dim).map(est).collect(),
        energy: est(dim + 1),
    })
}

/// First correction of the revised Enskog collision integral.
pub fn revised_enskog_first_correction(
    f: &OneParticleDistribution,
    x1: &PhasePoint,
    sigma: f64,
    spec: &QuadratureSpec,
) -> Result<CollisionResult> {
    check_dim(f, &[3, 1])?;
    if f.l1_norm() == 0.0 {
        return Ok(CollisionResult::exact_zero());
    }
    let dim = f.dim();
    let proposal = Proposal::new(f, spec);
    let vol = ball_volume(sigma, dim);
    let pre = prefactor(sigma, dim);
    gain_loss_mc(f, spec, |rng, p2, wp, eta, we| {
        let q3 = in_ball(rng, &x1.q, sigma, dim);
        let Some((p3, w3)) = proposal.draw(rng) else {
            return Ok(Some((0.0, 0.0)));
        };
        let Some(pp) = pair_points(x1, p2, eta, sigma) else {
            return Ok(Some((0.0, 0.0)));
        };
        let x3 = PhasePoint::new(q3, p3);
        let f3 = f.value(&x3);
        let w = pre * pp.rate * wp * we * vol * w3 * f3;
        let term = |a: &PhasePoint, b: &PhasePoint| {
            let ff = mayer_f(&a.q, &q3, sigma) * mayer_f(&b.q, &q3, sigma);
            if ff == 0.0 {
                0.0
            } else {
                ff * f.value(a) * f.value(b)
            }
        };
        Ok(Some((
            w * term(&pp.gain[0], &pp.gain[1]),
            w * term(&pp.loss[0], &pp.loss[1]),
        )))
    })
}

fn markov_grid(points: &[PhasePoint], sigma: f64, radius: f64, dim: usize) -> Vec<f64> {
    let mut vmax: f64 = 0.0;
    let mut vmin = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = sub(&points[i].p, &points[j].p);
            let v = dot(&d, &d, dim).sqrt();
            vmax = vmax.max(v);
            if v > 0.0 {
                vmin = vmin.min(v);
            }
        }
    }
    if vmax == 0.0 {
        return vec![sigma, 2.0 * sigma, 4.0 * sigma];
    }
    let t0 = sigma / (4.0 * vmax);
    let horizon = 8.0 * (2.0 * radius + 2.0 * sigma) / vmin;
    let mut grid = vec![t0];
    while *grid.last().unwrap() < horizon && grid.len() < 48 {
        grid.push(grid.last().unwrap() * 2.0);
    }
    while grid.len() < 3 {
        grid.push(grid.last().unwrap() * 2.0);
    }
    grid
}

/// First correction of the Markovian collision integral, with infinite-time
/// scattering operators detected as plateaus. `third_collisionless` lets the
/// third particle pass through the pair.
pub fn markovian_first_correction(
    f: &OneParticleDistribution,
    x1: &PhasePoint,
    sigma: f64,
    spec: &QuadratureSpec,
    third_collisionless: bool,
) -> Result<CollisionResult> {
    check_dim(f, &[3, 1])?;
    if f.l1_norm() == 0.0 {
        return Ok(CollisionResult::exact_zero());
    }
    let dim = f.dim();
    let proposal = Proposal::new(f, spec);
    let radius = spec.third_radius_sigmas * sigma;
    let vol = ball_volume(radius, dim);
    let pre = prefactor(sigma, dim);
    let mut dyn3 = Dynamics::hard_spheres(sigma, dim);
    let mut dyn2 = Dynamics::hard_spheres(sigma, dim);
    if third_collisionless {
        dyn3 = dyn3.with_ghosts(&[2]);
        dyn2 = dyn2.with_ghosts(&[1]);
    }
    gain_loss_mc(f, spec, |rng, p2, wp, eta, we| {
        let q3 = in_ball(rng, &x1.q, radius, dim);
        let Some((p3, w3)) = proposal.draw(rng) else {
            return Ok(Some((0.0, 0.0)));
        };
        let Some(pp) = pair_points(x1, p2, eta, sigma) else {
            return Ok(Some((0.0, 0.0)));
        };
        let x3 = PhasePoint::new(q3, p3);
        let w = pre * pp.rate * wp * we * vol * w3;
        let term = |a: &PhasePoint, b: &PhasePoint| -> Result<f64> {
            let chi_a = first_overlap(&[*a, x3], dim, sigma, None).is_none();
            let chi_b = first_overlap(&[*b, x3], dim, sigma, None).is_none();
            let fab3 = f.value(a) * f.value(b) * f.value(&x3);
            let mut v = fab3;
            if chi_a && chi_b {
                let st = SystemState::new(vec![*a, *b, x3], sigma, dim)?;
                let g = markov_grid(&st.points, sigma, radius, dim);
                let prod3: &PhaseFn = &|z: &[PhasePoint]| Ok(plain_product(f, z));
                v += scattering_operator(&dyn3, &st, &g, prod3)?.value;
            }
            for (chi, y, other) in [(chi_a, a, b), (chi_b, b, a)] {
                if chi {
                    let st = SystemState::new(vec![*y, x3], sigma, dim)?;
                    let g = markov_grid(&st.points, sigma, radius, dim);
                    let fo = f.value(other);
                    let prod2: &PhaseFn = &|z: &[PhasePoint]| Ok(fo * plain_product(f, z));
                    v -= scattering_operator(&dyn2, &st, &g, prod2)?.value;
                }
            }
            Ok(v)
        };
        match (
            term(&pp.gain[0], &pp.gain[1]),
            term(&pp.loss[0], &pp.loss[1]),
        ) {
            (Ok(g), Ok(l)) => Ok(Some((w * g, w * l))),
            (Err(KineticError::Flow(_)), _)
            | (_, Err(KineticError::Flow(_)))
            | (Err(KineticError::NoPlateau { .. }), _)
            | (_, Err(KineticError::NoPlateau { .. })) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}
