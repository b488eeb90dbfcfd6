//! One-particle distribution functions and chaos-condition initial data.
//!
//! Three representations share one interface: analytic separable forms
//! (spatial profile times momentum profile), a bilinear 1D phase-space grid,
//! and weighted particle ensembles evaluated through a Gaussian kernel density.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::bounds;
use crate::error::{KineticError, Result};
use crate::flow::{dot, first_overlap, PhasePoint, Vec3};
use crate::mc::{substream, McRng};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Normalized spatial density `g(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialProfile {
    /// Uniform on the box `[lo, hi]` (first `dim` components).
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// Isotropic Gaussian.
    Gaussian { center: Vec<f64>, width: f64 },
}

/// Normalized momentum density `h(p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentumProfile {
    Maxwellian {
        temperature: f64,
        drift: Vec<f64>,
    },
    /// Independent Gaussians per axis.
    Anisotropic {
        temperatures: Vec<f64>,
        drift: Vec<f64>,
    },
}

/// `mass * g(q) * h(p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSeparable {
    pub dim: usize,
    pub mass: f64,
    pub spatial: SpatialProfile,
    pub momentum: MomentumProfile,
}

/// Node values on a uniform `(q, p)` mesh; bilinear between nodes, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
    /// Row-major by position: `values[iq * np + ip]`.
    pub values: Vec<f64>,
}

/// Weighted phase samples with Gaussian kernel bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub points: Vec<PhasePoint>,
    pub weights: Vec<f64>,
    pub bandwidth_q: f64,
    pub bandwidth_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum OneParticleDistribution {
    Analytic(AnalyticSeparable),
    Grid(Grid1D),
    #[serde(skip)]
    Ensemble(ParticleEnsemble),
}

impl Serialize for PhasePoint {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        (self.q, self.p).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PhasePoint {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let (q, p) = <(Vec3, Vec3)>::deserialize(deserializer)?;
        Ok(PhasePoint { q, p })
    }
}

fn vec3(v: &[f64], dim: usize) -> Result<Vec3> {
    if v.len() != dim {
        return Err(KineticError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let mut out = [0.0; 3];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (SQRT_2PI * var.sqrt())
}

impl SpatialProfile {
    fn density(&self, q: &Vec3, dim: usize) -> f64 {
        match self {
            SpatialProfile::Uniform { lo, hi } => {
                let mut vol = 1.0;
                for k in 0..dim {
                    if q[k] < lo[k] || q[k] > hi[k] {
                        return 0.0;
                    }
                    vol *= hi[k] - lo[k];
                }
                1.0 / vol
            }
            SpatialProfile::Gaussian { center, width } => (0..dim)
                .map(|k| gaussian_pdf(q[k], center[k], width * width))
                .product(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec3 {
        let mut q = [0.0; 3];
        for k in 0..dim {
            q[k] = match self {
                SpatialProfile::Uniform { lo, hi } => lo[k] + (hi[k] - lo[k]) * rng.random::<f64>(),
                SpatialProfile::Gaussian { center, width } => {
                    center[k]
                        + width * {
                            let z: f64 = StandardNormal.sample(rng);
                            z
                        }
                }
            };
        }
        q
    }

    /// Cumulative distribution of the first coordinate.
    pub fn cdf_1d(&self, x: f64) -> f64 {
        match self {
            SpatialProfile::Uniform { lo, hi } => ((x - lo[0]) / (hi[0] - lo[0])).clamp(0.0, 1.0),
            SpatialProfile::Gaussian { center, width } => {
                0.5 * (1.0 + erf((x - center[0]) / (width * std::f64::consts::SQRT_2)))
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SpatialProfile::Uniform { lo, hi } => {
                vec3(lo, dim)?;
                vec3(hi, dim)?;
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite())
                {
                    return Err(KineticError::InvalidArgument(
                        "uniform box needs lo < hi".into(),
                    ));
                }
            }
            SpatialProfile::Gaussian { center, width } => {
                vec3(center, dim)?;
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(KineticError::InvalidArgument(
                        "gaussian width must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl MomentumProfile {
    fn temps_drift(&self, dim: usize) -> (Vec3, Vec3) {
        let mut t = [0.0; 3];
        let mut u = [0.0; 3];
        match self {
            MomentumProfile::Maxwellian { temperature, drift } => {
                for k in 0..dim {
                    t[k] = *temperature;
                    u[k] = drift[k];
                }
            }
            MomentumProfile::Anisotropic {
                temperatures,
                drift,
            } => {
                for k in 0..dim {
                    t[k] = temperatures[k];
                    u[k] = drift[k];
                }
            }
        }
        (t, u)
    }

    fn density(&self, p: &Vec3, dim: usize) -> f64 {
        let (t, u) = self.temps_drift(dim);
        (0..dim).map(|k| gaussian_pdf(p[k], u[k], t[k])).product()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let (temps, drift) = match self {
            MomentumProfile::Maxwellian { temperature, drift } => (vec![*temperature; dim], drift),
            MomentumProfile::Anisotropic {
                temperatures,
                drift,
            } => (temperatures.clone(), drift),
        };
        vec3(&temps, dim)?;
        vec3(drift, dim)?;
        if temps.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(KineticError::InvalidArgument(
                "temperatures must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl AnalyticSeparable {
    pub fn new(
        dim: usize,
        mass: f64,
        spatial: SpatialProfile,
        momentum: MomentumProfile,
    ) -> Result<Self> {
        let a = AnalyticSeparable {
            dim,
            mass,
            spatial,
            momentum,
        };
        a.validate()?;
        Ok(a)
    }

    /// Mass `mass` uniform on the box `[lo, hi]^dim` with a Maxwellian at temperature `temperature`.
    pub fn uniform_maxwellian(
        dim: usize,
        mass: f64,
        lo: f64,
        hi: f64,
        temperature: f64,
    ) -> Result<Self> {
        Self::new(
            dim,
            mass,
            SpatialProfile::Uniform {
                lo: vec![lo; dim],
                hi: vec![hi; dim],
            },
            MomentumProfile::Maxwellian {
                temperature,
                drift: vec![0.0; dim],
            },
        )
    }

    fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 3 {
            return Err(KineticError::InvalidArgument("dim must be 1 or 3".into()));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(KineticError::InvalidArgument(
                "mass must be finite and nonnegative".into(),
            ));
        }
        self.spatial.validate(self.dim)?;
        self.momentum.validate(self.dim)
    }
}

impl Grid1D {
    pub fn new(
        q: (f64, f64),
        p: (f64, f64),
        nq: usize,
        np: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let g = Grid1D {
            q_min: q.0,
            q_max: q.1,
            p_min: p.0,
            p_max: p.1,
            nq,
            np,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    /// Samples `f(q, p)` on the mesh nodes.
    pub fn from_fn(
        q: (f64, f64),
        p: (f64, f64),
        nq: usize,
        np: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let hq = (q.1 - q.0) / (nq.max(2) - 1) as f64;
        let hp = (p.1 - p.0) / (np.max(2) - 1) as f64;
        let mut values = Vec::with_capacity(nq * np);
        for i in 0..nq {
            for j in 0..np {
                values.push(f(q.0 + i as f64 * hq, p.0 + j as f64 * hp));
            }
        }
        Self::new(q, p, nq, np, values)
    }

    fn validate(&self) -> Result<()> {
        if self.nq < 2 || self.np < 2 || self.values.len() != self.nq * self.np {
            return Err(KineticError::InvalidArgument(
                "grid needs nq, np >= 2 and nq*np values".into(),
            ));
        }
        if !(self.q_max > self.q_min && self.p_max > self.p_min) {
            return Err(KineticError::InvalidArgument(
                "grid spacings must be positive".into(),
            ));
        }
        if self.values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(KineticError::InvalidArgument(
                "grid values must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn hq(&self) -> f64 {
        (self.q_max - self.q_min) / (self.nq - 1) as f64
    }

    pub fn hp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.np - 1) as f64
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.np + j]
    }

    pub fn evaluate(&self, q: f64, p: f64) -> f64 {
        if !(q >= self.q_min && q <= self.q_max && p >= self.p_min && p <= self.p_max) {
            return 0.0;
        }
        let x = ((q - self.q_min) / self.hq()).min((self.nq - 1) as f64);
        let y = ((p - self.p_min) / self.hp()).min((self.np - 1) as f64);
        let i = (x.floor() as usize).min(self.nq - 2);
        let j = (y.floor() as usize).min(self.np - 2);
        let (a, b) = (x - i as f64, y - j as f64);
        (1.0 - a) * (1.0 - b) * self.at(i, j)
            + a * (1.0 - b) * self.at(i + 1, j)
            + (1.0 - a) * b * self.at(i, j + 1)
            + a * b * self.at(i + 1, j + 1)
    }

    fn cell_mass(&self, i: usize, j: usize) -> f64 {
        0.25 * self.hq()
            * self.hp()
            * (self.at(i, j) + self.at(i + 1, j) + self.at(i, j + 1) + self.at(i + 1, j + 1))
    }

    /// Exact integral of the bilinear interpolant (trapezoid rule on the nodes).
    pub fn l1_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.nq - 1 {
            for j in 0..self.np - 1 {
                s += self.cell_mass(i, j);
            }
        }
        s
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhasePoint {
        let total = self.l1_norm();
        let mut u = rng.random::<f64>() * total;
        let (mut ci, mut cj) = (self.nq - 2, self.np - 2);
        'outer: for i in 0..self.nq - 1 {
            for j in 0..self.np - 1 {
                let m = self.cell_mass(i, j);
                if u < m && m > 0.0 {
                    ci = i;
                    cj = j;
                    break 'outer;
                }
                u -= m;
            }
        }
        let top = self
            .at(ci, cj)
            .max(self.at(ci + 1, cj))
            .max(self.at(ci, cj + 1))
            .max(self.at(ci + 1, cj + 1));
        loop {
            let q = self.q_min + (ci as f64 + rng.random::<f64>()) * self.hq();
            let p = self.p_min + (cj as f64 + rng.random::<f64>()) * self.hp();
            if rng.random::<f64>() * top <= self.evaluate(q, p) {
                return PhasePoint::new_1d(q, p);
            }
        }
    }

    /// CSV rows `q,p,value`, one per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,p,value\n");
        for i in 0..self.nq {
            for j in 0..self.np {
                let q = self.q_min + i as f64 * self.hq();
                let p = self.p_min + j as f64 * self.hp();
                out.push_str(&format!("{q},{p},{}\n", self.at(i, j)));
            }
        }
        out
    }

    /// Parses the output of [`Grid1D::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| KineticError::InvalidArgument(format!("grid csv: {m}"));
        let mut rows = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("non-numeric field"))?;
            if cols.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            rows.push((cols[0], cols[1], cols[2]));
        }
        let np = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if np < 2 || rows.len() % np != 0 {
            return Err(bad("rows do not form a mesh"));
        }
        let nq = rows.len() / np;
        let q = (rows[0].0, rows[rows.len() - 1].0);
        let p = (rows[0].1, rows[np - 1].1);
        Self::new(q, p, nq, np, rows.iter().map(|r| r.2).collect())
    }
}

impl ParticleEnsemble {
    /// Ensemble with position bandwidth `sigma / 4` and a Silverman-rule momentum bandwidth.
    pub fn new(dim: usize, points: Vec<PhasePoint>, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(KineticError::InvalidArgument(
                "ensemble needs one weight per point".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(KineticError::InvalidArgument(
                "ensemble weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let mut var = 0.0;
        for k in 0..dim {
            let mean: f64 = points
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * x.p[k])
                .sum::<f64>()
                / total;
            var += points
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * (x.p[k] - mean).powi(2))
                .sum::<f64>()
                / total;
        }
        let std = (var / dim as f64).sqrt();
        let n = points.len() as f64;
        let bandwidth_p = if std > 0.0 {
            1.06 * std * n.powf(-0.2)
        } else {
            sigma / 4.0
        };
        Ok(ParticleEnsemble {
            dim,
            points,
            weights,
            bandwidth_q: sigma / 4.0,
            bandwidth_p,
        })
    }

    fn evaluate(&self, x: &PhasePoint) -> f64 {
        let (vq, vp) = (self.bandwidth_q.powi(2), self.bandwidth_p.powi(2));
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| {
                let mut k = *w;
                for d in 0..self.dim {
                    k *= gaussian_pdf(x.q[d], y.q[d], vq) * gaussian_pdf(x.p[d], y.p[d], vp);
                }
                k
            })
            .sum()
    }
}

impl OneParticleDistribution {
    pub fn dim(&self) -> usize {
        match self {
            OneParticleDistribution::Analytic(a) => a.dim,
            OneParticleDistribution::Grid(_) => 1,
            OneParticleDistribution::Ensemble(e) => e.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OneParticleDistribution::Analytic(a) => a.validate(),
            OneParticleDistribution::Grid(g) => g.validate(),
            OneParticleDistribution::Ensemble(_) => Ok(()),
        }
    }

    /// Pointwise value at a phase point of the distribution's dimension.
    #[inline]
    pub fn value(&self, x: &PhasePoint) -> f64 {
        match self {
            OneParticleDistribution::Analytic(a) => {
                if a.mass == 0.0 {
                    return 0.0;
                }
                let g = a.spatial.density(&x.q, a.dim);
                if g == 0.0 {
                    return 0.0;
                }
                a.mass * g * a.momentum.density(&x.p, a.dim)
            }
            OneParticleDistribution::Grid(g) => g.evaluate(x.q[0], x.p[0]),
            OneParticleDistribution::Ensemble(e) => e.evaluate(x),
        }
    }

    /// Value at a phase point given as coordinate slices of length `dim`.
    pub fn evaluate(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        let dim = self.dim();
        Ok(self.value(&PhasePoint::new(vec3(q, dim)?, vec3(p, dim)?)))
    }

    pub fn l1_norm(&self) -> f64 {
        match self {
            OneParticleDistribution::Analytic(a) => a.mass,
            OneParticleDistribution::Grid(g) => g.l1_norm(),
            OneParticleDistribution::Ensemble(e) => e.weights.iter().sum(),
        }
    }

    /// A draw from `F / ||F||`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PhasePoint> {
        let norm = self.l1_norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(KineticError::NotNormalizable);
        }
        Ok(match self {
            OneParticleDistribution::Analytic(a) => {
                let q = a.spatial.sample(rng, a.dim);
                let (t, u) = a.momentum.temps_drift(a.dim);
                let mut p = [0.0; 3];
                for k in 0..a.dim {
                    p[k] = u[k]
                        + t[k].sqrt() * {
                            let z: f64 = StandardNormal.sample(rng);
                            z
                        };
                }
                PhasePoint { q, p }
            }
            OneParticleDistribution::Grid(g) => g.sample(rng),
            OneParticleDistribution::Ensemble(e) => {
                let mut u = rng.random::<f64>() * norm;
                let mut idx = e.points.len() - 1;
                for (i, w) in e.weights.iter().enumerate() {
                    if u < *w {
                        idx = i;
                        break;
                    }
                    u -= w;
                }
                let base = e.points[idx];
                let nq = Normal::new(0.0, e.bandwidth_q).expect("positive bandwidth");
                let np = Normal::new(0.0, e.bandwidth_p).expect("positive bandwidth");
                let mut pt = base;
                for k in 0..e.dim {
                    pt.q[k] += nq.sample(rng);
                    pt.p[k] += np.sample(rng);
                }
                pt
            }
        })
    }

    /// Draw number `index` of the stream seeded by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<PhasePoint> {
        let mut rng: McRng = substream(seed, index);
        self.sample_with(&mut rng)
    }

    /// Per-axis momentum mean and pooled standard deviation of `F / ||F||`.
    pub fn momentum_moments(&self) -> (Vec3, f64) {
        match self {
            OneParticleDistribution::Analytic(a) => {
                let (t, u) = a.momentum.temps_drift(a.dim);
                let tmax = t[..a.dim].iter().copied().fold(0.0, f64::max);
                (u, tmax.sqrt())
            }
            OneParticleDistribution::Grid(g) => {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for i in 0..g.nq {
                    for j in 0..g.np {
                        let p = g.p_min + j as f64 * g.hp();
                        let v = g.at(i, j);
                        m0 += v;
                        m1 += v * p;
                        m2 += v * p * p;
                    }
                }
                if m0 == 0.0 {
                    return ([0.0; 3], 1.0);
                }
                let mean = m1 / m0;
                ([mean, 0.0, 0.0], (m2 / m0 - mean * mean).max(0.0).sqrt())
            }
            OneParticleDistribution::Ensemble(e) => {
                let total: f64 = e.weights.iter().sum();
                let mut mean = [0.0; 3];
                for (x, w) in e.points.iter().zip(&e.weights) {
                    for k in 0..e.dim {
                        mean[k] += w * x.p[k] / total;
                    }
                }
                let var: f64 = e
                    .points
                    .iter()
                    .zip(&e.weights)
                    .map(|(x, w)| {
                        let d = [x.p[0] - mean[0], x.p[1] - mean[1], x.p[2] - mean[2]];
                        w * dot(&d, &d, e.dim) / total
                    })
                    .sum::<f64>()
                    / e.dim as f64;
                (mean, (var + e.bandwidth_p.powi(2)).sqrt())
            }
        }
    }

    /// Momentum marginal density `int F(q, p) dq`, available for the analytic
    /// form only.
    pub fn momentum_marginal(&self, p: &Vec3) -> Option<f64> {
        match self {
            OneParticleDistribution::Analytic(a) => Some(a.mass * a.momentum.density(p, a.dim)),
            _ => None,
        }
    }

    /// Spatial cumulative distribution of the first coordinate (mass-normalized),
    /// for analytic forms.
    pub fn spatial_cdf_1d(&self, x: f64) -> Option<f64> {
        match self {
            OneParticleDistribution::Analytic(a) => Some(a.spatial.cdf_1d(x)),
            _ => None,
        }
    }

    /// The same distribution boosted by the constant momentum `u`.
    pub fn boosted(&self, u: &Vec3) -> Option<OneParticleDistribution> {
        match self {
            OneParticleDistribution::Analytic(a) => {
                let mut b = a.clone();
                let drift = match &mut b.momentum {
                    MomentumProfile::Maxwellian { drift, .. } => drift,
                    MomentumProfile::Anisotropic { drift, .. } => drift,
                };
                for k in 0..a.dim {
                    drift[k] += u[k];
                }
                Some(OneParticleDistribution::Analytic(b))
            }
            _ => None,
        }
    }

    /// The same distribution multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> OneParticleDistribution {
        let mut out = self.clone();
        match &mut out {
            OneParticleDistribution::Analytic(a) => a.mass *= lambda,
            OneParticleDistribution::Grid(g) => g.values.iter_mut().for_each(|v| *v *= lambda),
            OneParticleDistribution::Ensemble(e) => e.weights.iter_mut().for_each(|w| *w *= lambda),
        }
        out
    }

    pub fn zero(dim: usize) -> OneParticleDistribution {
        OneParticleDistribution::Analytic(AnalyticSeparable {
            dim,
            mass: 0.0,
            spatial: SpatialProfile::Uniform {
                lo: vec![0.0; dim],
                hi: vec![1.0; dim],
            },
            momentum: MomentumProfile::Maxwellian {
                temperature: 1.0,
                drift: vec![0.0; dim],
            },
        })
    }
}

/// `F_s^0(x_1..x_s) = prod_i F(x_i)` times the allowed-configuration mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialChaosData {
    pub f1: OneParticleDistribution,
    pub sigma: f64,
}

impl InitialChaosData {
    pub fn new(f1: OneParticleDistribution, sigma: f64) -> Self {
        InitialChaosData { f1, sigma }
    }

    pub fn value(&self, xs: &[PhasePoint]) -> f64 {
        chaos_product(&self.f1, self.sigma, xs)
    }
}

/// `prod_i F(x_i)` if the positions are allowed, else 0.
pub fn chaos_product(f1: &OneParticleDistribution, sigma: f64, xs: &[PhasePoint]) -> f64 {
    if first_overlap(xs, f1.dim(), sigma, None).is_some() {
        return 0.0;
    }
    plain_product(f1, xs)
}

/// `prod_i F(x_i)` without the mask. Factors are multiplied in sorted order
/// so the result is exactly symmetric under permutations.
pub fn plain_product(f1: &OneParticleDistribution, xs: &[PhasePoint]) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| f1.value(x)).collect();
    v.sort_by(f64::total_cmp);
    v.iter().product()
}

impl OneParticleDistribution {
    /// Box holding the spatial support; Gaussian profiles are cut at 8 widths.
    pub fn spatial_bounds(&self) -> (Vec3, Vec3) {
        let dim = self.dim();
        let (mut lo, mut hi) = ([0.0; 3], [0.0; 3]);
        match self {
            OneParticleDistribution::Analytic(a) => match &a.spatial {
                SpatialProfile::Uniform { lo: l, hi: h } => {
                    lo[..dim].copy_from_slice(l);
                    hi[..dim].copy_from_slice(h);
                }
                SpatialProfile::Gaussian { center, width } => {
                    for k in 0..dim {
                        lo[k] = center[k] - 8.0 * width;
                        hi[k] = center[k] + 8.0 * width;
                    }
                }
            },
            OneParticleDistribution::Grid(g) => {
                lo[0] = g.q_min;
                hi[0] = g.q_max;
            }
            OneParticleDistribution::Ensemble(e) => {
                for k in 0..dim {
                    let (a, b) = e
                        .points
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                            (a.min(x.q[k]), b.max(x.q[k]))
                        });
                    lo[k] = a - 8.0 * e.bandwidth_q;
                    hi[k] = b + 8.0 * e.bandwidth_q;
                }
            }
        }
        (lo, hi)
    }

    /// `||F|| sigma^d / |support box|`, the mean number of particles per
    /// interaction volume.
    pub fn scaled_norm(&self, sigma: f64) -> f64 {
        let dim = self.dim();
        let (lo, hi) = self.spatial_bounds();
        let vol: f64 = (0..dim).map(|k| hi[k] - lo[k]).product();
        self.l1_norm() * sigma.powi(dim as i32) / vol
    }
}

/// Which convergence radius a norm guard checks against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    F1Series,
    CollisionSeries,
}

/// Outcome of a norm guard.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardStatus {
    pub kind: GuardKind,
    pub norm: f64,
    pub radius: f64,
    pub within: bool,
    pub warning: Option<String>,
}

/// Checks `||F|| < radius`. Outside the radius this is a warning unless `strict`.
pub fn norm_guard(
    f: &OneParticleDistribution,
    kind: GuardKind,
    strict: bool,
) -> Result<GuardStatus> {
    let c = bounds::convergence_constants();
    let (radius, which) = match kind {
        GuardKind::F1Series => (c.bbgky_radius, "one-particle series radius"),
        GuardKind::CollisionSeries => (c.enskog_collision, "collision series radius"),
    };
    guard_value(f.l1_norm(), kind, radius, which, strict)
}

/// [`norm_guard`] applied to [`OneParticleDistribution::scaled_norm`].
pub fn scaled_norm_guard(
    f: &OneParticleDistribution,
    sigma: f64,
    kind: GuardKind,
    strict: bool,
) -> Result<GuardStatus> {
    let c = bounds::convergence_constants();
    let (radius, which) = match kind {
        GuardKind::F1Series => (c.bbgky_radius, "one-particle series radius (scaled norm)"),
        GuardKind::CollisionSeries => (c.enskog_collision, "collision series radius (scaled norm)"),
    };
    guard_value(f.scaled_norm(sigma), kind, radius, which, strict)
}

fn guard_value(
    norm: f64,
    kind: GuardKind,
    radius: f64,
    which: &'static str,
    strict: bool,
) -> Result<GuardStatus> {
    let within = norm < radius;
    if !within && strict {
        return Err(KineticError::NormGuard {
            norm,
            radius,
            which,
        });
    }
    let warning = (!within).then(|| {
        let msg = format!(
            "||F|| = {norm} is not below the {which} {radius}; convergence is not guaranteed"
        );
        log::warn!("{msg}");
        msg
    });
    Ok(GuardStatus {
        kind,
        norm,
        radius,
        within,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maxwell_1d() -> OneParticleDistribution {
        OneParticleDistribution::Analytic(
            AnalyticSeparable::uniform_maxwellian(1, 1.0, 0.0, 1.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn evaluate_examples() {
        let f = maxwell_1d();
        let v = f.evaluate(&[0.5], &[0.0]).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(f.evaluate(&[0.5, 0.0, 0.0], &[0.0]).is_err());
        let g = Grid1D::from_fn((0.0, 1.0), (-1.0, 1.0), 5, 5, |_, _| 1.0).unwrap();
        assert_eq!(g.evaluate(1.5, 0.0), 0.0);
        assert_eq!(g.evaluate(0.3, 0.1), 1.0);
    }

    #[test]
    fn norms() {
        assert_eq!(maxwell_1d().l1_norm(), 1.0);
        let pts = vec![PhasePoint::new_1d(0.0, 0.0); 100];
        let e = ParticleEnsemble::new(1, pts, vec![0.01; 100], 0.1).unwrap();
        let e = OneParticleDistribution::Ensemble(e);
        assert!((e.l1_norm() - 1.0).abs() < 1e-14);
        assert!(e.value(&PhasePoint::new_1d(0.1, 0.2)) >= 0.0);
    }

    #[test]
    fn grid_norm_converges_quadratically() {
        // mass 0.3 Gaussian in q and p, truncated far in the tails
        let f = |q: f64, p: f64| 0.3 * gaussian_pdf(q, 0.0, 1.0) * gaussian_pdf(p, 0.0, 1.0);
        let mut errs = Vec::new();
        for n in [41, 81, 161] {
            let g = Grid1D::from_fn((-10.0, 10.0), (-10.0, 10.0), n, n, f).unwrap();
            errs.push((g.l1_norm() - 0.3).abs());
            let h = g.hq();
            assert!((g.l1_norm() - 0.3).abs() <= h * h, "n={n}");
        }
    }

    #[test]
    fn grid_csv_round_trip() {
        let g = Grid1D::from_fn((0.0, 2.0), (-1.0, 1.0), 3, 4, |q, p| q + p * p).unwrap();
        let back = Grid1D::from_csv(&g.to_csv()).unwrap();
        assert_eq!(back.nq, 3);
        assert_eq!(back.np, 4);
        for (a, b) in back.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = maxwell_1d();
        assert_eq!(f.sample(3, 17).unwrap(), f.sample(3, 17).unwrap());
        assert!(OneParticleDistribution::zero(1).sample(3, 0).is_err());
    }

    #[test]
    fn chaos_product_examples() {
        let g = OneParticleDistribution::Grid(
            Grid1D::new((0.0, 1.0), (-1.0, 1.0), 2, 2, vec![0.2, 0.2, 0.2, 0.2]).unwrap(),
        );
        let a = PhasePoint::new_1d(0.1, 0.0);
        let b = PhasePoint::new_1d(0.2, 0.0);
        assert_eq!(chaos_product(&g, 0.5, &[a, b]), 0.0);
        assert!((chaos_product(&g, 0.05, &[a, b]) - 0.04).abs() < 1e-15);
        assert_eq!(chaos_product(&g, 0.5, &[a]), g.value(&a));
        let g2 = OneParticleDistribution::Grid(
            Grid1D::new((0.0, 1.0), (-1.0, 1.0), 2, 2, vec![0.2, 0.2, 0.3, 0.3]).unwrap(),
        );
        let x1 = PhasePoint::new_1d(0.0, -1.0);
        let x2 = PhasePoint::new_1d(1.0, 1.0);
        assert!((chaos_product(&g2, 0.5, &[x1, x2]) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let f = maxwell_1d();
        let js = serde_json::to_string(&f).unwrap();
        let back: OneParticleDistribution = serde_json::from_str(&js).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn guards() {
        let small = maxwell_1d().scaled(0.1);
        assert!(
            norm_guard(&small, GuardKind::F1Series, true)
                .unwrap()
                .within
        );
        assert!(norm_guard(&small, GuardKind::CollisionSeries, true).is_err());
        let s = norm_guard(&small, GuardKind::CollisionSeries, false).unwrap();
        assert!(!s.within && s.warning.is_some());
    }
}
