//! Event-driven molecular dynamics ensembles used as an independent oracle for
//! the series solution.

use serde::Serialize;

use crate::distribution::OneParticleDistribution;
use crate::error::{KineticError, Result};
use crate::flow::{first_overlap, Dynamics, PhasePoint};
use crate::mc::{par_samples, Estimate, McRng};
use crate::series::{bin_index, HistogramSeries};

/// Attempts allowed when drawing one non-overlapping initial configuration.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

/// `n` i.i.d. draws from `F / ||F||` conditioned on no overlap, by rejecting
/// whole configurations; this samples `prod F X / Z` exactly.
pub fn sample_chaos_state(
    f: &OneParticleDistribution,
    n: usize,
    sigma: f64,
    rng: &mut McRng,
) -> Result<Vec<PhasePoint>> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pts = (0..n)
            .map(|_| f.sample_with(rng))
            .collect::<Result<Vec<_>>>()?;
        if first_overlap(&pts, f.dim(), sigma, None).is_none() {
            return Ok(pts);
        }
    }
    Err(KineticError::InvalidArgument(format!(
        "no allowed configuration of {n} particles in {MAX_PLACEMENT_ATTEMPTS} attempts"
    )))
}

/// Per-bin particle counts of an ensemble, with run-to-run standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdHistogram {
    pub edges: Vec<f64>,
    pub bins: Vec<Estimate>,
    pub runs: usize,
    /// Runs redrawn after a pathological event.
    pub rejected: usize,
}

/// Evolves `runs` independent chaos-sampled states of `n_particles` for time
/// `t` and histograms the first position coordinate.
pub fn md_histogram(
    dynamics: &Dynamics,
    f: &OneParticleDistribution,
    n_particles: usize,
    t: f64,
    runs: usize,
    seed: u64,
    edges: &[f64],
) -> Result<MdHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KineticError::InvalidArgument(
            "bin edges must increase".into(),
        ));
    }
    if runs < 2 || n_particles == 0 {
        return Err(KineticError::InvalidArgument(
            "need at least 2 runs and 1 particle".into(),
        ));
    }
    let nb = edges.len() - 1;
    let labels: Vec<usize> = (0..n_particles).collect();
    let out = par_samples(seed, runs, |_, rng| -> Result<(Vec<f64>, usize)> {
        let mut rejected = 0;
        loop {
            let mut pts = sample_chaos_state(f, n_particles, dynamics.sigma, rng)?;
            match dynamics.flow(&mut pts, &labels, t) {
                Ok(_) => {
                    let mut counts = vec![0.0; nb];
                    for x in &pts {
                        if let Some(b) = bin_index(edges, x.q[0]) {
                            counts[b] += 1.0;
                        }
                    }
                    return Ok((counts, rejected));
                }
                Err(_) if rejected < crate::series::MAX_RESAMPLES => rejected += 1,
                Err(e) => return Err(e.into()),
            }
        }
    });
    let mut rows = Vec::with_capacity(runs);
    let mut rejected = 0;
    for r in out {
        let (row, k) = r?;
        rows.push(row);
        rejected += k;
    }
    let bins = (0..nb)
        .map(|b| Estimate::from_samples(&rows.iter().map(|r| r[b]).collect::<Vec<_>>()))
        .collect();
    Ok(MdHistogram {
        edges: edges.to_vec(),
        bins,
        runs,
        rejected,
    })
}

/// Bin-by-bin comparison of a series histogram with an ensemble histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub bins: Vec<f64>,
    pub series: Vec<Estimate>,
    pub md: Vec<Estimate>,
    /// `(series - md) / combined standard error`; zero where both are exact and equal.
    pub zscores: Vec<f64>,
    pub occupied: Vec<bool>,
    pub max_abs_z: f64,
}

impl OracleComparison {
    pub fn within(&self, k: f64) -> bool {
        self.max_abs_z <= k
    }
}

pub fn compare_histograms(
    series: &HistogramSeries,
    order: usize,
    md: &MdHistogram,
) -> Result<OracleComparison> {
    if series.edges != md.edges {
        return Err(KineticError::InvalidArgument(
            "histograms use different bins".into(),
        ));
    }
    let s = series.truncated(order);
    let mut zscores = Vec::with_capacity(s.len());
    let mut occupied = Vec::with_capacity(s.len());
    let mut max_abs_z: f64 = 0.0;
    for (a, b) in s.iter().zip(&md.bins) {
        let occ = b.value > 0.0;
        let se = a.std_error.hypot(b.std_error);
        let diff = a.value - b.value;
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        if occ {
            max_abs_z = max_abs_z.max(z.abs());
        }
        zscores.push(z);
        occupied.push(occ);
    }
    Ok(OracleComparison {
        bins: md.edges.clone(),
        series: s,
        md: md.bins.clone(),
        zscores,
        occupied,
        max_abs_z,
    })
}
