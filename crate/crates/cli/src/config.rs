//! Run configuration: a JSON file merged with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use enskog::collision::QuadratureSpec;
use enskog::distribution::{AnalyticSeparable, OneParticleDistribution};
use enskog::flow::{PhasePoint, SystemState};
use enskog::series::TruncationSpec;

use crate::error::CliError;

/// A phase point written with `dim` components per vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PointSpec {
    pub fn to_point(&self, dim: usize) -> Result<PhasePoint, CliError> {
        if self.q.len() != dim || self.p.len() != dim {
            return Err(CliError::validation(format!(
                "point {self:?} does not have {dim} components"
            )));
        }
        let mut pt = PhasePoint::default();
        pt.q[..dim].copy_from_slice(&self.q);
        pt.p[..dim].copy_from_slice(&self.p);
        Ok(pt)
    }
}

/// Equal-width bins of the first position coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl BinSpec {
    pub fn edges(&self) -> Result<Vec<f64>, CliError> {
        if self.count == 0 || !(self.hi > self.lo) {
            return Err(CliError::validation("bins need count >= 1 and hi > lo"));
        }
        let w = (self.hi - self.lo) / self.count as f64;
        Ok((0..=self.count).map(|k| self.lo + k as f64 * w).collect())
    }
}

/// Everything a subcommand may read. Missing fields take command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sigma: Option<f64>,
    pub dim: Option<usize>,
    pub t: Option<f64>,
    pub seed: Option<u64>,
    pub strict: Option<bool>,
    pub distribution: Option<OneParticleDistribution>,
    pub points: Vec<PointSpec>,
    pub bins: Option<BinSpec>,
    pub truncation: Option<TruncationSpec>,
    pub quadrature: Option<QuadratureSpec>,
    pub state: Option<SystemState>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(1)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.1)
    }

    /// Required for every Monte Carlo command; never taken from the clock.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::validation("--seed is required for Monte Carlo commands"))
    }

    pub fn require_t(&self) -> Result<f64, CliError> {
        match self.t {
            Some(t) if t.is_finite() => Ok(t),
            Some(_) => Err(CliError::validation("t must be finite")),
            None => Err(CliError::validation("--t is required")),
        }
    }

    /// The configured distribution, or a uniform Maxwellian of the given
    /// mass on `[lo, hi]^dim`.
    pub fn distribution_or(
        &self,
        mass: f64,
        lo: f64,
        hi: f64,
        temperature: f64,
    ) -> Result<OneParticleDistribution, CliError> {
        if let Some(f) = &self.distribution {
            f.validate()?;
            if f.dim() != self.dim() {
                return Err(CliError::validation(format!(
                    "distribution has dim {} but the run uses dim {}",
                    f.dim(),
                    self.dim()
                )));
            }
            return Ok(f.clone());
        }
        let a = AnalyticSeparable::uniform_maxwellian(self.dim(), mass, lo, hi, temperature)?;
        let f = OneParticleDistribution::Analytic(a);
        Ok(f)
    }

    pub fn phase_points(&self) -> Result<Vec<PhasePoint>, CliError> {
        self.points.iter().map(|p| p.to_point(self.dim())).collect()
    }
}

/// Lowercase hex SHA-256 of the canonical JSON of a resolved configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

/// Parses `"a,b;c,d"` style lists of phase points for one-dimensional runs,
/// or `"q1 q2 q3,p1 p2 p3;..."` in three dimensions.
pub fn parse_points(text: &str, dim: usize) -> Result<Vec<PointSpec>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(',').collect();
            if parts.len() != 2 {
                return Err(CliError::validation(format!(
                    "point {item:?} must be written as q,p"
                )));
            }
            let nums = |s: &str| -> Result<Vec<f64>, CliError> {
                s.split_whitespace()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| CliError::validation(format!("bad number {v:?}: {e}")))
                    })
                    .collect()
            };
            let spec = PointSpec {
                q: nums(parts[0])?,
                p: nums(parts[1])?,
            };
            spec.to_point(dim)?;
            Ok(spec)
        })
        .collect()
}

/// Parses `lo:hi:count`.
pub fn parse_bins(text: &str) -> Result<BinSpec, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::validation(format!("bins {text:?} must be written as lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(BinSpec {
        lo: parts[0].parse().map_err(|_| bad())?,
        hi: parts[1].parse().map_err(|_| bad())?,
        count: parts[2].parse().map_err(|_| bad())?,
    })
}
