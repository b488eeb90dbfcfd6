//! Reproducible Monte Carlo plumbing.
//!
//! Every sample draws from its own ChaCha stream keyed by `(seed, index)`, and
//! per-sample results are reduced in index order, so estimates do not depend
//! on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::flow::Vec3;

pub type McRng = ChaCha12Rng;

/// Independent generator for sample `index` of the run seeded by `seed`.
pub fn substream(seed: u64, index: u64) -> McRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, so that separate estimators of one run use disjoint streams.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(tag);
    rng.random()
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
            samples: 0,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate::exact(0.0);
        }
        if xs.iter().all(|x| x.to_bits() == xs[0].to_bits()) {
            return Estimate {
                value: xs[0],
                std_error: 0.0,
                samples: n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// Sum of independent estimates.
    pub fn add(self, other: Estimate) -> Estimate {
        Estimate {
            value: self.value + other.value,
            std_error: self.std_error.hypot(other.std_error),
            samples: self.samples.max(other.samples),
        }
    }

    pub fn scale(self, c: f64) -> Estimate {
        Estimate {
            value: c * self.value,
            std_error: c.abs() * self.std_error,
            samples: self.samples,
        }
    }
}

/// Runs `f(index, rng)` for `index in 0..n` in parallel and returns the
/// results in index order.
pub fn par_samples<T, F>(seed: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut McRng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            f(i, &mut rng)
        })
        .collect()
}

/// Uniform direction on the unit sphere of dimension `dim` (1 gives `+-1`).
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec3 {
    if dim == 1 {
        return [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0, 0.0];
    }
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-300 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Uniform point in the ball of the given radius centered at `center`.
pub fn in_ball<R: Rng + ?Sized>(rng: &mut R, center: &Vec3, radius: f64, dim: usize) -> Vec3 {
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    let e = unit_vector(rng, dim);
    [
        center[0] + r * e[0],
        center[1] + r * e[1],
        center[2] + r * e[2],
    ]
}

/// Volume of the ball of the given radius (length of the interval in 1D).
pub fn ball_volume(radius: f64, dim: usize) -> f64 {
    match dim {
        1 => 2.0 * radius,
        2 => std::f64::consts::PI * radius * radius,
        _ => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
    }
}

/// Surface measure of the unit sphere (2 for the two points of `S^0`).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}
