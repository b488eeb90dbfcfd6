//! Set partitions and cumulants of the hard-sphere flow group.
//!
//! A cumulant of order `1 + n` acts on a cluster `Y` (treated as a single
//! element) together with `n` further particles. It is the alternating sum
//! over set partitions of products of group operators, one per block, each
//! block evolving as an isolated subsystem.
//!
//! Labels are 0-based indices into the phase-point slice handed to the
//! evaluators. Particles not named by the cluster set pass through untouched,
//! which lets operators compose cumulants acting on different subsets.

use std::sync::OnceLock;

use crate::error::{KineticError, Result};
use crate::flow::{first_overlap, Dynamics, PhasePoint};

pub const MAX_PARTITION_ELEMENTS: usize = 12;
pub const MAX_CUMULANT_FREE: usize = 10;

/// Phase function on a list of phase points.
pub type PhaseFn<'a> = dyn Fn(&[PhasePoint]) -> Result<f64> + Sync + 'a;

/// Cluster `Y` plus the free particles `X \ Y`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
pub struct ClusterSet {
    pub cluster: Vec<usize>,
    pub free: Vec<usize>,
}

impl ClusterSet {
    pub fn new(cluster: Vec<usize>, free: Vec<usize>) -> Result<Self> {
        if cluster.is_empty() {
            return Err(KineticError::InvalidArgument(
                "cluster must be nonempty".into(),
            ));
        }
        let mut all: Vec<usize> = cluster.iter().chain(&free).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(KineticError::InvalidArgument(
                "cluster set labels must be distinct".into(),
            ));
        }
        Ok(ClusterSet { cluster, free })
    }

    /// Cluster `0..s` with free particles `s..s+n`.
    pub fn standard(s: usize, n: usize) -> Self {
        ClusterSet {
            cluster: (0..s).collect(),
            free: (s..s + n).collect(),
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.cluster.iter().chain(&self.free).copied()
    }

    pub fn len(&self) -> usize {
        self.cluster.len() + self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn max_label(&self) -> usize {
        self.labels().max().unwrap_or(0)
    }
}

/// A set partition of `{0, .., m-1}`; element 0 plays the role of the cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn contains_cluster(&self, block: usize) -> bool {
        self.blocks[block].contains(&0)
    }

    /// `(-1)^{|P|-1} (|P|-1)!`
    pub fn sign_weight(&self) -> i64 {
        let k = self.blocks.len() as i64;
        let fact: i64 = (1..k).product();
        if (k - 1) % 2 == 0 {
            fact
        } else {
            -fact
        }
    }
}

/// One partition after the cluster element is expanded to its labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulantTerm {
    pub sign_weight: i64,
    pub blocks: Vec<Vec<usize>>,
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 || m > MAX_PARTITION_ELEMENTS {
        return Err(KineticError::OrderCap {
            what: "partition elements",
            value: m,
            max: MAX_PARTITION_ELEMENTS,
        });
    }
    Ok(())
}

/// Restricted growth strings of length `m`, in lexicographic order.
struct RgsIter {
    a: Vec<usize>,
    done: bool,
}

impl RgsIter {
    fn new(m: usize) -> Self {
        RgsIter {
            a: vec![0; m],
            done: false,
        }
    }
}

impl Iterator for RgsIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.a.clone();
        let m = self.a.len();
        // advance: rightmost position that can grow
        let mut i = m;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            let prefix_max = self.a[..i].iter().copied().max().unwrap_or(0);
            if self.a[i] <= prefix_max {
                self.a[i] += 1;
                for v in &mut self.a[i + 1..] {
                    *v = 0;
                }
                break;
            }
        }
        Some(out)
    }
}

fn rgs_to_partition(a: &[usize]) -> Partition {
    let k = a.iter().copied().max().map_or(0, |v| v + 1);
    let mut blocks = vec![Vec::new(); k];
    for (e, &b) in a.iter().enumerate() {
        blocks[b].push(e);
    }
    Partition { blocks }
}

/// All set partitions of `m` elements in restricted-growth-string order.
pub fn enumerate_partitions(m: usize) -> Result<Vec<Partition>> {
    check_m(m)?;
    Ok(RgsIter::new(m).map(|a| rgs_to_partition(&a)).collect())
}

/// `sum_P (-1)^{|P|-1} (|P|-1)!` over all partitions of `m` elements.
pub fn partition_alternating_sum(m: usize) -> Result<i64> {
    check_m(m)?;
    let mut total: i64 = 0;
    for a in RgsIter::new(m) {
        let k = a.iter().copied().max().unwrap_or(0) as i64 + 1;
        let fact: i64 = (1..k).product();
        total += if (k - 1) % 2 == 0 { fact } else { -fact };
    }
    Ok(total)
}

const CACHED_ORDERS: usize = 8;

fn cached_partitions(m: usize) -> &'static [Partition] {
    static CACHE: OnceLock<Vec<Vec<Partition>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| {
        (1..=CACHED_ORDERS)
            .map(|m| enumerate_partitions(m).expect("m within range"))
            .collect()
    });
    &cache[m - 1]
}

/// Cumulant terms of order `1 + n`, blocks expressed in particle labels.
pub fn cumulant_terms(cs: &ClusterSet) -> Result<Vec<CumulantTerm>> {
    let n = cs.free.len();
    if n > MAX_CUMULANT_FREE {
        return Err(KineticError::OrderCap {
            what: "cumulant order n",
            value: n,
            max: MAX_CUMULANT_FREE,
        });
    }
    let owned;
    let parts: &[Partition] = if n < CACHED_ORDERS {
        cached_partitions(n + 1)
    } else {
        owned = enumerate_partitions(n + 1)?;
        &owned
    };
    Ok(parts
        .iter()
        .map(|p| CumulantTerm {
            sign_weight: p.sign_weight(),
            blocks: p
                .blocks
                .iter()
                .map(|b| {
                    let mut labels = Vec::new();
                    for &e in b {
                        if e == 0 {
                            labels.extend_from_slice(&cs.cluster);
                        } else {
                            labels.push(cs.free[e - 1]);
                        }
                    }
                    labels
                })
                .collect(),
        })
        .collect())
}

fn bits_equal(a: &[PhasePoint], b: &[PhasePoint]) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        x.q.iter()
            .zip(&y.q)
            .all(|(u, v)| u.to_bits() == v.to_bits())
            && x.p
                .iter()
                .zip(&y.p)
                .all(|(u, v)| u.to_bits() == v.to_bits())
    })
}

/// Evolution points of a cumulant with their integer weights. Terms that
/// land on bitwise identical points are merged, so cancellations between
/// terms are exact.
pub fn cumulant_points(
    dynamics: &Dynamics,
    t: f64,
    cs: &ClusterSet,
    x: &[PhasePoint],
) -> Result<Vec<(Vec<PhasePoint>, i64)>> {
    if cs.max_label() >= x.len() {
        return Err(KineticError::DimensionMismatch {
            expected: cs.max_label() + 1,
            got: x.len(),
        });
    }
    let terms = cumulant_terms(cs)?;
    let mut out: Vec<(Vec<PhasePoint>, i64)> = Vec::with_capacity(terms.len());
    'term: for term in &terms {
        let mut pts = x.to_vec();
        for block in &term.blocks {
            let mut sub: Vec<PhasePoint> = block.iter().map(|&l| x[l]).collect();
            if !dynamics.in_domain(&sub, block) {
                continue 'term;
            }
            dynamics.flow(&mut sub, block, -t)?;
            for (&l, pt) in block.iter().zip(sub) {
                pts[l] = pt;
            }
        }
        match out.iter_mut().find(|(p, _)| bits_equal(p, &pts)) {
            Some(entry) => entry.1 += term.sign_weight,
            None => out.push((pts, term.sign_weight)),
        }
    }
    out.retain(|(_, w)| *w != 0);
    Ok(out)
}

/// Value of the cumulant `A_{1+n}(-t)` applied to `f` at `x`.
pub fn apply_cumulant(
    dynamics: &Dynamics,
    t: f64,
    cs: &ClusterSet,
    f: &PhaseFn,
    x: &[PhasePoint],
) -> Result<f64> {
    let mut acc = 0.0;
    for (pts, w) in cumulant_points(dynamics, t, cs, x)? {
        acc += w as f64 * f(&pts)?;
    }
    Ok(acc)
}

/// Value of the scattering cumulant `A_{1+n}(-t) I_{s+n} prod_i A_1(t, i)`
/// applied to `f` at `x`. The mask is the hard-sphere allowed-set indicator
/// of the cluster-set particles.
pub fn apply_scattering_cumulant(
    dynamics: &Dynamics,
    t: f64,
    cs: &ClusterSet,
    f: &PhaseFn,
    x: &[PhasePoint],
) -> Result<f64> {
    if t < 0.0 {
        return Err(KineticError::InvalidArgument(
            "scattering cumulant needs t >= 0".into(),
        ));
    }
    let labels: Vec<usize> = cs.labels().collect();
    let sigma = dynamics.sigma;
    let dim = dynamics.dim;
    let h = |y: &[PhasePoint]| -> Result<f64> {
        let sub: Vec<PhasePoint> = labels.iter().map(|&l| y[l]).collect();
        if first_overlap(&sub, dim, sigma, None).is_some() {
            return Ok(0.0);
        }
        let mut z = y.to_vec();
        for &l in &labels {
            z[l] = y[l].streamed(t);
        }
        f(&z)
    };
    apply_cumulant(dynamics, t, cs, &h, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{apply_flow_to_function, SystemState};

    #[test]
    fn partition_counts() {
        assert_eq!(enumerate_partitions(1).unwrap().len(), 1);
        assert_eq!(enumerate_partitions(3).unwrap().len(), 5);
        assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(13).is_err());
    }

    #[test]
    fn alternating_sums() {
        assert_eq!(partition_alternating_sum(1).unwrap(), 1);
        assert_eq!(partition_alternating_sum(2).unwrap(), 0);
        assert_eq!(partition_alternating_sum(5).unwrap(), 0);
    }

    #[test]
    fn cumulant_term_examples() {
        let t = cumulant_terms(&ClusterSet::standard(3, 0)).unwrap();
        assert_eq!(
            t,
            vec![CumulantTerm {
                sign_weight: 1,
                blocks: vec![vec![0, 1, 2]]
            }]
        );
        let t = cumulant_terms(&ClusterSet::standard(2, 1)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].sign_weight, 1);
        assert_eq!(t[0].blocks, vec![vec![0, 1, 2]]);
        assert_eq!(t[1].sign_weight, -1);
        assert_eq!(t[1].blocks, vec![vec![0, 1], vec![2]]);
        let w: Vec<i64> = cumulant_terms(&ClusterSet::standard(1, 2))
            .unwrap()
            .iter()
            .map(|t| t.sign_weight)
            .collect();
        assert_eq!(w, vec![1, -1, -1, -1, 2]);
    }

    #[test]
    fn first_order_cumulant_is_the_group() {
        let s = SystemState::from_1d(&[0.0, 1.0], &[-1.0, 1.0], 0.25).unwrap();
        let f = |x: &[PhasePoint]| Ok(x[0].q[0] * 3.0 + x[1].p[0]);
        let d = Dynamics::hard_spheres(0.25, 1);
        let a = apply_cumulant(&d, 1.0, &ClusterSet::standard(2, 0), &f, &s.points).unwrap();
        let b = apply_flow_to_function(|x| x[0].q[0] * 3.0 + x[1].p[0], 1.0, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn second_order_cumulant_examples() {
        let d = Dynamics::hard_spheres(0.25, 1);
        let cs = ClusterSet::standard(1, 1);
        let f = |x: &[PhasePoint]| Ok(x[0].q[0] + 10.0 * x[1].q[0] + x[0].p[0]);
        // receding in backward time
        let s = SystemState::from_1d(&[0.0, 5.0], &[1.0, -1.0], 0.25).unwrap();
        assert_eq!(apply_cumulant(&d, 1.0, &cs, &f, &s.points).unwrap(), 0.0);
        // pair that collided during the last unit of time: in backward time
        // the rods at 0 (p = -1) and 1 (p = +1) approach, meet at t = 0.375
        let s = SystemState::from_1d(&[0.0, 1.0], &[-1.0, 1.0], 0.25).unwrap();
        let v = apply_cumulant(&d, 1.0, &cs, &f, &s.points).unwrap();
        // interacting pre-image: q = (-0.25, 1.25), p = (1, -1);
        // free pre-image: q = (1, 0), p = (-1, 1)
        let interacting = -0.25 + 12.5 + 1.0;
        let free = 1.0 + 0.0 - 1.0;
        assert!((v - (interacting - free)).abs() < 1e-12);
    }

    #[test]
    fn scattering_cumulant_examples() {
        let d = Dynamics::hard_spheres(0.25, 1);
        let f = |x: &[PhasePoint]| Ok(x[0].q[0] * 2.0 + x[0].p[0]);
        let s = SystemState::from_1d(&[0.3], &[0.7], 0.25).unwrap();
        let v = apply_scattering_cumulant(&d, 2.0, &ClusterSet::standard(1, 0), &f, &s.points);
        assert!((v.unwrap() - (0.3 * 2.0 + 0.7)).abs() < 1e-15);
        let s = SystemState::from_1d(&[0.0, 0.1], &[0.0, 0.0], 0.25).unwrap();
        let v = apply_scattering_cumulant(&d, 0.0, &ClusterSet::standard(2, 0), &f, &s.points);
        assert_eq!(v.unwrap(), 0.0);
    }

    #[test]
    fn scattering_cumulant_head_on_pair() {
        // rods at 0 (p = -1) and 1 (p = 1) collided at t = -0.625; the
        // pre-image is q = (-0.25, 1.25), p = (1, -1), then free advance by 1
        let d = Dynamics::hard_spheres(0.25, 1);
        let s = SystemState::from_1d(&[0.0, 1.0], &[-1.0, 1.0], 0.25).unwrap();
        let f = |x: &[PhasePoint]| Ok(x[0].q[0] + 10.0 * x[1].q[0] + 100.0 * x[0].p[0]);
        let v =
            apply_scattering_cumulant(&d, 1.0, &ClusterSet::standard(2, 0), &f, &s.points).unwrap();
        let expected = 0.75 + 2.5 + 100.0;
        assert!((v - expected).abs() < 1e-12, "{v}");
    }
}
