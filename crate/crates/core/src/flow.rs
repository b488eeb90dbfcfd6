//! Exact dynamics of finitely many hard spheres (d = 3) and hard rods (d = 1).
//!
//! Particles have unit mass, so momenta and velocities coincide. The flow is
//! realized by an event-driven loop: free streaming interrupted by elastic
//! pair collisions at contact. Every particle carries its own clock and is
//! only advanced when it takes part in an event, so a particle that never
//! collides ends at exactly `q + t * p`, bit for bit the free-streaming value.
//! Backward evolution is the forward loop conjugated by momentum reversal.

use serde::{Deserialize, Serialize};

use crate::error::FlowError;

pub type Vec3 = [f64; 3];

/// Relative slack on the contact distance: `|q_i - q_j| >= sigma * (1 - CONTACT_REL_TOL)`
/// counts as allowed. Contact configurations built as `q + sigma * eta` land
/// within a few ulps of sigma and must not be rejected.
pub const CONTACT_REL_TOL: f64 = 1e-10;

/// Grazing threshold on the normalized discriminant `1 - (b / sigma)^2`.
pub const GRAZING_TOL: f64 = 1e-14;

/// Relative tie tolerance: two distinct events closer than
/// `TIE_REL_TOL * sigma / p_max` are refused.
pub const TIE_REL_TOL: f64 = 1e-12;

pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Phase coordinates `(q, p)` of one particle. Components beyond the system
/// dimension are kept at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePoint {
    pub q: Vec3,
    pub p: Vec3,
}

impl PhasePoint {
    pub fn new_1d(q: f64, p: f64) -> Self {
        PhasePoint {
            q: [q, 0.0, 0.0],
            p: [p, 0.0, 0.0],
        }
    }

    pub fn new(q: Vec3, p: Vec3) -> Self {
        PhasePoint { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }

    /// Free streaming `(q, p) -> (q + t p, p)`.
    #[inline]
    pub fn streamed(&self, t: f64) -> PhasePoint {
        PhasePoint {
            q: [
                self.q[0] + t * self.p[0],
                self.q[1] + t * self.p[1],
                self.q[2] + t * self.p[2],
            ],
            p: self.p,
        }
    }

    pub fn reversed(&self) -> PhasePoint {
        PhasePoint {
            q: self.q,
            p: [-self.p[0], -self.p[1], -self.p[2]],
        }
    }
}

/// Positions and momenta of `n >= 1` spheres of diameter `sigma` in dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub points: Vec<PhasePoint>,
    pub sigma: f64,
    pub dim: usize,
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    q: Vec<f64>,
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    sigma: f64,
    dim: usize,
    points: Vec<PointRecord>,
}

impl Serialize for SystemState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rec = StateRecord {
            sigma: self.sigma,
            dim: self.dim,
            points: self
                .points
                .iter()
                .map(|pt| PointRecord {
                    q: pt.q[..self.dim].to_vec(),
                    p: pt.p[..self.dim].to_vec(),
                })
                .collect(),
        };
        rec.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SystemState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rec = StateRecord::deserialize(deserializer)?;
        if rec.dim != 1 && rec.dim != 3 {
            return Err(D::Error::custom(format!(
                "dim must be 1 or 3, got {}",
                rec.dim
            )));
        }
        let mut points = Vec::with_capacity(rec.points.len());
        for pr in rec.points {
            if pr.q.len() != rec.dim || pr.p.len() != rec.dim {
                return Err(D::Error::custom("point dimension does not match dim"));
            }
            let mut pt = PhasePoint::default();
            pt.q[..rec.dim].copy_from_slice(&pr.q);
            pt.p[..rec.dim].copy_from_slice(&pr.p);
            points.push(pt);
        }
        SystemState::new(points, rec.sigma, rec.dim).map_err(D::Error::custom)
    }
}

impl SystemState {
    pub fn new(points: Vec<PhasePoint>, sigma: f64, dim: usize) -> Result<Self, FlowError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FlowError::NonFiniteInput(
                "sigma must be finite and positive",
            ));
        }
        if dim != 1 && dim != 3 {
            return Err(FlowError::NonFiniteInput("dim must be 1 or 3"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::NonFiniteInput("phase point"));
        }
        Ok(SystemState { points, sigma, dim })
    }

    pub fn from_1d(q: &[f64], p: &[f64], sigma: f64) -> Result<Self, FlowError> {
        let points = q
            .iter()
            .zip(p)
            .map(|(&q, &p)| PhasePoint::new_1d(q, p))
            .collect();
        SystemState::new(points, sigma, 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_allowed(&self) -> bool {
        first_overlap(&self.points, self.dim, self.sigma, None).is_none()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.points
            .iter()
            .map(|pt| 0.5 * dot(&pt.p, &pt.p, self.dim))
            .sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        let mut m = [0.0; 3];
        for pt in &self.points {
            for k in 0..3 {
                m[k] += pt.p[k];
            }
        }
        m
    }

    pub fn reversed(&self) -> SystemState {
        SystemState {
            points: self.points.iter().map(PhasePoint::reversed).collect(),
            sigma: self.sigma,
            dim: self.dim,
        }
    }
}

#[inline]
fn overlapping(a: &Vec3, b: &Vec3, dim: usize, sigma: f64) -> bool {
    let d = sub(a, b);
    dot(&d, &d, dim) < sigma * sigma * (1.0 - 2.0 * CONTACT_REL_TOL)
}

/// First overlapping pair among the points; `interacting`, when given,
/// excludes non-interacting particles from the test.
pub(crate) fn first_overlap(
    points: &[PhasePoint],
    dim: usize,
    sigma: f64,
    interacting: Option<&[bool]>,
) -> Option<(usize, usize)> {
    for i in 0..points.len() {
        if interacting.is_some_and(|m| !m[i]) {
            continue;
        }
        for j in (i + 1)..points.len() {
            if interacting.is_some_and(|m| !m[j]) {
                continue;
            }
            if overlapping(&points[i].q, &points[j].q, dim, sigma) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Characteristic function of allowed configurations: true iff every pair
/// distance is at least `sigma` (contact counts as allowed).
pub fn is_allowed(positions: &[Vec<f64>], sigma: f64) -> Result<bool, FlowError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(FlowError::NonFiniteInput("sigma"));
    }
    let dim = positions.first().map_or(1, Vec::len);
    let mut qs = Vec::with_capacity(positions.len());
    for q in positions {
        if q.len() != dim || dim > 3 {
            return Err(FlowError::NonFiniteInput(
                "positions must share a dimension <= 3",
            ));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFiniteInput("position"));
        }
        let mut v = [0.0; 3];
        v[..dim].copy_from_slice(q);
        qs.push(PhasePoint { q: v, p: [0.0; 3] });
    }
    Ok(first_overlap(&qs, dim, sigma, None).is_none())
}

/// Mask value for a list of phase points: 1 if allowed, 0 otherwise.
#[inline]
pub fn allowed_mask(points: &[PhasePoint], dim: usize, sigma: f64) -> f64 {
    if first_overlap(points, dim, sigma, None).is_none() {
        1.0
    } else {
        0.0
    }
}

/// Elastic collision of two unit-mass spheres along the unit vector `eta`:
/// `p_i* = p_i - eta <eta, p_i - p_j>`, `p_j* = p_j + eta <eta, p_i - p_j>`.
pub fn collision_map(p_i: Vec3, p_j: Vec3, eta: Vec3) -> Result<(Vec3, Vec3), FlowError> {
    if p_i.iter().chain(&p_j).chain(&eta).any(|v| !v.is_finite()) {
        return Err(FlowError::NonFiniteInput("collision_map argument"));
    }
    let norm = dot(&eta, &eta, 3).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(FlowError::NonFiniteInput("eta must be a unit vector"));
    }
    Ok(collide(&p_i, &p_j, &eta))
}

#[inline]
fn collide(p_i: &Vec3, p_j: &Vec3, eta: &Vec3) -> (Vec3, Vec3) {
    let dp = sub(p_i, p_j);
    let s = dot(eta, &dp, 3);
    let mut a = *p_i;
    let mut b = *p_j;
    for k in 0..3 {
        a[k] -= eta[k] * s;
        b[k] += eta[k] * s;
    }
    (a, b)
}

/// Time until `|dq + tau dp| = sigma` for an approaching pair, using the
/// cancellation-free root `c / (-b + sqrt(disc))`. Receding pairs and
/// grazing contacts yield `None`.
#[inline]
pub fn contact_time(dq: &Vec3, dp: &Vec3, sigma: f64, dim: usize) -> Option<f64> {
    let b = dot(dq, dp, dim);
    if b >= 0.0 {
        return None;
    }
    let dp2 = dot(dp, dp, dim);
    let c = dot(dq, dq, dim) - sigma * sigma;
    let disc = b * b - dp2 * c;
    if disc < GRAZING_TOL * sigma * sigma * dp2 {
        return None;
    }
    Some((c / (-b + disc.sqrt())).max(0.0))
}

/// A predicted pair contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub pair: (usize, usize),
    pub time: f64,
    /// `(q_i - q_j) / sigma` at contact.
    pub eta: Vec3,
}

/// One processed collision, in the time frame of the flow call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub pair: (usize, usize),
}

/// Interaction model used by every flow evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub sigma: f64,
    pub dim: usize,
    /// `false` switches off all collisions (non-interacting particles); the
    /// allowed-configuration mask operator is still the hard-sphere one.
    pub collisions: bool,
    /// Bit mask of global labels that never collide with anything.
    pub ghosts: u64,
    pub max_events: usize,
}

impl Dynamics {
    pub fn hard_spheres(sigma: f64, dim: usize) -> Self {
        Dynamics {
            sigma,
            dim,
            collisions: true,
            ghosts: 0,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn collisionless(sigma: f64, dim: usize) -> Self {
        Dynamics {
            collisions: false,
            ..Self::hard_spheres(sigma, dim)
        }
    }

    pub fn with_ghosts(mut self, labels: &[usize]) -> Self {
        for &l in labels {
            self.ghosts |= 1 << l;
        }
        self
    }

    #[inline]
    pub fn interacts(&self, label: usize) -> bool {
        self.collisions && (self.ghosts >> label) & 1 == 0
    }

    fn interaction_mask(&self, labels: &[usize]) -> Vec<bool> {
        labels.iter().map(|&l| self.interacts(l)).collect()
    }

    /// Whether `points` (carrying global `labels`) lie in the domain of the
    /// interacting flow, i.e. no two interacting particles overlap.
    pub fn in_domain(&self, points: &[PhasePoint], labels: &[usize]) -> bool {
        if !self.collisions {
            return true;
        }
        let mask = self.interaction_mask(labels);
        first_overlap(points, self.dim, self.sigma, Some(&mask)).is_none()
    }

    /// Evolves `points` in place by time `t` (either sign). `labels` are the
    /// global particle labels, used for the ghost mask. The caller must have
    /// checked [`Dynamics::in_domain`].
    pub fn flow(
        &self,
        points: &mut [PhasePoint],
        labels: &[usize],
        t: f64,
    ) -> Result<Vec<EventRecord>, FlowError> {
        if !t.is_finite() {
            return Err(FlowError::NonFiniteInput("time"));
        }
        if t < 0.0 {
            for pt in points.iter_mut() {
                *pt = pt.reversed();
            }
            let log = self.forward(points, labels, -t);
            for pt in points.iter_mut() {
                *pt = pt.reversed();
            }
            log
        } else {
            self.forward(points, labels, t)
        }
    }

    fn forward(
        &self,
        points: &mut [PhasePoint],
        labels: &[usize],
        t_end: f64,
    ) -> Result<Vec<EventRecord>, FlowError> {
        let n = points.len();
        let mut log = Vec::new();
        let active: Vec<usize> = (0..n).filter(|&i| self.interacts(labels[i])).collect();
        if active.len() >= 2 && t_end > 0.0 {
            let dim = self.dim;
            let p_max = points
                .iter()
                .map(|pt| dot(&pt.p, &pt.p, dim).sqrt())
                .fold(0.0, f64::max);
            let t_tie = if p_max > 0.0 {
                TIE_REL_TOL * self.sigma / p_max
            } else {
                0.0
            };
            let mut clock = vec![0.0_f64; n];
            let mut now = 0.0_f64;
            loop {
                let current: Vec<Vec3> = points
                    .iter()
                    .zip(&clock)
                    .map(|(pt, &c)| {
                        if c == now {
                            pt.q
                        } else {
                            pt.streamed(now - c).q
                        }
                    })
                    .collect();
                let mut best: Option<(f64, usize, usize)> = None;
                let mut second: Option<f64> = None;
                for (a, &i) in active.iter().enumerate() {
                    for &j in &active[a + 1..] {
                        let dq = sub(&current[i], &current[j]);
                        let dp = sub(&points[i].p, &points[j].p);
                        if let Some(tau) = contact_time(&dq, &dp, self.sigma, dim) {
                            match best {
                                Some((bt, _, _)) if tau >= bt => {
                                    if second.is_none_or(|s| tau < s) {
                                        second = Some(tau);
                                    }
                                }
                                _ => {
                                    if let Some((bt, _, _)) = best {
                                        second = Some(bt);
                                    }
                                    best = Some((tau, i, j));
                                }
                            }
                        }
                    }
                }
                let Some((tau, i, j)) = best else { break };
                let t_event = now + tau;
                if t_event > t_end {
                    break;
                }
                if let Some(s) = second {
                    if s - tau <= t_tie && now + s <= t_end {
                        return Err(FlowError::PathologicalEvent {
                            first: t_event,
                            second: now + s,
                        });
                    }
                }
                if log.len() >= self.max_events {
                    return Err(FlowError::PathologicalEvent {
                        first: now,
                        second: t_event,
                    });
                }
                for &k in &[i, j] {
                    points[k] = points[k].streamed(t_event - clock[k]);
                    clock[k] = t_event;
                }
                let d = sub(&points[i].q, &points[j].q);
                let dist = dot(&d, &d, dim).sqrt();
                let eta = [d[0] / dist, d[1] / dist, d[2] / dist];
                let (pi, pj) = collide(&points[i].p, &points[j].p, &eta);
                points[i].p = pi;
                points[j].p = pj;
                debug_assert!(
                    !overlapping(&points[i].q, &points[j].q, dim, self.sigma * (1.0 - 1e-8)),
                    "interpenetration at event"
                );
                now = t_event;
                log.push(EventRecord {
                    time: t_event,
                    pair: (i, j),
                });
            }
            for k in 0..n {
                if clock[k] != t_end {
                    points[k] = points[k].streamed(t_end - clock[k]);
                }
            }
        } else {
            for pt in points.iter_mut() {
                *pt = pt.streamed(t_end);
            }
        }
        Ok(log)
    }
}

/// Earliest pair contact of `state`, or `None` when no pair ever collides.
pub fn next_collision(state: &SystemState) -> Result<Option<CollisionEvent>, FlowError> {
    if let Some((i, j)) = first_overlap(&state.points, state.dim, state.sigma, None) {
        return Err(FlowError::ForbiddenInitialConfiguration(i, j));
    }
    let dim = state.dim;
    let pts = &state.points;
    let p_max = pts
        .iter()
        .map(|pt| dot(&pt.p, &pt.p, dim).sqrt())
        .fold(0.0, f64::max);
    let t_tie = if p_max > 0.0 {
        TIE_REL_TOL * state.sigma / p_max
    } else {
        0.0
    };
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let dq = sub(&pts[i].q, &pts[j].q);
            let dp = sub(&pts[i].p, &pts[j].p);
            if let Some(tau) = contact_time(&dq, &dp, state.sigma, dim) {
                events.push((tau, i, j));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let Some(&(tau, i, j)) = events.first() else {
        return Ok(None);
    };
    if let Some(&(tau2, _, _)) = events.get(1) {
        if tau2 - tau <= t_tie {
            return Err(FlowError::PathologicalEvent {
                first: tau,
                second: tau2,
            });
        }
    }
    let qi = pts[i].streamed(tau).q;
    let qj = pts[j].streamed(tau).q;
    let d = sub(&qi, &qj);
    let dist = dot(&d, &d, dim).sqrt();
    Ok(Some(CollisionEvent {
        pair: (i, j),
        time: tau,
        eta: [d[0] / dist, d[1] / dist, d[2] / dist],
    }))
}

/// State at time `t` under the hard-sphere flow.
pub fn evolve(state: &SystemState, t: f64) -> Result<SystemState, FlowError> {
    evolve_with(&Dynamics::hard_spheres(state.sigma, state.dim), state, t).map(|(s, _)| s)
}

/// [`evolve`] with an explicit interaction model, also returning the event log.
pub fn evolve_with(
    dynamics: &Dynamics,
    state: &SystemState,
    t: f64,
) -> Result<(SystemState, Vec<EventRecord>), FlowError> {
    if !t.is_finite() {
        return Err(FlowError::NonFiniteInput("time"));
    }
    let labels: Vec<usize> = (0..state.len()).collect();
    if !dynamics.in_domain(&state.points, &labels) {
        let (i, j) = first_overlap(&state.points, state.dim, state.sigma, None).unwrap_or((0, 0));
        return Err(FlowError::ForbiddenInitialConfiguration(i, j));
    }
    let mut out = state.clone();
    let log = dynamics.flow(&mut out.points, &labels, t)?;
    Ok((out, log))
}

/// `(S_n(-t) f)(x)`: `f` at the backward-evolved point, zero on forbidden `x`.
pub fn apply_flow_to_function<F>(f: F, t: f64, x: &SystemState) -> Result<f64, FlowError>
where
    F: Fn(&[PhasePoint]) -> f64,
{
    if !x.is_allowed() {
        return Ok(0.0);
    }
    let y = evolve(x, -t)?;
    Ok(f(&y.points))
}

/// CSV rows `time,particle,q...,p...` sampled at the given times.
pub fn trajectory_csv(state: &SystemState, times: &[f64]) -> Result<String, FlowError> {
    use std::fmt::Write;
    let dim = state.dim;
    let mut out = String::from("time,particle");
    for k in 0..dim {
        let _ = write!(out, ",q{k}");
    }
    for k in 0..dim {
        let _ = write!(out, ",p{k}");
    }
    out.push('\n');
    for &t in times {
        let s = evolve(state, t)?;
        for (i, pt) in s.points.iter().enumerate() {
            let _ = write!(out, "{t},{i}");
            for k in 0..dim {
                let _ = write!(out, ",{}", pt.q[k]);
            }
            for k in 0..dim {
                let _ = write!(out, ",{}", pt.p[k]);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn allowed_examples() {
        let v = |x: f64| vec![x, 0.0, 0.0];
        assert!(is_allowed(&[v(0.0), v(2.0)], 1.0).unwrap());
        assert!(!is_allowed(&[v(0.0), v(0.5)], 1.0).unwrap());
        assert!(!is_allowed(&[v(0.0), v(1.0), v(0.3)], 1.0).unwrap());
        // contact is allowed
        assert!(is_allowed(&[v(0.0), v(1.0)], 1.0).unwrap());
        assert!(is_allowed(&[v(f64::NAN), v(1.0)], 1.0).is_err());
    }

    #[test]
    fn collision_map_examples() {
        let (a, b) = collision_map([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((a, b), ([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]));
        let (a, b) = collision_map([0.0, 1.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((a, b), ([0.0, 1.0, 0.0], [0.0; 3]));
        let (a, b) = collision_map([1.0, 1.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((a, b), ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0]));
        assert!(collision_map([1.0; 3], [0.0; 3], [2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn next_collision_examples() {
        let s = SystemState::from_1d(&[0.0, 1.0], &[1.0, -1.0], 0.25).unwrap();
        let ev = next_collision(&s).unwrap().unwrap();
        assert_eq!(ev.pair, (0, 1));
        assert!(close(ev.time, 0.375, 1e-15));

        let s = SystemState::new(
            vec![
                PhasePoint::new([0.0; 3], [1.0, 0.0, 0.0]),
                PhasePoint::new([3.0, 0.0, 0.0], [0.0; 3]),
            ],
            1.0,
            3,
        )
        .unwrap();
        let ev = next_collision(&s).unwrap().unwrap();
        assert!(close(ev.time, 2.0, 1e-15));
        assert!(close(ev.eta[0], -1.0, 1e-15));

        let s = SystemState::from_1d(&[0.0, 2.0], &[-1.0, 1.0], 0.5).unwrap();
        assert!(next_collision(&s).unwrap().is_none());
    }

    #[test]
    fn evolve_examples() {
        let s = SystemState::from_1d(&[0.0], &[1.0], 1.0).unwrap();
        let e = evolve(&s, 2.0).unwrap();
        assert_eq!(e.points[0], PhasePoint::new_1d(2.0, 1.0));

        let s = SystemState::from_1d(&[0.0, 1.0], &[1.0, -1.0], 0.25).unwrap();
        let e = evolve(&s, 1.0).unwrap();
        assert!(close(e.points[0].q[0], -0.25, 1e-14));
        assert!(close(e.points[1].q[0], 1.25, 1e-14));
        assert_eq!(e.points[0].p[0], -1.0);
        assert_eq!(e.points[1].p[0], 1.0);
        // and back
        let b = evolve(&e, -1.0).unwrap();
        assert!(close(b.points[0].q[0], 0.0, 1e-14));
        assert!(close(b.points[1].q[0], 1.0, 1e-14));
    }

    #[test]
    fn forbidden_initial_state_is_refused() {
        let s = SystemState::from_1d(&[0.0, 0.1], &[1.0, -1.0], 0.25).unwrap();
        assert!(matches!(
            evolve(&s, 1.0),
            Err(FlowError::ForbiddenInitialConfiguration(0, 1))
        ));
        assert_eq!(apply_flow_to_function(|_| 1.0, 1.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn simultaneous_collisions_are_pathological() {
        // Symmetric three-rod configuration: both outer rods hit the middle one at t = 0.5.
        let s = SystemState::from_1d(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0], 0.5).unwrap();
        assert!(matches!(
            evolve(&s, 1.0),
            Err(FlowError::PathologicalEvent { .. })
        ));
    }

    #[test]
    fn apply_flow_examples() {
        let s = SystemState::from_1d(&[3.0], &[2.0], 1.0).unwrap();
        let v = apply_flow_to_function(|x| x[0].q[0], 1.0, &s).unwrap();
        assert_eq!(v, 1.0);
        let s = SystemState::from_1d(&[0.0, 5.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(apply_flow_to_function(|_| 1.0, 3.0, &s).unwrap(), 1.0);
    }

    #[test]
    fn ghosts_pass_through() {
        let d = Dynamics::hard_spheres(0.25, 1).with_ghosts(&[1]);
        let mut pts = vec![PhasePoint::new_1d(0.0, 1.0), PhasePoint::new_1d(1.0, -1.0)];
        let log = d.flow(&mut pts, &[0, 1], 1.0).unwrap();
        assert!(log.is_empty());
        assert_eq!(pts[0].q[0], 1.0);
        assert_eq!(pts[1].q[0], 0.0);
    }

    #[test]
    fn json_round_trip() {
        let s = SystemState::from_1d(&[0.0, 1.5], &[0.5, -0.25], 0.5).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(
            js,
            r#"{"sigma":0.5,"dim":1,"points":[{"q":[0.0],"p":[0.5]},{"q":[1.5],"p":[-0.25]}]}"#
        );
        let back: SystemState = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SystemState>(
            r#"{"sigma":0.5,"dim":3,"points":[{"q":[0.0],"p":[0.5]}]}"#
        )
        .is_err());
    }

    #[test]
    fn trajectory_csv_rows() {
        let s = SystemState::from_1d(&[0.0], &[1.0], 1.0).unwrap();
        let csv = trajectory_csv(&s, &[0.0, 1.0]).unwrap();
        assert_eq!(csv, "time,particle,q0,p0\n0,0,0,1\n1,0,1,1\n");
    }
}
