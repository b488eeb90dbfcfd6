//! Property tests for the invariants of flows, cumulants, operators,
//! distributions, collision integrals and bounds.

use proptest::prelude::*;

use enskog::bounds::{convergence_constants, functional_norm_majorant};
use enskog::cumulant::{
    apply_cumulant, cumulant_terms, partition_alternating_sum, ClusterSet, PhaseFn,
};
use enskog::flow::{collision_map, evolve, evolve_with, Dynamics, PhasePoint, SystemState};
use enskog::operators::{random_allowed_states, v_general};

fn state(seed: u64, n: usize, dim: usize, sigma: f64, box_len: f64) -> SystemState {
    random_allowed_states(seed, 1, n, dim, sigma, box_len).remove(0)
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-5.0..5.0f64)
}

fn unit3() -> impl Strategy<Value = [f64; 3]> {
    vec3()
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
}

fn max_rel_position_diff(a: &SystemState, b: &SystemState) -> f64 {
    let scale = a
        .points
        .iter()
        .flat_map(|p| p.q[..a.dim].iter().map(|v| v.abs()))
        .fold(a.sigma, f64::max);
    a.points
        .iter()
        .zip(&b.points)
        .flat_map(|(x, y)| (0..a.dim).map(move |k| (x.q[k] - y.q[k]).abs()))
        .fold(0.0, f64::max)
        / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collision_map_conserves_and_is_involutive(pi in vec3(), pj in vec3(), eta in unit3()) {
        let (a, b) = collision_map(pi, pj, eta).unwrap();
        let (c, d) = collision_map(a, b, eta).unwrap();
        let e0: f64 = pi.iter().chain(&pj).map(|x| x * x).sum();
        let e1: f64 = a.iter().chain(&b).map(|x| x * x).sum();
        prop_assert!((e1 - e0).abs() <= 1e-12 * e0.max(1.0));
        for k in 0..3 {
            prop_assert!((a[k] + b[k] - pi[k] - pj[k]).abs() <= 1e-12 * 10.0);
            prop_assert!((c[k] - pi[k]).abs() <= 1e-12 * 10.0);
            prop_assert!((d[k] - pj[k]).abs() <= 1e-12 * 10.0);
        }
    }

    #[test]
    fn flow_group_property(seed in any::<u64>(), s in -3.0..3.0f64, t in -3.0..3.0f64, three_d in any::<bool>()) {
        let x = if three_d { state(seed, 5, 3, 1.0, 4.0) } else { state(seed, 6, 1, 0.2, 3.0) };
        let two_steps = evolve(&evolve(&x, s).unwrap(), t).unwrap();
        let one_step = evolve(&x, s + t).unwrap();
        prop_assert!(max_rel_position_diff(&two_steps, &one_step) <= 1e-9);
    }

    #[test]
    fn flow_conserves_energy_and_exclusion(seed in any::<u64>(), t in -5.0..5.0f64) {
        let x = state(seed, 5, 3, 1.0, 4.0);
        let y = evolve(&x, t).unwrap();
        let e0 = x.kinetic_energy();
        prop_assert!((y.kinetic_energy() - e0).abs() <= 1e-10 * e0);
        prop_assert!(y.is_allowed());
    }

    #[test]
    fn hard_rods_are_free_particles_in_contracted_coordinates(seed in any::<u64>(), t in 0.0..5.0f64) {
        let sigma = 0.1;
        let x = state(seed, 10, 1, sigma, 3.0);
        let y = evolve_with(&Dynamics::hard_spheres(sigma, 1), &x, t).unwrap().0;
        let contracted = |pts: &[PhasePoint]| {
            let mut q: Vec<(f64, f64)> = pts.iter().map(|p| (p.q[0], p.p[0])).collect();
            q.sort_by(|a, b| a.0.total_cmp(&b.0));
            q.iter().enumerate().map(|(i, (q, p))| (q - i as f64 * sigma, *p)).collect::<Vec<_>>()
        };
        let mut free: Vec<f64> = contracted(&x.points).iter().map(|(q, p)| q + t * p).collect();
        free.sort_by(f64::total_cmp);
        let evolved: Vec<f64> = contracted(&y.points).iter().map(|(q, _)| *q).collect();
        for (a, b) in free.iter().zip(&evolved) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn cumulant_signs_sum_to_alternating_sum(s in 1usize..4, n in 0usize..5) {
        let cs = ClusterSet::standard(s, n);
        let total: i64 = cumulant_terms(&cs).unwrap().iter().map(|t| t.sign_weight).sum();
        prop_assert_eq!(total, partition_alternating_sum(1 + n).unwrap());
    }

    #[test]
    fn collisionless_cumulants_vanish(seed in any::<u64>(), s in 1usize..3, n in 1usize..4, t in -3.0..3.0f64) {
        let d = Dynamics::collisionless(0.3, 1);
        let x = state(seed, s + n, 1, 0.3, 4.0);
        let f: &PhaseFn = &|y: &[PhasePoint]| Ok(y.iter().map(|p| (p.q[0] * p.p[0]).sin() + p.q[0]).sum());
        let v = apply_cumulant(&d, t, &ClusterSet::standard(s, n), f, &x.points).unwrap();
        prop_assert!(v.abs() <= 1e-12);
    }

    #[test]
    fn cumulants_and_operators_are_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64, n in 0usize..3) {
        let d = Dynamics::hard_spheres(0.4, 1);
        let x = state(seed, 1 + n, 1, 0.4, 3.0);
        let f: &PhaseFn = &|y: &[PhasePoint]| Ok(y.iter().map(|p| p.q[0] * p.q[0] + p.p[0]).sum());
        let g: &PhaseFn = &|y: &[PhasePoint]| Ok(y.iter().map(|p| (p.q[0] - p.p[0]).cos()).product());
        let h: &PhaseFn = &|y: &[PhasePoint]| Ok(a * f(y)? + b * g(y)?);
        let cs = ClusterSet::standard(1, n);
        let (cf, cg, ch) = (
            apply_cumulant(&d, 1.0, &cs, f, &x.points).unwrap(),
            apply_cumulant(&d, 1.0, &cs, g, &x.points).unwrap(),
            apply_cumulant(&d, 1.0, &cs, h, &x.points).unwrap(),
        );
        prop_assert!((ch - a * cf - b * cg).abs() <= 1e-12 * (1.0 + ch.abs() + (a * cf).abs() + (b * cg).abs()));
        let (vf, vg, vh) = (
            v_general(&d, 1.0, 1, n, f, &x.points).unwrap(),
            v_general(&d, 1.0, 1, n, g, &x.points).unwrap(),
            v_general(&d, 1.0, 1, n, h, &x.points).unwrap(),
        );
        prop_assert!((vh - a * vf - b * vg).abs() <= 1e-12 * (1.0 + vh.abs() + (a * vf).abs() + (b * vg).abs()));
    }

    #[test]
    fn operators_reduce_to_the_mask_at_zero_time(seed in any::<u64>(), s in 1usize..4, n in 0usize..3) {
        let d = Dynamics::hard_spheres(0.3, 1);
        let x = state(seed, s + n, 1, 0.3, 4.0);
        let f: &PhaseFn = &|y: &[PhasePoint]| Ok(y.iter().enumerate().map(|(i, p)| (i as f64 + 1.0) * p.q[0] - p.p[0]).sum());
        let v = v_general(&d, 0.0, s, n, f, &x.points).unwrap();
        let want = if n == 0 { f(&x.points).unwrap() } else { 0.0 };
        prop_assert_eq!(v, want);
    }

    #[test]
    fn majorant_increases_with_norm(s in 1u32..5, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = (a.min(b) * 1e-3, a.max(b) * 1e-3);
        let r_lo = functional_norm_majorant(s, lo).unwrap();
        let r_hi = functional_norm_majorant(s, hi).unwrap();
        if let (Some(m_lo), Some(m_hi)) = (r_lo.majorant, r_hi.majorant) {
            prop_assert!(m_lo <= m_hi);
        }
    }
}

#[test]
fn guards_use_the_named_constants() {
    use enskog::distribution::{norm_guard, AnalyticSeparable, GuardKind, OneParticleDistribution};
    let c = convergence_constants();
    let f = OneParticleDistribution::Analytic(
        AnalyticSeparable::uniform_maxwellian(1, 0.1, 0.0, 1.0, 1.0).unwrap(),
    );
    assert_eq!(
        norm_guard(&f, GuardKind::F1Series, false).unwrap().radius,
        c.bbgky_radius
    );
    assert_eq!(
        norm_guard(&f, GuardKind::CollisionSeries, false)
            .unwrap()
            .radius,
        c.enskog_collision
    );
}
