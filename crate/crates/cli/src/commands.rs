//! Subcommand pipelines.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use enskog::distribution::OneParticleDistribution;
use enskog::flow::{evolve_with, trajectory_csv, Dynamics, PhasePoint, SystemState};
use enskog::operators::random_allowed_states;
use enskog::series::{f1_histogram, solve_f1_series, SeriesEstimate, TruncationSpec};

use crate::config::{parse_bins, parse_points, RunConfig};
use crate::error::CliError;
use crate::output::{emit, Artifact};
use crate::{Cli, Command, DistributionArgs, SeriesArgs, SimulateArgs};

/// Fully resolved inputs of one run; this is what the header hash covers.
#[derive(Serialize)]
struct Resolved<'a> {
    command: &'a Command,
    run: &'a RunConfig,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::io(format!("cannot size the worker pool: {e}")))?;
    }
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if cli.global.seed.is_some() {
        cfg.seed = cli.global.seed;
    }
    if cli.global.strict {
        cfg.strict = Some(true);
    }
    let out = cli.global.out.as_deref();
    let csv = out.is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    let artifact = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut cfg, csv)?,
        Command::Series(a) => series(a, &mut cfg, csv)?,
        Command::Functionals(a) => crate::commands::functionals(a, &mut cfg)?,
        Command::CollisionIntegral(a) => collision_integral(a, &mut cfg)?,
        Command::Verify(a) => verify(&a.check, &mut cfg)?,
        Command::Bounds(a) => bounds(a)?,
        Command::OracleCompare(a) => oracle_compare(a, &mut cfg)?,
    };
    let resolved = Resolved {
        command: &cli.command,
        run: &cfg,
    };
    emit(&resolved, cfg.seed, &artifact, out)
}

fn apply_dist(
    d: &DistributionArgs,
    cfg: &mut RunConfig,
) -> Result<OneParticleDistribution, CliError> {
    if d.dim.is_some() {
        cfg.dim = d.dim;
    }
    if d.sigma.is_some() {
        cfg.sigma = d.sigma;
    }
    let f = cfg.distribution_or(d.mass, d.lo, d.hi, d.temperature)?;
    cfg.distribution = Some(f.clone());
    Ok(f)
}

fn override_t(t: Option<f64>, cfg: &mut RunConfig) -> Result<f64, CliError> {
    if t.is_some() {
        cfg.t = t;
    }
    cfg.require_t()
}

/// Truncation settings: config file, then flags, then the global seed and strictness.
fn truncation(
    cfg: &mut RunConfig,
    order: Option<usize>,
    samples: Option<usize>,
    scaled_guard: bool,
) -> Result<TruncationSpec, CliError> {
    let mut tr = cfg.truncation.clone().unwrap_or_default();
    if let Some(o) = order {
        tr.order = o;
    }
    if let Some(s) = samples {
        tr.mc_samples = s;
    }
    tr.seed = cfg.require_seed()?;
    tr.strict |= cfg.strict.unwrap_or(false);
    tr.scaled_guard |= scaled_guard;
    cfg.truncation = Some(tr.clone());
    Ok(tr)
}

fn points_from(text: Option<&str>, cfg: &mut RunConfig) -> Result<Vec<PhasePoint>, CliError> {
    if let Some(text) = text {
        cfg.points = parse_points(text, cfg.dim())?;
    }
    if cfg.points.is_empty() {
        return Err(CliError::validation(
            "no evaluation points given (--points or config points)",
        ));
    }
    cfg.phase_points()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn read_state(path: &Path) -> Result<SystemState, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("invalid state {}: {e}", path.display())))
}

fn simulate(a: &SimulateArgs, cfg: &mut RunConfig, csv: bool) -> Result<Artifact, CliError> {
    if a.dim.is_some() {
        cfg.dim = a.dim;
    }
    if a.sigma.is_some() {
        cfg.sigma = a.sigma;
    }
    let t = override_t(a.t, cfg)?;
    let state = match (&a.state, a.random) {
        (Some(path), None) => read_state(path)?,
        (None, Some(n)) => {
            let seed = cfg.require_seed()?;
            if n == 0 || !(a.box_len > 0.0) {
                return Err(CliError::validation(
                    "--random needs at least one particle and a positive box",
                ));
            }
            random_allowed_states(seed, 1, n, cfg.dim(), cfg.sigma(), a.box_len).remove(0)
        }
        (None, None) => cfg
            .state
            .clone()
            .ok_or_else(|| CliError::validation("give --state, --random or a config state"))?,
        (Some(_), Some(_)) => {
            return Err(CliError::validation("--state and --random are exclusive"))
        }
    };
    cfg.state = Some(state.clone());
    if let Some(frames) = a.frames {
        if frames < 2 {
            return Err(CliError::validation("--frames needs at least 2 samples"));
        }
        let times: Vec<f64> = (0..frames)
            .map(|k| t * k as f64 / (frames - 1) as f64)
            .collect();
        let body = trajectory_csv(&state, &times)?;
        return Ok(if csv {
            Artifact::Csv(body)
        } else {
            Artifact::Json(json!({ "trajectory_csv": body }))
        });
    }
    let dynamics = Dynamics::hard_spheres(state.sigma, state.dim);
    let (end, log) = evolve_with(&dynamics, &state, t)?;
    let events: Vec<Value> = log
        .iter()
        .map(|e| json!({ "time": e.time, "pair": [e.pair.0, e.pair.1] }))
        .collect();
    Ok(Artifact::Json(json!({
        "t": t,
        "final_state": to_value(&end),
        "collisions": events,
        "kinetic_energy": { "initial": state.kinetic_energy(), "final": end.kinetic_energy() },
    })))
}

fn series_row(out: &mut String, x: &PhasePoint, dim: usize, e: &SeriesEstimate) {
    for v in x.q[..dim].iter().chain(&x.p[..dim]) {
        let _ = write!(out, "{v},");
    }
    for o in &e.orders {
        let _ = write!(out, "{},{},", o.value, o.std_error);
    }
    let _ = writeln!(
        out,
        "{},{},{}",
        e.total.value, e.total.std_error, e.negative
    );
}

fn series(a: &SeriesArgs, cfg: &mut RunConfig, csv: bool) -> Result<Artifact, CliError> {
    let f = apply_dist(&a.dist, cfg)?;
    let t = override_t(a.t, cfg)?;
    let tr = truncation(cfg, a.order, a.samples, a.scaled_guard)?;
    let dynamics = Dynamics::hard_spheres(cfg.sigma(), cfg.dim());
    if let Some(text) = &a.bins {
        cfg.bins = Some(parse_bins(text)?);
    }
    if let Some(bins) = &cfg.bins {
        let h = f1_histogram(&dynamics, &f, t, &tr, &bins.edges()?)?;
        if csv {
            let mut body = String::from("lo,hi");
            for k in 0..=tr.order {
                let _ = write!(body, ",order_{k},order_{k}_std_error");
            }
            body.push_str(",total,total_std_error,negative\n");
            for (w, b) in h.edges.windows(2).zip(&h.bins) {
                let _ = write!(body, "{},{},", w[0], w[1]);
                for o in &b.orders {
                    let _ = write!(body, "{},{},", o.value, o.std_error);
                }
                let _ = writeln!(
                    body,
                    "{},{},{}",
                    b.total.value, b.total.std_error, b.negative
                );
            }
            return Ok(Artifact::Csv(body));
        }
        return Ok(Artifact::Json(to_value(&h)));
    }
    let xs = points_from(a.points.as_deref(), cfg)?;
    let est = solve_f1_series(&dynamics, &f, t, &tr, &xs)?;
    if csv {
        let dim = cfg.dim();
        let mut body = String::new();
        for k in 0..dim {
            let _ = write!(body, "q{k},");
        }
        for k in 0..dim {
            let _ = write!(body, "p{k},");
        }
        for k in 0..=tr.order {
            let _ = write!(body, "order_{k},order_{k}_std_error,");
        }
        body.push_str("total,total_std_error,negative\n");
        for (x, e) in xs.iter().zip(&est) {
            series_row(&mut body, x, dim, e);
        }
        return Ok(Artifact::Csv(body));
    }
    Ok(Artifact::Json(
        json!({ "t": t, "points": to_value(&cfg.points), "estimates": to_value(&est) }),
    ))
}

fn functionals(a: &crate::FunctionalsArgs, cfg: &mut RunConfig) -> Result<Artifact, CliError> {
    use crate::FunctionalKind;
    use enskog::series::{correlation_g2, marginal_functional, renormalized_marginal_functional};
    let f = apply_dist(&a.dist, cfg)?;
    let t = override_t(a.t, cfg)?;
    let tr = truncation(cfg, a.order, a.samples, a.scaled_guard)?;
    let xs = points_from(a.points.as_deref(), cfg)?;
    let dynamics = Dynamics::hard_spheres(cfg.sigma(), cfg.dim());
    let est = match a.kind {
        FunctionalKind::General => marginal_functional(&dynamics, a.s, t, &f, &tr, &xs)?,
        FunctionalKind::Renormalized => {
            renormalized_marginal_functional(&dynamics, a.s, t, &f, &tr, &xs)?
        }
        FunctionalKind::Correlation => {
            if a.s != 2 || xs.len() != 2 {
                return Err(CliError::validation(
                    "the pair correlation needs --s 2 and two points",
                ));
            }
            correlation_g2(&dynamics, t, &f, &tr, &xs[0], &xs[1])?
        }
    };
    Ok(Artifact::Json(
        json!({ "s": a.s, "t": t, "estimate": to_value(&est) }),
    ))
}

fn collision_integral(a: &crate::CollisionArgs, cfg: &mut RunConfig) -> Result<Artifact, CliError> {
    use crate::CollisionKind as K;
    use enskog::collision::{
        boltzmann_enskog, collision_invariant_moments, generalized_enskog_term, hard_rod_integral,
        markovian_first_correction, revised_enskog_first_correction,
    };
    use enskog::distribution::{norm_guard, GuardKind};
    let f = apply_dist(&a.dist, cfg)?;
    let sigma = cfg.sigma();
    let mut spec = cfg.quadrature.clone().unwrap_or_default();
    if let Some(s) = a.samples {
        spec.mc_samples = s;
    }
    spec.seed = cfg.require_seed()?;
    cfg.quadrature = Some(spec.clone());
    let strict = cfg.strict.unwrap_or(false);
    let guard = match a.kind {
        K::Gee1 | K::Gee2 | K::Ree1 | K::Markov => {
            Some(norm_guard(&f, GuardKind::CollisionSeries, strict)?)
        }
        _ => None,
    };
    if a.kind == K::Moments {
        let m = collision_invariant_moments(&f, sigma, &spec, true)?;
        return Ok(Artifact::Json(
            json!({ "kind": a.kind, "moments": to_value(&m) }),
        ));
    }
    let x1 = points_from(a.point.as_deref(), cfg)?[0];
    let r = match a.kind {
        K::Bee => boltzmann_enskog(&f, &x1, sigma, &spec)?,
        K::Gee0 | K::Gee1 | K::Gee2 => {
            let n = match a.kind {
                K::Gee0 => 0,
                K::Gee1 => 1,
                _ => 2,
            };
            let t = override_t(a.t.or(Some(cfg.t.unwrap_or(0.0))), cfg)?;
            generalized_enskog_term(
                &Dynamics::hard_spheres(sigma, cfg.dim()),
                n,
                t,
                &f,
                &x1,
                &spec,
            )?
        }
        K::Ree1 => revised_enskog_first_correction(&f, &x1, sigma, &spec)?,
        K::Markov => markovian_first_correction(&f, &x1, sigma, &spec, a.collisionless_third)?,
        K::Rod => {
            if cfg.dim() != 1 {
                return Err(CliError::validation(
                    "the hard-rod integral is one-dimensional",
                ));
            }
            let f2 = |q1: f64, p1: f64, q2: f64, p2: f64| {
                f.value(&PhasePoint::new_1d(q1, p1)) * f.value(&PhasePoint::new_1d(q2, p2))
            };
            hard_rod_integral(&f2, x1.q[0], x1.p[0], sigma, &spec)?
        }
        K::Moments => unreachable!("handled above"),
    };
    Ok(Artifact::Json(
        json!({ "kind": a.kind, "point": to_value(&cfg.points[0]), "guard": to_value(&guard), "result": to_value(&r) }),
    ))
}

fn test_polynomial(x: &[PhasePoint]) -> enskog::Result<f64> {
    Ok(x.iter()
        .enumerate()
        .map(|(i, y)| (i as f64 + 1.0) * y.q[0] + 0.5 * y.p[0] * y.p[0] + 0.1 * y.q[0] * y.p[0])
        .sum())
}

fn verify(check: &crate::VerifyCommand, cfg: &mut RunConfig) -> Result<Artifact, CliError> {
    use crate::VerifyCommand as V;
    use enskog::bounds::{nested_sum_count, rising_sum_identity, MAX_NESTED_ARG, MAX_RISING_ARG};
    use enskog::cumulant::{enumerate_partitions, partition_alternating_sum};
    use enskog::operators::{recurrence_samples, verify_recurrence};
    let report = match *check {
        V::Partitions { max_m } => {
            let mut rows = Vec::new();
            for m in 1..=max_m {
                rows.push(json!({
                    "m": m,
                    "bell": enumerate_partitions(m)?.len(),
                    "alternating_sum": partition_alternating_sum(m)?,
                }));
            }
            json!(rows)
        }
        V::Recurrence {
            s,
            n,
            samples,
            t,
            sigma,
        } => {
            let seed = cfg.require_seed()?;
            let states = recurrence_samples(seed, s, n, samples, sigma);
            let r = verify_recurrence(
                &Dynamics::hard_spheres(sigma, 1),
                s,
                n,
                t,
                &states,
                &test_polynomial,
            )?;
            to_value(&r)
        }
        V::Identities => {
            let mut nonzero = Vec::new();
            for n in 0..=MAX_RISING_ARG {
                for m in 0..=MAX_RISING_ARG {
                    let r = rising_sum_identity(n, m)?;
                    if r != 0.into() {
                        nonzero.push(format!("rising_sum_identity({n}, {m}) = {r}"));
                    }
                }
            }
            for m in 0..=MAX_NESTED_ARG {
                for s in 1..=MAX_NESTED_ARG {
                    let r = nested_sum_count(m, s)?;
                    if r != 0.into() {
                        nonzero.push(format!("nested_sum_count({m}, {s}) = {r}"));
                    }
                }
            }
            json!({ "rising_max": MAX_RISING_ARG, "nested_max": MAX_NESTED_ARG, "nonzero": nonzero })
        }
        V::Reversibility {
            samples,
            particles,
            dim,
            sigma,
            box_len,
            t,
        } => {
            let seed = cfg.require_seed()?;
            if particles == 0 || samples == 0 || !(box_len > 0.0) {
                return Err(CliError::validation(
                    "reversibility needs particles, samples and a positive box",
                ));
            }
            let d = Dynamics::hard_spheres(sigma, dim);
            let mut worst: f64 = 0.0;
            let mut collisions = Vec::with_capacity(samples);
            for x in random_allowed_states(seed, samples, particles, dim, sigma, box_len) {
                let (y, log) = evolve_with(&d, &x, t)?;
                let (z, _) = evolve_with(&d, &y, -t)?;
                collisions.push(log.len());
                let scale = x
                    .points
                    .iter()
                    .flat_map(|p| p.q[..dim].iter().map(|v| v.abs()))
                    .fold(sigma, f64::max);
                for (u, v) in x.points.iter().zip(&z.points) {
                    for k in 0..dim {
                        worst = worst.max((u.q[k] - v.q[k]).abs() / scale);
                    }
                }
            }
            json!({
                "max_relative_error": worst,
                "min_collisions": collisions.iter().min(),
                "max_collisions": collisions.iter().max(),
            })
        }
    };
    Ok(Artifact::Json(report))
}

fn bounds(a: &crate::BoundsArgs) -> Result<Artifact, CliError> {
    use enskog::bounds::{functional_norm_majorant, named_constants};
    if a.list {
        let map: serde_json::Map<String, Value> = named_constants(a.s)
            .into_iter()
            .map(|(k, v)| (k, json!(v)))
            .collect();
        return Ok(Artifact::Json(Value::Object(map)));
    }
    let norm = a
        .norm
        .ok_or_else(|| CliError::validation("give --norm or --list"))?;
    Ok(Artifact::Json(to_value(&functional_norm_majorant(
        a.s, norm,
    )?)))
}

fn oracle_compare(a: &crate::OracleArgs, cfg: &mut RunConfig) -> Result<Artifact, CliError> {
    use enskog::mc::child_seed;
    use enskog::oracle::{compare_histograms, md_histogram};
    let f = apply_dist(&a.dist, cfg)?;
    let t = override_t(a.t, cfg)?;
    let tr = truncation(cfg, a.order.or(Some(2)), a.samples, a.scaled_guard)?;
    if let Some(text) = &a.bins {
        cfg.bins = Some(parse_bins(text)?);
    }
    let bins = match &cfg.bins {
        Some(b) => b.clone(),
        None => {
            let (lo, hi) = (a.dist.lo - 3.0, a.dist.hi + 3.0);
            crate::config::BinSpec {
                lo,
                hi,
                count: (hi - lo).ceil().max(1.0) as usize,
            }
        }
    };
    cfg.bins = Some(bins.clone());
    let edges = bins.edges()?;
    let particles = a
        .particles
        .unwrap_or_else(|| f.l1_norm().round().max(1.0) as usize);
    let dynamics = Dynamics::hard_spheres(cfg.sigma(), cfg.dim());
    let series = f1_histogram(&dynamics, &f, t, &tr, &edges)?;
    let md = md_histogram(
        &dynamics,
        &f,
        particles,
        t,
        a.runs,
        child_seed(tr.seed, 1),
        &edges,
    )?;
    let cmp = compare_histograms(&series, tr.order, &md)?;
    let increments: Vec<f64> = (1..=tr.order)
        .map(|k| series.bins.iter().map(|b| b.orders[k].value.abs()).sum())
        .collect();
    Ok(Artifact::Json(json!({
        "t": t,
        "particles": particles,
        "runs": a.runs,
        "comparison": to_value(&cmp),
        "l1_increments": increments,
        "md_rejected": md.rejected,
    })))
}
