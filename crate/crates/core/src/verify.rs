//! Reproducible numerical experiments with pass / fail / inconclusive
//! verdicts.
//!
//! A case fails only when a converged computation contradicts the statement
//! being tested; anything the numerics could not settle is inconclusive.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::address::{enumerate_periodic, ExternalAddress};
use crate::dynamics::{
    classify_singular_orbit, find_periodic_points, orbit_jet, polish_periodic_point, NewtonSettings, Parameter,
    PeriodicOrbit, PeriodicSearch, Rect, SingularOrbitConfig, SingularVerdict, Stability, MAX_SEARCH_PERIOD,
};
use crate::numeric::{format_complex, C64};
use crate::parameter::{
    check_parameter_ray_bound, extrapolated_limit, parameter_vertical_order, trace_parameter_ray, wake_membership,
    ParameterError, TraceConfig, Wake, WakeMembership,
};
use crate::rays::{land_ray, vertical_order, LandingConfig, LandingEstimate, RayError, RayEvalConfig, VerticalPosition};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Parameter(#[from] ParameterError),
    #[error(transparent)]
    Ray(#[from] RayError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Inconclusive,
    Fail,
}

impl Outcome {
    /// Process exit status for a report with this verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
            Outcome::Inconclusive => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: String,
    pub outcome: Outcome,
    /// Tolerance the case's numerical claim was tested at.
    pub tolerance: Option<f64>,
    pub data: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub inputs: Value,
    pub tolerances: BTreeMap<String, f64>,
    pub cases: Vec<CaseOutcome>,
    pub notes: Vec<String>,
    pub verdict: Outcome,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    fn new(experiment: &str, inputs: Value, tolerances: &[(&str, f64)]) -> Self {
        Self {
            experiment: experiment.to_string(),
            inputs,
            tolerances: tolerances.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            cases: Vec::new(),
            notes: Vec::new(),
            verdict: Outcome::Pass,
            wall_time_s: 0.0,
        }
    }

    fn push(&mut self, case: impl Into<String>, outcome: Outcome, tolerance: Option<f64>, data: Value) {
        self.cases.push(CaseOutcome { case: case.into(), outcome, tolerance, data });
    }

    fn finish(mut self, started: Instant) -> Self {
        self.verdict = aggregate(self.cases.iter().map(|c| c.outcome));
        self.wall_time_s = started.elapsed().as_secs_f64();
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }

    /// The report without its wall time, for reproducibility comparisons.
    pub fn numerics(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(map) = &mut v {
            map.remove("wall_time_s");
        }
        v
    }

    pub fn summary(&self) -> String {
        let mut out = format!("experiment {}: {:?}\n", self.experiment, self.verdict);
        for c in &self.cases {
            let tol = c.tolerance.map(|t| format!(" (tol {t:e})")).unwrap_or_default();
            out.push_str(&format!("  {:<12} {}{}\n", format!("{:?}", c.outcome).to_lowercase(), c.case, tol));
        }
        for n in &self.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        out.push_str(&format!("  wall time {:.3} s\n", self.wall_time_s));
        out
    }
}

/// Any fail fails; otherwise any inconclusive case makes the whole
/// inconclusive.
pub fn aggregate(outcomes: impl IntoIterator<Item = Outcome>) -> Outcome {
    outcomes.into_iter().max().unwrap_or(Outcome::Pass)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub ray: RayEvalConfig,
    pub landing: LandingConfig,
    pub singular: SingularOrbitConfig,
    /// Landing-to-orbit matching distance.
    pub match_tol: f64,
    pub seeds_per_axis: usize,
    /// Agreement of ray landings with Newton continuation.
    pub motion_tol: f64,
    pub cr_step: f64,
    pub cr_grid: usize,
    /// Cauchy-Riemann residual bound, relative to `cr_step`.
    pub cr_factor: f64,
    /// Minimal distance of a motion path from the relevant parameter rays.
    pub ray_clearance: f64,
    pub trace: TraceConfig,
    pub colanding_tol: f64,
    pub continuation_substeps: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            ray: RayEvalConfig::default(),
            landing: LandingConfig::default(),
            singular: SingularOrbitConfig::default(),
            match_tol: 1e-6,
            seeds_per_axis: 64,
            motion_tol: 1e-8,
            cr_step: 1e-3,
            cr_grid: 5,
            cr_factor: 1e-4,
            ray_clearance: 1e-3,
            trace: TraceConfig { t_end: 0.01, ..TraceConfig::default() },
            colanding_tol: 1e-6,
            continuation_substeps: 16,
        }
    }
}

fn cz(z: C64) -> Value {
    json!(format_complex(z))
}

fn require_periodic(addresses: &[ExternalAddress]) -> Result<(), VerifyError> {
    match addresses.iter().find(|s| s.exact_period().is_none()) {
        Some(s) => Err(VerifyError::Precondition(format!("address {s} is not periodic"))),
        None => Ok(()),
    }
}

/// Records the singular-orbit assumption; an escaping singular value is a
/// precondition violation.
fn singular_assumption(kappa: Parameter, cfg: &VerifyConfig, report: &mut ExperimentReport) -> Result<(), VerifyError> {
    let class = classify_singular_orbit(kappa, &cfg.singular);
    if class.verdict == SingularVerdict::EscapingSuspected {
        return Err(VerifyError::Precondition(format!("singular orbit of {kappa} appears to escape")));
    }
    report.notes.push(format!("assumption: singular orbit verdict {:?}", class.verdict));
    Ok(())
}

fn landing_data(est: &LandingEstimate) -> Value {
    json!({
        "landing_point": cz(est.landing_point()),
        "orbit_period": est.orbit.period,
        "multiplier": cz(est.orbit.multiplier),
        "stability": est.orbit.stability,
        "parabolic": est.orbit.is_parabolic(),
        "matched_distance": est.matched_distance,
        "method": est.method,
    })
}

/// Every periodic ray lands at a repelling or parabolic periodic point.
pub fn verify_theorem1(
    kappa: Parameter,
    addresses: &[ExternalAddress],
    cfg: &VerifyConfig,
) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    require_periodic(addresses)?;
    let inputs = json!({
        "kappa": cz(kappa.value()),
        "addresses": addresses.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    });
    let mut report = ExperimentReport::new(
        "theorem1",
        inputs,
        &[("landing_tol", cfg.landing.landing_tol), ("classify_tol", cfg.landing.classify.tol)],
    );
    singular_assumption(kappa, cfg, &mut report)?;
    let results: Vec<_> = addresses.par_iter().map(|s| land_ray(kappa, s, &cfg.ray, &cfg.landing)).collect();
    for (s, result) in addresses.iter().zip(results) {
        match result {
            Ok(est) => {
                let ok = est.orbit.is_repelling_or_parabolic();
                let outcome = if ok { Outcome::Pass } else { Outcome::Fail };
                report.push(format!("ray {s}"), outcome, Some(cfg.landing.landing_tol), landing_data(&est));
            }
            Err(e) => report.push(format!("ray {s}"), Outcome::Inconclusive, None, json!({ "error": e.to_string() })),
        }
    }
    Ok(report.finish(started))
}

/// Mutual nearest neighbours between orbit points and landing points.
/// Returns, per orbit, whether one of its points was matched.
fn match_landings(orbits: &[PeriodicOrbit], landings: &[C64], tol: f64) -> Vec<bool> {
    let points: Vec<(usize, C64)> =
        orbits.iter().enumerate().flat_map(|(i, o)| o.points.iter().map(move |&p| (i, p))).collect();
    let nearest = |from: C64, to: &mut dyn Iterator<Item = C64>| -> Option<(usize, f64)> {
        to.enumerate()
            .map(|(j, q)| (j, (q - from).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    };
    let mut covered = vec![false; orbits.len()];
    for (pi, &(orbit, p)) in points.iter().enumerate() {
        let Some((lj, d)) = nearest(p, &mut landings.iter().copied()) else { continue };
        if d >= tol {
            continue;
        }
        let back = nearest(landings[lj], &mut points.iter().map(|x| x.1));
        if back.map(|b| b.0) == Some(pi) {
            covered[orbit] = true;
        }
    }
    covered
}

/// All but at most one periodic orbit of period `n` in `region` is the
/// landing point of a periodic ray with entries bounded by `m`.
pub fn verify_theorem2(
    kappa: Parameter,
    n: usize,
    region: Rect,
    m: u32,
    cfg: &VerifyConfig,
) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    if n == 0 || n > MAX_SEARCH_PERIOD || !region.is_valid() {
        return Err(VerifyError::Precondition(format!("period {n} or box {region:?} out of range")));
    }
    let inputs = json!({ "kappa": cz(kappa.value()), "n": n, "box": region, "M": m });
    let mut report = ExperimentReport::new(
        "theorem2",
        inputs,
        &[("match_tol", cfg.match_tol), ("landing_tol", cfg.landing.landing_tol), ("classify_tol", cfg.landing.classify.tol)],
    );
    singular_assumption(kappa, cfg, &mut report)?;

    let mut search = PeriodicSearch::new(region, cfg.seeds_per_axis);
    search.classify = cfg.landing.classify;
    let found = find_periodic_points(kappa, n, &search);
    let mut addresses = enumerate_periodic(n, m);
    addresses.sort();
    addresses.dedup();
    let results: Vec<_> = addresses.par_iter().map(|s| land_ray(kappa, s, &cfg.ray, &cfg.landing)).collect();

    let mut landings = Vec::new();
    let mut unsettled = Vec::new();
    for (s, result) in addresses.iter().zip(&results) {
        match result {
            Ok(est) => {
                if !est.orbit.is_repelling_or_parabolic() {
                    report.push(format!("ray {s}"), Outcome::Fail, Some(cfg.landing.landing_tol), landing_data(est));
                }
                landings.push(est.landing_point());
            }
            Err(e) => unsettled.push(json!({ "address": s.to_string(), "error": e.to_string() })),
        }
    }
    let covered = match_landings(&found.orbits, &landings, cfg.match_tol);

    let mut uncovered = Vec::new();
    for (orbit, &hit) in found.orbits.iter().zip(&covered) {
        let data = json!({
            "points": orbit.points.iter().map(|&p| cz(p)).collect::<Vec<_>>(),
            "multiplier": cz(orbit.multiplier),
            "stability": orbit.stability,
            "covered": hit,
        });
        if hit {
            report.push(format!("orbit at {}", format_complex(orbit.points[0])), Outcome::Pass, Some(cfg.match_tol), data);
        } else {
            uncovered.push((orbit, data));
        }
    }
    let nonrepelling = found.orbits.iter().filter(|o| o.stability != Stability::Repelling).count();
    let uncovered_repelling = uncovered.iter().filter(|(o, _)| o.stability == Stability::Repelling).count();
    let summary = json!({
        "orbits": found.orbits.len(),
        "addresses": addresses.len(),
        "converged_landings": landings.len(),
        "unsettled_rays": unsettled,
        "uncovered": uncovered.len(),
        "uncovered_repelling": uncovered_repelling,
        "nonrepelling": nonrepelling,
        "seed_stats": found.stats,
    });
    let coverage = if uncovered.len() <= 1 { Outcome::Pass } else { Outcome::Inconclusive };
    if coverage == Outcome::Inconclusive {
        report.notes.push(format!(
            "{} orbits uncovered with entries up to {m}; widen M (the exceptional orbit is only bounded within the searched addresses)",
            uncovered.len()
        ));
    }
    for (orbit, data) in uncovered {
        let outcome = if coverage == Outcome::Pass { Outcome::Pass } else { Outcome::Inconclusive };
        report.push(format!("uncovered orbit at {}", format_complex(orbit.points[0])), outcome, Some(cfg.match_tol), data);
    }
    report.push("coverage", coverage, Some(cfg.match_tol), summary);
    let at_most_one = if nonrepelling <= 1 { Outcome::Pass } else { Outcome::Fail };
    report.push("at most one nonrepelling orbit", at_most_one, Some(cfg.landing.classify.tol), json!({ "nonrepelling": nonrepelling }));
    Ok(report.finish(started))
}

/// Polyline of a traced ray continued to its extrapolated end.
fn parameter_polyline(s: &ExternalAddress, cfg: &TraceConfig) -> Result<Vec<C64>, ParameterError> {
    let trace = trace_parameter_ray(s, cfg)?;
    let mut line: Vec<C64> = trace.samples.iter().map(|p| p.kappa).collect();
    if let Some(end) = extrapolated_limit(&trace) {
        line.push(end);
    }
    Ok(line)
}

fn distance_to_polyline(p: C64, line: &[C64]) -> f64 {
    let seg = |a: C64, b: C64| {
        let ab = b - a;
        let len2 = ab.norm_sqr();
        let u = if len2 == 0.0 { 0.0 } else { (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0) };
        (p - (a + ab * u)).norm()
    };
    match line {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => line.windows(2).map(|w| seg(w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// `dz/dκ` of a periodic point of period `n`.
fn point_velocity(kappa: Parameter, z: C64, n: usize) -> Option<C64> {
    let jet = orbit_jet(kappa, z, n).ok()?;
    Some(jet.d_kappa / -jet.multiplier_minus_one())
}

fn land_point(kappa: C64, s: &ExternalAddress, cfg: &VerifyConfig) -> Result<C64, RayError> {
    let p = Parameter::new(kappa).map_err(|e| RayError::InvalidArgument(e.to_string()))?;
    land_ray(p, s, &cfg.ray, &cfg.landing).map(|est| est.landing_point())
}

/// The landing point of `g_s^κ` moves holomorphically along a path that
/// avoids the parameter rays `G_{σ^k s}`.
pub fn verify_holomorphic_motion(
    path: &[Parameter],
    s: &ExternalAddress,
    cfg: &VerifyConfig,
) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    let n = s.exact_period().ok_or_else(|| VerifyError::Precondition(format!("address {s} is not periodic")))?;
    if path.is_empty() {
        return Err(VerifyError::Precondition("empty path".into()));
    }
    let inputs = json!({
        "path": path.iter().map(|k| cz(k.value())).collect::<Vec<_>>(),
        "address": s.to_string(),
    });
    let mut report = ExperimentReport::new(
        "holomorphic_motion",
        inputs,
        &[
            ("motion_tol", cfg.motion_tol),
            ("cr_step", cfg.cr_step),
            ("cr_tol", cfg.cr_factor * cfg.cr_step),
            ("ray_clearance", cfg.ray_clearance),
        ],
    );

    // hypothesis: the path stays away from every G_{σ^k s}
    let mut shifts: Vec<ExternalAddress> = (0..n).map(|k| s.shift_by(k)).collect();
    shifts.sort();
    shifts.dedup();
    let lines: Vec<_> = shifts.par_iter().map(|a| parameter_polyline(a, &cfg.trace)).collect();
    let mut clearance = f64::INFINITY;
    for (a, line) in shifts.iter().zip(lines) {
        let line = line.map_err(|e| VerifyError::Precondition(format!("could not trace G_{a}: {e}")))?;
        for k in path {
            clearance = clearance.min(distance_to_polyline(k.value(), &line));
        }
    }
    if !(clearance > cfg.ray_clearance) {
        return Err(VerifyError::Precondition(format!("path comes within {clearance:e} of a parameter ray")));
    }
    report.notes.push(format!("path clearance from parameter rays {clearance:e}"));

    let landings: Vec<Result<C64, RayError>> = path.par_iter().map(|k| land_point(k.value(), s, cfg)).collect();
    let Some(Ok(first)) = landings.first().cloned() else {
        report.push("landing at path start", Outcome::Inconclusive, None, json!({ "error": format!("{:?}", landings[0]) }));
        return Ok(report.finish(started));
    };

    // Newton continuation of the starting landing point along the path
    let mut z = first;
    let mut continuity = Outcome::Pass;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..path.len() {
        if i > 0 {
            let (k0, k1) = (path[i - 1], path[i]);
            let mut w = z;
            for j in 1..=cfg.continuation_substeps {
                let a = k0.value() + (k1.value() - k0.value()) * (j as f64 / cfg.continuation_substeps as f64);
                let (pa, prev) = (Parameter::new(a).ok(), k0.value() + (k1.value() - k0.value()) * ((j - 1) as f64 / cfg.continuation_substeps as f64));
                let Some(pa) = pa else { break };
                let v = Parameter::new(prev).ok().and_then(|pp| point_velocity(pp, w, n)).unwrap_or_default();
                w = polish_periodic_point(pa, w + v * (a - prev), n, NewtonSettings::default()).unwrap_or(C64::new(f64::NAN, f64::NAN));
            }
            z = w;
        }
        let case = format!("path[{i}] = {}", format_complex(path[i].value()));
        match &landings[i] {
            Ok(l) => {
                let gap = (l - z).norm();
                let outcome = if gap < cfg.motion_tol { Outcome::Pass } else { Outcome::Fail };
                report.push(case, outcome, Some(cfg.motion_tol), json!({ "landing": cz(*l), "continued": cz(z), "gap": gap }));
                if i > 0 {
                    if let Ok(prev) = &landings[i - 1] {
                        let dk = (path[i].value() - path[i - 1].value()).norm();
                        let speed = [(path[i - 1], *prev), (path[i], *l)]
                            .iter()
                            .filter_map(|(k, p)| point_velocity(*k, *p, n))
                            .map(|v| v.norm())
                            .fold(0.0, f64::max);
                        let bound = 2.0 * speed * dk + cfg.motion_tol;
                        let moved = (l - prev).norm();
                        worst_ratio = worst_ratio.max(moved / bound);
                        if moved > bound {
                            continuity = Outcome::Fail;
                        }
                    }
                }
            }
            Err(e) => report.push(case, Outcome::Inconclusive, None, json!({ "error": e.to_string() })),
        }
    }
    report.push("continuity", continuity, None, json!({ "worst_step_over_bound": worst_ratio }));

    // discrete Cauchy-Riemann residual on a square grid around the middle
    let center = path[path.len() / 2].value();
    let g = cfg.cr_grid.max(3);
    let h = cfg.cr_step;
    let half = (g / 2) as f64;
    let grid: Vec<C64> = (0..g * g)
        .map(|idx| center + C64::new((idx % g) as f64 - half, (idx / g) as f64 - half) * h)
        .collect();
    let values: Vec<Result<C64, RayError>> = grid.par_iter().map(|&k| land_point(k, s, cfg)).collect();
    let cr_tol = cfg.cr_factor * h;
    let at = |i: usize, j: usize| values[j * g + i].as_ref().ok().copied();
    let mut worst: f64 = 0.0;
    let mut complete = true;
    for j in 1..g - 1 {
        for i in 1..g - 1 {
            match (at(i + 1, j), at(i - 1, j), at(i, j + 1), at(i, j - 1)) {
                (Some(e), Some(w), Some(nn), Some(sth)) => {
                    let r = ((e - w) * C64::new(0.0, 1.0) - (nn - sth)).norm() / 2.0;
                    worst = worst.max(r);
                }
                _ => complete = false,
            }
        }
    }
    let outcome = if !complete {
        Outcome::Inconclusive
    } else if worst < cr_tol {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    report.push("cauchy-riemann", outcome, Some(cr_tol), json!({ "center": cz(center), "step": h, "grid": g, "residual": worst }));
    Ok(report.finish(started))
}

/// Two rays that land together at one probe of a wake land together at every
/// probe, at a point that continues analytically between probes.
pub fn verify_wake_persistence(
    wake: &Wake,
    probes: &[Parameter],
    pair: (&ExternalAddress, &ExternalAddress),
    cfg: &VerifyConfig,
    boundary_tol: f64,
) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    require_periodic(&[pair.0.clone(), pair.1.clone()])?;
    let n = pair.0.exact_period().unwrap_or(1).max(pair.1.exact_period().unwrap_or(1));
    for k in probes {
        if wake_membership(*k, wake, boundary_tol)? != WakeMembership::Inside {
            return Err(VerifyError::Precondition(format!("probe {k} is not inside the wake")));
        }
    }
    let inputs = json!({
        "probes": probes.iter().map(|k| cz(k.value())).collect::<Vec<_>>(),
        "addresses": [pair.0.to_string(), pair.1.to_string()],
    });
    let mut report = ExperimentReport::new(
        "wake_persistence",
        inputs,
        &[("colanding_tol", cfg.colanding_tol), ("motion_tol", cfg.motion_tol)],
    );
    let landed: Vec<(Result<C64, RayError>, Result<C64, RayError>)> = probes
        .par_iter()
        .map(|k| (land_point(k.value(), pair.0, cfg), land_point(k.value(), pair.1, cfg)))
        .collect();
    let mut common: Vec<Option<C64>> = Vec::with_capacity(probes.len());
    for (k, (a, b)) in probes.iter().zip(&landed) {
        let case = format!("co-landing at {}", format_complex(k.value()));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let gap = (a - b).norm();
                let outcome = if gap < cfg.colanding_tol { Outcome::Pass } else { Outcome::Fail };
                report.push(case, outcome, Some(cfg.colanding_tol), json!({ "first": cz(*a), "second": cz(*b), "gap": gap }));
                common.push((outcome == Outcome::Pass).then_some(*a));
            }
            (a, b) => {
                let err = |r: &Result<C64, RayError>| r.as_ref().err().map(|e| e.to_string());
                report.push(case, Outcome::Inconclusive, None, json!({ "first": err(a), "second": err(b) }));
                common.push(None);
            }
        }
    }
    for i in 1..probes.len() {
        let case = format!("continuation {} -> {}", format_complex(probes[i - 1].value()), format_complex(probes[i].value()));
        let (Some(start), Some(target)) = (common[i - 1], common[i]) else {
            report.push(case, Outcome::Inconclusive, None, json!({}));
            continue;
        };
        let (k0, k1) = (probes[i - 1].value(), probes[i].value());
        let mut w = start;
        let mut inside = true;
        for j in 1..=cfg.continuation_substeps {
            let prev = k0 + (k1 - k0) * ((j - 1) as f64 / cfg.continuation_substeps as f64);
            let a = k0 + (k1 - k0) * (j as f64 / cfg.continuation_substeps as f64);
            let (Ok(pp), Ok(pa)) = (Parameter::new(prev), Parameter::new(a)) else { break };
            inside &= wake_membership(pa, wake, boundary_tol)? == WakeMembership::Inside;
            let v = point_velocity(pp, w, n).unwrap_or_default();
            w = polish_periodic_point(pa, w + v * (a - prev), n, NewtonSettings::default())
                .unwrap_or(C64::new(f64::NAN, f64::NAN));
        }
        let gap = (w - target).norm();
        let outcome = if gap < cfg.colanding_tol {
            Outcome::Pass
        } else if inside {
            Outcome::Fail
        } else {
            // the straight segment left the wake, where the extension may differ
            Outcome::Inconclusive
        };
        report.push(case, outcome, Some(cfg.colanding_tol), json!({ "continued": cz(w), "landing": cz(target), "gap": gap, "segment_inside": inside }));
    }
    Ok(report.finish(started))
}

/// `|κ| > F^{-(n-1)}(2πM)/5` along a traced parameter ray.
pub fn verify_parameter_bound(s: &ExternalAddress, trace_cfg: &TraceConfig) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    let trace = trace_parameter_ray(s, trace_cfg)?;
    let bound = check_parameter_ray_bound(s, &trace.samples)?;
    let mut report = ExperimentReport::new(
        "parameter_bound",
        json!({ "address": s.to_string(), "t_start": trace_cfg.t_start, "t_end": trace_cfg.t_end }),
        &[("corrector_tol", trace_cfg.corrector_tol)],
    );
    let outcome = if bound.holds { Outcome::Pass } else { Outcome::Fail };
    report.push("bound", outcome, Some(0.0), serde_json::to_value(bound).unwrap_or_default());
    Ok(report.finish(started))
}

/// Vertical order of rays far to the right agrees with the lexicographic
/// order of their addresses, in the dynamical plane of `kappa` and in the
/// parameter plane.
pub fn verify_vertical_order(
    kappa: Parameter,
    pairs: &[(ExternalAddress, ExternalAddress)],
    re: f64,
    cfg: &VerifyConfig,
) -> Result<ExperimentReport, VerifyError> {
    let started = Instant::now();
    let inputs = json!({
        "kappa": cz(kappa.value()),
        "re": re,
        "pairs": pairs.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect::<Vec<_>>(),
    });
    let mut report = ExperimentReport::new("vertical_order", inputs, &[("ray_tol", cfg.ray.tol)]);
    let results: Vec<_> = pairs
        .par_iter()
        .map(|(a, b)| {
            (
                vertical_order(kappa, a, b, re, &cfg.ray),
                parameter_vertical_order(a, b, re, &cfg.trace),
            )
        })
        .collect();
    for ((a, b), (dynamic, parameter)) in pairs.iter().zip(results) {
        let expected = VerticalPosition::from_lex(a.lex_cmp(b));
        for (plane, result) in [("dynamic", dynamic.map_err(VerifyError::from)), ("parameter", parameter.map_err(VerifyError::from))] {
            let case = format!("{plane} {a} vs {b}");
            match result {
                Ok(order) => {
                    let outcome = if Some(order.position) == expected { Outcome::Pass } else { Outcome::Fail };
                    report.push(case, outcome, None, serde_json::to_value(order).unwrap_or_default());
                }
                Err(e) => report.push(case, Outcome::Inconclusive, None, json!({ "error": e.to_string() })),
            }
        }
    }
    Ok(report.finish(started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameter::{find_characteristic_rays, WakeConfig};
    use std::f64::consts::PI;

    fn addr(text: &str) -> ExternalAddress {
        text.parse().unwrap()
    }

    fn small_periodic(max_period: usize, m: u32) -> Vec<ExternalAddress> {
        let mut all: Vec<_> = (1..=max_period).flat_map(|n| enumerate_periodic(n, m)).collect();
        all.sort();
        all.dedup();
        all
    }

    #[test]
    fn aggregation_rules() {
        use Outcome::*;
        assert_eq!(aggregate([Pass, Pass]), Pass);
        assert_eq!(aggregate([Pass, Inconclusive]), Inconclusive);
        assert_eq!(aggregate([Inconclusive, Fail, Pass]), Fail);
        assert_eq!(aggregate([]), Pass);
        assert_eq!((Pass.exit_code(), Fail.exit_code(), Inconclusive.exit_code()), (0, 2, 3));
    }

    #[test]
    fn theorem1_real_attracting_parameter() {
        let k = Parameter::real(-2.0);
        let addresses = small_periodic(2, 1);
        assert_eq!(addresses.len(), 9);
        let report = verify_theorem1(k, &addresses, &VerifyConfig::default()).unwrap();
        assert_eq!(report.verdict, Outcome::Pass);
        assert!(report.cases.iter().all(|c| c.data["stability"] == json!("repelling")));
        // cross-check against the independent periodic-point search
        let search = PeriodicSearch::new(Rect::new(-8.0, 8.0, -12.0, 12.0), 64);
        let orbits: Vec<_> = (1..=2).flat_map(|n| find_periodic_points(k, n, &search).orbits).collect();
        for c in &report.cases {
            let z = crate::numeric::parse_complex(c.data["landing_point"].as_str().unwrap()).unwrap();
            assert!(orbits.iter().any(|o| o.distance_to(z) < 1e-8), "{}", c.case);
        }
    }

    #[test]
    fn theorem1_parabolic_and_preconditions() {
        let report = verify_theorem1(Parameter::real(-1.0), &[addr("|0")], &VerifyConfig::default()).unwrap();
        assert_eq!(report.verdict, Outcome::Pass);
        assert_eq!(report.cases[0].data["parabolic"], json!(true));
        let err = verify_theorem1(Parameter::real(-2.0), &[addr("1|0")], &VerifyConfig::default());
        assert!(matches!(err, Err(VerifyError::Precondition(_))));
        let err = verify_theorem1(Parameter::real(5.0), &[addr("|0")], &VerifyConfig::default());
        assert!(matches!(err, Err(VerifyError::Precondition(_))));
    }

    #[test]
    fn theorem2_fixed_points() {
        let report =
            verify_theorem2(Parameter::real(-2.0), 1, Rect::new(-5.0, 5.0, -10.0, 10.0), 1, &VerifyConfig::default())
                .unwrap();
        assert_eq!(report.verdict, Outcome::Pass);
        let coverage = report.cases.iter().find(|c| c.case == "coverage").unwrap();
        assert_eq!(coverage.data["uncovered"], json!(1));
        assert_eq!(coverage.data["uncovered_repelling"], json!(0));
        let lone = report.cases.iter().find(|c| c.case.starts_with("uncovered")).unwrap();
        assert_eq!(lone.data["stability"], json!("attracting"));
    }

    #[test]
    fn theorem2_period_two() {
        let cfg = VerifyConfig::default();
        let report = verify_theorem2(Parameter::real(-2.0), 2, Rect::new(-6.0, 6.0, -10.0, 10.0), 2, &cfg).unwrap();
        assert_eq!(report.verdict, Outcome::Pass);
        let coverage = report.cases.iter().find(|c| c.case == "coverage").unwrap();
        assert_eq!(coverage.data["addresses"], json!(25));
        assert_eq!(coverage.data["uncovered_repelling"], json!(0));
        assert!(coverage.data["orbits"].as_u64().unwrap() >= 3);

        let narrow = verify_theorem2(Parameter::real(-2.0), 2, Rect::new(-6.0, 6.0, -10.0, 10.0), 0, &cfg).unwrap();
        assert_eq!(narrow.verdict, Outcome::Inconclusive);
        assert!(narrow.notes.iter().any(|n| n.contains("widen M")));
    }

    #[test]
    fn mutual_nearest_neighbours() {
        let orbit = |p: C64| PeriodicOrbit {
            points: vec![p],
            period: 1,
            multiplier: C64::new(2.0, 0.0),
            stability: Stability::Repelling,
            parabolic: None,
        };
        let orbits = [orbit(C64::new(0.0, 0.0)), orbit(C64::new(1e-7, 0.0))];
        // one landing close to both: only its mutual nearest orbit is covered
        assert_eq!(match_landings(&orbits, &[C64::new(2e-8, 0.0)], 1e-6), vec![true, false]);
        assert_eq!(match_landings(&orbits, &[], 1e-6), vec![false, false]);
    }

    fn path(from: C64, to: C64, steps: usize) -> Vec<Parameter> {
        (0..=steps).map(|i| Parameter::new(from + (to - from) * (i as f64 / steps.max(1) as f64)).unwrap()).collect()
    }

    #[test]
    fn motion_along_real_and_complex_paths() {
        let cfg = VerifyConfig::default();
        let real = verify_holomorphic_motion(&path(C64::new(-2.0, 0.0), C64::new(-3.0, 0.0), 10), &addr("|0"), &cfg).unwrap();
        assert_eq!(real.verdict, Outcome::Pass, "{}", real.summary());
        // real Newton oracle for the repelling fixed point of e^x + κ
        for (i, c) in real.cases.iter().filter(|c| c.case.starts_with("path")).enumerate() {
            let kappa = -2.0 - 0.1 * i as f64;
            let mut x: f64 = 1.5;
            for _ in 0..100 {
                x -= (x.exp() + kappa - x) / (x.exp() - 1.0);
            }
            let z = crate::numeric::parse_complex(c.data["landing"].as_str().unwrap()).unwrap();
            assert!((z - C64::new(x, 0.0)).norm() < 1e-10);
        }
        let complex =
            verify_holomorphic_motion(&path(C64::new(-2.0, 0.0), C64::new(-2.0, 0.3), 10), &addr("|0"), &cfg).unwrap();
        assert_eq!(complex.verdict, Outcome::Pass, "{}", complex.summary());
        let single = verify_holomorphic_motion(&path(C64::new(-2.0, 0.0), C64::new(-2.0, 0.0), 0), &addr("|0"), &cfg).unwrap();
        assert_eq!(single.verdict, Outcome::Pass);
    }

    #[test]
    fn motion_rejects_paths_crossing_rays() {
        let cfg = VerifyConfig::default();
        let err = verify_holomorphic_motion(&path(C64::new(0.0, -0.5), C64::new(0.0, 0.5), 4), &addr("|0"), &cfg);
        assert!(matches!(err, Err(VerifyError::Precondition(_))));
    }

    #[test]
    fn wake_persistence_period_two() {
        let sample = Parameter::new(C64::new(1.3, PI)).unwrap();
        let wake_cfg = WakeConfig::default();
        let wake = find_characteristic_rays(sample, 2, 2, &wake_cfg).unwrap();
        let Wake::Bounded(w) = &wake else { panic!() };
        let probes: Vec<Parameter> = [(1.3, PI), (2.0, PI), (1.5, 3.0), (3.0, 5.0), (1.01, PI)]
            .iter()
            .map(|&(a, b)| Parameter::new(C64::new(a, b)).unwrap())
            .collect();
        let cfg = VerifyConfig::default();
        let pair = (&w.char_addresses[0], &w.char_addresses[1]);
        let report = verify_wake_persistence(&wake, &probes, pair, &cfg, wake_cfg.boundary_tol).unwrap();
        assert_eq!(report.verdict, Outcome::Pass, "{}", report.summary());
        let outside = [Parameter::real(-10.0)];
        assert!(matches!(
            verify_wake_persistence(&wake, &outside, pair, &cfg, wake_cfg.boundary_tol),
            Err(VerifyError::Precondition(_))
        ));
    }

    #[test]
    fn order_and_bound_reports() {
        let pairs = vec![(addr("|0"), addr("|1")), (addr("|0,1"), addr("|0,2")), (addr("|2,-1"), addr("|1,2"))];
        let report = verify_vertical_order(Parameter::real(-2.0), &pairs, 100.0, &VerifyConfig::default()).unwrap();
        assert_eq!(report.verdict, Outcome::Pass, "{}", report.summary());
        assert_eq!(report.cases.len(), 6);
        let trace = TraceConfig { t_end: 0.5, ..TraceConfig::default() };
        let bound = verify_parameter_bound(&ExternalAddress::constant(403), &trace).unwrap();
        assert_eq!(bound.verdict, Outcome::Pass);
        assert!(verify_parameter_bound(&ExternalAddress::constant(402), &trace).is_err());
    }

    #[test]
    fn numerics_exclude_wall_time() {
        let k = Parameter::real(-2.0);
        let a = verify_theorem1(k, &[addr("|0")], &VerifyConfig::default()).unwrap();
        let mut b = a.clone();
        b.wall_time_s += 1.0;
        assert_eq!(a.numerics(), b.numerics());
        assert!(a.numerics().get("wall_time_s").is_none());
        assert!(a.summary().contains("theorem1"));
    }
}
