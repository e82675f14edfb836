//! Parameter rays `G_s`, their parabolic landing points, hyperbolic
//! components and wakes.
//!
//! A point of `G_s` at potential `t` is a root of
//! `Φ(κ, t) = g_s^κ(t) - κ`; rays are followed by predictor-corrector
//! continuation in `log t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::{enumerate_periodic, ExternalAddress};
use crate::dynamics::{
    apply, classify_singular_orbit, growth_iter, orbit_jet, orbit_through, polish_periodic_point,
    ClassifyTol, NewtonSettings, Parameter, Rect, SingularOrbitConfig, SingularVerdict,
};
use crate::numeric::{is_finite, C64, TAU};
use crate::rays::{
    eval_ray, land_ray, position_from_sign, ray_separation, LandingConfig, OrderResolution, RayError, RayEvalConfig,
    VerticalOrder,
};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ParameterError {
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("continuation stalled at t = {t:e}")]
    ContinuationStalled { t: f64, last: Option<ParamSample> },
    #[error("parabolic polish diverged: {0}")]
    PolishDiverged(String),
    #[error("polished parabolic has ray period {found}, expected {expected}")]
    PeriodMismatch { expected: usize, found: usize },
    #[error("bound hypothesis not met: M = {m} but needs M > {needed:e}")]
    HypothesisNotMet { m: i64, needed: f64 },
    #[error("address {0} is not periodic")]
    NotPeriodic(String),
    #[error("component root not found: {0}")]
    RootNotFound(String),
    #[error("characteristic rays not found with entries up to {m_max}")]
    RaysNotFound { m_max: u32 },
    #[error("degenerate wake boundary")]
    DegeneratePolyline,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSample {
    pub t: f64,
    pub kappa: C64,
    /// `|Φ(κ, t)|` at the accepted point.
    pub residual: f64,
    /// Size of the last Newton correction in `κ`.
    pub correction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicParameter {
    pub kappa: C64,
    pub orbit_period: usize,
    pub ray_period: usize,
    pub orbit_point: C64,
    pub multiplier: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRayTrace {
    pub address: ExternalAddress,
    pub samples: Vec<ParamSample>,
    pub t_min_reached: f64,
    pub landing: Option<ParabolicParameter>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// Geometric step factor in `t`.
    pub ratio: f64,
    /// Accepted Newton correction in `κ`, relative to `1 + |κ|`.
    pub corrector_tol: f64,
    pub max_corrector_iter: usize,
    /// How often a failed step may be split in half (in `log t`).
    pub max_refinements: usize,
    pub ray: RayEvalConfig,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            t_start: 20.0,
            t_end: 1e-3,
            ratio: 0.8,
            corrector_tol: 1e-10,
            max_corrector_iter: 12,
            max_refinements: 30,
            ray: RayEvalConfig::default(),
        }
    }
}

impl TraceConfig {
    /// Ray settings deep enough for potentials down to `t_end`: below `t`
    /// roughly `2/t` pushes are needed before `F^k(t)` leaves the unit scale.
    pub fn ray_config(&self) -> RayEvalConfig {
        let needed = (4.0 / self.t_end).ceil() as usize + 200;
        RayEvalConfig { max_depth: self.ray.max_depth.max(needed), ..self.ray }
    }

    fn validate(&self) -> Result<(), ParameterError> {
        let ok = self.t_start > self.t_end
            && self.t_end > 0.0
            && self.t_start.is_finite()
            && self.ratio > 0.0
            && self.ratio < 1.0
            && self.corrector_tol > 0.0
            && self.max_corrector_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(ParameterError::InvalidArgument(format!("bad trace configuration {self:?}")))
        }
    }
}

fn phi(kappa: C64, s: &ExternalAddress, t: f64, ray: &RayEvalConfig) -> Result<C64, ParameterError> {
    let p = Parameter::new(kappa).map_err(|e| ParameterError::InvalidArgument(e.to_string()))?;
    Ok(eval_ray(p, s, t, ray)?.z - kappa)
}

/// Newton in `κ` on `Φ(·, t)` with a central-difference derivative of step
/// `h`.
///
/// Near a parabolic landing point `Φ` is badly conditioned (its
/// `κ`-derivative grows like the passage time through the parabolic
/// bottleneck), so a point is accepted when the Newton correction, not the
/// residual, is below `corrector_tol`.
fn correct(
    guess: C64,
    s: &ExternalAddress,
    t: f64,
    h: f64,
    cfg: &TraceConfig,
    ray: &RayEvalConfig,
) -> Result<ParamSample, ParameterError> {
    let mut kappa = guess;
    let mut value = phi(kappa, s, t, ray)?;
    let mut step_norm = f64::INFINITY;
    for _ in 0..cfg.max_corrector_iter {
        let forward = phi(kappa + h, s, t, ray)?;
        let backward = phi(kappa - h, s, t, ray)?;
        let derivative = (forward - backward) / (2.0 * h);
        if derivative.norm() == 0.0 || !is_finite(derivative) {
            break;
        }
        let step = value / derivative;
        kappa -= step;
        value = phi(kappa, s, t, ray)?;
        step_norm = step.norm();
        if step_norm < 1e-14 * (1.0 + kappa.norm()) {
            break;
        }
    }
    let tol = cfg.corrector_tol * (1.0 + kappa.norm());
    if !(step_norm < tol) {
        return Err(ParameterError::ContinuationStalled { t, last: None });
    }
    // a derivative taken across a nearby singularity of Φ can fake
    // convergence; confirm it with a step eight times smaller
    let coarse = (phi(kappa + h, s, t, ray)? - phi(kappa - h, s, t, ray)?) / (2.0 * h);
    let fine = (phi(kappa + h / 8.0, s, t, ray)? - phi(kappa - h / 8.0, s, t, ray)?) / (h / 4.0);
    if (coarse - fine).norm() > 0.1 * fine.norm() || !(value.norm() < tol * fine.norm()) {
        return Err(ParameterError::ContinuationStalled { t, last: None });
    }
    Ok(ParamSample { t, kappa, residual: value.norm(), correction: step_norm })
}

/// Default finite-difference step in `κ`.
fn fd_step(kappa: C64) -> f64 {
    1e-6 * (1.0 + kappa.norm())
}

/// Linear extrapolation in `log t` from the last two samples.
fn predict(samples: &[ParamSample], t: f64) -> C64 {
    match samples {
        [] => C64::new(t, 0.0),
        [only] => only.kappa + (t - only.t),
        [.., a, b] => {
            let w = (t.ln() - b.t.ln()) / (b.t.ln() - a.t.ln());
            b.kappa + (b.kappa - a.kappa) * w
        }
    }
}

fn advance(
    samples: &mut Vec<ParamSample>,
    s: &ExternalAddress,
    t: f64,
    level: usize,
    cfg: &TraceConfig,
    ray: &RayEvalConfig,
) -> Result<(), ParameterError> {
    let last = *samples.last().expect("trace starts with one sample");
    let guess = predict(samples, t);
    let stride = (guess - last.kappa).norm();
    // Φ(·, t) is singular at the ray's own points κ(F^{jn}(t)), roughly
    // n·|dκ/dt|·t²/2 away; the difference step has to stay well inside that
    let n = s.exact_period().unwrap_or(1) as f64;
    let dlog = (last.t / t).ln();
    let basin = stride * t * n / (2.0 * dlog);
    let h = fd_step(guess).min(1e-3 * stride).min(1e-3 * basin).max(1e-14 * (1.0 + guess.norm()));
    let attempt = correct(guess, s, t, h, cfg, ray).and_then(|sample| {
        let allowed = stride + 1e-9 * (1.0 + last.kappa.norm());
        if (sample.kappa - guess).norm() <= allowed {
            Ok(sample)
        } else {
            Err(ParameterError::ContinuationStalled { t, last: None })
        }
    });
    match attempt {
        Ok(sample) => {
            samples.push(sample);
            Ok(())
        }
        Err(e) => {
            let mid = (last.t * t).sqrt();
            if level >= cfg.max_refinements || !(mid < last.t && mid > t) {
                return Err(match e {
                    ParameterError::Ray(r @ RayError::RayBroken { .. }) => ParameterError::Ray(r),
                    _ => ParameterError::ContinuationStalled { t, last: Some(last) },
                });
            }
            advance(samples, s, mid, level + 1, cfg, ray)?;
            advance(samples, s, t, level + 1, cfg, ray)
        }
    }
}

/// Potentials `t_start·ratio^k` above `t_end`, then `t_end` itself.
///
/// Computed as `exp(k ln ratio)` so that halving the step in `log t`
/// reproduces every second potential exactly.
pub fn trace_grid(cfg: &TraceConfig) -> Vec<f64> {
    let step = cfg.ratio.ln();
    let mut grid = Vec::new();
    for k in 0.. {
        let t = cfg.t_start * (step * k as f64).exp();
        if t <= cfg.t_end {
            break;
        }
        grid.push(t);
    }
    grid.push(cfg.t_end);
    grid
}

/// Follows `G_s` from `t_start` down to `t_end`.
pub fn trace_parameter_ray(s: &ExternalAddress, cfg: &TraceConfig) -> Result<ParameterRayTrace, ParameterError> {
    cfg.validate()?;
    let ray = cfg.ray_config();
    let grid = trace_grid(cfg);
    let guess = C64::new(cfg.t_start, TAU * s.entry(1) as f64);
    let first = correct(guess, s, cfg.t_start, fd_step(guess), cfg, &ray)?;
    let mut samples = vec![first];
    for &t in &grid[1..] {
        advance(&mut samples, s, t, 0, cfg, &ray)?;
    }
    Ok(ParameterRayTrace {
        address: s.clone(),
        t_min_reached: samples.last().map(|p| p.t).unwrap_or(cfg.t_start),
        samples,
        landing: None,
    })
}

fn solve_2x2(a: C64, b: C64, c: C64, d: C64, f: C64, g: C64) -> Option<(C64, C64)> {
    let det = a * d - b * c;
    if det.norm() == 0.0 || !is_finite(det) {
        return None;
    }
    Some(((f * d - b * g) / det, (a * g - c * f) / det))
}

fn param(kappa: C64) -> Option<Parameter> {
    Parameter::new(kappa).ok()
}

/// Newton on `{E_κ^n(z) - z, (E_κ^n)'(z) - target}` in `(z, κ)`.
///
/// Near satellite roots the system is singular and convergence is only
/// linear, hence the generous iteration count.
fn newton_parabolic(z0: C64, k0: C64, n: usize, target: C64) -> Option<(C64, C64)> {
    let (mut z, mut kappa) = (z0, k0);
    let unit = target == C64::new(1.0, 0.0);
    for _ in 0..200 {
        let jet = orbit_jet(param(kappa)?, z, n).ok()?;
        let lambda = jet.multiplier();
        let f1 = jet.value - z;
        let f2 = if unit { jet.multiplier_minus_one() } else { lambda - target };
        let (mut dz, mut dk) = solve_2x2(
            lambda - 1.0,
            jet.d_kappa,
            lambda * jet.partial_multiplier_sum,
            lambda * jet.d_kappa_sum,
            f1,
            f2,
        )?;
        let size = dz.norm().max(dk.norm());
        if size > 0.5 {
            dz *= 0.5 / size;
            dk *= 0.5 / size;
        }
        z -= dz;
        kappa -= dk;
        if !is_finite(z) || !is_finite(kappa) {
            return None;
        }
        if size < 1e-15 * (1.0 + z.norm() + kappa.norm()) {
            break;
        }
    }
    let jet = orbit_jet(param(kappa)?, z, n).ok()?;
    let f1 = (jet.value - z).norm();
    let f2 = if unit { jet.multiplier_minus_one() } else { jet.multiplier() - target }.norm();
    (f1 <= 1e-11 * (1.0 + z.norm()) && f2 <= 1e-7).then_some((z, kappa))
}

/// Distance below which an `n`-cycle counts as collapsed onto a shorter one.
const COLLAPSE_TOL: f64 = 1e-3;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polishes `(z, κ)` to a parabolic parameter whose cycle has ray period `n`.
///
/// When the `n`-cycle collapses onto a cycle of period `d < n` the
/// multiplier-one system degenerates; the result is then re-polished on the
/// `d`-cycle against the nearest primitive `n/d`-th root of unity.
pub fn polish_parabolic(z0: C64, kappa0: C64, n: usize, tol: ClassifyTol) -> Result<ParabolicParameter, ParameterError> {
    let diverged = |what: &str| ParameterError::PolishDiverged(what.to_string());
    let (mut z, mut kappa) = newton_parabolic(z0, kappa0, n, C64::new(1.0, 0.0)).ok_or_else(|| diverged("newton"))?;
    // the singular system only pins a collapsing cycle to about the square
    // root of its accuracy, so collapse is detected loosely
    for d in (1..n).filter(|d| n.is_multiple_of(*d)) {
        let p = param(kappa).ok_or_else(|| diverged("parameter"))?;
        let Ok(jet) = orbit_jet(p, z, d) else { continue };
        if (jet.value - z).norm() > COLLAPSE_TOL * (1.0 + z.norm()) {
            continue;
        }
        let q = n / d;
        let lambda = jet.multiplier();
        let omega = (1..q)
            .filter(|&j| gcd(j, q) == 1)
            .map(|j| C64::from_polar(1.0, TAU * j as f64 / q as f64))
            .min_by(|a, b| (a - lambda).norm().total_cmp(&(b - lambda).norm()));
        if let Some((zr, kr)) = omega.and_then(|w| newton_parabolic(z, kappa, d, w)) {
            (z, kappa) = (zr, kr);
            break;
        }
    }
    let p = param(kappa).ok_or_else(|| diverged("parameter"))?;
    let orbit = orbit_through(p, z, n, tol).map_err(|e| diverged(&e.to_string()))?;
    let parabolic = orbit.parabolic.ok_or_else(|| diverged("multiplier is not a root of unity"))?;
    Ok(ParabolicParameter {
        kappa,
        orbit_period: orbit.period,
        ray_period: parabolic.ray_period,
        orbit_point: z,
        multiplier: orbit.multiplier,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandParameterConfig {
    /// Largest accepted distance between the extrapolated trace end and the
    /// polished parameter.
    pub match_tol: f64,
    pub orbit_steps: usize,
    pub classify: ClassifyTol,
}

impl Default for LandParameterConfig {
    fn default() -> Self {
        Self { match_tol: 1e-2, orbit_steps: 10_000, classify: ClassifyTol::default() }
    }
}

/// Trace end extrapolated linearly to `t = 0`.
pub fn extrapolated_limit(trace: &ParameterRayTrace) -> Option<C64> {
    match trace.samples.as_slice() {
        [] => None,
        [only] => Some(only.kappa),
        [.., a, b] => Some(b.kappa - (b.kappa - a.kappa) * (b.t / (b.t - a.t))),
    }
}

/// Point on the orbit of `κ` closest to being `n`-periodic.
fn orbit_seed(kappa: Parameter, n: usize, steps: usize) -> Option<C64> {
    let mut z = kappa.value();
    let mut best: Option<(f64, C64)> = None;
    for _ in 0..steps {
        let Ok(image) = crate::dynamics::iterate(kappa, z, n) else { break };
        let gap = (image - z).norm();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, z));
        }
        z = match apply(kappa, z) {
            Ok(w) => w,
            Err(_) => break,
        };
    }
    best.map(|b| b.1)
}

/// Polishes the landing point of a traced periodic parameter ray.
pub fn land_parameter_ray(
    trace: &ParameterRayTrace,
    n: usize,
    cfg: &LandParameterConfig,
) -> Result<ParabolicParameter, ParameterError> {
    let period = trace.address.exact_period().ok_or_else(|| ParameterError::NotPeriodic(trace.address.to_string()))?;
    if period != n {
        return Err(ParameterError::InvalidArgument(format!("address has period {period}, not {n}")));
    }
    let last = trace.samples.last().ok_or(ParameterError::DegeneratePolyline)?;
    let limit = extrapolated_limit(trace).unwrap_or(last.kappa);
    let end = param(last.kappa).ok_or_else(|| ParameterError::InvalidArgument("trace end".into()))?;

    let mut seeds = Vec::new();
    if let Ok(est) = land_ray(end, &trace.address, &RayEvalConfig::default(), &LandingConfig::default()) {
        seeds.push(est.landing_point());
    }
    if let Some(z) = orbit_seed(end, n, cfg.orbit_steps) {
        seeds.push(z);
    }
    let mut mismatch = None;
    let mut last_error = ParameterError::PolishDiverged("no seed".into());
    for z in seeds {
        match polish_parabolic(z, limit, n, cfg.classify) {
            Ok(found) if (found.kappa - limit).norm() > cfg.match_tol => {
                last_error = ParameterError::PolishDiverged(format!("polished {} far from trace end", found.kappa));
            }
            Ok(found) if found.ray_period != n => {
                mismatch = Some(ParameterError::PeriodMismatch { expected: n, found: found.ray_period });
            }
            Ok(found) => return Ok(found),
            Err(e) => last_error = e,
        }
    }
    Err(mismatch.unwrap_or(last_error))
}

/// Trace followed by landing; the landing is recorded on the trace.
pub fn trace_and_land(
    s: &ExternalAddress,
    trace_cfg: &TraceConfig,
    land_cfg: &LandParameterConfig,
) -> Result<ParameterRayTrace, ParameterError> {
    let n = s.exact_period().ok_or_else(|| ParameterError::NotPeriodic(s.to_string()))?;
    let mut trace = trace_parameter_ray(s, trace_cfg)?;
    trace.landing = Some(land_parameter_ray(&trace, n, land_cfg)?);
    Ok(trace)
}

/// `F^{-(n-1)}(2πM) / 5`.
pub fn parameter_ray_bound(n: usize, m: i64) -> f64 {
    let steps = i32::try_from(n.saturating_sub(1)).unwrap_or(i32::MAX);
    growth_iter(-steps, TAU * m.unsigned_abs() as f64).unwrap_or(0.0) / 5.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub period: usize,
    pub max_entry: i64,
    pub bound: f64,
    pub samples: usize,
    pub min_modulus: f64,
    pub min_margin: f64,
    pub holds: bool,
}

/// Checks `|κ| > F^{-(n-1)}(2πM)/5` on every sample of a traced ray, under
/// the hypothesis `M > F^n(6)`.
pub fn check_parameter_ray_bound(s: &ExternalAddress, samples: &[ParamSample]) -> Result<BoundReport, ParameterError> {
    let n = s.exact_period().ok_or_else(|| ParameterError::NotPeriodic(s.to_string()))?;
    let m = s.max_abs_entry();
    let needed = growth_iter(i32::try_from(n).unwrap_or(i32::MAX), 6.0).unwrap_or(f64::INFINITY);
    if !((m as f64) > needed) {
        return Err(ParameterError::HypothesisNotMet { m, needed });
    }
    let bound = parameter_ray_bound(n, m);
    let min_modulus = samples.iter().map(|p| p.kappa.norm()).fold(f64::INFINITY, f64::min);
    let min_margin = min_modulus - bound;
    Ok(BoundReport {
        period: n,
        max_entry: m,
        bound,
        samples: samples.len(),
        min_modulus,
        min_margin,
        holds: !samples.is_empty() && min_margin > 0.0,
    })
}

/// Which of `G_s`, `G_r` is lower where both have real part `re`.
pub fn parameter_vertical_order(
    s: &ExternalAddress,
    r: &ExternalAddress,
    re: f64,
    cfg: &TraceConfig,
) -> Result<VerticalOrder, ParameterError> {
    if s == r {
        return Err(ParameterError::InvalidArgument("vertical order needs distinct addresses".into()));
    }
    if !(re >= 50.0) {
        return Err(ParameterError::InvalidArgument(format!("real part {re} is below 50")));
    }
    let ray = cfg.ray;
    let point = |a: &ExternalAddress| -> Result<ParamSample, ParameterError> {
        let mut t = re;
        let guess = C64::new(re, TAU * a.entry(1) as f64);
        let mut sample = correct(guess, a, t, fd_step(guess), cfg, &ray)?;
        for _ in 0..3 {
            t -= sample.kappa.re - re;
            sample = correct(sample.kappa, a, t, fd_step(sample.kappa), cfg, &ray)?;
        }
        Ok(sample)
    };
    let ps = point(s)?;
    let pr = point(r)?;
    let gap = ps.kappa.im - pr.kappa.im;
    let (position, resolution) = if gap.abs() > 1e-9 {
        (position_from_sign(gap), OrderResolution::Direct)
    } else {
        // κ_s - κ_r = d / (1 - ∂g_r/∂κ) with d the dynamic-plane separation
        // at κ_s; the derivative is exponentially small this far right.
        let kappa = param(ps.kappa).ok_or_else(|| ParameterError::InvalidArgument("kappa".into()))?;
        let sep = ray_separation(kappa, s, r, 0.5 * (ps.t + pr.t), &ray)?;
        (position_from_sign(sep.mantissa.im), OrderResolution::Separation)
    };
    Ok(VerticalOrder {
        position,
        t_s: ps.t,
        t_r: pr.t,
        im_s: ps.kappa.im,
        im_r: pr.kappa.im,
        resolution,
    })
}

/// Singular-orbit verdicts on a grid of cell centres; row 0 is the top row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentGrid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<SingularVerdict>,
}

impl ComponentGrid {
    pub fn cell_center(rect: &Rect, nx: usize, ny: usize, i: usize, j: usize) -> C64 {
        C64::new(
            rect.re_min + (i as f64 + 0.5) * rect.width() / nx as f64,
            rect.im_max - (j as f64 + 0.5) * rect.height() / ny as f64,
        )
    }

    pub fn verdict(&self, i: usize, j: usize) -> SingularVerdict {
        self.cells[j * self.nx + i]
    }

    pub fn count(&self, verdict: SingularVerdict) -> usize {
        self.cells.iter().filter(|&&v| v == verdict).count()
    }

    pub fn fraction(&self, verdict: SingularVerdict) -> f64 {
        self.count(verdict) as f64 / self.cells.len().max(1) as f64
    }
}

pub fn scan_components(
    rect: Rect,
    nx: usize,
    ny: usize,
    cfg: &SingularOrbitConfig,
) -> Result<ComponentGrid, ParameterError> {
    if !rect.is_valid() || nx == 0 || ny == 0 {
        return Err(ParameterError::InvalidArgument("empty scan grid".into()));
    }
    let cells = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let c = ComponentGrid::cell_center(&rect, nx, ny, idx % nx, idx / nx);
            match param(c) {
                Some(p) => classify_singular_orbit(p, cfg).verdict,
                None => SingularVerdict::Undecided,
            }
        })
        .collect();
    Ok(ComponentGrid { rect, nx, ny, cells })
}

/// A point of the attracting `n`-cycle, found along the singular orbit.
fn attracting_cycle_point(kappa: Parameter, n: usize, max_iter: usize) -> Option<C64> {
    let mut z = kappa.value();
    for j in 0..max_iter {
        if j % n == 0 {
            if let Ok(image) = crate::dynamics::iterate(kappa, z, n) {
                if (image - z).norm() < 1e-6 * (1.0 + z.norm()) {
                    return polish_periodic_point(kappa, z, n, NewtonSettings::default());
                }
            }
        }
        z = apply(kappa, z).ok()?;
    }
    None
}

/// Steps of the multiplier continuation from a component sample to its root.
const ROOT_PATH_STEPS: usize = 64;

/// Follows the attracting cycle of `sample` along the path on which its
/// log-multiplier `Σ z_i` moves straight to the nearest point of `2πiℤ`,
/// then polishes the parabolic endpoint.
pub fn component_root(sample: Parameter, n: usize, tol: ClassifyTol) -> Result<ParabolicParameter, ParameterError> {
    let not_found = |what: String| ParameterError::RootNotFound(what);
    match classify_singular_orbit(sample, &SingularOrbitConfig::default()).verdict {
        SingularVerdict::AttractingCycle(p) if p == n => {}
        other => return Err(not_found(format!("sample {sample} has verdict {other:?}"))),
    }
    let mut z = attracting_cycle_point(sample, n, 100_000).ok_or_else(|| not_found("cycle not located".into()))?;
    let mut kappa = sample.value();
    let start = orbit_jet(sample, z, n).map_err(|e| not_found(e.to_string()))?.log_multiplier;
    let end = C64::new(0.0, TAU * (start.im / TAU).round());

    let mut s = 0.0_f64;
    let mut ds = 1.0 / ROOT_PATH_STEPS as f64;
    let s_last = 1.0 - 1.0 / ROOT_PATH_STEPS as f64;
    while s < s_last {
        let s_next = (s + ds).min(s_last);
        let target = start * (1.0 - s_next) + end * s_next;
        match newton_log_multiplier(z, kappa, n, target) {
            Some((zn, kn)) => {
                z = zn;
                kappa = kn;
                s = s_next;
                ds = (ds * 2.0).min(1.0 / ROOT_PATH_STEPS as f64);
            }
            None => {
                ds *= 0.5;
                if ds < 1e-9 {
                    return Err(not_found(format!("multiplier continuation stalled at s = {s}")));
                }
            }
        }
    }
    let root = polish_parabolic(z, kappa, n, tol).map_err(|e| not_found(e.to_string()))?;
    if root.ray_period != n {
        return Err(ParameterError::PeriodMismatch { expected: n, found: root.ray_period });
    }
    Ok(root)
}

/// Newton on `{E^n(z) - z, Σ z_i - target}`.
fn newton_log_multiplier(z0: C64, k0: C64, n: usize, target: C64) -> Option<(C64, C64)> {
    let (mut z, mut kappa) = (z0, k0);
    for _ in 0..40 {
        let jet = orbit_jet(param(kappa)?, z, n).ok()?;
        let (dz, dk) = solve_2x2(
            jet.multiplier() - 1.0,
            jet.d_kappa,
            jet.partial_multiplier_sum,
            jet.d_kappa_sum,
            jet.value - z,
            jet.log_multiplier - target,
        )?;
        if dz.norm().max(dk.norm()) > 0.5 {
            return None;
        }
        z -= dz;
        kappa -= dk;
        if dz.norm().max(dk.norm()) < 1e-14 * (1.0 + z.norm() + kappa.norm()) {
            let jet = orbit_jet(param(kappa)?, z, n).ok()?;
            let ok = (jet.value - z).norm() < 1e-10 * (1.0 + z.norm()) && (jet.log_multiplier - target).norm() < 1e-8;
            return ok.then_some((z, kappa));
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WakeConfig {
    pub trace: TraceConfig,
    pub land: LandParameterConfig,
    /// Landing distance from the root within which a ray is characteristic.
    pub match_tol: f64,
    /// Distance from the boundary reported as on the boundary.
    pub boundary_tol: f64,
    pub classify: ClassifyTol,
}

impl Default for WakeConfig {
    fn default() -> Self {
        Self {
            trace: TraceConfig { t_end: 0.01, ..TraceConfig::default() },
            land: LandParameterConfig::default(),
            match_tol: 1e-4,
            boundary_tol: 1e-6,
            classify: ClassifyTol::default(),
        }
    }
}

/// Right end of the wake boundary polygon.
pub const WAKE_TRUNCATION_RE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedWake {
    pub component_period: usize,
    pub root: ParabolicParameter,
    /// Characteristic addresses, lexicographically ordered.
    pub char_addresses: [ExternalAddress; 2],
    pub boundary: [ParameterRayTrace; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Wake {
    /// The period-one component has no characteristic rays.
    WholePlane,
    Bounded(BoundedWake),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeMembership {
    Inside,
    Outside,
    OnBoundaryTol,
}

impl BoundedWake {
    /// Closed boundary polygon: along the first ray from the far right to the
    /// root, back out along the second, closed by a vertical segment at
    /// `Re = WAKE_TRUNCATION_RE`.
    pub fn boundary_polygon(&self) -> Result<Vec<C64>, ParameterError> {
        let [a, b] = &self.boundary;
        let (Some(fa), Some(fb)) = (a.samples.first(), b.samples.first()) else {
            return Err(ParameterError::DegeneratePolyline);
        };
        let mut poly = vec![C64::new(WAKE_TRUNCATION_RE, fa.kappa.im)];
        poly.extend(a.samples.iter().map(|p| p.kappa));
        poly.push(self.root.kappa);
        poly.extend(b.samples.iter().rev().map(|p| p.kappa));
        poly.push(C64::new(WAKE_TRUNCATION_RE, fb.kappa.im));
        if poly.iter().any(|z| !is_finite(*z)) {
            return Err(ParameterError::DegeneratePolyline);
        }
        Ok(poly)
    }
}

fn segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    let u = if len2 == 0.0 { 0.0 } else { (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0) };
    (p - (a + ab * u)).norm()
}

/// Even-odd crossing test against the closed polygon.
fn inside_polygon(p: C64, poly: &[C64]) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if (a.im > p.im) != (b.im > p.im) {
            let x = a.re + (p.im - a.im) * (b.re - a.re) / (b.im - a.im);
            if p.re < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn wake_membership(kappa: Parameter, wake: &Wake, boundary_tol: f64) -> Result<WakeMembership, ParameterError> {
    let bounded = match wake {
        Wake::WholePlane => return Ok(WakeMembership::Inside),
        Wake::Bounded(w) => w,
    };
    let poly = bounded.boundary_polygon()?;
    let p = kappa.value();
    let near = (0..poly.len())
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min);
    Ok(if near <= boundary_tol {
        WakeMembership::OnBoundaryTol
    } else if inside_polygon(p, &poly) {
        WakeMembership::Inside
    } else {
        WakeMembership::Outside
    })
}

/// Finds the root of the period-`n` component containing `sample` and the
/// two period-`n` parameter rays landing there, trying addresses with
/// entries of absolute value up to `m_max`.
pub fn find_characteristic_rays(
    sample: Parameter,
    n: usize,
    m_max: u32,
    cfg: &WakeConfig,
) -> Result<Wake, ParameterError> {
    if n == 1 {
        return Ok(Wake::WholePlane);
    }
    let root = component_root(sample, n, cfg.classify)?;
    let mut found: Vec<ParameterRayTrace> = Vec::new();
    for m in 1..=m_max {
        let candidates: Vec<ExternalAddress> = enumerate_periodic(n, m)
            .into_iter()
            .filter(|s| s.exact_period() == Some(n) && s.max_abs_entry() == i64::from(m))
            .collect();
        let landed: Vec<ParameterRayTrace> = candidates
            .par_iter()
            .filter_map(|s| trace_and_land(s, &cfg.trace, &cfg.land).ok())
            .filter(|tr| tr.landing.is_some_and(|l| (l.kappa - root.kappa).norm() < cfg.match_tol))
            .collect();
        found.extend(landed);
        if found.len() >= 2 {
            break;
        }
    }
    if found.len() < 2 {
        return Err(ParameterError::RaysNotFound { m_max });
    }
    let distance = |tr: &ParameterRayTrace| tr.landing.map_or(f64::INFINITY, |l| (l.kappa - root.kappa).norm());
    found.sort_by(|a, b| distance(a).total_cmp(&distance(b)).then(a.address.cmp(&b.address)));
    found.truncate(2);
    found.sort_by(|a, b| a.address.cmp(&b.address));
    let [first, second]: [ParameterRayTrace; 2] = found.try_into().map_err(|_| ParameterError::RaysNotFound { m_max })?;
    Ok(Wake::Bounded(BoundedWake {
        component_period: n,
        root,
        char_addresses: [first.address.clone(), second.address.clone()],
        boundary: [first, second],
    }))
}
