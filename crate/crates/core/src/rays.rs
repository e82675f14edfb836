//! Dynamic rays `g_s^κ(t)` by inverse-branch pullback.
//!
//! A ray point is computed by pushing `t` forward under `F(t) = exp(t) - 1`
//! until it is far to the right, anchoring there at `F^N(t) + 2πi·s_{N+1}`,
//! and pulling back `N` times through the branches of `log(w - κ)` selected by
//! the address. All intermediate points are stored as offsets
//! `δ_k = z_k - F^k(t) - 2πi·s_{k+1}`, so the pullback only ever needs
//! `exp(-F^{k-1}(t))` and never overflows, and exponentially small offsets keep
//! full relative precision.
//!
//! Fixed strip branches are only right while the ray's forward images stay in
//! their strips. Landing and polylines go through [`RayContinuation`], which
//! follows the branches continuously in `t`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::ExternalAddress;
use crate::dynamics::{
    apply, growth, orbit_through, polish_periodic_point, ClassifyTol, DynamicsError, NewtonSettings,
    Parameter, PeriodicOrbit,
};
use crate::numeric::{is_finite, ln_1p, C64, EXP_RE_MAX, TAU};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum RayError {
    /// The pullback came within `broken_eps` of the singular value.
    #[error("ray broken: pullback hit the singular value at depth {depth}")]
    RayBroken { depth: usize },
    #[error("pullback depth saturated at {depth} (last change {change:e})")]
    DepthSaturated { depth: usize, change: f64 },
    #[error("orbit overflow at Re z = {re}")]
    OrbitOverflow { re: f64 },
    #[error("landing not converged after {steps} samples (accumulation diameter {diameter:e}, t = {t_min:e})")]
    NotConverged { steps: usize, diameter: f64, t_min: f64 },
    #[error("address {0} is not periodic")]
    NotPeriodic(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<DynamicsError> for RayError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::OrbitOverflow(re) => RayError::OrbitOverflow { re },
            other => RayError::InvalidArgument(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayEvalConfig {
    /// Target accuracy of a ray point.
    pub tol: f64,
    pub max_depth: usize,
    /// Anchor at `F^N(t) + 2πi·s_{N+1}` rather than at `F^N(t)`.
    pub anchor_shift: bool,
    pub broken_eps: f64,
}

impl Default for RayEvalConfig {
    fn default() -> Self {
        Self { tol: 1e-11, max_depth: 200, anchor_shift: true, broken_eps: 1e-8 }
    }
}

impl RayEvalConfig {
    pub fn validate(&self) -> Result<(), RayError> {
        if !(self.tol > 0.0) || self.max_depth < 1 || !(self.broken_eps > 0.0) {
            return Err(RayError::InvalidArgument(format!("bad ray configuration {self:?}")));
        }
        Ok(())
    }
}

/// Number of extra levels used by the depth-stability check.
pub const DEPTH_PROBE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySample {
    pub t: f64,
    pub z: C64,
    /// `z - t - 2πi·s_1`, carried at full relative precision.
    pub offset: C64,
    pub depth_used: usize,
    /// `|E_κ(z) - g_{σs}(F(t))|` when it was computed.
    pub residual: Option<f64>,
}

/// `F^k(t)` for `k = 0..=depth`; entries past the range of `f64` are `+inf`.
fn growth_levels(t: f64, depth: usize) -> Vec<f64> {
    let mut levels = Vec::with_capacity(depth + 1);
    let mut x = t;
    levels.push(x);
    for _ in 0..depth {
        x = if x > EXP_RE_MAX { f64::INFINITY } else { growth(x) };
        levels.push(x);
    }
    levels
}

fn strip_center(entry: i64) -> C64 {
    C64::new(0.0, TAU * entry as f64)
}

/// Smallest depth whose anchor lies right of `2πM + |κ| + 20`.
fn threshold_depth(kappa: C64, s: &ExternalAddress, t: f64, max_depth: usize) -> Option<usize> {
    let threshold = TAU * s.max_abs_entry() as f64 + kappa.norm() + 20.0;
    let mut x = t;
    for n in 0..=max_depth {
        if x >= threshold {
            return Some(n);
        }
        x = if x > EXP_RE_MAX { f64::INFINITY } else { growth(x) };
    }
    None
}

/// One pull-back step: from the offset at level `k` to the offset at `k - 1`.
#[inline]
fn pull_step(
    kappa: C64,
    delta: C64,
    next_entry: i64,
    level_below: f64,
    broken_eps: f64,
    depth: usize,
) -> Result<(C64, C64), RayError> {
    // z_k - κ = e^{F^{k-1}} (1 + u)
    let c = delta + C64::new(-1.0, TAU * next_entry as f64) - kappa;
    let scale = (-level_below).exp();
    let u = c * scale;
    let one_plus_u = u + 1.0;
    if scale > 0.0 && one_plus_u.norm() < broken_eps * scale {
        return Err(RayError::RayBroken { depth });
    }
    Ok((ln_1p(u), one_plus_u))
}

fn anchor_offset(s: &ExternalAddress, depth: usize, cfg: &RayEvalConfig) -> C64 {
    if cfg.anchor_shift {
        C64::new(0.0, 0.0)
    } else {
        -strip_center(s.entry(depth + 1))
    }
}

/// Offset `δ_0` of the depth-`depth` pullback.
fn pull_back(
    kappa: C64,
    s: &ExternalAddress,
    levels: &[f64],
    depth: usize,
    cfg: &RayEvalConfig,
) -> Result<C64, RayError> {
    let mut delta = anchor_offset(s, depth, cfg);
    for k in (1..=depth).rev() {
        delta = pull_step(kappa, delta, s.entry(k + 1), levels[k - 1], cfg.broken_eps, k)?.0;
        if !is_finite(delta) {
            return Err(RayError::OrbitOverflow { re: delta.re });
        }
    }
    Ok(delta)
}

fn ray_point(s: &ExternalAddress, t: f64, offset: C64) -> C64 {
    C64::new(t, 0.0) + strip_center(s.entry(1)) + offset
}

/// Evaluates `g_s^κ(t)`.
///
/// The depth starts at the smallest `N` with `F^N(t) >= 2πM(s) + |κ| + 20` and
/// grows in steps of five until two consecutive depths agree to `cfg.tol`.
pub fn eval_ray(
    kappa: Parameter,
    s: &ExternalAddress,
    t: f64,
    cfg: &RayEvalConfig,
) -> Result<RaySample, RayError> {
    cfg.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(RayError::InvalidArgument(format!("ray potential must be positive, got {t}")));
    }
    let k = kappa.value();
    let start = threshold_depth(k, s, t, cfg.max_depth).ok_or(RayError::DepthSaturated {
        depth: cfg.max_depth,
        change: f64::INFINITY,
    })?;
    let levels = growth_levels(t, cfg.max_depth);
    let mut depth = start;
    let mut current = pull_back(k, s, &levels, depth, cfg)?;
    loop {
        let deeper = depth + DEPTH_PROBE;
        if deeper > cfg.max_depth {
            let change = if depth == start { f64::INFINITY } else { f64::NAN };
            return Err(RayError::DepthSaturated { depth: cfg.max_depth, change });
        }
        let next = pull_back(k, s, &levels, deeper, cfg)?;
        let change = (next - current).norm();
        current = next;
        depth = deeper;
        if change < cfg.tol {
            break;
        }
    }
    Ok(RaySample { t, z: ray_point(s, t, current), offset: current, depth_used: depth, residual: None })
}

/// `eval_ray` plus the functional-equation defect `|E_κ(z) - g_{σs}(F(t))|`.
pub fn eval_ray_checked(
    kappa: Parameter,
    s: &ExternalAddress,
    t: f64,
    cfg: &RayEvalConfig,
) -> Result<RaySample, RayError> {
    let mut sample = eval_ray(kappa, s, t, cfg)?;
    let image_t = growth(t);
    if image_t.is_finite() && sample.z.re <= EXP_RE_MAX {
        let image = eval_ray(kappa, &s.shift(), image_t, cfg)?;
        let forward = apply(kappa, sample.z)?;
        sample.residual = Some((forward - image.z).norm());
    }
    Ok(sample)
}

/// Ray samples at the given potentials, stopping at the first failure.
/// Ratio of consecutive potentials in the continuation table.
pub const CONTINUATION_RATIO: f64 = 0.9;

/// Ray evaluation at small potentials by continuation in `t`.
///
/// The strip branches of `log(w - κ)` used by `eval_ray` are the right ones
/// only while no forward image of the ray crosses a strip boundary. Below
/// that, the ray is the analytic continuation of its far-right piece. Here
/// every shift `σ^k s` is tabulated on the potentials `T·q^i`, from the
/// far-right threshold `T` down, and each pullback step takes the branch
/// closest to the same ray at the nearest tabulated potential above.
#[derive(Clone, Debug)]
pub struct RayContinuation {
    kappa: Parameter,
    s: ExternalAddress,
    cfg: RayEvalConfig,
    top: f64,
    /// `rows[i][r]` is `g_{σ^r s}(T·q^i)`.
    rows: Vec<Vec<C64>>,
}

impl RayContinuation {
    pub fn new(kappa: Parameter, s: &ExternalAddress, cfg: &RayEvalConfig) -> Result<Self, RayError> {
        cfg.validate()?;
        let top = TAU * s.max_abs_entry() as f64 + kappa.value().norm() + 20.0;
        let mut family = Self { kappa, s: s.clone(), cfg: *cfg, top, rows: Vec::new() };
        let row = (0..family.ray_count()).map(|r| family.eval_shift(r, top).map(|x| x.z)).collect::<Result<Vec<_>, _>>()?;
        family.rows.push(row);
        Ok(family)
    }

    pub fn address(&self) -> &ExternalAddress {
        &self.s
    }

    fn ray_count(&self) -> usize {
        self.s.preperiod().len() + self.s.period_block().len()
    }

    /// Table index of `σ^k s`.
    fn ray_index(&self, k: usize) -> usize {
        let pre = self.s.preperiod().len();
        if k < pre {
            k
        } else {
            pre + (k - pre) % self.s.period_block().len()
        }
    }

    fn potential(&self, i: usize) -> f64 {
        self.top * CONTINUATION_RATIO.powi(i as i32)
    }

    /// Tabulated point of ray `r` at the smallest filled potential `>= tau`,
    /// or `None` above the table, where the strip branch is correct.
    fn reference(&self, r: usize, tau: f64) -> Option<C64> {
        if !(tau < self.top) {
            return None;
        }
        let mut i = ((self.top / tau).ln() / -CONTINUATION_RATIO.ln()).floor() as usize;
        i = i.min(self.rows.len() - 1);
        while i > 0 && self.potential(i) < tau {
            i -= 1;
        }
        Some(self.rows[i][r])
    }

    fn pull(&self, r: usize, levels: &[f64], depth: usize) -> Result<C64, RayError> {
        let k = self.kappa.value();
        let mut delta = anchor_offset(&self.s.shift_by(r), depth, &self.cfg);
        for j in (1..=depth).rev() {
            delta = pull_step(k, delta, self.s.entry(r + j + 1), levels[j - 1], self.cfg.broken_eps, j)?.0;
            let level = j - 1;
            if let Some(reference) = self.reference(self.ray_index(r + level), levels[level]) {
                let z = C64::new(levels[level], TAU * self.s.entry(r + level + 1) as f64) + delta;
                delta.im += TAU * ((reference.im - z.im) / TAU).round();
            }
            if !is_finite(delta) {
                return Err(RayError::OrbitOverflow { re: delta.re });
            }
        }
        Ok(delta)
    }

    /// `g_{σ^r s}(t)` with the depth chosen as in `eval_ray`.
    fn eval_shift(&self, r: usize, t: f64) -> Result<RaySample, RayError> {
        let max_depth = self.cfg.max_depth.max((4.0 / t).ceil() as usize + 200);
        let shifted = self.s.shift_by(r);
        let k = self.kappa.value();
        let start = threshold_depth(k, &shifted, t, max_depth)
            .ok_or(RayError::DepthSaturated { depth: max_depth, change: f64::INFINITY })?;
        let levels = growth_levels(t, max_depth);
        let mut depth = start;
        let mut current = self.pull(r, &levels, depth)?;
        loop {
            let deeper = depth + DEPTH_PROBE;
            if deeper > max_depth {
                return Err(RayError::DepthSaturated { depth: max_depth, change: f64::NAN });
            }
            let next = self.pull(r, &levels, deeper)?;
            let change = (next - current).norm();
            current = next;
            depth = deeper;
            if change < self.cfg.tol {
                break;
            }
        }
        Ok(RaySample { t, z: ray_point(&shifted, t, current), offset: current, depth_used: depth, residual: None })
    }

    /// Fills the table down to the last potential `>= t`.
    fn extend_to(&mut self, t: f64) -> Result<(), RayError> {
        while self.potential(self.rows.len()) >= t {
            let tau = self.potential(self.rows.len());
            let row = (0..self.ray_count()).map(|r| self.eval_shift(r, tau).map(|x| x.z)).collect::<Result<Vec<_>, _>>()?;
            self.rows.push(row);
        }
        Ok(())
    }

    /// Evaluates `g_s^κ(t)`.
    pub fn eval(&mut self, t: f64) -> Result<RaySample, RayError> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(RayError::InvalidArgument(format!("ray potential must be positive, got {t}")));
        }
        self.extend_to(t)?;
        self.eval_shift(0, t)
    }

    /// `eval` plus the defect `|E_κ(z) - g_{σs}(F(t))|`.
    pub fn eval_checked(&mut self, t: f64) -> Result<RaySample, RayError> {
        let mut sample = self.eval(t)?;
        let image_t = growth(t);
        if image_t.is_finite() && sample.z.re <= EXP_RE_MAX {
            let image = self.eval_shift(self.ray_index(1), image_t)?;
            let forward = apply(self.kappa, sample.z)?;
            sample.residual = Some((forward - image.z).norm());
        }
        Ok(sample)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayPolyline {
    pub address: ExternalAddress,
    pub samples: Vec<RaySample>,
    pub stopped_by: Option<RayError>,
}

/// Samples `g_s^κ` at `potentials` (in any order), stopping at the first
/// failure.
pub fn ray_polyline(
    kappa: Parameter,
    s: &ExternalAddress,
    potentials: &[f64],
    cfg: &RayEvalConfig,
    with_residual: bool,
) -> RayPolyline {
    let mut samples = Vec::with_capacity(potentials.len());
    let mut stopped_by = None;
    let mut family = match RayContinuation::new(kappa, s, cfg) {
        Ok(f) => f,
        Err(e) => return RayPolyline { address: s.clone(), samples, stopped_by: Some(e) },
    };
    for &t in potentials {
        let result = if with_residual { family.eval_checked(t) } else { family.eval(t) };
        match result {
            Ok(sample) => samples.push(sample),
            Err(e) => {
                stopped_by = Some(e);
                break;
            }
        }
    }
    RayPolyline { address: s.clone(), samples, stopped_by }
}

/// Geometric grid of `count` potentials from `t_max` down to `t_min`.
pub fn geometric_potentials(t_min: f64, t_max: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![t_max];
    }
    let ratio = (t_min / t_max).ln() / (count - 1) as f64;
    (0..count).map(|i| t_max * (ratio * i as f64).exp()).collect()
}

/// First `j < count` at which `Im E_κ^j(z)` leaves the strip of `s_{j+1}`.
///
/// Forward iteration stops early once the orbit is too far right to carry an
/// imaginary part in double precision.
pub fn strip_violation(kappa: Parameter, s: &ExternalAddress, z: C64, count: usize) -> Option<usize> {
    let mut w = z;
    for j in 0..count {
        let center = TAU * s.entry(j + 1) as f64;
        if !(w.im > center - PI && w.im <= center + PI) {
            return Some(j);
        }
        if w.re > 30.0 {
            return None;
        }
        w = apply(kappa, w).ok()?;
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandingConfig {
    pub t0: f64,
    pub ratio: f64,
    pub max_steps: usize,
    /// Consecutive differences that must all be small.
    pub window: usize,
    pub landing_tol: f64,
    /// Smallest potential sampled.
    pub t_min: f64,
    pub classify: ClassifyTol,
}

impl Default for LandingConfig {
    fn default() -> Self {
        Self { t0: 1.0, ratio: 0.5, max_steps: 60, window: 3, landing_tol: 1e-6, t_min: 1e-5, classify: ClassifyTol::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandingMethod {
    /// Cauchy test passed on the ray points themselves.
    Direct,
    /// Cauchy test passed after eliminating the term linear in `t`, as for
    /// rays entering a multiplier-one point.
    Extrapolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandingEstimate {
    pub limit: C64,
    pub orbit: PeriodicOrbit,
    pub t_sequence: Vec<(f64, C64)>,
    pub converged: bool,
    pub matched_distance: f64,
    pub method: LandingMethod,
}

impl LandingEstimate {
    /// The orbit point the ray lands on.
    pub fn landing_point(&self) -> C64 {
        self.orbit
            .points
            .iter()
            .copied()
            .min_by(|a, b| (a - self.limit).norm().total_cmp(&(b - self.limit).norm()))
            .unwrap_or(self.limit)
    }
}

fn cauchy_settled(points: &[C64], window: usize, eps: f64) -> bool {
    points.len() > window
        && points[points.len() - window - 1..]
            .windows(2)
            .all(|w| (w[1] - w[0]).norm() < eps)
}

fn diameter(points: &[C64]) -> f64 {
    let mut d: f64 = 0.0;
    for a in points {
        for b in points {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// Lands a periodic ray: samples it along `t_k = t0·ρ^k`, detects Cauchy
/// convergence, and polishes the limit to a periodic orbit.
pub fn land_ray(
    kappa: Parameter,
    s: &ExternalAddress,
    cfg: &RayEvalConfig,
    landing: &LandingConfig,
) -> Result<LandingEstimate, RayError> {
    let n = s.exact_period().ok_or_else(|| RayError::NotPeriodic(s.to_string()))?;
    if !(landing.ratio > 0.0 && landing.ratio < 1.0) || !(landing.landing_tol > 0.0) || !(landing.t_min > 0.0) {
        return Err(RayError::InvalidArgument(format!("bad landing configuration {landing:?}")));
    }
    let eps = landing.landing_tol / 4.0;
    let mut family = RayContinuation::new(kappa, s, cfg)?;
    let mut seq: Vec<(f64, C64)> = Vec::new();
    let mut t = landing.t0;
    for _ in 0..landing.max_steps {
        if t < landing.t_min {
            break;
        }
        match family.eval(t) {
            Ok(sample) => seq.push((t, sample.z)),
            Err(RayError::DepthSaturated { .. }) => break,
            Err(e) => return Err(e),
        }
        let zs: Vec<C64> = seq.iter().map(|p| p.1).collect();
        if cauchy_settled(&zs, landing.window, eps) {
            if let Some(est) = finish_landing(kappa, n, zs[zs.len() - 1], &seq, LandingMethod::Direct, landing) {
                return Ok(est);
            }
        }
        t *= landing.ratio;
    }

    let zs: Vec<C64> = seq.iter().map(|p| p.1).collect();
    let rho = landing.ratio;
    let extrapolated: Vec<C64> = zs.windows(2).map(|w| (w[1] - w[0] * rho) / (1.0 - rho)).collect();
    if cauchy_settled(&extrapolated, landing.window, eps) {
        if let Some(est) = finish_landing(
            kappa,
            n,
            extrapolated[extrapolated.len() - 1],
            &seq,
            LandingMethod::Extrapolated,
            landing,
        ) {
            return Ok(est);
        }
    }
    let tail = &zs[zs.len().saturating_sub(landing.window + 1)..];
    Err(RayError::NotConverged {
        steps: seq.len(),
        diameter: diameter(tail),
        t_min: seq.last().map(|p| p.0).unwrap_or(landing.t0),
    })
}

fn finish_landing(
    kappa: Parameter,
    n: usize,
    limit: C64,
    seq: &[(f64, C64)],
    method: LandingMethod,
    landing: &LandingConfig,
) -> Option<LandingEstimate> {
    let root = polish_periodic_point(kappa, limit, n, NewtonSettings::default())?;
    let orbit = orbit_through(kappa, root, n, landing.classify).ok()?;
    let matched_distance = orbit.distance_to(limit);
    (matched_distance < landing.landing_tol).then(|| LandingEstimate {
        limit,
        orbit,
        t_sequence: seq.to_vec(),
        converged: true,
        matched_distance,
        method,
    })
}

/// Exact difference `g_s(t) - g_r(t)` in extended-exponent form
/// `mantissa · exp(log_scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledDifference {
    pub mantissa: C64,
    pub log_scale: f64,
}

impl ScaledDifference {
    fn zero() -> Self {
        Self { mantissa: C64::new(0.0, 0.0), log_scale: 0.0 }
    }

    fn normalized(value: C64, log_scale: f64) -> Self {
        let r = value.norm();
        if r == 0.0 {
            Self::zero()
        } else {
            Self { mantissa: value / r, log_scale: log_scale + r.ln() }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == C64::new(0.0, 0.0)
    }

    /// The difference in plain double precision (may underflow to zero).
    pub fn value(&self) -> C64 {
        self.mantissa * self.log_scale.exp()
    }
}

/// Pulls two rays back side by side and tracks their difference without
/// underflow. The sign of the imaginary part of the result decides which ray
/// is above the other at potential `t`.
pub fn ray_separation(
    kappa: Parameter,
    s: &ExternalAddress,
    r: &ExternalAddress,
    t: f64,
    cfg: &RayEvalConfig,
) -> Result<ScaledDifference, RayError> {
    let k = kappa.value();
    let depth_s = threshold_depth(k, s, t, cfg.max_depth);
    let depth_r = threshold_depth(k, r, t, cfg.max_depth);
    let (Some(ds), Some(dr)) = (depth_s, depth_r) else {
        return Err(RayError::DepthSaturated { depth: cfg.max_depth, change: f64::INFINITY });
    };
    let first = s.first_difference(r).unwrap_or(0);
    let depth = ds.max(dr).max(first) + DEPTH_PROBE;
    let levels = growth_levels(t, depth);

    let mut delta_s = anchor_offset(s, depth, cfg);
    let mut delta_r = anchor_offset(r, depth, cfg);
    let jump = |k: usize| strip_center(s.entry(k)) - strip_center(r.entry(k));
    let mut diff = ScaledDifference::normalized(jump(depth + 1) + delta_s - delta_r, 0.0);
    for level in (1..=depth).rev() {
        let below = levels[level - 1];
        let (next_s, _) = pull_step(k, delta_s, s.entry(level + 1), below, cfg.broken_eps, level)?;
        let (next_r, one_plus_ur) = pull_step(k, delta_r, r.entry(level + 1), below, cfg.broken_eps, level)?;
        let step_jump = jump(level);
        diff = if diff.is_zero() {
            ScaledDifference::normalized(step_jump + next_s - next_r, 0.0)
        } else if diff.log_scale - below > -600.0 {
            let q = diff.mantissa * (diff.log_scale - below).exp() / one_plus_ur;
            let plain = step_jump + next_s - next_r;
            let via_ratio = step_jump + ln_1p(q);
            let value = if q.norm() < 0.5 && (via_ratio - plain).norm() < 1.0 { via_ratio } else { plain };
            ScaledDifference::normalized(value, 0.0)
        } else if step_jump != C64::new(0.0, 0.0) {
            ScaledDifference::normalized(step_jump, 0.0)
        } else {
            ScaledDifference::normalized(diff.mantissa / one_plus_ur, diff.log_scale - below)
        };
        delta_s = next_s;
        delta_r = next_r;
    }
    Ok(diff)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalPosition {
    Below,
    Above,
}

impl VerticalPosition {
    /// The position the lexicographic order predicts for `s` relative to `r`.
    pub fn from_lex(order: Ordering) -> Option<Self> {
        match order {
            Ordering::Less => Some(Self::Below),
            Ordering::Greater => Some(Self::Above),
            Ordering::Equal => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderResolution {
    /// Imaginary parts differ visibly in double precision.
    Direct,
    /// Decided by the extended-exponent ray separation.
    Separation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalOrder {
    pub position: VerticalPosition,
    pub t_s: f64,
    pub t_r: f64,
    pub im_s: f64,
    pub im_r: f64,
    pub resolution: OrderResolution,
}

/// Smallest imaginary-part gap trusted without the separation pullback.
const DIRECT_ORDER_GAP: f64 = 1e-9;

/// Potential at which `Re g_s(t) = re` (bisection; `Re g_s(t) = t + o(1)`).
fn potential_at_real_part(
    kappa: Parameter,
    s: &ExternalAddress,
    re: f64,
    cfg: &RayEvalConfig,
) -> Result<RaySample, RayError> {
    let (mut lo, mut hi) = ((re - 1.0).max(re * 0.5), re + 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval_ray(kappa, s, mid, cfg)?.z.re < re {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eval_ray(kappa, s, 0.5 * (lo + hi), cfg)
}

/// Which of the rays `g_s`, `g_r` is lower where their real parts equal `re`.
pub fn vertical_order(
    kappa: Parameter,
    s: &ExternalAddress,
    r: &ExternalAddress,
    re: f64,
    cfg: &RayEvalConfig,
) -> Result<VerticalOrder, RayError> {
    if s == r {
        return Err(RayError::InvalidArgument("vertical order needs distinct addresses".into()));
    }
    if !(re >= 50.0) {
        return Err(RayError::InvalidArgument(format!("real part {re} is below 50")));
    }
    let gs = potential_at_real_part(kappa, s, re, cfg)?;
    let gr = potential_at_real_part(kappa, r, re, cfg)?;
    let gap = gs.z.im - gr.z.im;
    let (position, resolution) = if gap.abs() > DIRECT_ORDER_GAP {
        (position_from_sign(gap), OrderResolution::Direct)
    } else {
        let sep = ray_separation(kappa, s, r, 0.5 * (gs.t + gr.t), cfg)?;
        (position_from_sign(sep.mantissa.im), OrderResolution::Separation)
    };
    Ok(VerticalOrder { position, t_s: gs.t, t_r: gr.t, im_s: gs.z.im, im_r: gr.z.im, resolution })
}

pub(crate) fn position_from_sign(x: f64) -> VerticalPosition {
    if x < 0.0 {
        VerticalPosition::Below
    } else {
        VerticalPosition::Above
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{find_periodic_points, PeriodicSearch, Rect, Stability};
    use proptest::prelude::*;

    fn addr(text: &str) -> ExternalAddress {
        text.parse().unwrap()
    }

    fn kappa(re: f64, im: f64) -> Parameter {
        Parameter::new(C64::new(re, im)).unwrap()
    }

    fn bisect_fixed_point(lo: f64, hi: f64) -> f64 {
        let g = |x: f64| x.exp() - 2.0 - x;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if g(a).signum() == g(m).signum() {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn zero_ray_of_real_parameter_is_real() {
        let cfg = RayEvalConfig::default();
        let s = addr("|0");
        let k = kappa(-2.0, 0.0);
        let sample = eval_ray_checked(k, &s, 3.0, &cfg).unwrap();
        assert_eq!(sample.z.im, 0.0);
        assert!(sample.z.re > 0.0);
        assert!(sample.residual.unwrap() < 1e-9);
        let image = eval_ray(k, &s, growth(3.0), &cfg).unwrap();
        assert!((apply(k, sample.z).unwrap() - image.z).norm() < 1e-9);
    }

    #[test]
    fn asymptotics_along_zero_ray() {
        let cfg = RayEvalConfig::default();
        for k in [kappa(-2.0, 0.0), kappa(0.5, 1.5), kappa(-1.0, -3.0)] {
            let d: Vec<f64> = [50.0, 100.0, 200.0]
                .iter()
                .map(|&t| {
                    let sample = eval_ray(k, &addr("|0"), t, &cfg).unwrap();
                    sample.offset.re.abs()
                })
                .collect();
            assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
            assert!(d[2] < 0.1);
        }
    }

    #[test]
    fn first_symbol_strip() {
        let z = eval_ray(kappa(-2.0, 0.0), &addr("|1"), 10.0, &RayEvalConfig::default()).unwrap().z;
        assert!(z.im > PI && z.im < 3.0 * PI);
    }

    #[test]
    fn invalid_inputs() {
        let cfg = RayEvalConfig::default();
        assert!(matches!(eval_ray(kappa(-2.0, 0.0), &addr("|0"), 0.0, &cfg), Err(RayError::InvalidArgument(_))));
        let bad = RayEvalConfig { tol: 0.0, ..cfg };
        assert!(eval_ray(kappa(-2.0, 0.0), &addr("|0"), 1.0, &bad).is_err());
        let shallow = RayEvalConfig { max_depth: 10, ..cfg };
        assert!(matches!(
            eval_ray(kappa(-2.0, 0.0), &addr("|0"), 0.05, &shallow),
            Err(RayError::DepthSaturated { .. })
        ));
    }

    #[test]
    fn broken_ray_detected() {
        // κ = g_0^κ(t) holds on the real axis for κ > -1; with κ = 0 the zero
        // ray passes through κ itself.
        let k = kappa(0.0, 0.0);
        let cfg = RayEvalConfig::default();
        let mut found = false;
        for i in 0..400 {
            let t = 0.05 + 0.01 * i as f64;
            if let Err(RayError::RayBroken { .. }) = eval_ray(k, &addr("|0"), t, &RayEvalConfig { broken_eps: 1e-2, ..cfg }) {
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn anchor_shift_does_not_change_points() {
        let k = kappa(-2.0, 0.5);
        let s = addr("|1,-2");
        let a = eval_ray(k, &s, 0.7, &RayEvalConfig::default()).unwrap();
        let b = eval_ray(k, &s, 0.7, &RayEvalConfig { anchor_shift: false, ..Default::default() }).unwrap();
        assert!((a.z - b.z).norm() < 1e-10);
    }

    #[test]
    fn depth_stability() {
        let k = kappa(-2.0, 0.5);
        for s in ["|0", "|1,-1", "|2,0,1"] {
            for t in [0.1, 0.5, 2.0] {
                let a = eval_ray(k, &addr(s), t, &RayEvalConfig::default()).unwrap();
                let b = eval_ray(k, &addr(s), t, &RayEvalConfig { max_depth: 400, ..Default::default() }).unwrap();
                assert!((a.z - b.z).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn monotone_real_zero_ray() {
        let cfg = RayEvalConfig::default();
        let k = kappa(-1.7, 0.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..60 {
            let t = 0.05 + 0.2 * i as f64;
            let z = eval_ray(k, &addr("|0"), t, &cfg).unwrap().z;
            assert_eq!(z.im, 0.0);
            assert!(z.re > prev);
            prev = z.re;
        }
    }

    #[test]
    fn lands_at_repelling_fixed_point() {
        let x = bisect_fixed_point(1.0, 1.2);
        let est = land_ray(kappa(-2.0, 0.0), &addr("|0"), &RayEvalConfig::default(), &LandingConfig::default())
            .unwrap();
        assert!(est.converged);
        assert_eq!(est.method, LandingMethod::Direct);
        assert!((est.landing_point() - C64::new(x, 0.0)).norm() < 1e-8);
        assert_eq!(est.orbit.stability, Stability::Repelling);
        assert!(est.orbit.multiplier.re > 3.0);
        assert!(est.matched_distance < 1e-6);
    }

    #[test]
    fn lands_at_parabolic_point() {
        let est = land_ray(kappa(-1.0, 0.0), &addr("|0"), &RayEvalConfig::default(), &LandingConfig::default())
            .unwrap();
        assert!(est.landing_point().norm() < 1e-12);
        assert!((est.orbit.multiplier - 1.0).norm() < 1e-12);
        assert!(est.orbit.is_parabolic());
        assert_eq!(est.method, LandingMethod::Extrapolated);
    }

    #[test]
    fn lands_in_upper_strip() {
        let k = kappa(-2.0, 0.0);
        let est = land_ray(k, &addr("|1"), &RayEvalConfig::default(), &LandingConfig::default()).unwrap();
        let z = est.landing_point();
        assert!(z.im > PI && z.im < 3.0 * PI);
        let set = find_periodic_points(k, 1, &PeriodicSearch::new(Rect::new(-5.0, 5.0, PI, 3.0 * PI), 20));
        assert_eq!(set.orbits.len(), 1);
        assert!(set.orbits[0].distance_to(z) < 1e-8);
        assert!(est.matched_distance < 1e-8);
    }

    #[test]
    fn landing_requires_periodic_address() {
        let err = land_ray(kappa(-2.0, 0.0), &addr("1|0"), &RayEvalConfig::default(), &LandingConfig::default());
        assert!(matches!(err, Err(RayError::NotPeriodic(_))));
    }

    #[test]
    fn landing_matches_periodic_points() {
        let k = kappa(-2.0, 0.3);
        let set = find_periodic_points(k, 2, &PeriodicSearch::new(Rect::new(-6.0, 6.0, -10.0, 10.0), 60));
        for s in ["|0,1", "|1,0", "|-1,0", "|0,-1", "|1,-1"] {
            let est = land_ray(k, &addr(s), &RayEvalConfig::default(), &LandingConfig::default()).unwrap();
            let best = set.orbits.iter().map(|o| o.distance_to(est.landing_point())).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "{s}: {best}");
        }
    }

    #[test]
    fn continuation_agrees_with_strip_branches_when_they_are_valid() {
        let cfg = RayEvalConfig { max_depth: 2000, ..RayEvalConfig::default() };
        for s in ["|0", "|1", "|0,1", "|-1,2"] {
            let mut family = RayContinuation::new(kappa(-2.0, 0.0), &addr(s), &cfg).unwrap();
            for t in [40.0, 3.0, 0.5, 0.05, 0.01] {
                let a = family.eval(t).unwrap();
                let b = eval_ray(kappa(-2.0, 0.0), &addr(s), t, &cfg).unwrap();
                assert!((a.z - b.z).norm() < 1e-12, "{s} at {t}");
            }
        }
    }

    fn newton_fixed_point(k: C64, mut z: C64) -> C64 {
        for _ in 0..100 {
            z -= (z.exp() + k - z) / (z.exp() - 1.0);
        }
        z
    }

    #[test]
    fn characteristic_rays_colanding_off_the_symmetry_line() {
        // these rays cross strip boundaries near their landing point
        let landing = LandingConfig::default();
        for (re, im, seed) in [(1.5, 3.0, C64::new(0.2, 3.0)), (3.0, 5.0, C64::new(0.9, 3.7)), (2.0, PI, C64::new(0.4, PI))] {
            let k = kappa(re, im);
            let fixed = newton_fixed_point(k.value(), seed);
            for s in ["|0,1", "|1,0"] {
                let est = land_ray(k, &addr(s), &RayEvalConfig::default(), &landing).unwrap();
                assert!((est.landing_point() - fixed).norm() < 1e-9, "{s} at {re}+{im}i");
                assert_eq!(est.orbit.period, 1);
            }
        }
    }

    #[test]
    fn polyline_residuals_stay_small_below_the_strip_regime() {
        let line = ray_polyline(kappa(1.5, 3.0), &addr("|1,0"), &geometric_potentials(1e-2, 10.0, 40), &RayEvalConfig::default(), true);
        assert!(line.stopped_by.is_none());
        for p in &line.samples {
            assert!(p.residual.unwrap() < 1e-9, "t = {}: {:?}", p.t, p.residual);
        }
    }

    #[test]
    fn vertical_order_examples() {
        let cfg = RayEvalConfig::default();
        for k in [kappa(-2.0, 0.0), kappa(-2.0, 0.5), kappa(0.0, 0.3)] {
            for (s, r) in [("|0", "|1"), ("|0,1", "|1,0"), ("|-1", "|0"), ("|0,1", "|0,2"), ("|0,1,1", "|0,1,2")] {
                let o = vertical_order(k, &addr(s), &addr(r), 100.0, &cfg).unwrap();
                assert_eq!(o.position, VerticalPosition::Below, "{s} vs {r} at {k}");
                let o = vertical_order(k, &addr(r), &addr(s), 100.0, &cfg).unwrap();
                assert_eq!(o.position, VerticalPosition::Above);
            }
        }
        assert!(vertical_order(kappa(-2.0, 0.0), &addr("|0"), &addr("|0"), 100.0, &cfg).is_err());
        assert!(vertical_order(kappa(-2.0, 0.0), &addr("|0"), &addr("|1"), 10.0, &cfg).is_err());
    }

    #[test]
    fn separation_matches_plain_difference() {
        let k = kappa(-2.0, 0.5);
        let cfg = RayEvalConfig::default();
        let (s, r) = (addr("|0,1"), addr("|0,-1"));
        for t in [0.5, 2.0, 4.0] {
            let sep = ray_separation(k, &s, &r, t, &cfg).unwrap();
            let plain = eval_ray(k, &s, t, &cfg).unwrap().z - eval_ray(k, &r, t, &cfg).unwrap().z;
            assert!((sep.value() - plain).norm() < 1e-9 * plain.norm().max(1e-12), "{t}");
        }
    }

    fn any_periodic() -> impl Strategy<Value = ExternalAddress> {
        prop::collection::vec(-2i64..=2, 1..=3).prop_map(|b| ExternalAddress::periodic(&b).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn functional_equation(re in -3.0f64..1.0, im in -2.0f64..2.0, s in any_periodic(), ti in 0usize..4) {
            let t = [0.5, 1.0, 2.0, 5.0][ti];
            let cfg = RayEvalConfig::default();
            match eval_ray_checked(kappa(re, im), &s, t, &cfg) {
                Ok(sample) => prop_assert!(sample.residual.unwrap() < 10.0 * cfg.tol.max(1e-10), "{:?}", sample),
                Err(RayError::RayBroken { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn strip_condition(re in -3.0f64..1.0, im in -2.0f64..2.0, s in any_periodic(), ti in 0usize..3) {
            let t = [0.5, 1.0, 2.0][ti];
            if let Ok(sample) = eval_ray(kappa(re, im), &s, t, &RayEvalConfig::default()) {
                prop_assert_eq!(strip_violation(kappa(re, im), &s, sample.z, 11), None);
            }
        }
    }
}
