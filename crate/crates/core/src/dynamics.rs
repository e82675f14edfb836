//! The exponential family `E_κ(z) = exp(z) + κ`: iteration, the growth model
//! `F(t) = exp(t) - 1`, periodic-point solving and stability classification.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{exp_m1, is_finite, lex_order, C64, EXP_RE_MAX, TAU};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("orbit overflow: Re z = {0} exceeds the exp-representable bound")]
    OrbitOverflow(f64),
    #[error("growth model overflow: F^{n}({t}) exceeds 1e300")]
    GrowthOverflow { n: i32, t: f64 },
    #[error("points do not form a cycle (defect {0:e})")]
    NotACycle(f64),
    #[error("non-finite parameter")]
    NonFinite,
}

/// The parameter `κ`, i.e. the singular value of `E_κ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "C64", into = "C64")]
pub struct Parameter(C64);

impl Parameter {
    pub fn new(kappa: C64) -> Result<Self, DynamicsError> {
        if is_finite(kappa) {
            Ok(Self(kappa))
        } else {
            Err(DynamicsError::NonFinite)
        }
    }

    pub fn real(x: f64) -> Self {
        Self::new(C64::new(x, 0.0)).expect("finite parameter")
    }

    pub fn value(self) -> C64 {
        self.0
    }
}

impl From<Parameter> for C64 {
    fn from(p: Parameter) -> C64 {
        p.0
    }
}

impl TryFrom<C64> for Parameter {
    type Error = DynamicsError;
    fn try_from(z: C64) -> Result<Self, Self::Error> {
        Parameter::new(z)
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::numeric::format_complex(self.0))
    }
}

/// `E_κ(z)`.
pub fn apply(kappa: Parameter, z: C64) -> Result<C64, DynamicsError> {
    if z.re > EXP_RE_MAX || !is_finite(z) {
        return Err(DynamicsError::OrbitOverflow(z.re));
    }
    Ok(z.exp() + kappa.0)
}

/// `E_κ^n(z)`.
pub fn iterate(kappa: Parameter, z: C64, n: usize) -> Result<C64, DynamicsError> {
    (0..n).try_fold(z, |w, _| apply(kappa, w))
}

/// `F(t) = exp(t) - 1`.
pub fn growth(t: f64) -> f64 {
    t.exp_m1()
}

/// `F^{-1}(t) = log(1 + t)`.
pub fn growth_inv(t: f64) -> f64 {
    t.ln_1p()
}

const GROWTH_CAP: f64 = 1e300;

/// `F^n(t)`; negative `n` iterates the inverse.
pub fn growth_iter(n: i32, t: f64) -> Result<f64, DynamicsError> {
    let mut x = t;
    if n >= 0 {
        for _ in 0..n {
            x = growth(x);
            if !(x <= GROWTH_CAP) {
                return Err(DynamicsError::GrowthOverflow { n, t });
            }
        }
    } else {
        for _ in 0..(-n) {
            x = growth_inv(x);
        }
    }
    Ok(x)
}

/// Value, multiplier and parameter-derivative of `E_κ^n` at one point.
#[derive(Clone, Copy, Debug)]
pub struct OrbitJet {
    /// `E_κ^n(z)`
    pub value: C64,
    /// `Σ_{i<n} E_κ^i(z)`; the multiplier is `exp` of this.
    pub log_multiplier: C64,
    /// `Σ_{i<n} (E_κ^i)'(z)`, used by derivatives of the multiplier in `z`.
    pub partial_multiplier_sum: C64,
    /// `∂E_κ^n(z)/∂κ`
    pub d_kappa: C64,
    /// `Σ_{i<n} ∂E_κ^i(z)/∂κ`
    pub d_kappa_sum: C64,
}

impl OrbitJet {
    pub fn multiplier(&self) -> C64 {
        self.log_multiplier.exp()
    }

    /// `(E^n)'(z) - 1` without cancellation near 1.
    pub fn multiplier_minus_one(&self) -> C64 {
        exp_m1(self.log_multiplier)
    }
}

pub fn orbit_jet(kappa: Parameter, z: C64, n: usize) -> Result<OrbitJet, DynamicsError> {
    let mut w = z;
    let mut log_mult = C64::new(0.0, 0.0);
    let mut partial = C64::new(1.0, 0.0);
    let mut partial_sum = C64::new(0.0, 0.0);
    let mut dk = C64::new(0.0, 0.0);
    let mut dk_sum = C64::new(0.0, 0.0);
    for _ in 0..n {
        partial_sum += partial;
        dk_sum += dk;
        log_mult += w;
        let e = if w.re > EXP_RE_MAX || !is_finite(w) {
            return Err(DynamicsError::OrbitOverflow(w.re));
        } else {
            w.exp()
        };
        partial *= e;
        dk = e * dk + 1.0;
        w = e + kappa.0;
    }
    if log_mult.re > EXP_RE_MAX || !is_finite(w) || !is_finite(dk) {
        return Err(DynamicsError::OrbitOverflow(log_mult.re));
    }
    Ok(OrbitJet {
        value: w,
        log_multiplier: log_mult,
        partial_multiplier_sum: partial_sum,
        d_kappa: dk,
        d_kappa_sum: dk_sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Repelling,
    Attracting,
    Indifferent,
}

/// Rational rotation `p/q` of a parabolic multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalRotation {
    pub p: u32,
    pub q: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTol {
    pub tol: f64,
    pub q_max: u32,
}

impl Default for ClassifyTol {
    fn default() -> Self {
        Self { tol: 1e-9, q_max: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub stability: Stability,
    pub parabolic: Option<RationalRotation>,
}

pub fn classify(multiplier: C64, tol: ClassifyTol) -> Classification {
    let r = multiplier.norm();
    let stability = if r > 1.0 + tol.tol {
        Stability::Repelling
    } else if r < 1.0 - tol.tol {
        Stability::Attracting
    } else {
        Stability::Indifferent
    };
    let parabolic = if stability == Stability::Indifferent {
        rational_rotation(multiplier, tol)
    } else {
        None
    };
    Classification { stability, parabolic }
}

fn rational_rotation(multiplier: C64, tol: ClassifyTol) -> Option<RationalRotation> {
    let theta = multiplier.arg().rem_euclid(TAU) / TAU;
    (1..=tol.q_max).find_map(|q| {
        let p = (theta * f64::from(q)).round() as u32 % q;
        let root = C64::from_polar(1.0, TAU * f64::from(p) / f64::from(q));
        ((multiplier - root).norm() < tol.tol).then_some(RationalRotation { p, q })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicData {
    pub p: u32,
    pub q: u32,
    /// Period of the repelling petals: `q` times the orbit period.
    pub ray_period: usize,
}

/// One periodic cycle; serializes as `{points, period, multiplier, stability}`
/// plus the parabolic record when present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<C64>,
    pub period: usize,
    pub multiplier: C64,
    pub stability: Stability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parabolic: Option<ParabolicData>,
}

impl PeriodicOrbit {
    /// Distance from `z` to the closest point of the cycle.
    pub fn distance_to(&self, z: C64) -> f64 {
        self.points
            .iter()
            .map(|p| (p - z).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_parabolic(&self) -> bool {
        self.parabolic.is_some()
    }

    pub fn is_repelling_or_parabolic(&self) -> bool {
        self.stability == Stability::Repelling || self.is_parabolic()
    }
}

/// Multiplier of a cycle, `exp(Σ z_i)` since `E_κ' = exp`.
pub fn multiplier(kappa: Parameter, points: &[C64]) -> Result<C64, DynamicsError> {
    let n = points.len();
    if n == 0 {
        return Err(DynamicsError::NotACycle(f64::INFINITY));
    }
    for i in 0..n {
        let next = points[(i + 1) % n];
        let image = apply(kappa, points[i])?;
        let defect = (image - next).norm();
        if !(defect <= CYCLE_TOL * (1.0 + next.norm())) {
            return Err(DynamicsError::NotACycle(defect));
        }
    }
    Ok(points.iter().sum::<C64>().exp())
}

const CYCLE_TOL: f64 = 1e-8;

/// Newton stopping rules shared by every periodic-point solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub rel_step: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { rel_step: 1e-13, max_iter: 60 }
    }
}

/// Residual below which a critical point of `E^n(z) - z` is accepted as a
/// double root (a multiplier-one parabolic point).
const DOUBLE_ROOT_RESIDUAL: f64 = 1e-14;
/// Multiplier distance from 1 that triggers the double-root refinement.
const NEAR_MULTIPLE_ROOT: f64 = 1e-3;

/// Newton's method on `E_κ^n(z) - z` from `z0`.
///
/// Near a multiplier-one point the root is double and plain Newton stalls at
/// `sqrt(eps)`; there the solver switches to Newton on `(E^n)'(z) - 1` and
/// accepts the result only if it is also a root of `E^n(z) - z`.
pub fn polish_periodic_point(
    kappa: Parameter,
    z0: C64,
    n: usize,
    settings: NewtonSettings,
) -> Option<C64> {
    let mut z = z0;
    let mut converged = false;
    let mut last_jet = None;
    for _ in 0..settings.max_iter {
        let jet = orbit_jet(kappa, z, n).ok()?;
        let fp = jet.multiplier_minus_one();
        if fp == C64::new(0.0, 0.0) {
            last_jet = Some(jet);
            converged = jet.value == z;
            break;
        }
        let step = (jet.value - z) / fp;
        z -= step;
        if !is_finite(z) {
            return None;
        }
        last_jet = Some(jet);
        if step.norm() < settings.rel_step * (1.0 + z.norm()) {
            converged = true;
            break;
        }
    }
    let near_multiple = last_jet
        .map(|j| j.multiplier_minus_one().norm() < NEAR_MULTIPLE_ROOT)
        .unwrap_or(false);
    if near_multiple {
        if let Some(zc) = refine_double_root(kappa, z, n, settings) {
            return Some(zc);
        }
    }
    converged.then_some(z)
}

fn refine_double_root(kappa: Parameter, z0: C64, n: usize, settings: NewtonSettings) -> Option<C64> {
    let mut z = z0;
    for _ in 0..settings.max_iter {
        let jet = orbit_jet(kappa, z, n).ok()?;
        let g = jet.multiplier_minus_one();
        let gp = jet.multiplier() * jet.partial_multiplier_sum;
        if gp == C64::new(0.0, 0.0) {
            break;
        }
        let step = g / gp;
        z -= step;
        if !is_finite(z) {
            return None;
        }
        if step.norm() < settings.rel_step * (1.0 + z.norm()) {
            break;
        }
    }
    let jet = orbit_jet(kappa, z, n).ok()?;
    ((jet.value - z).norm() <= DOUBLE_ROOT_RESIDUAL * (1.0 + z.norm())).then_some(z)
}

/// Smallest `d | n` with `E^d(z) ≈ z`.
pub fn minimal_period(kappa: Parameter, z: C64, n: usize) -> Option<usize> {
    let mut w = z;
    for d in 1..=n {
        w = apply(kappa, w).ok()?;
        if n.is_multiple_of(d) && (w - z).norm() <= CYCLE_TOL * (1.0 + z.norm()) {
            return Some(d);
        }
    }
    None
}

/// Builds the full cycle through a polished periodic point.
///
/// Each forward iterate is re-polished so the points stay at Newton accuracy
/// even for strongly repelling cycles. The cycle is rotated to start at its
/// lexicographically smallest point.
pub fn orbit_through(
    kappa: Parameter,
    z: C64,
    n: usize,
    tol: ClassifyTol,
) -> Result<PeriodicOrbit, DynamicsError> {
    let period = minimal_period(kappa, z, n).ok_or(DynamicsError::NotACycle(f64::NAN))?;
    let settings = NewtonSettings::default();
    let mut points = Vec::with_capacity(period);
    let mut w = z;
    for i in 0..period {
        if i > 0 {
            w = apply(kappa, w)?;
            w = polish_periodic_point(kappa, w, period, settings).unwrap_or(w);
        }
        points.push(w);
    }
    let start = (0..period)
        .min_by(|&a, &b| lex_order(&points[a], &points[b]))
        .unwrap_or(0);
    points.rotate_left(start);
    let mult = multiplier(kappa, &points)?;
    let class = classify(mult, tol);
    Ok(PeriodicOrbit {
        parabolic: class.parabolic.map(|r| ParabolicData {
            p: r.p,
            q: r.q,
            ray_period: r.q as usize * period,
        }),
        points,
        period,
        multiplier: mult,
        stability: class.stability,
    })
}

/// Axis-aligned rectangle in the complex plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self { re_min, re_max, im_min, im_max }
    }

    pub fn contains(&self, z: C64) -> bool {
        (self.re_min..=self.re_max).contains(&z.re) && (self.im_min..=self.im_max).contains(&z.im)
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    pub fn is_valid(&self) -> bool {
        [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite())
            && self.width() > 0.0
            && self.height() > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSearch {
    pub region: Rect,
    pub seeds_per_axis: usize,
    pub dedup_tol: f64,
    pub include_lower_periods: bool,
    pub newton: NewtonSettings,
    pub classify: ClassifyTol,
}

impl PeriodicSearch {
    pub fn new(region: Rect, seeds_per_axis: usize) -> Self {
        Self {
            region,
            seeds_per_axis,
            dedup_tol: 1e-8,
            include_lower_periods: false,
            newton: NewtonSettings::default(),
            classify: ClassifyTol::default(),
        }
    }
}

/// Seed accounting so missed roots are diagnosable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seeds: usize,
    pub converged: usize,
    pub distinct_roots: usize,
    pub lower_period_roots: usize,
    /// Orbits found whose points are not all inside the search region.
    pub orbits_leaving_region: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPointSet {
    pub orbits: Vec<PeriodicOrbit>,
    pub stats: SeedStats,
}

pub const MAX_SEARCH_PERIOD: usize = 6;

/// Periodic orbits of exact period `n` (or dividing `n` when requested) whose
/// points all lie in the search region, found by Newton from a seed grid.
pub fn find_periodic_points(kappa: Parameter, n: usize, search: &PeriodicSearch) -> PeriodicPointSet {
    assert!((1..=MAX_SEARCH_PERIOD).contains(&n), "period must be in 1..={MAX_SEARCH_PERIOD}");
    let k = search.seeds_per_axis.max(1);
    let r = search.region;
    let seeds: Vec<C64> = (0..k * k)
        .map(|idx| {
            let (i, j) = (idx % k, idx / k);
            C64::new(
                r.re_min + (i as f64 + 0.5) * r.width() / k as f64,
                r.im_min + (j as f64 + 0.5) * r.height() / k as f64,
            )
        })
        .collect();
    let mut roots: Vec<C64> = seeds
        .par_iter()
        .filter_map(|&s| polish_periodic_point(kappa, s, n, search.newton))
        .collect();
    let converged = roots.len();
    roots.sort_by(lex_order);
    let distinct = dedup_sorted(&roots, search.dedup_tol);

    let mut stats = SeedStats {
        seeds: seeds.len(),
        converged,
        distinct_roots: distinct.len(),
        ..SeedStats::default()
    };
    let mut assigned = vec![false; distinct.len()];
    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    for idx in 0..distinct.len() {
        if assigned[idx] {
            continue;
        }
        let Ok(orbit) = orbit_through(kappa, distinct[idx], n, search.classify) else {
            assigned[idx] = true;
            continue;
        };
        for (j, root) in distinct.iter().enumerate() {
            if orbit.distance_to(*root) < search.dedup_tol {
                assigned[j] = true;
            }
        }
        assigned[idx] = true;
        if orbit.period < n && !search.include_lower_periods {
            stats.lower_period_roots += 1;
            continue;
        }
        if !orbit.points.iter().all(|p| r.contains(*p)) {
            stats.orbits_leaving_region += 1;
            continue;
        }
        if orbits.iter().any(|o| o.distance_to(orbit.points[0]) < search.dedup_tol) {
            continue;
        }
        orbits.push(orbit);
    }
    orbits.sort_by(|a, b| a.period.cmp(&b.period).then(lex_order(&a.points[0], &b.points[0])));
    PeriodicPointSet { orbits, stats }
}

fn dedup_sorted(sorted: &[C64], tol: f64) -> Vec<C64> {
    let mut out: Vec<C64> = Vec::new();
    for &z in sorted {
        // sorted by Re, so only the tail within `tol` in Re can collide
        let duplicate = out
            .iter()
            .rev()
            .take_while(|w| z.re - w.re <= tol)
            .any(|w| (w - z).norm() <= tol);
        if !duplicate {
            out.push(z);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "period")]
pub enum SingularVerdict {
    AttractingCycle(usize),
    EscapingSuspected,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingularOrbitClass {
    pub verdict: SingularVerdict,
    pub iterations_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularOrbitConfig {
    pub max_iter: usize,
    pub escape_re: f64,
    pub escape_run: usize,
    pub max_period: usize,
    /// Near-return distance that triggers a Newton confirmation attempt.
    pub cycle_tol: f64,
    pub classify: ClassifyTol,
}

impl Default for SingularOrbitConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            escape_re: 50.0,
            escape_run: 10,
            max_period: MAX_SEARCH_PERIOD,
            cycle_tol: 1e-3,
            classify: ClassifyTol::default(),
        }
    }
}

/// Follows the orbit of the singular value `κ`.
///
/// An attracting verdict requires a Newton-polished cycle with `|λ| < 1 - tol`;
/// an attracting cycle always attracts the singular value, so finding one is
/// enough. Escape is only ever suspected: real parts above the threshold for
/// a run of steps, or an orbit that leaves the range of `exp`.
pub fn classify_singular_orbit(kappa: Parameter, cfg: &SingularOrbitConfig) -> SingularOrbitClass {
    let p_max = cfg.max_period.max(1);
    let mut history: Vec<C64> = Vec::with_capacity(cfg.max_iter + 1);
    let mut retry_below = vec![f64::INFINITY; p_max + 1];
    let mut run = 0usize;
    let mut z = kappa.value();
    for j in 0..cfg.max_iter {
        if z.re > cfg.escape_re {
            run += 1;
            if run >= cfg.escape_run {
                return SingularOrbitClass { verdict: SingularVerdict::EscapingSuspected, iterations_used: j };
            }
        } else {
            run = 0;
        }
        if z.re > EXP_RE_MAX || !is_finite(z) {
            return SingularOrbitClass { verdict: SingularVerdict::EscapingSuspected, iterations_used: j };
        }
        history.push(z);
        for p in 1..=p_max.min(j) {
            let prev = history[j - p];
            let gap = (z - prev).norm();
            if gap < cfg.cycle_tol * (1.0 + z.norm()) && gap < retry_below[p] {
                if let Some(period) = confirm_attracting(kappa, z, p, cfg.classify) {
                    return SingularOrbitClass {
                        verdict: SingularVerdict::AttractingCycle(period),
                        iterations_used: j,
                    };
                }
                retry_below[p] = gap / 16.0;
            }
        }
        z = z.exp() + kappa.value();
    }
    SingularOrbitClass { verdict: SingularVerdict::Undecided, iterations_used: cfg.max_iter }
}

fn confirm_attracting(kappa: Parameter, z: C64, p: usize, tol: ClassifyTol) -> Option<usize> {
    let root = polish_periodic_point(kappa, z, p, NewtonSettings::default())?;
    let orbit = orbit_through(kappa, root, p, tol).ok()?;
    (orbit.stability == Stability::Attracting).then_some(orbit.period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Root of x = e^x - 2 on [lo, hi] by plain bisection.
    fn bisect_fixed_point(lo: f64, hi: f64) -> f64 {
        let g = |x: f64| x.exp() - 2.0 - x;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
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
    fn apply_examples() {
        assert_eq!(apply(Parameter::real(-2.0), c(0.0, 0.0)).unwrap(), c(-1.0, 0.0));
        let w = apply(Parameter::real(0.0), c(0.0, std::f64::consts::PI)).unwrap();
        assert!((w - c(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(apply(Parameter::real(-1.0), c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
        assert!(matches!(
            apply(Parameter::real(0.0), c(800.0, 0.0)),
            Err(DynamicsError::OrbitOverflow(_))
        ));
    }

    #[test]
    fn parameter_rejects_nan() {
        assert_eq!(Parameter::new(c(f64::NAN, 0.0)), Err(DynamicsError::NonFinite));
        assert!(serde_json::from_str::<Parameter>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn growth_examples() {
        assert_eq!(growth(0.0), 0.0);
        assert!((growth(6.0) - 402.428_793_492_735_1).abs() < 1e-9);
        assert!((growth_inv(growth(3.7)) - 3.7).abs() < 1e-12);
        assert!(matches!(growth_iter(4, 5.0), Err(DynamicsError::GrowthOverflow { .. })));
        assert!((growth_iter(-1, growth(2.0)).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn real_fixed_points_of_minus_two() {
        let kappa = Parameter::real(-2.0);
        let set = find_periodic_points(kappa, 1, &PeriodicSearch::new(Rect::new(-5.0, 5.0, -5.0, 5.0), 24));
        let attracting = bisect_fixed_point(-2.0, -1.0);
        let repelling = bisect_fixed_point(1.0, 1.2);
        assert!((attracting + 1.841_405_660_4).abs() < 1e-9);
        assert!((repelling - 1.146_193_220_6).abs() < 1e-9);

        let reals: Vec<&PeriodicOrbit> = set.orbits.iter().filter(|o| o.points[0].im.abs() < 1e-12).collect();
        assert_eq!(reals.len(), 2);
        let a = reals[0];
        let r = reals[1];
        assert!((a.points[0].re - attracting).abs() < 1e-12);
        assert_eq!(a.stability, Stability::Attracting);
        assert!((a.multiplier.re - attracting.exp()).abs() < 1e-12);
        assert!((a.multiplier.re - 0.1586).abs() < 1e-4);
        assert!((r.points[0].re - repelling).abs() < 1e-12);
        assert_eq!(r.stability, Stability::Repelling);
        assert!((r.multiplier.re - 3.1462).abs() < 1e-4);
    }

    #[test]
    fn parabolic_fixed_point_of_minus_one() {
        let kappa = Parameter::real(-1.0);
        let set = find_periodic_points(kappa, 1, &PeriodicSearch::new(Rect::new(-1.0, 1.0, -1.0, 1.0), 16));
        assert_eq!(set.orbits.len(), 1, "{:?}", set);
        let o = &set.orbits[0];
        assert!(o.points[0].norm() < 1e-12);
        assert!((o.multiplier - 1.0).norm() < 1e-12);
        assert_eq!(o.stability, Stability::Indifferent);
        assert_eq!(o.parabolic, Some(ParabolicData { p: 0, q: 1, ray_period: 1 }));
    }

    #[test]
    fn fixed_point_in_upper_strip() {
        // independent oracle: the inverse branch z -> log(z + 2) + 2πi contracts
        // near the fixed point; start from 1.1+6.3i
        let mut z = c(1.1, 6.3);
        for _ in 0..200 {
            z = (z + 2.0).ln() + c(0.0, TAU);
        }
        let set = find_periodic_points(
            Parameter::real(-2.0),
            1,
            &PeriodicSearch::new(Rect::new(-5.0, 5.0, 5.0, 9.0), 20),
        );
        assert_eq!(set.orbits.len(), 1);
        assert!((set.orbits[0].points[0] - z).norm() < 1e-12, "{} vs {z}", set.orbits[0].points[0]);
        assert!(z.im > 5.0 && z.im < 9.0);
    }

    #[test]
    fn multiplier_examples() {
        let kappa = Parameter::real(-1.0);
        assert_eq!(multiplier(kappa, &[c(0.0, 0.0)]).unwrap(), c(1.0, 0.0));
        let x = bisect_fixed_point(1.0, 1.2);
        let m = multiplier(Parameter::real(-2.0), &[c(x, 0.0)]).unwrap();
        assert!((m.re - x.exp()).abs() < 1e-12);
        assert!(matches!(
            multiplier(Parameter::real(-2.0), &[c(0.5, 0.0)]),
            Err(DynamicsError::NotACycle(_))
        ));
    }

    #[test]
    fn multiplier_matches_chain_rule() {
        let kappa = Parameter::new(c(-2.0, 0.5)).unwrap();
        let set = find_periodic_points(kappa, 3, &PeriodicSearch::new(Rect::new(-6.0, 6.0, -10.0, 10.0), 40));
        assert!(!set.orbits.is_empty());
        for o in &set.orbits {
            let product: C64 = o.points.iter().map(|z| z.exp()).product();
            assert!((product - o.multiplier).norm() <= 1e-12 * o.multiplier.norm().max(1.0));
        }
    }

    #[test]
    fn classify_examples() {
        let tol = ClassifyTol::default();
        let one = classify(c(1.0, 0.0), tol);
        assert_eq!(one.stability, Stability::Indifferent);
        assert_eq!(one.parabolic, Some(RationalRotation { p: 0, q: 1 }));
        assert_eq!(classify(c(3.1462, 0.0), tol).stability, Stability::Repelling);
        assert_eq!(classify(c(0.5, 0.0), tol).stability, Stability::Attracting);
        let cube = C64::from_polar(1.0 + 1e-14, TAU / 3.0);
        assert_eq!(classify(cube, tol).parabolic, Some(RationalRotation { p: 1, q: 3 }));
        let half = classify(c(-1.0, 0.0), tol);
        assert_eq!(half.parabolic, Some(RationalRotation { p: 1, q: 2 }));
        // irrational rotation: indifferent without parabolic data
        let golden = C64::from_polar(1.0, TAU * 0.618_033_988_749_894_8);
        let g = classify(golden, tol);
        assert_eq!(g.stability, Stability::Indifferent);
        assert_eq!(g.parabolic, None);
    }

    #[test]
    fn singular_orbit_examples() {
        let cfg = SingularOrbitConfig::default();
        assert_eq!(
            classify_singular_orbit(Parameter::real(-2.0), &cfg).verdict,
            SingularVerdict::AttractingCycle(1)
        );
        assert_eq!(
            classify_singular_orbit(Parameter::real(10.0), &cfg).verdict,
            SingularVerdict::EscapingSuspected
        );
        assert_eq!(
            classify_singular_orbit(Parameter::real(-1.0), &cfg).verdict,
            SingularVerdict::Undecided
        );
    }

    #[test]
    fn conjugation_symmetry_for_real_kappa() {
        let kappa = Parameter::real(-2.5);
        let set = find_periodic_points(kappa, 2, &PeriodicSearch::new(Rect::new(-5.0, 5.0, -8.0, 8.0), 40));
        assert!(!set.orbits.is_empty());
        for o in &set.orbits {
            for p in &o.points {
                let mirrored = set
                    .orbits
                    .iter()
                    .map(|q| q.distance_to(p.conj()))
                    .fold(f64::INFINITY, f64::min);
                assert!(mirrored < 1e-9, "{p} has no mirror image");
            }
        }
    }

    #[test]
    fn orbits_are_closed_under_the_map() {
        let kappa = Parameter::new(c(-2.0, 0.3)).unwrap();
        for n in 1..=3 {
            let set = find_periodic_points(kappa, n, &PeriodicSearch::new(Rect::new(-5.0, 5.0, -8.0, 8.0), 40));
            for o in &set.orbits {
                assert_eq!(o.period, n);
                assert_eq!(o.points.len(), n);
                for i in 0..n {
                    let image = apply(kappa, o.points[i]).unwrap();
                    assert!((image - o.points[(i + 1) % n]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn orbit_json_shape() {
        let o = orbit_through(Parameter::real(-2.0), c(bisect_fixed_point(1.0, 1.2), 0.0), 1, ClassifyTol::default())
            .unwrap();
        let v = serde_json::to_value(&o).unwrap();
        for key in ["points", "period", "multiplier", "stability"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["stability"], "repelling");
    }

    proptest! {
        #[test]
        fn derivative_is_exp(re in -5.0f64..5.0, im in -5.0f64..5.0) {
            let kappa = Parameter::new(c(0.3, -0.7)).unwrap();
            let z = c(re, im);
            let h = c(1e-6, 0.0);
            let fd = (apply(kappa, z + h).unwrap() - apply(kappa, z).unwrap()) / h;
            prop_assert!((fd - z.exp()).norm() <= 1e-5 * z.exp().norm().max(1.0));
        }

        #[test]
        fn growth_roundtrip(n in 1i32..=5, t in 0.0f64..100.0) {
            // stay below the overflow cap for the forward leg
            let back = growth_iter(-n, t).unwrap();
            let there = growth_iter(n, back).unwrap();
            prop_assert!((there - t).abs() <= 1e-10);
        }
    }
}
