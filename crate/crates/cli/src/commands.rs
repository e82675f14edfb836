//! Subcommand implementations. Every artifact lands in the configured
//! output directory next to a JSON record of the effective configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Subcommand;
use exporay::dynamics::SingularVerdict;
use exporay::export::{self, Canvas, Rgb};
use exporay::numeric::{format_complex, parse_complex};
use exporay::parameter::{
    find_characteristic_rays, land_parameter_ray, scan_components, trace_parameter_ray, ComponentGrid,
    LandParameterConfig, Wake, WakeConfig,
};
use exporay::rays::{geometric_potentials, land_ray, ray_polyline, RayError, RayPolyline};
use exporay::verify::{self, ExperimentReport};
use exporay::{ExternalAddress, Parameter, Rect, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{CliError, Command};

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Periodic rays land at repelling or parabolic points.
    Thm1 {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, default_value_t = 2)]
        max_period: usize,
        /// Largest entry magnitude.
        #[arg(long = "M", default_value_t = 1)]
        m: u32,
    },
    /// Repelling orbits in a box are ray landing points.
    Thm2 {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long)]
        n: usize,
        /// `re_min:re_max:im_min:im_max`.
        #[arg(long = "box", allow_hyphen_values = true)]
        region: String,
        #[arg(long = "M", default_value_t = 2)]
        m: u32,
    },
    /// Landing point moves holomorphically along a straight path.
    Motion {
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        #[arg(long, default_value_t = 10)]
        path_steps: usize,
        #[arg(long, allow_hyphen_values = true)]
        address: String,
    },
    /// Characteristic rays keep landing together inside their wake.
    Wake {
        /// Parameter inside the hyperbolic component.
        #[arg(long, allow_hyphen_values = true)]
        sample: String,
        #[arg(long)]
        period: usize,
        #[arg(long, default_value_t = 2)]
        m_max: u32,
        /// Probe parameter; repeatable. Defaults to the sample.
        #[arg(long, allow_hyphen_values = true)]
        probe: Vec<String>,
    },
    /// Lower bound on `|κ|` along a parameter ray.
    Bound {
        #[arg(long, allow_hyphen_values = true)]
        address: String,
        #[arg(long, default_value_t = 1e-2)]
        t_end: f64,
    },
    /// Vertical order of random ray pairs matches lexicographic order.
    Order {
        #[arg(long, allow_hyphen_values = true, default_value = "-2+0i")]
        kappa: String,
        #[arg(long, default_value_t = 100.0)]
        re: f64,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
}

const OVERLAY_COLORS: [Rgb; 6] =
    [[230, 40, 40], [40, 200, 230], [240, 220, 40], [220, 60, 220], [60, 220, 90], [250, 150, 30]];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn eval(e: impl std::fmt::Display) -> CliError {
    CliError::Eval(e.to_string())
}

pub fn parse_kappa(text: &str) -> Result<Parameter, CliError> {
    parse_complex(text)
        .and_then(|z| Parameter::new(z).ok())
        .ok_or_else(|| usage(format!("cannot parse complex number {text:?} (expected a+bi)")))
}

pub fn parse_address(text: &str) -> Result<ExternalAddress, CliError> {
    text.parse().map_err(|e| usage(format!("{e}")))
}

fn parse_floats(text: &str, count: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("cannot parse {what} {text:?}")))?;
    if parts.len() != count || parts.iter().any(|v| !v.is_finite()) {
        return Err(usage(format!("{what} {text:?} needs {count} finite colon-separated numbers")));
    }
    Ok(parts)
}

/// `t_min:t_max` with `0 < t_min < t_max`.
pub fn parse_t_range(text: &str) -> Result<(f64, f64), CliError> {
    let v = parse_floats(text, 2, "potential range")?;
    if !(v[0] > 0.0 && v[0] < v[1]) {
        return Err(usage(format!("potential range {text:?} needs 0 < t_min < t_max")));
    }
    Ok((v[0], v[1]))
}

/// `re_min:re_max:im_min:im_max` with positive area.
pub fn parse_rect(text: &str) -> Result<Rect, CliError> {
    let v = parse_floats(text, 4, "rectangle")?;
    let rect = Rect::new(v[0], v[1], v[2], v[3]);
    if !rect.is_valid() {
        return Err(usage(format!("rectangle {text:?} has no area")));
    }
    Ok(rect)
}

struct Outputs<'a> {
    cfg: &'a RunConfig,
}

impl Outputs<'_> {
    fn path(&self, name: &str, ext: &str) -> Result<PathBuf, CliError> {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(usage(format!("invalid artifact name {name:?}")));
        }
        std::fs::create_dir_all(&self.cfg.output_dir)
            .map_err(|e| eval(format!("cannot create {}: {e}", self.cfg.output_dir.display())))?;
        Ok(self.cfg.output_dir.join(format!("{name}.{ext}")))
    }

    fn create(&self, name: &str, ext: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name, ext)?;
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| eval(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes `{command, config, ...body}` as pretty JSON.
    fn json(&self, name: &str, command: &str, body: Value) -> Result<(), CliError> {
        let mut doc = json!({ "command": command, "config": self.cfg });
        if let (Value::Object(target), Value::Object(extra)) = (&mut doc, body) {
            target.extend(extra);
        }
        let mut out = self.create(name, "json")?;
        serde_json::to_writer_pretty(&mut out, &doc).map_err(eval)?;
        writeln!(out).and_then(|_| out.flush()).map_err(eval)
    }

    fn finish<W: Write>(mut out: W) -> Result<(), CliError> {
        out.flush().map_err(eval)
    }
}

fn cz(z: C64) -> Value {
    json!(format_complex(z))
}

/// Variant name of a ray failure, e.g. `RayBroken`.
fn error_kind(e: &RayError) -> String {
    let debug = format!("{e:?}");
    debug.split([' ', '(']).next().unwrap_or_default().to_string()
}

fn polyline_json(line: &RayPolyline) -> Value {
    json!({
        "address": line.address.to_string(),
        "samples": line.samples.len(),
        "status": line.stopped_by.as_ref().map_or("complete".to_string(), error_kind),
        "stopped_by": line.stopped_by,
    })
}

fn grid_counts(grid: &ComponentGrid) -> Value {
    let mut periods = std::collections::BTreeMap::<usize, usize>::new();
    for v in &grid.cells {
        if let SingularVerdict::AttractingCycle(p) = v {
            *periods.entry(*p).or_default() += 1;
        }
    }
    json!({
        "rect": grid.rect,
        "nx": grid.nx,
        "ny": grid.ny,
        "attracting_by_period": periods,
        "escaping_suspected": grid.count(SingularVerdict::EscapingSuspected),
        "undecided": grid.count(SingularVerdict::Undecided),
    })
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<i32, CliError> {
    let out = Outputs { cfg };
    match command {
        Command::TraceRay { kappa, address, t, land, name } => trace_ray(&out, &kappa, &address, &t, land, &name),
        Command::TraceParamRay { address, t_start, t_end, land, name } => {
            trace_param_ray(&out, &address, t_start, t_end, land, &name)
        }
        Command::Scan { rect, name } => scan(&out, &rect, &name),
        Command::RenderDyn { kappa, rect, overlay, t_min, escape_iter, name } => {
            render_dyn(&out, &kappa, &rect, &overlay, t_min, escape_iter, &name)
        }
        Command::RenderParam { rect, overlay, t_end, name } => render_param(&out, &rect, &overlay, t_end, &name),
        Command::Verify { experiment } => run_experiment(&out, experiment),
    }
}

fn trace_ray(out: &Outputs, kappa: &str, address: &str, t: &str, land: bool, name: &str) -> Result<i32, CliError> {
    let kappa = parse_kappa(kappa)?;
    let s = parse_address(address)?;
    let (t_min, t_max) = parse_t_range(t)?;
    if land && s.exact_period().is_none() {
        return Err(usage(format!("--land needs a periodic address, got {s}")));
    }
    let cfg = out.cfg;
    let line = ray_polyline(kappa, &s, &geometric_potentials(t_min, t_max, cfg.steps), &cfg.ray(), true);
    let mut csv = out.create(name, "csv")?;
    export::write_ray_csv(&mut csv, &line).map_err(eval)?;
    Outputs::finish(csv)?;

    let mut body = json!({
        "kappa": cz(kappa.value()),
        "address": s.to_string(),
        "t_min": t_min,
        "t_max": t_max,
        "ray": polyline_json(&line),
    });
    let mut failure = None;
    if land {
        match land_ray(kappa, &s, &cfg.ray(), &cfg.landing()) {
            Ok(est) => {
                body["landing"] = json!({
                    "landing_point": cz(est.landing_point()),
                    "converged": est.converged,
                    "method": est.method,
                    "matched_distance": est.matched_distance,
                    "stability": est.orbit.stability,
                    "orbit": export::orbit_json(&est.orbit),
                });
            }
            Err(e) => {
                body["landing"] = json!({ "error": e });
                failure = Some(eval(format!("landing failed: {e}")));
            }
        }
    }
    out.json(name, "trace-ray", body)?;
    if let Some(e) = &line.stopped_by {
        eprintln!("exporay: ray truncated after {} samples: {e}", line.samples.len());
        if line.samples.is_empty() {
            return Err(eval(e));
        }
    }
    failure.map_or(Ok(0), Err)
}

fn trace_param_ray(out: &Outputs, address: &str, t_start: f64, t_end: f64, land: bool, name: &str) -> Result<i32, CliError> {
    let s = parse_address(address)?;
    if !(t_end > 0.0 && t_end < t_start && t_start.is_finite()) {
        return Err(usage(format!("need 0 < t_end < t_start, got t_start={t_start} t_end={t_end}")));
    }
    let n = match (land, s.exact_period()) {
        (true, None) => return Err(usage(format!("--land needs a periodic address, got {s}"))),
        (_, n) => n,
    };
    let mut trace = trace_parameter_ray(&s, &out.cfg.trace(t_start, t_end)).map_err(eval)?;
    let mut failure = None;
    if let (true, Some(n)) = (land, n) {
        match land_parameter_ray(&trace, n, &LandParameterConfig::default()) {
            Ok(p) => trace.landing = Some(p),
            Err(e) => failure = Some(eval(format!("landing failed: {e}"))),
        }
    }
    let mut csv = out.create(name, "csv")?;
    export::write_trace_csv(&mut csv, &trace).map_err(eval)?;
    Outputs::finish(csv)?;
    let body = json!({
        "address": s.to_string(),
        "t_start": t_start,
        "t_end": t_end,
        "t_min_reached": trace.t_min_reached,
        "samples": trace.samples.len(),
        "landing": trace.landing,
    });
    out.json(name, "trace-param-ray", body)?;
    failure.map_or(Ok(0), Err)
}

fn scan(out: &Outputs, rect: &str, name: &str) -> Result<i32, CliError> {
    let rect = parse_rect(rect)?;
    let cfg = out.cfg;
    let grid = scan_components(rect, cfg.width as usize, cfg.height as usize, &cfg.singular()).map_err(eval)?;
    let canvas = Canvas::from_grid(&grid, cfg.color_map).map_err(eval)?;
    let mut png = out.create(name, "png")?;
    canvas.write_png(&mut png, &[("config", cfg.to_toml())]).map_err(eval)?;
    Outputs::finish(png)?;
    let mut csv = out.create(name, "csv")?;
    export::write_grid_csv(&mut csv, &grid).map_err(eval)?;
    Outputs::finish(csv)?;
    out.json(name, "scan", json!({ "counts": grid_counts(&grid) }))?;
    Ok(0)
}

fn render_dyn(
    out: &Outputs,
    kappa: &str,
    rect: &str,
    overlays: &[String],
    t_min: f64,
    escape_iter: usize,
    name: &str,
) -> Result<i32, CliError> {
    let kappa = parse_kappa(kappa)?;
    let rect = parse_rect(rect)?;
    let addresses = overlays.iter().map(|a| parse_address(a)).collect::<Result<Vec<_>, _>>()?;
    if !(t_min > 0.0) {
        return Err(usage("--t-min must be positive"));
    }
    let cfg = out.cfg;
    let mut canvas =
        export::shade_dynamical_plane(kappa, rect, cfg.width, cfg.height, escape_iter.max(1)).map_err(eval)?;
    // Re g_s(t) is t + o(1), so a little past the right edge suffices.
    let t_max = (rect.re_max + 5.0).max(t_min * 2.0);
    let mut records = Vec::new();
    for (i, s) in addresses.iter().enumerate() {
        let line = ray_polyline(kappa, s, &geometric_potentials(t_min, t_max, cfg.steps), &cfg.ray(), false);
        let points: Vec<C64> = line.samples.iter().map(|p| p.z).collect();
        canvas.draw_polyline(&points, OVERLAY_COLORS[i % OVERLAY_COLORS.len()]);
        records.push(polyline_json(&line));
    }
    let mut png = out.create(name, "png")?;
    canvas.write_png(&mut png, &[("config", cfg.to_toml())]).map_err(eval)?;
    Outputs::finish(png)?;
    let body = json!({ "kappa": cz(kappa.value()), "rect": rect, "escape_iter": escape_iter, "overlays": records });
    out.json(name, "render-dyn", body)?;
    Ok(0)
}

fn render_param(out: &Outputs, rect: &str, overlays: &[String], t_end: f64, name: &str) -> Result<i32, CliError> {
    let rect = parse_rect(rect)?;
    let addresses = overlays.iter().map(|a| parse_address(a)).collect::<Result<Vec<_>, _>>()?;
    let cfg = out.cfg;
    let t_start = (rect.re_max + 5.0).max(20.0);
    if !(t_end > 0.0 && t_end < t_start) {
        return Err(usage(format!("--t-end must lie in (0, {t_start})")));
    }
    let grid = scan_components(rect, cfg.width as usize, cfg.height as usize, &cfg.singular()).map_err(eval)?;
    let mut canvas = Canvas::from_grid(&grid, cfg.color_map).map_err(eval)?;
    let mut records = Vec::new();
    for (i, s) in addresses.iter().enumerate() {
        match trace_parameter_ray(s, &cfg.trace(t_start, t_end)) {
            Ok(trace) => {
                let points: Vec<C64> = trace.samples.iter().map(|p| p.kappa).collect();
                canvas.draw_polyline(&points, OVERLAY_COLORS[i % OVERLAY_COLORS.len()]);
                records.push(json!({
                    "address": s.to_string(),
                    "samples": trace.samples.len(),
                    "t_min_reached": trace.t_min_reached,
                }));
            }
            Err(e) => records.push(json!({ "address": s.to_string(), "error": e.to_string() })),
        }
    }
    let mut png = out.create(name, "png")?;
    canvas.write_png(&mut png, &[("config", cfg.to_toml())]).map_err(eval)?;
    Outputs::finish(png)?;
    out.json(name, "render-param", json!({ "counts": grid_counts(&grid), "overlays": records }))?;
    Ok(0)
}

/// `count` distinct pairs of addresses with periods 1 to 3 and entries in
/// `[-2, 2]`.
pub fn random_pairs(seed: u64, count: usize) -> Vec<(ExternalAddress, ExternalAddress)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..=3);
        let block: Vec<i64> = (0..n).map(|_| rng.gen_range(-2..=2)).collect();
        ExternalAddress::periodic(&block).expect("small block")
    };
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs
}

fn run_experiment(out: &Outputs, experiment: Experiment) -> Result<i32, CliError> {
    let cfg = out.cfg;
    let vcfg = cfg.verify();
    let report: ExperimentReport = match experiment {
        Experiment::Thm1 { kappa, max_period, m } => {
            let kappa = parse_kappa(&kappa)?;
            if !(1..=exporay::dynamics::MAX_SEARCH_PERIOD).contains(&max_period) {
                return Err(usage(format!("--max-period must be in 1..={}", exporay::dynamics::MAX_SEARCH_PERIOD)));
            }
            let addresses: Vec<ExternalAddress> = (1..=max_period)
                .flat_map(|n| exporay::enumerate_periodic(n, m).into_iter().filter(move |s| s.exact_period() == Some(n)))
                .collect();
            verify::verify_theorem1(kappa, &addresses, &vcfg)
        }
        Experiment::Thm2 { kappa, n, region, m } => {
            let kappa = parse_kappa(&kappa)?;
            let region = parse_rect(&region)?;
            if !(1..=exporay::dynamics::MAX_SEARCH_PERIOD).contains(&n) {
                return Err(usage(format!("--n must be in 1..={}", exporay::dynamics::MAX_SEARCH_PERIOD)));
            }
            verify::verify_theorem2(kappa, n, region, m, &vcfg)
        }
        Experiment::Motion { from, to, path_steps, address } => {
            let (a, b) = (parse_kappa(&from)?, parse_kappa(&to)?);
            let s = parse_address(&address)?;
            let steps = path_steps.max(1);
            let path = (0..=steps)
                .map(|k| Parameter::new(a.value() + (b.value() - a.value()) * (k as f64 / steps as f64)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(eval)?;
            verify::verify_holomorphic_motion(&path, &s, &vcfg)
        }
        Experiment::Wake { sample, period, m_max, probe } => {
            let sample = parse_kappa(&sample)?;
            let mut probes = probe.iter().map(|p| parse_kappa(p)).collect::<Result<Vec<_>, _>>()?;
            if probes.is_empty() {
                probes.push(sample);
            }
            if period < 2 {
                return Err(usage("--period must be at least 2 for a bounded wake"));
            }
            let wake_cfg = WakeConfig { trace: vcfg.trace, ..WakeConfig::default() };
            let wake = find_characteristic_rays(sample, period, m_max, &wake_cfg).map_err(eval)?;
            let Wake::Bounded(bounded) = &wake else {
                return Err(eval("component has no characteristic rays"));
            };
            let [s1, s2] = bounded.char_addresses.clone();
            let mut report =
                verify::verify_wake_persistence(&wake, &probes, (&s1, &s2), &vcfg, wake_cfg.boundary_tol);
            if let Ok(r) = &mut report {
                r.inputs["wake"] = export::wake_json(bounded);
            }
            report
        }
        Experiment::Bound { address, t_end } => {
            let s = parse_address(&address)?;
            if !(t_end > 0.0 && t_end < 20.0) {
                return Err(usage("--t-end must lie in (0, 20)"));
            }
            verify::verify_parameter_bound(&s, &cfg.trace(20.0, t_end))
        }
        Experiment::Order { kappa, re, pairs } => {
            let kappa = parse_kappa(&kappa)?;
            if !(re >= 50.0) || pairs == 0 {
                return Err(usage("--re must be at least 50 and --pairs positive"));
            }
            verify::verify_vertical_order(kappa, &random_pairs(cfg.seed, pairs), re, &vcfg)
        }
    }
    .map_err(eval)?;
    let name = report.experiment.clone();
    out.json(&name, "verify", json!({ "report": report.numerics() }))?;
    print!("{}", report.summary());
    Ok(report.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_kappa("-2+0i").unwrap().value(), C64::new(-2.0, 0.0));
        assert!(matches!(parse_kappa("2+x"), Err(CliError::Usage(_))));
        assert_eq!(parse_t_range("0.01:10").unwrap(), (0.01, 10.0));
        assert!(parse_t_range("10:0.01").is_err());
        assert!(parse_t_range("0:1").is_err());
        assert!(parse_rect("-4:-1:-1:1").is_ok());
        assert!(matches!(parse_rect("0:0:-1:1"), Err(CliError::Usage(_))));
        assert!(parse_rect("0:1:2").is_err());
        assert!(matches!(parse_address("0,1"), Err(CliError::Usage(_))));
    }

    #[test]
    fn random_pairs_are_seeded_and_in_range() {
        let a = random_pairs(5, 10);
        assert_eq!(a, random_pairs(5, 10));
        assert_ne!(a, random_pairs(6, 10));
        for (s, r) in &a {
            assert_ne!(s, r);
            for x in [s, r] {
                assert!(x.exact_period().unwrap() <= 3 && x.max_abs_entry() <= 2);
            }
        }
    }

    #[test]
    fn error_kind_is_variant_name() {
        assert_eq!(error_kind(&RayError::RayBroken { depth: 3 }), "RayBroken");
        assert_eq!(error_kind(&RayError::NotPeriodic("x".into())), "NotPeriodic");
    }
}
