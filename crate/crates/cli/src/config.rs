//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use exporay::dynamics::SingularOrbitConfig;
use exporay::export::{ColorMap, MAX_DIMENSION};
use exporay::parameter::TraceConfig;
use exporay::rays::{LandingConfig, RayEvalConfig};
use exporay::verify::VerifyConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Ray point accuracy.
    pub tol: f64,
    pub landing_tol: f64,
    pub corrector_tol: f64,
    pub max_depth: usize,
    /// Singular-orbit iteration budget.
    pub max_iter: usize,
    /// Samples per polyline.
    pub steps: usize,
    pub output_dir: PathBuf,
    pub width: u32,
    pub height: u32,
    pub color_map: ColorMap,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tol: RayEvalConfig::default().tol,
            landing_tol: LandingConfig::default().landing_tol,
            corrector_tol: TraceConfig::default().corrector_tol,
            max_depth: RayEvalConfig::default().max_depth,
            max_iter: SingularOrbitConfig::default().max_iter,
            steps: 200,
            output_dir: PathBuf::from("."),
            width: 800,
            height: 600,
            color_map: ColorMap::Period,
            seed: 1,
        }
    }
}

/// Flags that override config-file values.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigFlags {
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub landing_tol: Option<f64>,
    #[arg(long, global = true)]
    pub corrector_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub width: Option<u32>,
    #[arg(long, global = true)]
    pub height: Option<u32>,
    #[arg(long, global = true, value_parser = parse_color_map)]
    pub color_map: Option<ColorMap>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_color_map(text: &str) -> Result<ColorMap, String> {
    match text {
        "period" => Ok(ColorMap::Period),
        "mono" => Ok(ColorMap::Mono),
        _ => Err(format!("unknown color map {text:?} (expected period or mono)")),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &ConfigFlags) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(tol, landing_tol, corrector_tol, max_depth, max_iter, steps, output_dir, width, height, color_map, seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [("tol", self.tol), ("landing_tol", self.landing_tol), ("corrector_tol", self.corrector_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_depth < 1 || self.max_iter < 1 || self.steps < 2 {
            return Err(CliError::Usage("max_depth and max_iter must be positive and steps at least 2".into()));
        }
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v == 0 || v > MAX_DIMENSION {
                return Err(CliError::Usage(format!("{name} must be in 1..={MAX_DIMENSION}, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ray(&self) -> RayEvalConfig {
        RayEvalConfig { tol: self.tol, max_depth: self.max_depth, ..RayEvalConfig::default() }
    }

    pub fn landing(&self) -> LandingConfig {
        LandingConfig { landing_tol: self.landing_tol, ..LandingConfig::default() }
    }

    pub fn singular(&self) -> SingularOrbitConfig {
        SingularOrbitConfig { max_iter: self.max_iter, ..SingularOrbitConfig::default() }
    }

    pub fn trace(&self, t_start: f64, t_end: f64) -> TraceConfig {
        TraceConfig { t_start, t_end, corrector_tol: self.corrector_tol, ray: self.ray(), ..TraceConfig::default() }
    }

    pub fn verify(&self) -> VerifyConfig {
        let base = VerifyConfig::default();
        VerifyConfig {
            ray: self.ray(),
            landing: self.landing(),
            singular: self.singular(),
            trace: TraceConfig { corrector_tol: self.corrector_tol, ray: self.ray(), ..base.trace },
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "tol = 1e-9\nwidth = 64\nseed = 7\n").unwrap();
        let flags = ConfigFlags { width: Some(32), ..ConfigFlags::default() };
        let cfg = RunConfig::load(Some(&path), &flags).unwrap();
        assert_eq!((cfg.tol, cfg.width, cfg.seed, cfg.height), (1e-9, 32, 7, 600));
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "tolerance = 1\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&path), &ConfigFlags::default()), Err(CliError::Usage(_))));
        let flags = ConfigFlags { width: Some(MAX_DIMENSION + 1), ..ConfigFlags::default() };
        assert!(matches!(RunConfig::load(None, &flags), Err(CliError::Usage(_))));
        let flags = ConfigFlags { landing_tol: Some(0.0), ..ConfigFlags::default() };
        assert!(matches!(RunConfig::load(None, &flags), Err(CliError::Usage(_))));
    }
}
