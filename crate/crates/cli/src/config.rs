//! Run configuration: a single JSON document.

use std::fmt;
use std::path::PathBuf;

use reflector_core::density::Builtin;
use reflector_core::ma_operator::OperatorParams;
use reflector_core::raytrace::TraceMode;
use reflector_core::solver::SolverParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Fibonacci { n: usize },
    /// Whitespace-separated `x y z` rows.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DensitySpec {
    Builtin(Builtin),
    /// `point_id,value` CSV on the run's grid.
    File(PathSpec),
    /// Equirectangular PGM, row 0 at the north pole.
    Image(PathSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatMode {
    /// Smooth to the stop time.
    Full,
    /// Smooth until the edge Lipschitz constant is at most `C h^{-1/4}`,
    /// never past the stop time.
    Auto,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `√h`, for bounded densities.
    SqrtH,
    /// `h^{1/6}`, the variant for unbounded densities.
    HOneSixth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StopTime {
    Rule(StopRule),
    Value(f64),
}

impl StopTime {
    pub fn resolve(&self, h: f64) -> f64 {
        match *self {
            StopTime::Rule(StopRule::SqrtH) => h.sqrt(),
            StopTime::Rule(StopRule::HOneSixth) => h.powf(1.0 / 6.0),
            StopTime::Value(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    pub mode: HeatMode,
    pub stop_time: StopTime,
    /// `C` in the auto-mode target `C h^{-1/4}`.
    pub lipschitz_constant: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            mode: HeatMode::Auto,
            stop_time: StopTime::Rule(StopRule::SqrtH),
            lipschitz_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub k0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub growth: f64,
    pub shrink: f64,
    pub damping: bool,
    pub fixed_step: bool,
    pub u0: f64,
    pub refresh_interval: usize,
    pub level_shift: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverConfig {
            k0: p.k0,
            tol: p.tol,
            max_iter: p.max_iter,
            growth: p.growth,
            shrink: p.shrink,
            damping: p.damping,
            fixed_step: p.fixed_step,
            u0: p.u0,
            refresh_interval: p.refresh_interval,
            level_shift: p.level_shift,
        }
    }
}

impl SolverConfig {
    pub fn params(&self) -> SolverParams {
        SolverParams {
            k0: self.k0,
            tol: self.tol,
            max_iter: self.max_iter,
            growth: self.growth,
            shrink: self.shrink,
            damping: self.damping,
            fixed_step: self.fixed_step,
            u0: self.u0,
            refresh_interval: self.refresh_interval,
            level_shift: self.level_shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub lipschitz_radius: f64,
    pub safety: f64,
    pub interp_support: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        let p = OperatorParams::default();
        OperatorConfig {
            lipschitz_radius: p.lipschitz_radius,
            safety: p.safety,
            interp_support: p.interp_support,
        }
    }
}

impl OperatorConfig {
    pub fn params(&self) -> OperatorParams {
        OperatorParams {
            lipschitz_radius: self.lipschitz_radius,
            safety: self.safety,
            interp_support: self.interp_support,
        }
    }
}

fn default_epsilon() -> f64 {
    0.3
}

fn default_trace() -> TraceMode {
    TraceMode::Forward
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub source: DensitySpec,
    pub target: DensitySpec,
    /// Positivity mixing weight.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Also mix the source density with the uniform one.
    #[serde(default)]
    pub floor_both: bool,
    #[serde(default)]
    pub heat: HeatConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default = "default_trace")]
    pub trace: TraceMode,
    /// Warn when the solution's edge Lipschitz constant exceeds this.
    #[serde(default)]
    pub lipschitz_bound: Option<f64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Nonzero seeds rotate every tangent frame by a random angle.
    #[serde(default)]
    pub seed: u64,
}

/// One validation failure, anchored to a line of the config text when
/// the offending key can be located.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn check_density(spec: &DensitySpec, which: &str, text: &str, errors: &mut Vec<ConfigError>) {
    if let DensitySpec::Builtin(b) = spec {
        if let Err(e) = b.validate() {
            let key = match b {
                Builtin::Triangle { .. } => "theta",
                Builtin::HemisphereTanh { .. } => "a",
                _ => which,
            };
            errors.push(ConfigError {
                line: line_of(text, key),
                message: format!("{which}: {e}"),
            });
        }
    }
}

/// Unit variants of internally tagged enums ignore extra keys, so density
/// blocks get an explicit key check.
fn check_density_keys(value: &serde_json::Value, which: &str, text: &str, errors: &mut Vec<ConfigError>) {
    let Some(obj) = value.get(which).and_then(|v| v.as_object()) else { return };
    let allowed: &[&str] = match (obj.get("type").and_then(|v| v.as_str()), obj.get("name").and_then(|v| v.as_str())) {
        (Some("builtin"), Some("triangle")) => &["type", "name", "theta"],
        (Some("builtin"), Some("hemisphere_tanh")) => &["type", "name", "a"],
        (Some("builtin"), _) => &["type", "name"],
        _ => &["type", "path"],
    };
    for key in obj.keys().filter(|k| !allowed.contains(&k.as_str())) {
        errors.push(ConfigError {
            line: line_of(text, key),
            message: format!("{which}: unknown field `{key}`, expected one of {allowed:?}"),
        });
    }
}

/// Parses and validates a config. Syntax and schema errors stop parsing
/// and yield a single error; range checks are all collected.
pub fn validate_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| {
        vec![ConfigError {
            line: (e.line() > 0).then_some(e.line()),
            message: e.to_string(),
        }]
    })?;
    let mut errors = Vec::new();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(text) {
        check_density_keys(&value, "source", text, &mut errors);
        check_density_keys(&value, "target", text, &mut errors);
    }
    let mut err = |key: &str, message: String| {
        errors.push(ConfigError {
            line: line_of(text, key),
            message,
        })
    };

    if let GridSpec::Fibonacci { n } = config.grid {
        if n < 100 {
            err("n", format!("grid.n must be at least 100, got {n}"));
        }
    }
    if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
        err("epsilon", format!("epsilon must lie in (0, 1), got {}", config.epsilon));
    }
    let stop = config.heat.stop_time;
    if let StopTime::Value(t) = stop {
        if !(t >= 0.0 && t.is_finite()) {
            err("stop_time", format!("heat.stop_time must be finite and nonnegative, got {t}"));
        }
    }
    if !(config.heat.lipschitz_constant > 0.0 && config.heat.lipschitz_constant.is_finite()) {
        err(
            "lipschitz_constant",
            format!("heat.lipschitz_constant must be positive, got {}", config.heat.lipschitz_constant),
        );
    }
    let s = &config.solver;
    if let Some(k) = s.k0 {
        if !(k > 0.0 && k.is_finite()) {
            err("k0", format!("solver.k0 must be positive, got {k}"));
        }
    }
    if !(s.tol > 0.0) {
        err("tol", format!("solver.tol must be positive, got {}", s.tol));
    }
    if s.max_iter == 0 {
        err("max_iter", "solver.max_iter must be at least 1".into());
    }
    if !(s.growth > 1.0 && s.growth.is_finite()) {
        err("growth", format!("solver.growth must exceed 1, got {}", s.growth));
    }
    if !(s.shrink > 0.0 && s.shrink < 1.0) {
        err("shrink", format!("solver.shrink must lie in (0, 1), got {}", s.shrink));
    }
    if !s.u0.is_finite() {
        err("u0", "solver.u0 must be finite".into());
    }
    let o = &config.operator;
    if !(o.lipschitz_radius > 0.0 && o.lipschitz_radius.is_finite()) {
        err("lipschitz_radius", format!("operator.lipschitz_radius must be positive, got {}", o.lipschitz_radius));
    }
    if !(o.safety > 0.0 && o.safety.is_finite()) {
        err("safety", format!("operator.safety must be positive, got {}", o.safety));
    }
    if !(o.interp_support > 1.0 && o.interp_support.is_finite()) {
        err("interp_support", format!("operator.interp_support must exceed 1, got {}", o.interp_support));
    }
    if let Some(b) = config.lipschitz_bound {
        if !(b > 0.0) {
            err("lipschitz_bound", format!("lipschitz_bound must be positive, got {b}"));
        }
    }
    check_density(&config.source, "source", text, &mut errors);
    check_density(&config.target, "target", text, &mut errors);

    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}
