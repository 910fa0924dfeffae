//! Run configuration: a flat JSON document with per-scenario defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use canomap::{MapVariant, Sign};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Rotation,
    Straightening,
    Ballistic,
    Linear,
    Custom,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Rotation => "rotation",
            Scenario::Straightening => "straightening",
            Scenario::Ballistic => "ballistic",
            Scenario::Linear => "linear",
            Scenario::Custom => "custom",
        })
    }
}

/// Controlling function family for the custom scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controlling {
    /// `U = κ·x·λ`.
    Bilinear,
    /// `U = λ²/2 − x²/2 + λx` (n = 1).
    Rotation,
    /// `U = (D(t)·κ𝟙)·λ` from the state-transition matrix.
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_canonicity")]
    pub canonicity: f64,
    #[serde(default = "default_degenerate")]
    pub degenerate: f64,
    #[serde(default = "default_derivative")]
    pub derivative: f64,
}

fn default_canonicity() -> f64 {
    canomap::mapping::DEFAULT_TOLERANCE
}

fn default_degenerate() -> f64 {
    canomap::mapping::DEFAULT_DEGENERATE_TOLERANCE
}

fn default_derivative() -> f64 {
    1e-5
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            canonicity: default_canonicity(),
            degenerate: default_degenerate(),
            derivative: default_derivative(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_t1")]
    pub t1: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_variant: Option<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Number of random points for the symplectic and derivative checks.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lam0: Option<Vec<f64>>,
    /// Central-field strength `σ` (ballistic).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Row-major system matrix (custom).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Scale `κ` of the controlling function.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    /// Constant velocity of the straightening scenario.
    #[serde(default = "default_drift")]
    pub drift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controlling: Option<Controlling>,
    /// Emit a gnuplot script next to the CSV files.
    #[serde(default)]
    pub plot: bool,
}

fn default_t1() -> f64 {
    1.0
}

fn default_step() -> f64 {
    1e-3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("canomap-out")
}

fn default_points() -> usize {
    64
}

fn default_sigma() -> f64 {
    1.0
}

fn default_coupling() -> f64 {
    0.1
}

fn default_drift() -> f64 {
    0.8
}

/// Scalars that `sweep` may vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "n",
    "t0",
    "t1",
    "step",
    "seed",
    "points",
    "sigma",
    "coupling",
    "drift",
    "tolerances.canonicity",
    "tolerances.degenerate",
    "tolerances.derivative",
];

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses a mapping variant name; only variants with a canonicity criterion
/// are accepted by `run`.
pub fn parse_variant(name: &str) -> Result<MapVariant, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "standard" => Ok(MapVariant::Standard),
        "cross" => Ok(MapVariant::Cross),
        "symplectic" => Ok(MapVariant::Symplectic),
        other => {
            let signs = |s: &str| -> Option<(Sign, Sign)> {
                let inner = s.strip_prefix('(')?.strip_suffix(')')?;
                let (a, b) = inner.split_once(',')?;
                let sign = |v: &str| match v.trim() {
                    "+" => Some(Sign::Plus),
                    "-" => Some(Sign::Minus),
                    _ => None,
                };
                Some((sign(a)?, sign(b)?))
            };
            if let Some((sy, smu)) = other.strip_prefix("signed").and_then(signs) {
                return Ok(MapVariant::Signed { sy, smu });
            }
            if let Some((sy, smu)) = other.strip_prefix("swapped").and_then(signs) {
                return Ok(MapVariant::Swapped { sy, smu });
            }
            Err(config_err(format!("map_variant `{name}` is not a known mapping variant")))
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Dimension after applying the scenario default.
    pub fn dim(&self) -> usize {
        match self.scenario {
            Scenario::Rotation | Scenario::Straightening => self.n.unwrap_or(1),
            Scenario::Ballistic => self.n.unwrap_or(4),
            Scenario::Linear => self.n.unwrap_or(1),
            Scenario::Custom => self
                .n
                .or_else(|| self.matrix.as_ref().map(|m| m.len()))
                .unwrap_or(1),
        }
    }

    pub fn variant(&self) -> Result<MapVariant, CliError> {
        let default = match self.scenario {
            Scenario::Rotation => MapVariant::Cross,
            Scenario::Custom if self.controlling == Some(Controlling::Rotation) => MapVariant::Cross,
            _ => MapVariant::Standard,
        };
        let v = match &self.map_variant {
            Some(name) => parse_variant(name)?,
            None => default,
        };
        if !matches!(v, MapVariant::Standard | MapVariant::Cross) {
            return Err(config_err(format!(
                "map_variant `{v}` has no canonicity criterion; use standard or cross"
            )));
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.step <= 0.0 || !self.step.is_finite() {
            return Err(config_err("step must be positive"));
        }
        if !self.t0.is_finite() || !self.t1.is_finite() || self.t1 <= self.t0 {
            return Err(config_err("t1 must exceed t0"));
        }
        for (name, v) in [
            ("tolerances.canonicity", self.tolerances.canonicity),
            ("tolerances.degenerate", self.tolerances.degenerate),
            ("tolerances.derivative", self.tolerances.derivative),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        if self.points == 0 {
            return Err(config_err("points must be positive"));
        }
        let n = self.dim();
        if n == 0 {
            return Err(config_err("n must be positive"));
        }
        match self.scenario {
            Scenario::Rotation | Scenario::Straightening if n != 1 => {
                return Err(config_err(format!("n must be 1 for the {} scenario", self.scenario)));
            }
            Scenario::Ballistic if n != 4 => return Err(config_err("n must be 4 for the ballistic scenario")),
            _ => {}
        }
        if self.scenario == Scenario::Ballistic && (self.sigma <= 0.0 || !self.sigma.is_finite()) {
            return Err(config_err("sigma must be positive"));
        }
        for (name, v) in [("x0", &self.x0), ("lam0", &self.lam0)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(config_err(format!("{name} must have {n} components")));
                }
                if v.iter().any(|c| !c.is_finite()) {
                    return Err(config_err(format!("{name} must be finite")));
                }
            }
        }
        if self.scenario == Scenario::Custom {
            let m = self.matrix.as_ref().ok_or_else(|| config_err("matrix is required for the custom scenario"))?;
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(config_err(format!("matrix must be {n}x{n}")));
            }
            if self.controlling == Some(Controlling::Rotation) && n != 1 {
                return Err(config_err("controlling `rotation` requires n = 1"));
            }
        }
        self.variant()?;
        Ok(())
    }

    /// Returns a copy with one recognized scalar replaced.
    pub fn with_param(&self, param: &str, value: &str) -> Result<Self, CliError> {
        if !SWEEP_PARAMS.contains(&param) {
            return Err(config_err(format!(
                "param `{param}` is not a sweepable scalar (expected one of: {})",
                SWEEP_PARAMS.join(", ")
            )));
        }
        let number = |integer: bool| -> Result<serde_json::Value, CliError> {
            let bad = || config_err(format!("value `{value}` is not valid for {param}"));
            if integer {
                value.trim().parse::<u64>().map(serde_json::Value::from).map_err(|_| bad())
            } else {
                value.trim().parse::<f64>().map(serde_json::Value::from).map_err(|_| bad())
            }
        };
        let v = number(matches!(param, "n" | "seed" | "points"))?;
        let mut doc = serde_json::to_value(self).map_err(|e| config_err(e.to_string()))?;
        match param.split_once('.') {
            Some((outer, inner)) => doc[outer][inner] = v,
            None => doc[param] = v,
        }
        serde_json::from_value(doc).map_err(|e| config_err(format!("invalid value for {param}: {e}")))
    }
}
