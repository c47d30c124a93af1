//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use peridyn::{
    BenchmarkSpec, ForcingFn, Grid2D, InitialCondition, Micromodulus, PenaltySettings,
    PeridynError, Problem, ReferencePolicy, Scheme, TimeConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub material: MaterialConfig,
    pub initial_condition: InitialCondition,
    pub time: TimeSection,
    #[serde(default)]
    pub forcing: ForcingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalization: Option<PenaltySettings>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub a: f64,
    pub b: f64,
    /// Points per axis.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub horizon: f64,
    pub r: u32,
    #[serde(default = "one")]
    pub density: f64,
    #[serde(default)]
    pub micromodulus: Micromodulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "quarter")]
    pub beta: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    None,
    /// Spatially and temporally uniform body force.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write each snapshot as `x1,x2,u` CSV.
    #[serde(default)]
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Space ladder (dx values).
    #[serde(default)]
    pub spacings: Vec<f64>,
    /// Time ladder (dt values), also used by `compare`.
    #[serde(default)]
    pub time_steps: Vec<f64>,
    #[serde(default = "five")]
    pub t_eval: f64,
    #[serde(default = "two")]
    pub reference_factor: usize,
    #[serde(default = "one")]
    pub smoke_t_eval: f64,
    #[serde(default = "smoke_dt")]
    pub smoke_dt: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            spacings: Vec::new(),
            time_steps: Vec::new(),
            t_eval: five(),
            reference_factor: two(),
            smoke_t_eval: one(),
            smoke_dt: smoke_dt(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn quarter() -> f64 {
    0.25
}
fn five() -> f64 {
    5.0
}
fn two() -> usize {
    2
}
fn smoke_dt() -> f64 {
    1e-3
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            source: Box::new(e),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cheap structural checks; the numerical ones happen when the grid,
    /// kernel and problem are built.
    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.study.spacings.iter().chain(&self.study.time_steps).any(|v| !(*v > 0.0)) {
            return bad("ladder entries must be positive".into());
        }
        if self.output.snapshot_times.iter().any(|t| !t.is_finite()) {
            return bad("snapshot times must be finite".into());
        }
        if self.time.scheme == Scheme::StormerVerlet && self.time.beta != 0.0 {
            return bad("stormer_verlet requires beta = 0".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> peridyn::Result<Grid2D> {
        Grid2D::new(self.domain.a, self.domain.b, self.domain.n)
    }

    pub fn benchmark(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            id: match self.initial_condition {
                InitialCondition::LinearRamp { .. } => "linear_ramp",
                InitialCondition::JumpQuadrant => "jump_quadrant",
                InitialCondition::Zero => "zero",
            }
            .to_string(),
            initial_condition: self.initial_condition,
            micromodulus: self.material.micromodulus,
            horizon: self.material.horizon,
            r: self.material.r,
            beta: self.time.beta,
            density: self.material.density,
            a: self.domain.a,
            b: self.domain.b,
        }
    }

    pub fn time_config(&self) -> peridyn::Result<TimeConfig> {
        TimeConfig::new(self.time.dt, self.time.t_final, self.time.beta)
    }

    pub fn problem(&self) -> peridyn::Result<Problem> {
        let spec = self.benchmark();
        let problem = spec.problem(self.grid()?, self.penalization.as_ref())?;
        Ok(match self.forcing {
            ForcingConfig::None => problem,
            ForcingConfig::Constant { value } => {
                let f: ForcingFn = Arc::new(move |_, _, _| value);
                let op = problem.operator().clone().with_forcing(f);
                let rebuilt = Problem::new(op);
                match problem.penalization() {
                    Some(p) => rebuilt.with_penalization(p.clone())?,
                    None => rebuilt,
                }
            }
        })
    }

    pub fn reference_policy(&self) -> ReferencePolicy {
        ReferencePolicy::Refined {
            factor: self.study.reference_factor,
        }
    }

    /// Studies are unforced.
    pub fn require_unforced(&self) -> Result<(), PeridynError> {
        match self.forcing {
            ForcingConfig::None => Ok(()),
            _ => Err(PeridynError::InvalidParameter(
                "convergence studies and comparisons do not support forcing".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[domain]
a = 0.0
b = 1.0
n = 20

[material]
horizon = 0.2
r = 3
density = 1.5
micromodulus = { name = "gaussian", amplitude = 2.0, length = 0.5 }

[initial_condition]
name = "linear_ramp"
c1 = -0.5
c2 = -0.5

[time]
dt = 0.01
t_final = 1.0
beta = 0.25

[forcing]
name = "constant"
value = 0.5

[penalization]
mu = 0.2
epsilon = 0.2
constraint_value = 1.0
variant = "velocity"

[output]
snapshot_times = [0.0, 0.5, 1.0]
dir = "out"
csv = true

[study]
spacings = [0.2, 0.1]
time_steps = [0.1, 0.05]
t_eval = 2.0
reference_factor = 4
smoke_t_eval = 0.5
smoke_dt = 0.01
"#;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = RunConfig::parse(FULL).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.penalization.unwrap().variant, peridyn::PenaltyVariant::Velocity);
        assert_eq!(cfg.material.micromodulus, Micromodulus::Gaussian { amplitude: 2.0, length: 0.5 });
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse(
            r#"
initial_condition = { name = "jump_quadrant" }
[domain]
a = 0.0
b = 1.0
n = 10
[material]
horizon = 0.2
r = 1
[time]
dt = 0.1
t_final = 1.0
"#,
        )
        .unwrap();
        assert_eq!(cfg.time.beta, 0.25);
        assert_eq!(cfg.forcing, ForcingConfig::None);
        assert_eq!(cfg.material.micromodulus, Micromodulus::default());
        assert!(cfg.penalization.is_none());
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let bad = FULL.replace("\"linear_ramp\"", "\"sine\"");
        assert!(matches!(RunConfig::parse(&bad), Err(ConfigError::Parse { .. })));
        let bad = FULL.replace("\"gaussian\"", "\"cubic\"");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = FULL.replace("horizon", "horizn");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn builds_a_forced_penalized_problem() {
        let cfg = RunConfig::parse(FULL).unwrap();
        let p = cfg.problem().unwrap();
        assert!(p.operator().has_forcing());
        assert_eq!(p.grid().n_points(), 28);
        assert!(cfg.require_unforced().is_err());
    }
}
