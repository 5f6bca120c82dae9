use std::path::{Path, PathBuf};

use fbe_core::kernels::{CollisionKernel, SpatialKernel};
use fbe_core::solver::{SolverConfig, Stepper};
use fbe_core::state::{maxwellian, read_snapshot, two_bump, SnapshotFormat};
use fbe_core::{Backend, CollisionOperator, Density, DissipationStructure, PhaseGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config schema: {0}")]
    Schema(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Relax,
    Audit,
    StructureCheck,
}

/// Phase-space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    #[serde(default = "d_dim")]
    pub d: usize,
    #[serde(default = "d_side")]
    pub torus_side: f64,
    #[serde(default = "d_nx")]
    pub nx: usize,
    #[serde(default = "d_vmax")]
    pub vmax: f64,
    #[serde(default = "d_nv")]
    pub nv: usize,
    #[serde(default)]
    pub initial: Initial,
}

fn d_dim() -> usize {
    2
}
fn d_side() -> f64 {
    4.0
}
fn d_nx() -> usize {
    8
}
fn d_vmax() -> f64 {
    6.0
}
fn d_nv() -> usize {
    16
}

impl Default for StateSection {
    fn default() -> Self {
        StateSection {
            d: d_dim(),
            torus_side: d_side(),
            nx: d_nx(),
            vmax: d_vmax(),
            nv: d_nv(),
            initial: Initial::default(),
        }
    }
}

/// Initial datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    TwoBump {
        centre: Vec<f64>,
        temperature: f64,
        #[serde(default)]
        spatial_amplitude: f64,
    },
    Maxwellian {
        mean_velocity: Vec<f64>,
        temperature: f64,
    },
    Snapshot {
        path: PathBuf,
    },
}

impl Default for Initial {
    fn default() -> Self {
        Initial::TwoBump {
            centre: vec![1.5, 0.0],
            temperature: 0.6,
            spatial_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    #[serde(default)]
    pub collision: CollisionKernel,
    #[serde(default = "d_spatial")]
    pub spatial: SpatialKernel,
}

fn d_spatial() -> SpatialKernel {
    SpatialKernel {
        gamma: 1.0,
        c: 1.0,
        images: 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSection {
    #[serde(default = "d_backend")]
    pub backend: Backend,
}

fn d_backend() -> Backend {
    Backend::Dvm
}

impl Default for CollisionSection {
    fn default() -> Self {
        CollisionSection { backend: d_backend() }
    }
}

/// Where a DVM table is cached between runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default)]
    pub dvm_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub record_flux: bool,
    #[serde(default = "d_true")]
    pub positivity_guard: bool,
    /// Snapshot every k steps; 0 disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "d_format")]
    pub checkpoint_format: SnapshotFormat,
}

fn d_dt() -> f64 {
    0.01
}
fn d_t_end() -> f64 {
    0.5
}
fn d_true() -> bool {
    true
}
fn d_format() -> SnapshotFormat {
    SnapshotFormat::Binary
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: d_dt(),
            t_end: d_t_end(),
            stepper: Stepper::default(),
            truncation: None,
            record_flux: false,
            positivity_guard: true,
            checkpoint_every: 0,
            checkpoint_format: d_format(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationSection {
    #[serde(default)]
    pub structure: DissipationStructure,
    /// Evaluate `D_Ψ*` and `R` per step. Off-uniform data at desk scale makes
    /// this a full tuple sweep per record.
    #[serde(default = "d_true")]
    pub per_step: bool,
}

impl Default for DissipationSection {
    fn default() -> Self {
        DissipationSection {
            structure: DissipationStructure::default(),
            per_step: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalSection {
    /// Flux factors audited besides the true flux.
    #[serde(default = "d_factors")]
    pub factors: Vec<f64>,
    /// Audit both structures instead of only `dissipation.structure`.
    #[serde(default = "d_true")]
    pub both_structures: bool,
}

fn d_factors() -> Vec<f64> {
    vec![1.1, 2.0]
}

impl Default for VariationalSection {
    fn default() -> Self {
        VariationalSection {
            factors: d_factors(),
            both_structures: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSection {
    /// Per-step `‖L dS‖_∞` and `‖M dE‖_∞`.
    #[serde(default)]
    pub degeneracy: bool,
    /// Random densities drawn by `structure-check`.
    #[serde(default = "d_samples")]
    pub samples: usize,
}

fn d_samples() -> usize {
    3
}

impl Default for GenericSection {
    fn default() -> Self {
        GenericSection {
            degeneracy: false,
            samples: d_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliSection {
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

fn d_out() -> PathBuf {
    PathBuf::from("fbe-out")
}

impl Default for CliSection {
    fn default() -> Self {
        CliSection {
            scenario: Scenario::default(),
            seed: 0,
            out: d_out(),
            workers: 0,
        }
    }
}

/// Full run configuration. Every section is optional and defaults to the
/// desk-scale setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub cli: CliSection,
    #[serde(default)]
    pub state: StateSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub kernels: KernelsSection,
    #[serde(default)]
    pub collision: CollisionSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub dissipation: DissipationSection,
    #[serde(default)]
    pub variational: VariationalSection,
    #[serde(default)]
    pub generic: GenericSection,
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides (dotted keys, TOML
    /// literal values, bare words taken as strings) and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let mut value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Schema(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: fbe_core::Error| ConfigError::Invalid(e.to_string());
        self.grid().map_err(invalid)?;
        self.kernels.collision.validate().map_err(invalid)?;
        self.kernels.spatial.validate().map_err(invalid)?;
        self.solver_config().validate().map_err(invalid)?;
        if let Backend::Quadrature { n_omega } = self.collision.backend {
            if n_omega == 0 {
                return Err(ConfigError::Invalid("n_omega must be positive".into()));
            }
        }
        if self.variational.factors.iter().any(|f| !f.is_finite()) {
            return Err(ConfigError::Invalid("flux factors must be finite".into()));
        }
        match &self.state.initial {
            Initial::TwoBump { centre, .. } if centre.len() != self.state.d => {
                Err(ConfigError::Invalid("two_bump centre has the wrong dimension".into()))
            }
            Initial::Maxwellian { mean_velocity, .. } if mean_velocity.len() != self.state.d => {
                Err(ConfigError::Invalid("maxwellian mean_velocity has the wrong dimension".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> fbe_core::Result<PhaseGrid> {
        let s = &self.state;
        PhaseGrid::new(s.d, s.torus_side, s.nx, s.vmax, s.nv)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.dt,
            t_end: s.t_end,
            backend: self.collision.backend,
            stepper: s.stepper,
            truncation: s.truncation,
            record_flux: s.record_flux,
            positivity_guard: s.positivity_guard,
        }
    }

    pub fn initial_density(&self) -> fbe_core::Result<Density> {
        let grid = self.grid()?;
        match &self.state.initial {
            Initial::TwoBump {
                centre,
                temperature,
                spatial_amplitude,
            } => two_bump(&grid, centre, *temperature, *spatial_amplitude),
            Initial::Maxwellian {
                mean_velocity,
                temperature,
            } => maxwellian(&grid, mean_velocity, *temperature),
            Initial::Snapshot { path } => {
                let file = std::fs::File::open(path)?;
                let (f, _) = read_snapshot(std::io::BufReader::new(file))?;
                if *f.grid() != grid {
                    return Err(fbe_core::Error::InvalidInput("snapshot grid differs from the configured grid".into()));
                }
                Ok(f)
            }
        }
    }

    /// Builds the operator, loading or caching the DVM table when a path is set.
    pub fn operator(&self) -> fbe_core::Result<CollisionOperator> {
        let grid = self.grid()?;
        let solver = self.solver_config();
        let kernel = match solver.truncation {
            Some(m) => fbe_core::solver::truncate_kernel(&self.kernels.collision, m)?,
            None => self.kernels.collision,
        };
        match (&self.geometry.dvm_table, solver.backend) {
            (Some(path), Backend::Dvm) => {
                let table = crate::load_or_build_table(path, &grid, &kernel)?;
                CollisionOperator::with_dvm_table(grid, kernel, self.kernels.spatial, table)
            }
            _ => CollisionOperator::new(grid, kernel, self.kernels.spatial, solver.backend),
        }
    }
}

fn apply_override(root: &mut toml::Value, arg: &str) -> Result<(), ConfigError> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| ConfigError::Override(arg.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(arg.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::Schema(format!("override {key}: {part} is not inside a table")))?;
        if n + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_desk_default() {
        let c = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let g = c.grid().unwrap();
        assert_eq!((g.d, g.nx, g.nv), (2, 8, 16));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[solver]\ndtt = 0.1\n", &[]), Err(ConfigError::Schema(_))));
        assert!(matches!(RunConfig::from_toml("[nonsense]\n", &[]), Err(ConfigError::Schema(_))));
        assert!(matches!(RunConfig::from_toml("[solver\n", &[]), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let c = RunConfig::from_toml(
            "",
            &[
                "solver.dt=0.02".into(),
                "solver.t_end = 0.1".into(),
                "dissipation.structure=cosh".into(),
                "collision.backend={kind=\"quadrature\", n_omega=8}".into(),
                "cli.scenario=audit".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.solver.dt, 0.02);
        assert_eq!(c.dissipation.structure, DissipationStructure::Cosh);
        assert_eq!(c.collision.backend, Backend::Quadrature { n_omega: 8 });
        assert_eq!(c.cli.scenario, Scenario::Audit);
        assert!(RunConfig::from_toml("", &["solver.dt".into()]).is_err());
        assert!(RunConfig::from_toml("", &["solver.dt=0.03".into()]).is_err());
    }

    #[test]
    fn dumped_config_round_trips() {
        let c = RunConfig::from_toml("", &["state.initial={kind=\"maxwellian\", mean_velocity=[0.1, 0.0], temperature=0.8}".into()]).unwrap();
        let again = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
    }
}
