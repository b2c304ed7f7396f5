//! Scenario files, bundled presets and the commands behind the `sea` binary.
//!
//! A scenario is a TOML document with `system`, `initial`, `tau`, `run`,
//! `units` and `output` blocks. Matrices are written row-major as
//! `[re, im]` pairs, or with the `diag = [..]` / `real = [[..]]` shorthands.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::composite::{self, BipartiteSystem, CompositeGenerators, CompositionStructure, DissipatorModel};
use crate::error::SeaError;
use crate::integrator::{
    self, AttractorReport, CompositeSystem, Dynamics, Event, IntegratorConfig, SingleSystem, Trajectory,
};
use crate::onsager::{self, AffinityVector, ConductivityMatrix, ObservableBasis, QuadraticEntropyRate};
use crate::op_space::{
    c, hermitian_part, identity, kron, max_abs, trace, trace_norm_distance, OperatorMatrix, SpectralState,
    ToleranceSet, UnitSystem,
};
use crate::random;
use crate::single::{self, GeneratorSet, TauPolicy};

/// Failure of a command, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Runtime(#[from] SeaError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    fn config(field: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config { field: field.into(), message: message.to_string() }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// 2 for configuration problems, 1 for everything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config { field, message } => json!({"error": "config", "field": field, "message": message}),
            CliError::Runtime(e) => json!({"error": "runtime", "message": e.to_string()}),
            CliError::Io { path, message } => json!({"error": "io", "path": path, "message": message}),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn field<T>(name: &str, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::config(name, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal {
        diag: Vec<f64>,
    },
    Real {
        real: Vec<Vec<f64>>,
    },
    /// Rows of `[re, im]` pairs.
    Entries(Vec<Vec<[f64; 2]>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, name: &str) -> CliResult<OperatorMatrix> {
        let rows: Vec<Vec<[f64; 2]>> = match self {
            MatrixSpec::Diagonal { diag } => {
                let n = diag.len();
                (0..n).map(|i| (0..n).map(|j| if i == j { [diag[i], 0.0] } else { [0.0, 0.0] }).collect()).collect()
            }
            MatrixSpec::Real { real } => real.iter().map(|r| r.iter().map(|&x| [x, 0.0]).collect()).collect(),
            MatrixSpec::Entries(e) => e.clone(),
        };
        let n = rows.len();
        if n == 0 {
            return Err(CliError::config(name, "empty matrix"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(CliError::config(
                    format!("{name}[{i}]"),
                    format!("row has {} entries, expected {n}", r.len()),
                ));
            }
        }
        if rows.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(CliError::config(name, "non-finite entry"));
        }
        Ok(OperatorMatrix::from_fn(n, n, |i, j| c(rows[i][j][0], rows[i][j][1])))
    }

    pub fn from_matrix(m: &OperatorMatrix) -> Self {
        MatrixSpec::Entries(
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect(),
        )
    }
}

fn hermitian_field(name: &str, spec: &MatrixSpec) -> CliResult<OperatorMatrix> {
    let m = spec.to_matrix(name)?;
    field(name, crate::op_space::ensure_hermitian(&m))?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    /// Factor dimensions; empty or a single entry for one constituent.
    #[serde(default)]
    pub dims: Vec<usize>,
    pub hamiltonian: Option<MatrixSpec>,
    #[serde(default)]
    pub local_hamiltonians: Vec<MatrixSpec>,
    pub interaction: Option<MatrixSpec>,
    #[serde(default)]
    pub extras: Vec<MatrixSpec>,
    #[serde(default = "default_model")]
    pub model: DissipatorModel,
}

fn default_model() -> DissipatorModel {
    DissipatorModel::SteepestEntropyAscent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialBlock {
    Matrix {
        rho: MatrixSpec,
    },
    Gibbs {
        beta: f64,
    },
    /// Random density operator drawn from the scenario seed.
    Random {
        rank: Option<usize>,
    },
    /// Normalized state vector given as `[re, im]` amplitudes.
    Pure {
        amplitudes: Vec<[f64; 2]>,
    },
    Product {
        factors: Vec<MatrixSpec>,
    },
    Mixture {
        components: Vec<Component>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub state: InitialBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauBlock {
    /// One policy shared by all subsystems, or one per subsystem.
    pub policies: Vec<TauPolicy>,
}

impl Default for TauBlock {
    fn default() -> Self {
        Self { policies: vec![TauPolicy::constant(1.0)] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckBlock {
    pub random_states: usize,
    pub pure_states: usize,
    /// Integration horizon of the trajectory-based criteria.
    pub horizon: f64,
    pub replacements: usize,
}

impl Default for CheckBlock {
    fn default() -> Self {
        Self { random_states: 20, pure_states: 5, horizon: 2.0, replacements: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    #[default]
    GellMann,
    OrthogonalExtension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OnsagerBlock {
    pub basis: BasisChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Constant relaxation time for every subsystem.
    Tau,
    Dt,
    TEnd,
    /// Inverse temperature of a `gibbs` initial state.
    Beta,
    /// Seed of a `random` initial state.
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemBlock,
    pub initial: InitialBlock,
    #[serde(default)]
    pub tau: TauBlock,
    #[serde(default)]
    pub run: IntegratorConfig,
    #[serde(default)]
    pub units: UnitSystem,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub check: CheckBlock,
    #[serde(default)]
    pub onsager: OnsagerBlock,
    pub sweep: Option<SweepBlock>,
}

fn default_name() -> String {
    "scenario".into()
}

pub struct Preset {
    pub name: &'static str,
    pub source: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "qubit-coherence", source: include_str!("../presets/qubit-coherence.toml") },
    Preset { name: "qutrit-diagonal", source: include_str!("../presets/qutrit-diagonal.toml") },
    Preset { name: "gibbs", source: include_str!("../presets/gibbs.toml") },
    Preset { name: "two-qubit-correlated", source: include_str!("../presets/two-qubit-correlated.toml") },
    Preset { name: "sqrt-perception-variant", source: include_str!("../presets/sqrt-perception-variant.toml") },
];

pub fn preset(name: &str) -> CliResult<ScenarioConfig> {
    let p = PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CliError::config("preset", format!("unknown preset {name:?}")))?;
    parse_config(p.source)
}

pub fn parse_config(text: &str) -> CliResult<ScenarioConfig> {
    toml::from_str(text).map_err(|e: toml::de::Error| {
        let message = e.message().to_string();
        let location = e
            .span()
            .map(|s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            })
            .unwrap_or_else(|| "document".into());
        CliError::config(location, message)
    })
}

pub fn load_config(path: &Path) -> CliResult<ScenarioConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// A validated scenario ready to run.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub units: UnitSystem,
    pub system: System,
    pub initial: SpectralState,
}

pub enum System {
    Single(SingleSystem),
    Composite(CompositeSystem),
}

impl Scenario {
    pub fn dynamics(&self) -> &dyn Dynamics {
        match &self.system {
            System::Single(s) => s,
            System::Composite(s) => s,
        }
    }

    pub fn generators(&self) -> &GeneratorSet {
        self.dynamics().generators()
    }

    pub fn tolerances(&self) -> ToleranceSet {
        *self.dynamics().tolerances()
    }

    pub fn dim(&self) -> usize {
        self.dynamics().dim()
    }

    pub fn is_composite(&self) -> bool {
        matches!(self.system, System::Composite(_))
    }

    fn state(&self, rho: &OperatorMatrix) -> crate::Result<SpectralState> {
        SpectralState::new(rho, &self.units, &self.tolerances())
    }
}

fn build_system(cfg: &ScenarioConfig, units: UnitSystem) -> CliResult<System> {
    let sys = &cfg.system;
    for (i, p) in cfg.tau.policies.iter().enumerate() {
        field(&format!("tau.policies[{i}]"), p.validate())?;
    }
    if cfg.tau.policies.is_empty() {
        return Err(CliError::config("tau.policies", "at least one policy is required"));
    }
    let extras = sys
        .extras
        .iter()
        .enumerate()
        .map(|(i, g)| hermitian_field(&format!("system.extras[{i}]"), g))
        .collect::<CliResult<Vec<_>>>()?;
    if sys.dims.len() <= 1 {
        let h = match (&sys.hamiltonian, sys.local_hamiltonians.as_slice()) {
            (Some(h), []) => hermitian_field("system.hamiltonian", h)?,
            (None, [h]) => hermitian_field("system.local_hamiltonians[0]", h)?,
            _ => return Err(CliError::config("system.hamiltonian", "a single system needs exactly one Hamiltonian")),
        };
        if let Some(&d) = sys.dims.first() {
            if d != h.nrows() {
                return Err(CliError::config(
                    "system.hamiltonian",
                    format!("dimension {} does not match dims = [{d}]", h.nrows()),
                ));
            }
        }
        if sys.interaction.is_some() {
            return Err(CliError::config("system.interaction", "interaction needs at least two factors"));
        }
        let gen = field("system.extras", GeneratorSet::new(h, extras))?;
        let policy = cfg.tau.policies[0].clone();
        let mut s = field("tau", SingleSystem::new(gen, policy, units))?;
        match sys.model {
            DissipatorModel::SteepestEntropyAscent => {}
            DissipatorModel::UnitaryOnly => s.unitary_only = true,
            DissipatorModel::SqrtPerceptionVariant => {
                return Err(CliError::config("system.model", "the variant dissipator needs a composite system"));
            }
        }
        return Ok(System::Single(s));
    }
    let comp = field("system.dims", CompositionStructure::new(sys.dims.clone()))?;
    let gens = if !sys.local_hamiltonians.is_empty() {
        let locals = sys
            .local_hamiltonians
            .iter()
            .enumerate()
            .map(|(i, h)| hermitian_field(&format!("system.local_hamiltonians[{i}]"), h))
            .collect::<CliResult<Vec<_>>>()?;
        let v = sys.interaction.as_ref().map(|v| hermitian_field("system.interaction", v)).transpose()?;
        if sys.hamiltonian.is_some() {
            return Err(CliError::config("system.hamiltonian", "give either hamiltonian or local_hamiltonians"));
        }
        field("system.local_hamiltonians", CompositeGenerators::new(&comp, locals, v, extras))?
    } else {
        let h =
            sys.hamiltonian.as_ref().ok_or_else(|| CliError::config("system.hamiltonian", "missing Hamiltonian"))?;
        let mut h = hermitian_field("system.hamiltonian", h)?;
        if let Some(v) = &sys.interaction {
            h += hermitian_field("system.interaction", v)?;
        }
        field("system.hamiltonian", CompositeGenerators::from_total(&comp, h, extras))?
    };
    let policies = cfg.tau.policies.clone();
    if policies.len() != 1 && policies.len() != comp.len() {
        return Err(CliError::config(
            "tau.policies",
            format!("expected 1 or {} policies, got {}", comp.len(), policies.len()),
        ));
    }
    let s = field("tau", CompositeSystem::new(comp, gens, policies, sys.model, units))?;
    Ok(System::Composite(s))
}

fn initial_matrix(
    block: &InitialBlock,
    name: &str,
    system: &System,
    units: &UnitSystem,
    seed: u64,
) -> CliResult<OperatorMatrix> {
    let (dim, gen, tol) = match system {
        System::Single(s) => (s.dim(), &s.gen, s.tol),
        System::Composite(s) => (s.dim(), &s.gens.set, s.tol),
    };
    let m = match block {
        InitialBlock::Matrix { rho } => rho.to_matrix(&format!("{name}.rho"))?,
        InitialBlock::Gibbs { beta } => {
            field(&format!("{name}.beta"), single::gibbs_state(gen, *beta, &[], units, &tol))?.rho().clone()
        }
        InitialBlock::Random { rank } => {
            let r = rank.unwrap_or(dim);
            if r == 0 || r > dim {
                return Err(CliError::config(format!("{name}.rank"), format!("rank must be in 1..={dim}")));
            }
            let mut rng = random::rng(seed);
            if r == dim {
                random::full_rank_state(&mut rng, dim)
            } else {
                random::density_matrix(&mut rng, dim, r)
            }
        }
        InitialBlock::Pure { amplitudes } => {
            let n: f64 = amplitudes.iter().map(|a| a[0] * a[0] + a[1] * a[1]).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(CliError::config(format!("{name}.amplitudes"), "zero vector"));
            }
            let v: Vec<_> = amplitudes.iter().map(|a| c(a[0] / n, a[1] / n)).collect();
            OperatorMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
        }
        InitialBlock::Product { factors } => {
            let mut out = identity(1);
            for (i, f) in factors.iter().enumerate() {
                out = kron(&out, &f.to_matrix(&format!("{name}.factors[{i}]"))?);
            }
            out
        }
        InitialBlock::Mixture { components } => {
            let mut out = OperatorMatrix::zeros(dim, dim);
            for (i, comp) in components.iter().enumerate() {
                let sub = format!("{name}.components[{i}]");
                if !(comp.weight >= 0.0) {
                    return Err(CliError::config(format!("{sub}.weight"), "weights must be nonnegative"));
                }
                let m =
                    initial_matrix(&comp.state, &format!("{sub}.state"), system, units, seed.wrapping_add(i as u64))?;
                if m.nrows() != dim {
                    return Err(CliError::config(
                        sub,
                        format!("dimension {} does not match the system ({dim})", m.nrows()),
                    ));
                }
                out += m * c(comp.weight, 0.0);
            }
            out
        }
    };
    if m.nrows() != dim {
        return Err(CliError::config(name, format!("dimension {} does not match the system ({dim})", m.nrows())));
    }
    Ok(m)
}

/// Validates a configuration; `seed` overrides the configured seed.
pub fn build(config: &ScenarioConfig, seed: Option<u64>) -> CliResult<Scenario> {
    let units = field("units", UnitSystem::new(config.units.hbar, config.units.k_b))?;
    field("run", config.run.validate())?;
    let seed = seed.unwrap_or(config.seed);
    let system = build_system(config, units)?;
    let rho = initial_matrix(&config.initial, "initial", &system, &units, seed)?;
    let tol = match &system {
        System::Single(s) => s.tol,
        System::Composite(s) => s.tol,
    };
    let initial = field("initial", SpectralState::new(&rho, &units, &tol))?;
    Ok(Scenario { config: config.clone(), seed, units, system, initial })
}

/// Where and how command output is written.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
}

impl OutputOptions {
    fn dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out_dir.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("sea-out"))
    }

    fn format(&self, cfg: &ScenarioConfig) -> Format {
        self.format.or(cfg.output.format).unwrap_or_default()
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_rows(m: &OperatorMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub dim: usize,
    pub composite: bool,
    pub steps: usize,
    pub rejected_steps: usize,
    pub halted_at_equilibrium: bool,
    pub t_final: f64,
    pub terminal_state: Vec<Vec<[f64; 2]>>,
    pub terminal_entropy: f64,
    pub terminal_energy: f64,
    pub events: Vec<Event>,
    pub drift: integrator::DriftSummary,
    pub attractor: Option<AttractorReport>,
    pub attractor_error: Option<String>,
    pub files: Vec<PathBuf>,
}

pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

/// Column names of the trajectory table.
pub fn trajectory_header(scn: &Scenario) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "entropy".into(), "energy".into()];
    cols.extend((0..scn.generators().extras.len()).map(|i| format!("mean_g{i}")));
    cols.extend((0..scn.dim()).map(|i| format!("eig{i}")));
    cols.push("entropy_rate".into());
    cols.push("dissipation".into());
    let ntau = match &scn.system {
        System::Single(_) => 1,
        System::Composite(s) => s.comp.len(),
    };
    if ntau == 1 {
        cols.push("tau".into());
    } else {
        cols.extend((0..ntau).map(|j| format!("tau{j}")));
    }
    cols.push("attractor_distance".into());
    if scn.is_composite() {
        cols.push("sigma_ab".into());
    }
    cols
}

fn trajectory_rows(scn: &Scenario, traj: &Trajectory, attractor: Option<&OperatorMatrix>) -> Vec<Vec<f64>> {
    traj.samples
        .iter()
        .map(|s| {
            let mut row = vec![s.t, s.entropy, s.energy];
            row.extend(&s.extra_means);
            row.extend(&s.eigenvalues);
            row.push(s.entropy_rate);
            row.push(s.dissipation);
            row.extend(&s.taus);
            row.push(attractor.map(|a| trace_norm_distance(&s.rho, a)).unwrap_or(f64::NAN));
            if scn.is_composite() {
                row.push(s.correlation.unwrap_or(f64::NAN));
            }
            row
        })
        .collect()
}

pub fn trajectory_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|&x| num(x)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn trajectory_json(header: &[String], rows: &[Vec<f64>], traj: &Trajectory) -> serde_json::Value {
    let samples: Vec<serde_json::Value> = rows
        .iter()
        .zip(&traj.samples)
        .map(|(r, s)| {
            let mut obj = serde_json::Map::new();
            for (k, v) in header.iter().zip(r) {
                obj.insert(k.clone(), json!(v));
            }
            obj.insert("rho".into(), json!(matrix_rows(&s.rho)));
            serde_json::Value::Object(obj)
        })
        .collect();
    json!({ "columns": header, "samples": samples })
}

/// Integrates the scenario and writes `<name>.csv|json` and `<name>.summary.json`.
pub fn cmd_run(config: &ScenarioConfig, seed: Option<u64>, opts: &OutputOptions) -> CliResult<RunOutcome> {
    let scn = build(config, seed)?;
    let traj = integrator::integrate(&scn.initial, scn.dynamics(), &config.run)?;
    let (attractor, attractor_error) = match integrator::attractor_summary(&traj, scn.generators(), &scn.units) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let eq = single::matching_equilibrium(&scn.initial, scn.generators(), &scn.units, &scn.tolerances()).ok();
    let header = trajectory_header(&scn);
    let rows = trajectory_rows(&scn, &traj, eq.as_ref().map(|e| e.rho()));
    let dir = opts.dir(config);
    let format = opts.format(config);
    let table = match format {
        Format::Csv => dir.join(format!("{}.csv", config.name)),
        Format::Json => dir.join(format!("{}.json", config.name)),
    };
    let body = match format {
        Format::Csv => trajectory_csv(&header, &rows),
        Format::Json => serde_json::to_string_pretty(&trajectory_json(&header, &rows, &traj)).expect("serializable"),
    };
    write_file(&table, &body)?;
    let summary_path = dir.join(format!("{}.summary.json", config.name));
    let last = traj.last();
    let summary = RunSummary {
        name: config.name.clone(),
        seed: scn.seed,
        dim: scn.dim(),
        composite: scn.is_composite(),
        steps: traj.steps,
        rejected_steps: traj.rejected_steps,
        halted_at_equilibrium: traj.halted_at_equilibrium,
        t_final: last.t,
        terminal_state: matrix_rows(&last.rho),
        terminal_entropy: last.entropy,
        terminal_energy: last.energy,
        events: traj.events.clone(),
        drift: traj.drift.clone(),
        attractor,
        attractor_error,
        files: vec![table, summary_path.clone()],
    };
    write_file(&summary_path, &serde_json::to_string_pretty(&summary).expect("serializable"))?;
    Ok(RunOutcome { trajectory: traj, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    ProbeOnly,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub status: Status,
    /// Worst measured value of the audited quantity.
    pub margin: f64,
    pub limit: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub model: DissipatorModel,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
}

impl CheckReport {
    pub fn failed(&self) -> Vec<u8> {
        self.criteria.iter().filter(|c| c.status == Status::Fail).map(|c| c.id).collect()
    }

    pub fn criterion(&self, id: u8) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

fn criterion(id: u8, title: &'static str, margin: f64, limit: f64, pass: bool, detail: String) -> CriterionResult {
    CriterionResult { id, title, status: if pass { Status::Pass } else { Status::Fail }, margin, limit, detail }
}

fn not_applicable(id: u8, title: &'static str, detail: &str) -> CriterionResult {
    CriterionResult {
        id,
        title,
        status: Status::NotApplicable,
        margin: f64::NAN,
        limit: f64::NAN,
        detail: detail.into(),
    }
}

fn sample_states(scn: &Scenario, n: usize, rng: &mut random::SeaRng) -> Vec<OperatorMatrix> {
    let dim = scn.dim();
    let mut out = vec![scn.initial.rho().clone()];
    for k in 0..n {
        let m = match (k % 3, &scn.system) {
            (2, System::Composite(s)) => random::product_state(rng, &s.comp.dims),
            (1, _) if dim > 2 => random::density_matrix(rng, dim, dim - 1),
            _ => random::full_rank_state(rng, dim),
        };
        out.push(m);
    }
    out
}

/// Local Hamiltonians of the two halves of the default bipartition, when
/// the system is a noninteracting composite.
fn bipartition(scn: &Scenario) -> Option<BipartiteSystem> {
    let System::Composite(s) = &scn.system else { return None };
    let split = s.split?;
    if s.gens.local_hamiltonians.is_empty() || max_abs(&s.gens.interaction) > 1e-14 {
        return None;
    }
    let comp_a = s.comp.block(0..split).ok()?;
    let comp_b = s.comp.block(split..s.comp.len()).ok()?;
    let mut h_a = OperatorMatrix::zeros(comp_a.total_dim(), comp_a.total_dim());
    for (j, h) in s.gens.local_hamiltonians[..split].iter().enumerate() {
        h_a += composite::embed(&comp_a, j, h);
    }
    let mut h_b = OperatorMatrix::zeros(comp_b.total_dim(), comp_b.total_dim());
    for (j, h) in s.gens.local_hamiltonians[split..].iter().enumerate() {
        h_b += composite::embed(&comp_b, j, h);
    }
    BipartiteSystem::new(s.comp.clone(), split, h_a, h_b).ok()
}

fn hamiltonian_part(scn: &Scenario, state: &SpectralState) -> OperatorMatrix {
    single::hamiltonian_term(state, scn.generators(), &scn.units)
}

/// Runs the executable conformance criteria on the scenario's system.
pub fn cmd_check(config: &ScenarioConfig, seed: Option<u64>) -> CliResult<CheckReport> {
    let scn = build(config, seed)?;
    let chk = &config.check;
    let mut rng = random::rng(scn.seed);
    let states = sample_states(&scn, chk.random_states, &mut rng);
    let dyn_ = scn.dynamics();
    let gen = scn.generators().clone();
    let mut criteria = Vec::new();

    // 1: positivity and normalization along trajectories. Trajectories start
    // from the configured state and full-rank samples; for composites the
    // first-order outflow from the kernel of rank-deficient samples is
    // reported alongside.
    let run = IntegratorConfig { t_end: chk.horizon, halt_at_equilibrium: true, ..config.run.clone() };
    let mut worst_neg: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    let mut failure = None;
    let starts = std::iter::once(&states[0])
        .chain(states[1..].iter().filter(|r| scn.state(r).map(|s| s.is_full_rank()).unwrap_or(false)).take(2));
    for rho in starts {
        match scn.state(rho).and_then(|s| integrator::integrate(&s, dyn_, &run)) {
            Ok(t) => {
                worst_neg = worst_neg.max(-t.drift.min_eigenvalue);
                worst_trace = worst_trace.max(t.drift.max_trace_drift);
            }
            Err(e) => failure = Some(e.to_string()),
        }
    }
    let mut kernel_outflow: Option<f64> = None;
    if !dyn_.preserves_rank() {
        for rho in &states[1..] {
            let s = scn.state(rho)?;
            if s.is_full_rank() {
                continue;
            }
            let rhs = dyn_.evaluate(&s)?.rhs;
            let k = s.eigenvectors().columns(s.rank(), s.dim() - s.rank()).into_owned();
            let block = hermitian_part(&(k.adjoint() * rhs * &k));
            let low = crate::op_space::hermitian_eigen(&block).0.last().copied().unwrap_or(0.0);
            kernel_outflow = Some(kernel_outflow.map_or(low, |w: f64| w.min(low)));
        }
    }
    let margin = worst_neg.max(worst_trace);
    let mut detail = failure
        .clone()
        .unwrap_or_else(|| format!("min eigenvalue {:.3e}, trace drift {:.3e}", -worst_neg, worst_trace));
    if let Some(k) = kernel_outflow {
        detail.push_str(&format!("; rank-deficient samples: min kernel rate {k:.3e}"));
    }
    criteria.push(criterion(
        1,
        "causality and positivity along trajectories",
        margin,
        1e-9,
        failure.is_none() && margin < 1e-9,
        detail,
    ));

    // 2: pure states evolve unitarily
    let mut worst: f64 = 0.0;
    for _ in 0..chk.pure_states {
        let s = scn.state(&random::pure_state(&mut rng, scn.dim()))?;
        let ev = dyn_.evaluate(&s)?;
        worst = worst.max(max_abs(&(ev.rhs - hamiltonian_part(&scn, &s))));
    }
    criteria.push(criterion(
        2,
        "pure states evolve unitarily",
        worst,
        1e-9,
        worst < 1e-9,
        format!("max dissipator entry {worst:.3e}"),
    ));

    // 3 and 5: conservation and entropy nondecrease
    let mut cons: f64 = 0.0;
    let mut min_rate = f64::INFINITY;
    let mut evaluations = Vec::with_capacity(states.len());
    for rho in &states {
        let s = scn.state(rho)?;
        let ev = dyn_.evaluate(&s)?;
        cons = cons.max(trace(&ev.rhs).norm());
        for r in gen.observables() {
            cons = cons.max((&ev.rhs * &r).trace().re.abs());
        }
        min_rate = min_rate.min(single::entropy_rate_of(&s, &ev.rhs));
        evaluations.push(ev);
    }
    criteria.push(criterion(
        3,
        "conservation of trace, energy and generators",
        cons,
        1e-9,
        cons < 1e-9,
        format!("{} states", states.len()),
    ));

    // 4: stability probe
    criteria.push(stability_probe(&scn, &run, &mut rng));

    criteria.push(criterion(
        5,
        "entropy nondecrease",
        -min_rate,
        1e-10,
        min_rate >= -1e-10,
        format!("min entropy rate {min_rate:.3e}"),
    ));

    // 6-8: separability on a noninteracting bipartition
    const T6: &str = "separate energy conservation";
    const T7: &str = "weak separability and separate entropy nondecrease";
    const T8: &str = "locality under replacement of the other Hamiltonian";
    match (&scn.system, bipartition(&scn)) {
        (System::Composite(s), Some(bp)) => {
            let mut all = states.clone();
            for _ in 0..3 {
                all.push(random::product_state(&mut rng, &s.comp.dims));
            }
            let rep = composite::separability_report(
                &bp,
                s.model,
                &s.policies,
                &all,
                chk.replacements,
                scn.seed ^ 0x5eed,
                &scn.units,
                &s.tol,
            )?;
            let e = rep.energy_rate_a.max(rep.energy_rate_b);
            criteria.push(criterion(
                6,
                T6,
                e,
                1e-9,
                e < 1e-9,
                format!(
                    "max |dE_A/dt| {:.3e}, max |dE_B/dt| {:.3e} over {} correlated states",
                    rep.energy_rate_a, rep.energy_rate_b, rep.correlated_states
                ),
            ));
            let ok7 = rep.factorization_residual < 1e-9 && rep.min_subsystem_entropy_rate >= -1e-10;
            criteria.push(criterion(
                7,
                T7,
                rep.factorization_residual,
                1e-9,
                ok7,
                format!(
                    "factorization residual {:.3e}, min subsystem entropy rate {:.3e} over {} product states",
                    rep.factorization_residual, rep.min_subsystem_entropy_rate, rep.product_states
                ),
            ));
            let m8 = rep.locality_residual.max(rep.tau_separability_residual);
            criteria.push(criterion(
                8,
                T8,
                m8,
                1e-9,
                m8 < 1e-9,
                format!(
                    "reduced dissipator change {:.3e}, relaxation time change {:.3e}",
                    rep.locality_residual, rep.tau_separability_residual
                ),
            ));
        }
        _ => {
            let why = "needs a noninteracting composite system";
            criteria.push(not_applicable(6, T6, why));
            criteria.push(not_applicable(7, T7, why));
            criteria.push(not_applicable(8, T8, why));
        }
    }
    Ok(CheckReport { name: config.name.clone(), model: config.system.model, seed: scn.seed, criteria })
}

/// Perturbs the matching equilibrium and watches the trace distance.
fn stability_probe(scn: &Scenario, run: &IntegratorConfig, rng: &mut random::SeaRng) -> CriterionResult {
    const TITLE: &str = "stability of equilibrium (probe only)";
    let mut probe = || -> crate::Result<(f64, f64, f64)> {
        let tol = scn.tolerances();
        let gen = scn.generators();
        let eq = single::matching_equilibrium(&scn.initial, gen, &scn.units, &tol)?;
        // traceless perturbation orthogonal to every generator, so the
        // conserved means are unchanged
        let mut delta = random::hermitian(rng, scn.dim());
        let basis = crate::op_space::orthonormalize(&gen.generators(), &tol).basis;
        delta = crate::op_space::remove_components(&delta, &basis);
        delta = hermitian_part(&delta);
        let min_p = eq.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let scale = 0.2 * min_p / crate::op_space::op_norm(&delta).max(1e-300);
        let rho = eq.rho() + delta * c(scale, 0.0);
        let start = scn.state(&rho)?;
        let traj = integrator::integrate(
            &start,
            scn.dynamics(),
            &IntegratorConfig { halt_at_equilibrium: false, ..run.clone() },
        )?;
        let d0 = trace_norm_distance(start.rho(), eq.rho());
        let mut max_dev: f64 = 0.0;
        for s in &traj.samples {
            max_dev = max_dev.max((trace_norm_distance(&s.rho, eq.rho()) - d0).abs());
        }
        Ok((d0, trace_norm_distance(&traj.last().rho, eq.rho()), max_dev))
    };
    match probe() {
        Ok((d0, d1, max_dev)) => {
            let verdict = if max_dev < 1e-9 {
                "distance constant: marginal stability"
            } else if d1 < d0 {
                "distance decreases: perturbation relaxes"
            } else {
                "distance grows"
            };
            CriterionResult {
                id: 4,
                title: TITLE,
                status: Status::ProbeOnly,
                margin: d1 / d0,
                limit: f64::NAN,
                detail: format!("d(0) = {d0:.3e}, d(t) = {d1:.3e}; {verdict}"),
            }
        }
        Err(e) => CriterionResult {
            id: 4,
            title: TITLE,
            status: Status::ProbeOnly,
            margin: f64::NAN,
            limit: f64::NAN,
            detail: format!("probe not run: {e}"),
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OnsagerReport {
    pub name: String,
    pub basis: BasisChoice,
    pub labels: Vec<String>,
    pub affinities: AffinityVector,
    pub conductivity: ConductivityMatrix,
    pub rates: Vec<f64>,
    /// `-k_B Tr(ρ̇_D B ln ρ)` of the equation of motion.
    pub entropy_rate: f64,
    pub quadratic: QuadraticEntropyRate,
    /// `max |L_ij - ⟨⟨X_i,X_j⟩⟩/τ|` on the block outside the manifold.
    pub extension_block_defect: Option<f64>,
}

/// Affinities and conductivities at the scenario's initial state.
pub fn cmd_onsager(config: &ScenarioConfig, seed: Option<u64>) -> CliResult<OnsagerReport> {
    let scn = build(config, seed)?;
    let tol = scn.tolerances();
    let state = &scn.initial;
    let gen = scn.generators();
    let basis = match config.onsager.basis {
        BasisChoice::GellMann => ObservableBasis::gell_mann(scn.dim()),
        BasisChoice::OrthogonalExtension => onsager::orthogonal_extension_basis(state, gen, &tol)?,
    };
    let labels = match config.onsager.basis {
        BasisChoice::GellMann => (1..=basis.x.len()).map(|i| format!("lambda{i}")).collect(),
        BasisChoice::OrthogonalExtension => (0..basis.x.len())
            .map(|i| if i < basis.manifold_count { format!("m{i}") } else { format!("x{i}") })
            .collect(),
    };
    let affinities = onsager::affinities_from_state(state, &basis, &scn.units)?;
    let (conductivity, rates, entropy_rate, quadratic) = match &scn.system {
        System::Single(s) => {
            let cond = onsager::conductivity_matrix(state, gen, &basis, &s.policy, &scn.units, &tol)?;
            let rates = onsager::dissipative_rates(state, gen, &basis, &s.policy, &scn.units, &tol)?;
            let rate = single::entropy_rate(state, gen, &s.policy, &scn.units, &tol)?;
            let quad = onsager::entropy_rate_quadratic(state, gen, &basis, &s.policy, &scn.units, &tol)?;
            (cond, rates, rate, quad)
        }
        System::Composite(s) => {
            if s.model != DissipatorModel::SteepestEntropyAscent {
                return Err(CliError::config(
                    "system.model",
                    "conductivities are defined for the steepest-entropy-ascent model",
                ));
            }
            let cond =
                onsager::composite_conductivities(state, &s.comp, &s.gens, &basis, &s.policies, &scn.units, &tol)?;
            let rates =
                onsager::composite_dissipative_rates(state, &s.comp, &s.gens, &basis, &s.policies, &scn.units, &tol)?;
            let ev = s.evaluate(state)?;
            let quad =
                onsager::quadratic_rate(&cond.matrix(), &affinities.f, &rates, basis.manifold_count, scn.units.k_b);
            (cond, rates, ev.entropy_rate, quad)
        }
    };
    let extension_block_defect = match (&scn.system, config.onsager.basis) {
        (System::Single(_), BasisChoice::OrthogonalExtension) => {
            let l = conductivity.matrix();
            let mut worst: f64 = 0.0;
            for i in basis.manifold_count..basis.x.len() {
                for j in basis.manifold_count..basis.x.len() {
                    let expect = state.cov(&basis.x[i], &basis.x[j]) / conductivity.tau;
                    worst = worst.max((l[(i, j)] - expect).abs());
                }
            }
            Some(worst)
        }
        _ => None,
    };
    Ok(OnsagerReport {
        name: config.name.clone(),
        basis: config.onsager.basis,
        labels,
        affinities,
        conductivity,
        rates,
        entropy_rate,
        quadratic,
        extension_block_defect,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub ok: bool,
    pub error: Option<String>,
    pub steps: usize,
    pub t_final: f64,
    pub terminal_entropy: f64,
    pub terminal_energy: f64,
    pub terminal_distance: f64,
    pub max_trace_drift: f64,
    pub max_energy_drift: f64,
    pub halted_at_equilibrium: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub name: String,
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    pub files: Vec<PathBuf>,
}

fn sweep_variant(
    config: &ScenarioConfig,
    parameter: SweepParameter,
    value: f64,
) -> CliResult<(ScenarioConfig, Option<u64>)> {
    let mut cfg = config.clone();
    let mut seed = None;
    match parameter {
        SweepParameter::Tau => cfg.tau.policies = vec![TauPolicy::constant(value)],
        SweepParameter::Dt => cfg.run.dt = value,
        SweepParameter::TEnd => cfg.run.t_end = value,
        SweepParameter::Beta => match &mut cfg.initial {
            InitialBlock::Gibbs { beta } => *beta = value,
            _ => return Err(CliError::config("sweep.parameter", "beta sweeps need a gibbs initial state")),
        },
        SweepParameter::Seed => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(CliError::config("sweep.values", format!("seed {value} is not a nonnegative integer")));
            }
            seed = Some(value as u64);
        }
    }
    Ok((cfg, seed))
}

/// Runs one independent integration per sweep value in parallel and writes
/// one summary row per run.
pub fn cmd_sweep(config: &ScenarioConfig, opts: &OutputOptions) -> CliResult<SweepReport> {
    let sweep = config.sweep.as_ref().ok_or_else(|| CliError::config("sweep", "missing [sweep] block"))?;
    if sweep.values.is_empty() {
        return Err(CliError::config("sweep.values", "no values"));
    }
    // validate every variant before spending time on any of them
    let variants = sweep
        .values
        .iter()
        .map(|&v| {
            sweep_variant(config, sweep.parameter, v).and_then(|(cfg, seed)| build(&cfg, seed).map(|_| (cfg, seed)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<SweepRow> = variants
        .par_iter()
        .enumerate()
        .map(|(index, (cfg, seed))| {
            let value = sweep.values[index];
            let scn = build(cfg, *seed).expect("validated above");
            let eq = single::matching_equilibrium(&scn.initial, scn.generators(), &scn.units, &scn.tolerances()).ok();
            match integrator::integrate(&scn.initial, scn.dynamics(), &cfg.run) {
                Ok(traj) => {
                    let last = traj.last();
                    SweepRow {
                        index,
                        value,
                        ok: true,
                        error: None,
                        steps: traj.steps,
                        t_final: last.t,
                        terminal_entropy: last.entropy,
                        terminal_energy: last.energy,
                        terminal_distance: eq.map(|e| trace_norm_distance(&last.rho, e.rho())).unwrap_or(f64::NAN),
                        max_trace_drift: traj.drift.max_trace_drift,
                        max_energy_drift: traj.drift.max_energy_drift,
                        halted_at_equilibrium: traj.halted_at_equilibrium,
                    }
                }
                Err(e) => SweepRow {
                    index,
                    value,
                    ok: false,
                    error: Some(e.to_string()),
                    steps: 0,
                    t_final: f64::NAN,
                    terminal_entropy: f64::NAN,
                    terminal_energy: f64::NAN,
                    terminal_distance: f64::NAN,
                    max_trace_drift: f64::NAN,
                    max_energy_drift: f64::NAN,
                    halted_at_equilibrium: false,
                },
            }
        })
        .collect();
    let dir = opts.dir(config);
    let path = match opts.format(config) {
        Format::Csv => {
            let p = dir.join(format!("{}.sweep.csv", config.name));
            let mut body = String::from(
                "index,value,ok,steps,t_final,terminal_entropy,terminal_energy,terminal_distance,max_trace_drift,max_energy_drift,halted_at_equilibrium\n",
            );
            for r in &rows {
                body.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.index,
                    num(r.value),
                    r.ok,
                    r.steps,
                    num(r.t_final),
                    num(r.terminal_entropy),
                    num(r.terminal_energy),
                    num(r.terminal_distance),
                    num(r.max_trace_drift),
                    num(r.max_energy_drift),
                    r.halted_at_equilibrium
                ));
            }
            write_file(&p, &body)?;
            p
        }
        Format::Json => {
            let p = dir.join(format!("{}.sweep.json", config.name));
            write_file(&p, &serde_json::to_string_pretty(&rows).expect("serializable"))?;
            p
        }
    };
    Ok(SweepReport { name: config.name.clone(), parameter: sweep.parameter, rows, files: vec![path] })
}
