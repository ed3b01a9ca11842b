//! Run configuration, mission entry points and artifact files.
//!
//! A run reads one TOML file, plans the requested horizons and writes
//! `trajectory.csv`, `graphs.txt`, `report.txt`, `timings.txt` and the plot
//! files into the output directory. Everything except `timings.txt` is a
//! pure function of the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{BaselineError, BaselineResult, SamplingConfig, rrt_like_plan};
use crate::graphs::{DEFAULT_EXACT_THRESHOLD, GraphError, GraphPlan};
use crate::mpc::{
    MpcError, ObjectiveRecord, PlanWeights, ProfileOptions, ValidationReport, build_stacked, parse_trajectory_csv,
    trajectory_csv, validate_constraints,
};
use crate::planner::{Mission, PlanError, PlanResult, Scenario, plan_mission};
use crate::plot::{PlotError, emit_plot_files, write_atomic};
use crate::qp::SolveOptions;
use crate::terrain::{
    Bump, DEFAULT_LOS_RESOLUTION, SeafloorMap, SynthSpec, TerrainError, synth_terrain, terrain_from_bumps,
};
use crate::vehicle::{VehicleError, VehicleParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const GRAPHS_FILE: &str = "graphs.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const TERRAIN_FILE: &str = "terrain.txt";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid<T>(field: impl Into<String>, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("{path}: {source}")]
    Graph { path: PathBuf, source: GraphError },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub weights: PlanWeights,
    /// Shared by every AUV.
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub solver: SolverConfig,
    pub terrain: TerrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_delta() -> f64 {
    100.0
}
fn default_horizons() -> usize {
    1
}
fn default_los_resolution() -> f64 {
    DEFAULT_LOS_RESOLUTION
}
fn default_repair_step() -> f64 {
    10.0
}
fn default_relinearize_rounds() -> usize {
    4
}
fn default_exact_threshold() -> usize {
    DEFAULT_EXACT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_auv: usize,
    pub k_steps: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizons")]
    pub horizons: usize,
    /// Keep planning after a flagged horizon.
    #[serde(default)]
    pub continue_on_flag: bool,
    #[serde(default)]
    pub usv_start: [f64; 2],
    #[serde(default = "default_los_resolution")]
    pub los_resolution: f64,
    #[serde(default = "default_repair_step")]
    pub repair_step: f64,
    /// Defaults to `ceil(d_s / repair_step)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_repair_rounds: Option<usize>,
    #[serde(default = "default_relinearize_rounds")]
    pub relinearize_rounds: usize,
    #[serde(default = "default_exact_threshold")]
    pub exact_threshold: usize,
    /// Sampled from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auv_start: Option<Vec<StartState>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartState {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Floor-profile convergence threshold (m).
    pub profile_threshold: f64,
    pub profile_max_iter: usize,
    /// Height kept above floor plus clearance (m).
    pub floor_margin: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = ProfileOptions::default();
        Self {
            profile_threshold: p.threshold,
            profile_max_iter: p.max_iter,
            floor_margin: p.margin,
            tol: p.solver.tol,
            max_iter: p.solver.max_iter,
        }
    }
}

/// Exactly one of `file` and `synth` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainConfig {
    /// Terrain grid file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

/// Synthetic floor. When `bumps` is non-empty the floor is exactly those
/// bumps on the flat base and the random feature fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub cell: f64,
    pub seed: u64,
    pub n_seamounts: usize,
    pub n_valleys: usize,
    pub base_depth: f64,
    pub amplitude: f64,
    pub sigma_range: [f64; 2],
    pub clearance: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bumps: Vec<BumpConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            origin: [s.origin.0, s.origin.1],
            extent: [s.extent.0, s.extent.1],
            cell: s.cell,
            seed: s.seed,
            n_seamounts: s.n_seamounts,
            n_valleys: s.n_valleys,
            base_depth: s.base_depth,
            amplitude: s.amplitude,
            sigma_range: [s.sigma_range.0, s.sigma_range.1],
            clearance: s.clearance,
            bumps: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn build(&self) -> Result<SeafloorMap, TerrainError> {
        let origin = (self.origin[0], self.origin[1]);
        let extent = (self.extent[0], self.extent[1]);
        if self.bumps.is_empty() {
            synth_terrain(&SynthSpec {
                origin,
                extent,
                cell: self.cell,
                seed: self.seed,
                n_seamounts: self.n_seamounts,
                n_valleys: self.n_valleys,
                base_depth: self.base_depth,
                amplitude: self.amplitude,
                sigma_range: (self.sigma_range[0], self.sigma_range[1]),
                clearance: self.clearance,
            })
        } else {
            let bumps: Vec<Bump> = self
                .bumps
                .iter()
                .map(|b| Bump {
                    center: (b.center[0], b.center[1]),
                    sigma: b.sigma,
                    height: b.height,
                })
                .collect();
            terrain_from_bumps(origin, extent, self.cell, self.base_depth, &bumps, self.clearance)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub center: [f64; 2],
    pub sigma: f64,
    /// Positive for a seamount, negative for a valley.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative to the config file. Left out of the report echo.
    #[serde(skip_serializing)]
    pub dir: PathBuf,
    pub csv: bool,
    pub report: bool,
    pub plots: bool,
    /// Steps whose graphs are drawn; first, middle and last when empty.
    pub plot_steps: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: true,
            report: true,
            plots: true,
            plot_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub enabled: bool,
    pub samples_per_step: usize,
    pub beam_width: usize,
    pub attempts_per_sample: usize,
    /// Defaults to the scenario seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            enabled: false,
            samples_per_step: s.samples_per_step,
            beam_width: s.beam_width,
            attempts_per_sample: s.attempts_per_sample,
            seed: None,
        }
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub horizons: Option<usize>,
}

fn location(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses, defaults and validates a config; relative paths are resolved
/// against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| location(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if let Some(f) = &cfg.terrain.file {
        if f.is_relative() {
            cfg.terrain.file = Some(base.join(f));
        }
    }
    if cfg.output.dir.is_relative() {
        cfg.output.dir = base.join(&cfg.output.dir);
    }
    if cfg.scenario.max_repair_rounds.is_none() && cfg.scenario.repair_step > 0.0 {
        cfg.scenario.max_repair_rounds = Some((cfg.weights.d_s / cfg.scenario.repair_step).ceil() as usize);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&text, base)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.n_auv < 1 {
            return invalid("scenario.n_auv", "at least one AUV is required");
        }
        if s.k_steps < 2 {
            return invalid("scenario.k_steps", format!("must be at least 2, got {}", s.k_steps));
        }
        if !(s.delta > 0.0 && s.delta.is_finite()) {
            return invalid("scenario.delta", format!("must be positive, got {}", s.delta));
        }
        if s.horizons < 1 {
            return invalid("scenario.horizons", "must be at least 1");
        }
        if !(s.los_resolution > 0.0) {
            return invalid("scenario.los_resolution", format!("must be positive, got {}", s.los_resolution));
        }
        if !(s.repair_step > 0.0) {
            return invalid("scenario.repair_step", format!("must be positive, got {}", s.repair_step));
        }
        if !s.usv_start.iter().all(|v| v.is_finite()) {
            return invalid("scenario.usv_start", "coordinates must be finite");
        }
        if let Some(start) = &s.auv_start {
            if start.len() != s.n_auv {
                return invalid(
                    "scenario.auv_start",
                    format!("{} entries for {} AUVs", start.len(), s.n_auv),
                );
            }
            if !start.iter().all(|st| st.position.iter().chain(&st.velocity).all(|v| v.is_finite())) {
                return invalid("scenario.auv_start", "coordinates must be finite");
            }
        }
        self.weights.validate().map_err(|e| match e {
            MpcError::InvalidParameter { field, reason } => ConfigError::Invalid {
                field: format!("weights.{field}"),
                reason,
            },
            other => ConfigError::Invalid {
                field: "weights".into(),
                reason: other.to_string(),
            },
        })?;
        self.vehicle.validate().map_err(|e| match e {
            VehicleError::InvalidParameter { field, reason } => ConfigError::Invalid {
                field: format!("vehicle.{field}"),
                reason,
            },
            other => ConfigError::Invalid {
                field: "vehicle".into(),
                reason: other.to_string(),
            },
        })?;
        let v = &self.solver;
        if !(v.profile_threshold > 0.0) {
            return invalid("solver.profile_threshold", "must be positive");
        }
        if v.profile_max_iter < 1 {
            return invalid("solver.profile_max_iter", "must be at least 1");
        }
        if !(v.floor_margin >= 0.0 && v.floor_margin.is_finite()) {
            return invalid("solver.floor_margin", "must be finite and nonnegative");
        }
        if !(v.tol > 0.0) {
            return invalid("solver.tol", "must be positive");
        }
        if v.max_iter < 1 {
            return invalid("solver.max_iter", "must be at least 1");
        }
        match (&self.terrain.file, &self.terrain.synth) {
            (Some(_), Some(_)) => return invalid("terrain", "set either `file` or `synth`, not both"),
            (None, None) => return invalid("terrain", "one of `file` or `synth` is required"),
            (None, Some(sy)) => {
                if !(sy.cell > 0.0) {
                    return invalid("terrain.synth.cell", "must be positive");
                }
                if !(sy.extent[0] > 0.0 && sy.extent[1] > 0.0) {
                    return invalid("terrain.synth.extent", "must be positive");
                }
                if let Some(b) = sy.bumps.iter().find(|b| !(b.sigma > 0.0)) {
                    return invalid("terrain.synth.bumps", format!("sigma must be positive, got {}", b.sigma));
                }
            }
            (Some(_), None) => {}
        }
        if let Some(&k) = self.output.plot_steps.iter().find(|&&k| k < 1 || k > s.k_steps) {
            return invalid("output.plot_steps", format!("step {k} outside 1..={}", s.k_steps));
        }
        let c = &self.compare;
        if c.samples_per_step < 1 {
            return invalid("compare.samples_per_step", "must be at least 1");
        }
        if c.beam_width < 1 {
            return invalid("compare.beam_width", "must be at least 1");
        }
        if c.attempts_per_sample < 1 {
            return invalid("compare.attempts_per_sample", "must be at least 1");
        }
        if c.enabled && s.n_auv != 1 {
            return invalid("scenario.n_auv", "the sampling baseline plans a single AUV");
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.scenario.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(h) = o.horizons {
            self.scenario.horizons = h;
        }
        self.validate()
    }

    pub fn build_map(&self) -> Result<SeafloorMap, RunError> {
        match (&self.terrain.file, &self.terrain.synth) {
            (Some(path), None) => Ok(SeafloorMap::load(path)?),
            (None, Some(sy)) => Ok(sy.build()?),
            _ => Err(ConfigError::Invalid {
                field: "terrain".into(),
                reason: "exactly one of `file` or `synth` is required".into(),
            }
            .into()),
        }
    }

    pub fn scenario(&self, map: Arc<SeafloorMap>) -> Scenario {
        let s = &self.scenario;
        let mut sc = Scenario::new(map, s.n_auv, s.k_steps);
        sc.delta = s.delta;
        sc.params = vec![self.vehicle.clone(); s.n_auv];
        sc.weights = self.weights.clone();
        sc.usv_start = Vector2::new(s.usv_start[0], s.usv_start[1]);
        sc.auv_start = s.auv_start.as_ref().map(|v| {
            v.iter()
                .map(|st| (Vector3::from(st.position), Vector3::from(st.velocity)))
                .collect()
        });
        sc.seed = s.seed;
        sc.los_resolution = s.los_resolution;
        sc.repair_step = s.repair_step;
        sc.max_repair_rounds = s
            .max_repair_rounds
            .unwrap_or_else(|| (self.weights.d_s / s.repair_step).ceil() as usize);
        sc.relinearize_rounds = s.relinearize_rounds;
        sc.exact_threshold = s.exact_threshold;
        sc.profile = ProfileOptions {
            threshold: self.solver.profile_threshold,
            max_iter: self.solver.profile_max_iter,
            margin: self.solver.floor_margin,
            solver: SolveOptions {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                ..ProfileOptions::default().solver
            },
        };
        sc
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            samples_per_step: self.compare.samples_per_step,
            seed: self.compare.seed.unwrap_or(self.scenario.seed),
            beam_width: self.compare.beam_width,
            attempts_per_sample: self.compare.attempts_per_sample,
            ..SamplingConfig::default()
        }
    }

    /// The resolved configuration as TOML, without the output directory.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# configuration could not be echoed: {e}\n"))
    }
}

/// Planner against the sampling baseline on the first horizon.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub planner: ObjectiveRecord,
    /// Stage-timing total of the planner (s).
    pub planner_seconds: f64,
    pub baseline: BaselineResult,
}

impl Comparison {
    pub fn planner_wins(&self) -> bool {
        self.planner.composite <= self.baseline.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Passed,
    Flagged,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed => EXIT_OK,
            RunStatus::Flagged => EXIT_FLAGGED,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub mission: Mission,
    pub comparison: Option<Comparison>,
    pub files: Vec<PathBuf>,
    pub status: RunStatus,
}

pub fn exit_code(result: &Result<RunOutcome, RunError>) -> i32 {
    match result {
        Ok(o) => o.status.exit_code(),
        Err(_) => EXIT_ERROR,
    }
}

fn prepare_dir(dir: &Path) -> Result<(), RunError> {
    let fail = |source| RunError::Write {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(fail)?;
    tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    Ok(())
}

fn write_file(path: PathBuf, body: &str, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    write_atomic(&path, body.as_bytes()).map_err(|source| RunError::Write {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

/// Plans the mission (and the baseline when comparison is enabled) and
/// writes the requested artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let map = Arc::new(cfg.build_map()?);
    let sc = cfg.scenario(map.clone());
    sc.validate()?;
    prepare_dir(&cfg.output.dir)?;

    let t0 = Instant::now();
    let mission = plan_mission(&sc, cfg.scenario.horizons, cfg.scenario.continue_on_flag)?;
    let wall = t0.elapsed().as_secs_f64();

    let comparison = match (cfg.compare.enabled, mission.horizons.first()) {
        (true, Some(first)) => {
            let baseline = rrt_like_plan(&sc, &cfg.sampling())?;
            Some(Comparison {
                planner: first.objectives,
                planner_seconds: first.timings.total(),
                baseline,
            })
        }
        _ => None,
    };

    let dir = &cfg.output.dir;
    let mut files = Vec::new();
    if cfg.output.csv {
        let horizons: Vec<(usize, &crate::mpc::Trajectory)> =
            mission.horizons.iter().enumerate().map(|(h, r)| (h + 1, &r.trajectory)).collect();
        write_file(dir.join(TRAJECTORY_FILE), &trajectory_csv(&horizons), &mut files)?;
        write_file(dir.join(GRAPHS_FILE), &graphs_text(&mission.horizons), &mut files)?;
    }
    if cfg.output.report {
        write_file(dir.join(REPORT_FILE), &render_report(cfg, &mission, comparison.as_ref()), &mut files)?;
    }
    write_file(dir.join(TIMINGS_FILE), &render_timings(&mission, comparison.as_ref(), wall), &mut files)?;
    if cfg.output.plots {
        files.extend(emit_plot_files(&mission.horizons, &map, dir, &cfg.output.plot_steps)?);
    }

    let status = if mission.flagged() {
        RunStatus::Flagged
    } else {
        RunStatus::Passed
    };
    Ok(RunOutcome {
        mission,
        comparison,
        files,
        status,
    })
}

/// Graph exports of every horizon, each under a `# horizon h` header.
pub fn graphs_text(horizons: &[PlanResult]) -> String {
    let mut s = String::new();
    for (h, r) in horizons.iter().enumerate() {
        writeln!(s, "# horizon {}", h + 1).unwrap();
        for line in r.graphs.export_lines() {
            writeln!(s, "{line}").unwrap();
        }
    }
    s
}

/// Inverse of [`graphs_text`].
pub fn parse_graphs_text(text: &str, n: usize) -> Result<Vec<(usize, GraphPlan)>, GraphError> {
    let mut sections: Vec<(usize, String)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# horizon ") {
            let h = rest.trim().parse().map_err(|e| GraphError::Parse {
                line: idx + 1,
                reason: format!("bad horizon number: {e}"),
            })?;
            sections.push((h, String::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    sections
        .into_iter()
        .map(|(h, body)| Ok((h, GraphPlan::parse_lines(&body, n)?)))
        .collect()
}

fn objective_rows(o: &ObjectiveRecord) -> [(&'static str, f64); 11] {
    [
        ("of1_1", o.of1_1),
        ("of1_2", o.of1_2),
        ("of1_3", o.of1_3),
        ("of1_4", o.of1_4),
        ("of1_5", o.of1_5),
        ("of1_6", o.of1_6),
        ("of1_7", o.of1_7),
        ("of1_8", o.of1_8),
        ("of1_8_2", o.of1_8_2),
        ("composite", o.composite),
        ("total", o.total),
    ]
}

/// Deterministic run report: configuration echo, then per horizon the
/// status, objective terms, repairs and validation table.
pub fn render_report(cfg: &RunConfig, mission: &Mission, comparison: Option<&Comparison>) -> String {
    let mut s = String::new();
    writeln!(s, "seaplan mission report").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "[configuration]").unwrap();
    s.push_str(&cfg.echo());
    writeln!(s).unwrap();
    writeln!(s, "[mission]").unwrap();
    writeln!(s, "horizons planned   {}", mission.horizons.len()).unwrap();
    writeln!(s, "halted             {}", mission.halted).unwrap();
    writeln!(s, "status             {}", if mission.flagged() { "flagged" } else { "pass" }).unwrap();

    for (h, r) in mission.horizons.iter().enumerate() {
        writeln!(s).unwrap();
        writeln!(s, "[horizon {}]", h + 1).unwrap();
        writeln!(s, "status             {}", if r.flagged() { "flagged" } else { "pass" }).unwrap();
        writeln!(s, "profile passes     {}", r.profile_iterations).unwrap();
        writeln!(s, "step 3 refreshes   {}", r.step3_refreshes).unwrap();
        writeln!(s, "repair rounds      {}", r.repair_rounds).unwrap();
        writeln!(s, "dropped bounds     {}", r.dropped.len()).unwrap();
        for e in &r.repairs {
            writeln!(
                s,
                "repair             round {} k={} edge ({},{}) range {:.3}",
                e.round,
                e.k,
                e.edge.0 + 1,
                e.edge.1 + 1,
                e.range
            )
            .unwrap();
        }
        for n in &r.notes {
            writeln!(s, "note               {n}").unwrap();
        }
        for f in &r.flags {
            writeln!(s, "flag               {f}").unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "{:<12} {:>16} {:>16}", "objective", "step 1", "final").unwrap();
        for ((name, a), (_, b)) in objective_rows(&r.step1_objectives).iter().zip(objective_rows(&r.objectives)) {
            writeln!(s, "{name:<12} {a:>16.8e} {b:>16.8e}").unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "validation").unwrap();
        s.push_str(&r.validation.to_table());
    }

    if let Some(c) = comparison {
        let b = &c.baseline.objectives;
        writeln!(s).unwrap();
        writeln!(s, "[comparison]").unwrap();
        writeln!(s, "{:<12} {:>16} {:>16}", "objective", "planner", "baseline").unwrap();
        for (name, p, q) in [
            ("of1_1", c.planner.of1_1, b.of1_1),
            ("of1_2", c.planner.of1_2, b.of1_2),
            ("of1_8_2", c.planner.of1_8_2, b.of1_8_2),
            ("composite", c.planner.composite, c.baseline.score),
        ] {
            writeln!(s, "{name:<12} {p:>16.8e} {q:>16.8e}").unwrap();
        }
        writeln!(s, "baseline samples   {}", c.baseline.samples_drawn).unwrap();
        writeln!(s, "baseline nodes     {}", c.baseline.nodes_kept).unwrap();
        writeln!(s, "planner better     {}", c.planner_wins()).unwrap();
        writeln!(s, "wall-clock times are in {TIMINGS_FILE}").unwrap();
    }
    s
}

/// Per-stage wall-clock seconds; not reproducible between runs.
pub fn render_timings(mission: &Mission, comparison: Option<&Comparison>, wall: f64) -> String {
    let mut s = String::new();
    writeln!(s, "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}", "horizon", "step1", "a2u", "a2a", "step3", "total").unwrap();
    for (h, r) in mission.horizons.iter().enumerate() {
        let t = &r.timings;
        writeln!(
            s,
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            h + 1,
            t.step1,
            t.a2u,
            t.a2a,
            t.step3,
            t.total()
        )
        .unwrap();
    }
    writeln!(s, "mission wall-clock {wall:.4}").unwrap();
    if let Some(c) = comparison {
        writeln!(s, "planner horizon 1  {:.4}", c.planner_seconds).unwrap();
        writeln!(s, "baseline           {:.4}", c.baseline.elapsed).unwrap();
    }
    s
}

/// Re-checks a written trajectory file against a configuration, reading the
/// graphs from `graphs.txt` in the same directory.
pub fn validate_file(csv: &Path, cfg: &RunConfig) -> Result<Vec<(usize, ValidationReport)>, RunError> {
    let read = |path: &Path| {
        fs::read_to_string(path).map_err(|source| RunError::Read {
            path: path.to_path_buf(),
            source,
        })
    };
    let trajectories = parse_trajectory_csv(&read(csv)?)?;
    let graphs_path = csv.parent().unwrap_or(Path::new("")).join(GRAPHS_FILE);
    let graphs = parse_graphs_text(&read(&graphs_path)?, cfg.scenario.n_auv).map_err(|source| RunError::Graph {
        path: graphs_path.clone(),
        source,
    })?;
    let map = cfg.build_map()?;
    let sc = cfg.scenario(Arc::new(map.clone()));
    let mut reports = Vec::new();
    for (h, traj) in &trajectories {
        if traj.n_auv != cfg.scenario.n_auv {
            return Err(RunError::Input(format!(
                "horizon {h} has {} AUVs, the configuration has {}",
                traj.n_auv, cfg.scenario.n_auv
            )));
        }
        let plan = graphs
            .iter()
            .find(|(g, _)| g == h)
            .map(|(_, p)| p)
            .ok_or_else(|| RunError::Input(format!("{} has no graphs for horizon {h}", graphs_path.display())))?;
        let sys = build_stacked(traj.n_auv, &sc.params, sc.delta, traj.k_steps())?;
        let report = validate_constraints(&sys, traj, plan, &sc.weights, &map, &sc.validation_options());
        reports.push((*h, report));
    }
    Ok(reports)
}

/// Writes the configured synthetic terrain to `terrain.txt` in the output
/// directory.
pub fn synth_terrain_file(cfg: &RunConfig) -> Result<PathBuf, RunError> {
    let Some(sy) = &cfg.terrain.synth else {
        return Err(ConfigError::Invalid {
            field: "terrain.synth".into(),
            reason: "synth-terrain needs a [terrain.synth] block".into(),
        }
        .into());
    };
    let map = sy.build()?;
    prepare_dir(&cfg.output.dir)?;
    let path = cfg.output.dir.join(TERRAIN_FILE);
    let mut files = Vec::new();
    write_file(path.clone(), &map.to_text(), &mut files)?;
    Ok(path)
}

/// One-paragraph console summary of a run.
pub fn summary(outcome: &RunOutcome) -> String {
    let mut s = String::new();
    for (h, r) in outcome.mission.horizons.iter().enumerate() {
        writeln!(
            s,
            "horizon {}: {} (composite {:.6e}, {} repair rounds, {:.3} s)",
            h + 1,
            if r.flagged() { "flagged" } else { "pass" },
            r.objectives.composite,
            r.repair_rounds,
            r.timings.total()
        )
        .unwrap();
    }
    if let Some(c) = &outcome.comparison {
        writeln!(
            s,
            "planner composite {:.6e} in {:.3} s; baseline score {:.6e} in {:.3} s",
            c.planner.composite, c.planner_seconds, c.baseline.score, c.baseline.elapsed
        )
        .unwrap();
    }
    writeln!(s, "{} files written", outcome.files.len()).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
n_auv = 2
k_steps = 6
delta = 100.0

[weights]
d_s = 150.0

[terrain.synth]
origin = [-1500.0, -1500.0]
extent = [3000.0, 3000.0]
cell = 25.0
base_depth = -300.0
n_seamounts = 0
n_valleys = 0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL, Path::new("/tmp/base")).unwrap();
        assert_eq!(cfg.scenario.seed, 0);
        assert_eq!(cfg.scenario.horizons, 1);
        assert_eq!(cfg.scenario.max_repair_rounds, Some(15));
        assert_eq!(cfg.weights, PlanWeights::default());
        assert_eq!(cfg.vehicle, VehicleParams::default());
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/base/out"));
        assert!(cfg.output.csv && cfg.output.report && cfg.output.plots);
        assert!(!cfg.compare.enabled);
        let echo = cfg.echo();
        for key in ["w1 = 0.01", "d_t = 30.0", "los_resolution = 10.0", "max_repair_rounds = 15", "mass ="] {
            assert!(echo.contains(key), "echo lacks `{key}`:\n{echo}");
        }
        assert!(!echo.contains("dir ="));
        let back: RunConfig = toml::from_str(&echo).unwrap();
        assert_eq!(back.scenario, cfg.scenario);
        assert_eq!(back.weights, cfg.weights);
    }

    #[test]
    fn unknown_key_reports_location() {
        let text = MINIMAL.replace("delta = 100.0", "delta = 100.0\nwobble = 3");
        match parse_config(&text, Path::new("")) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("wobble"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let text = "[scenario]\nn_auv = 2\nk_steps = = 4\n";
        match parse_config(text, Path::new("")) {
            Err(ConfigError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 1);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn d_t_at_least_d_s_names_d_t() {
        let text = MINIMAL.replace("d_s = 150.0", "d_s = 150.0\nd_t = 150.0");
        match parse_config(&text, Path::new("")) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "weights.d_t"),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn replica_values_accepted() {
        let text = MINIMAL.replace("n_auv = 2", "n_auv = 5").replace("k_steps = 6", "k_steps = 20");
        let cfg = parse_config(&text, Path::new("")).unwrap();
        let sc = cfg.scenario(Arc::new(cfg.build_map().unwrap()));
        assert_eq!((sc.n_auv, sc.k_steps, sc.delta, sc.weights.d_s), (5, 20, 100.0, 150.0));
        assert_eq!(sc.params.len(), 5);
    }

    #[test]
    fn terrain_source_must_be_unique() {
        let both = format!("{MINIMAL}\n[terrain]\nfile = \"map.txt\"\n");
        assert!(parse_config(&both, Path::new("")).is_err());
        let mut cfg = parse_config(MINIMAL, Path::new("")).unwrap();
        cfg.terrain.synth = None;
        match cfg.validate() {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "terrain"),
            other => panic!("expected a terrain error, got {other:?}"),
        }
    }

    #[test]
    fn compare_needs_one_auv() {
        let text = format!("{MINIMAL}\n[compare]\nenabled = true\n");
        match parse_config(&text, Path::new("")) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "scenario.n_auv"),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_apply_and_revalidate() {
        let mut cfg = parse_config(MINIMAL, Path::new("")).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("elsewhere")),
            horizons: Some(3),
        })
        .unwrap();
        assert_eq!((cfg.scenario.seed, cfg.scenario.horizons), (9, 3));
        assert_eq!(cfg.output.dir, PathBuf::from("elsewhere"));
        assert!(cfg.apply(&Overrides {
            horizons: Some(0),
            ..Overrides::default()
        })
        .is_err());
    }

    #[test]
    fn graphs_text_round_trip() {
        let text = "# horizon 1\n1; a2u=2; a2a=(1,2)\n2; a2u=1; a2a=(1,2)\n# horizon 2\n1; a2u=1; a2a=(1,2)\n";
        let parsed = parse_graphs_text(text, 2).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1.steps(), 2);
        assert_eq!(parsed[0].1.a2u[0].selected, 1);
        assert_eq!(parsed[1].0, 2);
        assert_eq!(parsed[1].1.a2a[0].edges, vec![(0, 1)]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunStatus::Passed.exit_code(), 0);
        assert_eq!(RunStatus::Flagged.exit_code(), 2);
        let err: Result<RunOutcome, RunError> = Err(RunError::Input("x".into()));
        assert_eq!(exit_code(&err), 1);
    }
}
