//! Pipeline commands behind the `canalnav` binary. Each one writes a
//! `manifest.json` into its output directory before any result file.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::ParamSet;
use crate::error::Error;
use crate::io::{
    format_params, grid_to_pgm, read_params, read_point_cloud, read_trial_file, write_residual_csv, write_segments,
};
use crate::perception::{detect_segments, PerceptionConfig};
use crate::sim::{compute_metrics, simulate, ControllerKind, Metrics, Scenario, SimLog};
use crate::sysid::{hull_initial_guess, identify_surge, identify_sway_yaw, SysIdConfig, SysIdReport, TrialKind};

/// Files whose content depends on wall-clock time.
pub const NONDETERMINISTIC_FILES: [&str; 1] = ["timing.csv"];

#[derive(Debug)]
pub enum CommandError {
    /// Bad invocation or input the user has to fix.
    Usage(String),
    Runtime(Error),
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Usage(m) => write!(f, "usage error: {m}"),
            CommandError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CommandError {}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        CommandError::Runtime(e)
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Runtime(Error::Io(e))
    }
}

impl From<csv::Error> for CommandError {
    fn from(e: csv::Error) -> Self {
        CommandError::Runtime(Error::Csv(e))
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub version: String,
    /// Fully resolved configuration the command ran with.
    pub resolved_config: String,
    pub nondeterministic_files: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_paths: Vec<PathBuf>,
        output_dir: &Path,
        seed: Option<u64>,
        resolved: String,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_paths,
            output_dir: output_dir.to_path_buf(),
            seed,
            version: version_string(),
            resolved_config: resolved,
            nondeterministic_files: NONDETERMINISTIC_FILES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Creates the output directory if needed and writes `manifest.json`.
    pub fn write(&self) -> CommandResult<()> {
        fs::create_dir_all(&self.output_dir)?;
        let probe = self.output_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&probe, text).map_err(|e| {
            CommandError::Runtime(Error::Io(std::io::Error::new(
                e.kind(),
                format!("output directory {} is not writable: {e}", self.output_dir.display()),
            )))
        })
    }
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CommandResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_config_text(path: &Path) -> CommandResult<String> {
    fs::read_to_string(path).map_err(|e| CommandError::Usage(format!("cannot read {}: {e}", path.display())))
}

// ---------------------------------------------------------------- sysid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub kind: TrialKind,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdFile {
    /// Parameter file with the starting guess; a generic hull guess when
    /// absent.
    pub initial_params: Option<PathBuf>,
    pub max_iters: usize,
    pub tolerance: f64,
    pub segment_length: usize,
    #[serde(rename = "trial")]
    pub trials: Vec<TrialEntry>,
}

impl Default for SysIdFile {
    fn default() -> Self {
        let d = SysIdConfig::surge(ParamSet::default());
        Self {
            initial_params: None,
            max_iters: d.max_iters,
            tolerance: d.tolerance,
            segment_length: d.segment_length,
            trials: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct StageSummary {
    initial_cost: f64,
    final_cost: f64,
    iterations: usize,
    converged: bool,
    rms: [f64; 6],
}

impl From<&SysIdReport> for StageSummary {
    fn from(r: &SysIdReport) -> Self {
        Self {
            initial_cost: r.initial_cost,
            final_cost: r.final_cost,
            iterations: r.iterations,
            converged: r.converged,
            rms: r.rms,
        }
    }
}

pub struct SysIdOutcome {
    pub fitted: ParamSet,
    pub surge: SysIdReport,
    pub sway_yaw: SysIdReport,
}

pub fn cmd_sysid(config: &Path, out: &Path, seed: Option<u64>) -> CommandResult<SysIdOutcome> {
    let text = read_config_text(config)?;
    let file: SysIdFile =
        toml::from_str(&text).map_err(|e| CommandError::Usage(format!("{}: {e}", config.display())))?;
    let has_surge = file.trials.iter().any(|t| t.kind.is_surge());
    let has_zigzag = file.trials.iter().any(|t| t.kind == TrialKind::Zigzag);
    if !has_surge || !has_zigzag {
        return Err(CommandError::Usage(
            "sysid needs at least one acceleration or deceleration trial (surge fit) and one zigzag trial \
             (sway-yaw fit)"
                .into(),
        ));
    }
    let resolved = toml::to_string(&file).expect("sysid config serializes");
    RunManifest::new("sysid", vec![config.to_path_buf()], out, seed, resolved).write()?;

    let base = base_dir(config);
    let guess = match &file.initial_params {
        Some(p) => read_params(&resolve(&base, p))?,
        None => hull_initial_guess(),
    };
    let mut surge_data = Vec::new();
    let mut zigzag_data = Vec::new();
    for t in &file.trials {
        let d = read_trial_file(&resolve(&base, &t.file), t.kind)?;
        if t.kind.is_surge() {
            surge_data.push(d);
        } else {
            zigzag_data.push(d);
        }
    }
    let tune = |mut c: SysIdConfig| {
        c.max_iters = file.max_iters;
        c.tolerance = file.tolerance;
        c.segment_length = file.segment_length;
        c
    };
    let surge = identify_surge(&surge_data, &tune(SysIdConfig::surge(guess)))?;
    let sway_yaw = identify_sway_yaw(&zigzag_data, &surge.fitted, &tune(SysIdConfig::sway_yaw(guess)))?;
    let fitted = sway_yaw.fitted;

    write_file(out, "params.txt", format_params(&fitted).as_bytes())?;
    let report = serde_json::json!({
        "surge": StageSummary::from(&surge),
        "sway_yaw": StageSummary::from(&sway_yaw),
    });
    let mut report = serde_json::to_string_pretty(&report).expect("report serializes");
    report.push('\n');
    write_file(out, "report.json", report.as_bytes())?;
    let mut all = surge_data;
    all.extend(zigzag_data);
    let mut buf = Vec::new();
    write_residual_csv(&mut buf, &all, &fitted)?;
    write_file(out, "residuals.csv", &buf)?;
    Ok(SysIdOutcome {
        fitted,
        surge,
        sway_yaw,
    })
}

// ------------------------------------------------------------- simulate

#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub controller: Option<ControllerKind>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
}

fn load_scenario(config: &Path) -> CommandResult<Scenario> {
    if !config.exists() {
        return Err(CommandError::Usage(format!(
            "scenario file {} does not exist",
            config.display()
        )));
    }
    let sc = Scenario::load(config).map_err(|e| CommandError::Usage(e.to_string()))?;
    sc.validate()
        .map_err(|e| CommandError::Usage(format!("{}: {e}", config.display())))?;
    Ok(sc)
}

fn write_run(dir: &Path, log: &SimLog, metrics: &Metrics) -> CommandResult<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write_file(dir, "log.csv", &buf)?;
    write_file(dir, "metrics.json", metrics.to_json().as_bytes())?;
    let mut buf = Vec::new();
    log.write_separation_csv(&mut buf)?;
    write_file(dir, "separation.csv", &buf)?;
    if !log.plans.is_empty() {
        let mut buf = Vec::new();
        log.write_plans_csv(&mut buf)?;
        write_file(dir, "plans.csv", &buf)?;
    }
    let mut buf = Vec::new();
    log.write_timing_csv(&mut buf)?;
    write_file(dir, "timing.csv", &buf)?;
    Ok(())
}

pub fn cmd_simulate(config: &Path, out: &Path, o: &SimulateOverrides) -> CommandResult<(SimLog, Metrics)> {
    let mut sc = load_scenario(config)?;
    if let Some(c) = o.controller {
        sc.controller = c;
    }
    if let Some(s) = o.seed {
        sc.seed = s;
    }
    if let Some(d) = o.duration {
        sc.duration = d;
    }
    sc.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    RunManifest::new(
        "simulate",
        vec![config.to_path_buf()],
        out,
        Some(sc.seed),
        sc.to_toml_string(),
    )
    .write()?;
    let world = sc.world()?;
    let log = simulate(&sc, &world)?;
    let metrics = compute_metrics(&log, &world, &sc.nmpc);
    write_run(out, &log, &metrics)?;
    Ok((log, metrics))
}

// -------------------------------------------------------------- compare

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub outcome: std::result::Result<(Metrics, f64, f64), String>,
}

impl ComparisonRow {
    pub fn metrics(&self) -> Option<&Metrics> {
        self.outcome.as_ref().ok().map(|(m, _, _)| m)
    }

    /// Mean and max controller time per tick [s].
    pub fn solve_times(&self) -> Option<(f64, f64)> {
        self.outcome.as_ref().ok().map(|(_, a, b)| (*a, *b))
    }
}

pub fn format_comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<10} {:>14} {:>12} {:>12} {:>12} {:>14}\n",
        "controller", "termination", "min_sep[m]", "J_c", "xtrack_rms", "mean_solve[ms]"
    );
    for r in rows {
        match &r.outcome {
            Ok((m, mean, _)) => s.push_str(&format!(
                "{:<10} {:>14} {:>12.3} {:>12.3} {:>12.3} {:>14.2}\n",
                r.controller.as_str(),
                m.termination.as_str(),
                m.min_separation,
                m.control_effort,
                m.cross_track_rms,
                mean * 1e3
            )),
            Err(e) => s.push_str(&format!("{:<10} failed: {e}\n", r.controller.as_str())),
        }
    }
    s
}

pub fn cmd_compare(config: &Path, out: &Path, seed: Option<u64>) -> CommandResult<Vec<ComparisonRow>> {
    let mut sc = load_scenario(config)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    RunManifest::new(
        "compare",
        vec![config.to_path_buf()],
        out,
        Some(sc.seed),
        sc.to_toml_string(),
    )
    .write()?;
    let world = sc.world()?;
    let runs: Vec<(ControllerKind, std::result::Result<(SimLog, Metrics), String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = ControllerKind::ALL
            .into_iter()
            .map(|kind| {
                let mut sc = sc.clone();
                sc.controller = kind;
                let world = &world;
                s.spawn(move || {
                    let r = simulate(&sc, world)
                        .map(|log| {
                            let m = compute_metrics(&log, world, &sc.nmpc);
                            (log, m)
                        })
                        .map_err(|e| e.to_string());
                    (kind, r)
                })
            })
            .collect();
        handles
            .into_iter()
            .zip(ControllerKind::ALL)
            .map(|(h, kind)| {
                h.join()
                    .unwrap_or_else(|_| (kind, Err("controller thread panicked".into())))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record([
        "controller",
        "status",
        "termination",
        "collision",
        "min_separation",
        "min_separation_bow",
        "min_separation_stern",
        "control_effort",
        "cross_track_rms",
    ])?;
    let mut timing = csv::Writer::from_writer(Vec::new());
    timing.write_record(["controller", "mean_solve_time", "max_solve_time"])?;
    for (kind, r) in runs {
        match r {
            Ok((log, m)) => {
                write_run(&out.join(kind.as_str()), &log, &m)?;
                table.write_record([
                    kind.as_str().to_string(),
                    "ok".into(),
                    m.termination.as_str().into(),
                    m.collision.to_string(),
                    m.min_separation.to_string(),
                    m.min_separation_bow.to_string(),
                    m.min_separation_stern.to_string(),
                    m.control_effort.to_string(),
                    m.cross_track_rms.to_string(),
                ])?;
                let (mean, max) = (log.mean_solve_time(), log.max_solve_time());
                timing.write_record([kind.as_str().to_string(), mean.to_string(), max.to_string()])?;
                rows.push(ComparisonRow {
                    controller: kind,
                    outcome: Ok((m, mean, max)),
                });
            }
            Err(e) => {
                let mut rec = vec![kind.as_str().to_string(), format!("error: {e}")];
                rec.resize(9, String::new());
                table.write_record(&rec)?;
                timing.write_record([kind.as_str(), "", ""])?;
                rows.push(ComparisonRow {
                    controller: kind,
                    outcome: Err(e),
                });
            }
        }
    }
    let bytes = table
        .into_inner()
        .map_err(|e| CommandError::from(std::io::Error::other(e.to_string())))?;
    write_file(out, "comparison.csv", &bytes)?;
    let bytes = timing
        .into_inner()
        .map_err(|e| CommandError::from(std::io::Error::other(e.to_string())))?;
    write_file(out, "timing.csv", &bytes)?;
    Ok(rows)
}

// --------------------------------------------------------------- detect

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectFile {
    /// Point cloud CSV (x, y, z in the body frame).
    pub input: Option<PathBuf>,
    /// Also write the occupancy grid as `grid.pgm`.
    pub grid: bool,
    pub perception: PerceptionConfig,
}

impl Default for DetectFile {
    fn default() -> Self {
        Self {
            input: None,
            grid: true,
            perception: PerceptionConfig::default(),
        }
    }
}

pub struct DetectOutcome {
    pub segments: Vec<crate::perception::LineSegment>,
    pub warning: Option<String>,
}

/// `config` may be omitted, in which case `input` is required and the
/// defaults apply.
pub fn cmd_detect(
    config: Option<&Path>,
    input: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CommandResult<DetectOutcome> {
    let (mut file, base) = match config {
        Some(c) => {
            let text = read_config_text(c)?;
            let f: DetectFile =
                toml::from_str(&text).map_err(|e| CommandError::Usage(format!("{}: {e}", c.display())))?;
            (f, base_dir(c))
        }
        None => (DetectFile::default(), PathBuf::new()),
    };
    let cloud_path = match (input, &file.input) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => resolve(&base, p),
        (None, None) => {
            return Err(CommandError::Usage(
                "detect needs a point cloud (--input or `input` in the config)".into(),
            ))
        }
    };
    if !cloud_path.exists() {
        return Err(CommandError::Usage(format!(
            "point cloud {} does not exist",
            cloud_path.display()
        )));
    }
    file.input = Some(cloud_path.clone());
    let resolved = toml::to_string(&file).expect("detect config serializes");
    let configs = config.map(|c| vec![c.to_path_buf()]).unwrap_or_default();
    RunManifest::new("detect", configs, out, seed, resolved).write()?;

    let f = fs::File::open(&cloud_path)?;
    let cloud = read_point_cloud(std::io::BufReader::new(f))?;
    let kept = crate::perception::filter_points(&cloud, &file.perception.filter);
    let warning = kept.is_empty().then(|| {
        format!(
            "no points of {} survive the filter; segment file is empty",
            cloud_path.display()
        )
    });
    let (grid, segments) = detect_segments(&cloud, &file.perception);
    let mut buf = Vec::new();
    write_segments(&mut buf, &segments)?;
    write_file(out, "segments.csv", &buf)?;
    if file.grid {
        write_file(out, "grid.pgm", grid_to_pgm(&grid).as_bytes())?;
    }
    if let Some(w) = &warning {
        let mut f = fs::File::create(out.join("warnings.txt"))?;
        writeln!(f, "{w}")?;
    }
    Ok(DetectOutcome { segments, warning })
}

/// Every result file under `dir` (everything except the manifest and the
/// nondeterministic files) as relative path and contents, sorted by path.
pub fn result_files(dir: &Path) -> std::io::Result<Vec<(PathBuf, Vec<u8>)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if name != "manifest.json" && !NONDETERMINISTIC_FILES.contains(&name) {
                    out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path)?));
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
