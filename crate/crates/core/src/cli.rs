//! The `mpseg` command line.
//!
//! Every command resolves and validates its whole configuration, reads all
//! inputs and finishes its computation before it creates any output. Each
//! CSV output starts with `#` comment lines naming the command, the crate
//! version and a hash of the effective configuration.
//!
//! Exit status: 0 success, 1 usage or invalid configuration, 2 unreadable or
//! malformed input, 3 failed computation.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{self, fit_pointwise_gmm, label_and_segment, GmmConfig};
use crate::cuts::{self, zero_cross_cuts, CutPointSet};
use crate::dmp::{self, rollout, DmpAdjustment, DmpConfig, IntegrationStep, PrimitiveTrack};
use crate::error::{Error, Result};
use crate::eval::{self, compare, deviation_report, emit_plot_data, labels_from_segments, observed_track, PlotBundle};
use crate::library::{self, extract_primitive, prototype_adjustment, PrimitiveLibrary};
use crate::segmentation::{self, run_em, select_components, EmConfig, EmOutput};
use crate::synth::{default_prototypes, generate, ScenarioSpec};
use crate::trajectory::{ingest, resample_and_difference, write_samples, InputFormat, Trajectory};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

pub const SEGMENTS_FILE: &str = "segments.csv";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const CUTS_FILE: &str = "cuts.csv";
pub const LIBRARY_FILE: &str = "library.json";
pub const MODEL_FILE: &str = "model.json";
pub const EM_LOG_FILE: &str = "em_log.csv";
pub const BIC_FILE: &str = "bic.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const SEGMENTS_HEADER: [&str; 5] = ["traj", "start", "end", "component", "alpha"];
const CUTS_HEADER: [&str; 3] = ["traj", "index", "selected"];
const TRUTH_HEADER: [&str; 2] = ["traj", "cut"];

/// A failed command.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration values.
    Usage(String),
    /// A pipeline stage failed.
    Stage { stage: &'static str, source: Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            // Anything going wrong while reading recordings is the input's fault.
            Self::Stage { stage: "ingest", .. } => EXIT_INPUT,
            Self::Stage { source, .. } if source.is_input() => EXIT_INPUT,
            Self::Stage { .. } => EXIT_COMPUTE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Stage { stage, source } => write!(f, "{stage} failed: {source}"),
        }
    }
}

impl std::error::Error for CliError {}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Settings shared by the pipeline commands. Loaded from a TOML file, then
/// overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Resampling interval, seconds.
    pub dt: f64,
    /// Course increments below this magnitude count as zero, degrees.
    pub deadband: f64,
    pub min_gap: usize,
    /// Longest candidate segment, in initial cut intervals.
    pub k_max: usize,
    pub p_c: f64,
    /// Library size for `segment`, cluster count for `baseline`.
    pub components: usize,
    /// Inclusive component range for a BIC sweep.
    pub sweep: Option<[usize; 2]>,
    pub n_basis: usize,
    pub alpha_z: f64,
    pub alpha_y: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
    pub seed: u64,
    pub standardize: bool,
    pub baseline_max_iter: usize,
    pub baseline_tol: f64,
    pub eigen_floor: f64,
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            deadband: cuts::DEFAULT_DEADBAND_DEG,
            min_gap: cuts::DEFAULT_MIN_GAP,
            k_max: segmentation::DEFAULT_K_MAX,
            p_c: segmentation::DEFAULT_P_C,
            components: segmentation::DEFAULT_COMPONENTS,
            sweep: None,
            n_basis: dmp::DEFAULT_N_BASIS,
            alpha_z: dmp::DEFAULT_ALPHA_Z,
            alpha_y: dmp::DEFAULT_ALPHA_Y,
            max_iter: segmentation::DEFAULT_MAX_ITER,
            tol: segmentation::DEFAULT_TOL,
            var_floor: library::DEFAULT_VAR_FLOOR,
            seed: 0,
            standardize: false,
            baseline_max_iter: baseline::DEFAULT_MAX_ITER,
            baseline_tol: baseline::DEFAULT_TOL,
            eigen_floor: baseline::DEFAULT_EIGEN_FLOOR,
            inputs: Vec::new(),
            out: None,
        }
    }
}

/// Module configurations derived from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dmp: DmpConfig,
    pub em: EmConfig,
    pub gmm: GmmConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("invalid configuration: {e}")))
    }

    /// Checks every value and builds the module configurations.
    pub fn resolve(&self, jobs: usize) -> Result<Resolved, CliError> {
        let bad = |e: Error| usage(format!("invalid configuration: {e}"));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(usage(format!("invalid configuration: dt must be > 0, got {}", self.dt)));
        }
        if !(self.deadband.is_finite() && self.deadband >= 0.0) {
            return Err(usage(format!("invalid configuration: deadband must be >= 0, got {}", self.deadband)));
        }
        if self.min_gap == 0 {
            return Err(usage("invalid configuration: min_gap must be at least 1"));
        }
        if self.max_iter == 0 || self.baseline_max_iter == 0 {
            return Err(usage("invalid configuration: iteration caps must be at least 1"));
        }
        if let Some([lo, hi]) = self.sweep {
            if lo == 0 || lo > hi {
                return Err(usage(format!("invalid configuration: sweep range {lo}..{hi} is empty or starts at 0")));
            }
        }
        let dmp = DmpConfig::new(self.alpha_z, self.alpha_y, self.n_basis).map_err(bad)?;
        let em = EmConfig {
            p_c: self.p_c,
            k_max: self.k_max,
            n_components: self.components,
            max_iter: self.max_iter,
            tol: self.tol,
            var_floor: self.var_floor,
            jobs,
        };
        em.validate().map_err(bad)?;
        let gmm = GmmConfig {
            k: self.components,
            max_iter: self.baseline_max_iter,
            tol: self.baseline_tol,
            eigen_floor: self.eigen_floor,
            standardize: self.standardize,
            seed: self.seed,
        };
        gmm.validate().map_err(bad)?;
        Ok(Resolved { dmp, em, gmm })
    }

    /// Hash of everything that can change results. The output location is
    /// left out so that runs into different directories compare equal.
    pub fn hash(&self) -> String {
        config_hash(&Self { out: None, ..self.clone() })
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configuration serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Parser)]
#[command(name = "mpseg", version, about = "Segment driving trajectories into motion primitives")]
struct Cli {
    /// Worker threads, 0 for one per core
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Log more; repeat for debug output
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Joint probabilistic segmentation and library learning
    Segment(PipelineArgs),
    /// Pointwise Gaussian mixture baseline
    Baseline(PipelineArgs),
    /// Roll out one library component, optionally retargeted
    Rollout(RolloutArgs),
    /// Tabulate cut counts and F1 of result files
    Compare(CompareArgs),
    /// Write synthetic trajectories with known cuts
    Synth(SynthArgs),
    /// Write plot-ready CSVs for segmentations, primitives and deviations
    Plotdata(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Range(usize, usize);

fn parse_range(s: &str) -> std::result::Result<Range, String> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| format!("expected LO..HI, got `{s}`"))?;
    let n = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok(Range(n(lo)?, n(hi)?))
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML file with run settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resampling interval, seconds [default: 0.1]
    #[arg(long)]
    dt: Option<f64>,
    /// Course increments below this count as zero, degrees [default: 0.05]
    #[arg(long)]
    deadband: Option<f64>,
    /// Minimum samples between initial cuts [default: 5]
    #[arg(long)]
    min_gap: Option<usize>,
    /// Longest candidate segment in initial cut intervals [default: 6]
    #[arg(long)]
    k_max: Option<usize>,
    /// Cut probability of the segment prior [default: 0.4]
    #[arg(long)]
    p_c: Option<f64>,
    /// Library size (segment) or cluster count (baseline) [default: 8]
    #[arg(long)]
    components: Option<usize>,
    /// Choose the library size by BIC over LO..HI [default range: 2..12]
    #[arg(long, num_args = 0..=1, default_missing_value = "2..12", value_parser = parse_range)]
    sweep: Option<Range>,
    /// Basis functions per channel [default: 15]
    #[arg(long)]
    n_basis: Option<usize>,
    /// Canonical system decay [default: 4.605]
    #[arg(long)]
    alpha_z: Option<f64>,
    /// Transformation system gain [default: 25]
    #[arg(long)]
    alpha_y: Option<f64>,
    /// EM iteration cap per growth stage [default: 100]
    #[arg(long)]
    max_iter: Option<usize>,
    /// EM convergence tolerance on log evidence [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    /// Variance floor of the library [default: 1e-4]
    #[arg(long)]
    var_floor: Option<f64>,
    /// Random seed for the baseline and synthetic data [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Standardize points before fitting the baseline
    #[arg(long)]
    standardize: bool,
    /// Baseline iteration cap [default: 200]
    #[arg(long)]
    baseline_max_iter: Option<usize>,
    /// Baseline convergence tolerance [default: 1e-8]
    #[arg(long)]
    baseline_tol: Option<f64>,
    /// Baseline covariance eigenvalue floor [default: 1e-6]
    #[arg(long)]
    eigen_floor: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e }).stage("config")?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    cfg.$f = v;
                }
            )*};
        }
        set!(dt, deadband, min_gap, k_max, p_c, components, n_basis, alpha_z, alpha_y, max_iter, tol, var_floor, seed);
        set!(baseline_max_iter, baseline_tol, eigen_floor);
        if let Some(Range(lo, hi)) = self.sweep {
            cfg.sweep = Some([lo, hi]);
        }
        if self.standardize {
            cfg.standardize = true;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trajectory CSV files (t,course_deg,speed_mps)
    inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PipelineArgs {
    /// Configuration with inputs and output directory filled in and checked.
    fn load(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = self.config.load()?;
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if cfg.inputs.is_empty() {
            return Err(usage("no input trajectories given"));
        }
        let out = cfg.out.clone().ok_or_else(|| usage("an output directory is required (--out)"))?;
        Ok((cfg, out))
    }
}

#[derive(Debug, Args)]
struct RolloutArgs {
    /// Library file written by `segment`
    #[arg(long)]
    library: PathBuf,
    /// Component id
    #[arg(long)]
    component: usize,
    /// Final course deviation, degrees [default: the component's]
    #[arg(long, allow_negative_numbers = true)]
    goal_theta: Option<f64>,
    /// Final speed deviation, m/s [default: the component's]
    #[arg(long, allow_negative_numbers = true)]
    goal_v: Option<f64>,
    /// Duration, seconds [default: the component's]
    #[arg(long)]
    duration: Option<f64>,
    /// Integration step, seconds [default: 200 steps per primitive]
    #[arg(long)]
    step: Option<f64>,
    /// Output CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Segment files (traj,start,end,component,alpha)
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Method names, one per result file [default: the directory of a
    /// segments.csv, else the file stem]
    #[arg(long = "name")]
    names: Vec<String>,
    /// True interior cuts (traj,cut)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Initial cuts (traj,index,selected) for the n1 column
    #[arg(long)]
    cuts: Option<PathBuf>,
    /// Matching tolerance, samples
    #[arg(long, default_value_t = eval::DEFAULT_TOLERANCE)]
    tol: usize,
    /// Output CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of trajectories
    #[arg(long, default_value_t = 6)]
    trajectories: usize,
    /// Primitives per trajectory
    #[arg(long, default_value_t = 5)]
    primitives: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trajectory CSV files, in the order used to produce the segments
    inputs: Vec<PathBuf>,
    /// Segment file (traj,start,end,component,alpha)
    #[arg(long)]
    segments: PathBuf,
    /// Library file; adds prototype rollouts and per-segment deviations
    #[arg(long)]
    library: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mpseg: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Segment(a) => cmd_segment(a, cli.jobs),
        Command::Baseline(a) => cmd_baseline(a, cli.jobs),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Plotdata(a) => cmd_plotdata(a),
    }
}

fn header_lines(command: &str, hash: &str) -> Vec<String> {
    vec![
        format!("mpseg {command} {}", env!("CARGO_PKG_VERSION")),
        format!("config_hash {hash}"),
    ]
}

/// A CSV body prefixed with `#` header lines.
fn csv_text(header: &[String], columns: &[&str], rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::new();
    for l in header {
        let _ = writeln!(s, "# {l}");
    }
    let _ = writeln!(s, "{}", columns.join(","));
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    config: &'a T,
}

fn manifest<T: Serialize>(command: &str, hash: &str, config: &T) -> String {
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), config_hash: hash, config };
    serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"
}

fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e }).stage("output")?;
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e }).stage("output")?;
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }).stage("output"),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_trajectories(paths: &[PathBuf], dt: f64) -> Result<Vec<Trajectory>, CliError> {
    paths
        .iter()
        .map(|p| {
            let samples = ingest(p, InputFormat::Csv).map_err(|e| match e {
                Error::Parse { row, message } => Error::Parse { row, message: format!("{}: {message}", p.display()) },
                Error::Schema(m) => Error::Schema(format!("{}: {m}", p.display())),
                Error::EmptyInput => Error::Schema(format!("{}: no samples", p.display())),
                other => other,
            })?;
            resample_and_difference(&samples, dt)
        })
        .collect::<Result<Vec<_>>>()
        .stage("ingest")
}

fn initial_cuts(trajs: &[Trajectory], cfg: &RunConfig) -> Result<Vec<CutPointSet>, CliError> {
    trajs
        .iter()
        .map(|t| zero_cross_cuts(t, cfg.min_gap, cfg.deadband))
        .collect::<Result<Vec<_>>>()
        .stage("cuts")
}

fn em_log(history: &[&[f64]]) -> Vec<String> {
    history
        .iter()
        .enumerate()
        .flat_map(|(s, h)| h.iter().enumerate().map(move |(i, v)| format!("{s},{i},{v}")))
        .collect()
}

fn cmd_segment(args: &PipelineArgs, jobs: usize) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let r = cfg.resolve(jobs)?;
    let hash = cfg.hash();
    let trajs = load_trajectories(&cfg.inputs, cfg.dt)?;
    let cuts = initial_cuts(&trajs, &cfg)?;
    log::info!(
        "{} trajectories, {} initial interior cuts",
        trajs.len(),
        cuts.iter().map(|c| c.interior().len()).sum::<usize>()
    );
    let (run, sweep): (EmOutput, Option<Vec<(usize, f64)>>) = match cfg.sweep {
        Some([lo, hi]) => select_components(&trajs, &cuts, &r.dmp, &r.em, lo..=hi).map(|(o, s)| (o, Some(s))),
        None => run_em(&trajs, &cuts, &r.dmp, &r.em).map(|o| (o, None)),
    }
    .stage("segmentation")?;
    log::info!(
        "library of {} components, log evidence {}, {} EM steps",
        run.library.len(),
        run.log_evidence(),
        run.state.iterations
    );

    let header = header_lines("segment", &hash);
    let mut segments = Vec::new();
    let mut candidates = Vec::new();
    let mut cut_rows = Vec::new();
    for (k, res) in run.results.iter().enumerate() {
        for s in &res.segments {
            segments.push(format!("{k},{},{},{},{}", s.start, s.end, s.component, s.alpha));
        }
        for (c, a) in run.lattices[k].candidates.iter().zip(&run.posteriors[k]) {
            candidates.push(format!("{k},{},{},{},{a}", c.start, c.end, c.span()));
        }
        for &i in cuts[k].indices() {
            cut_rows.push(format!("{k},{i},{}", u8::from(res.cuts.contains(&i))));
        }
    }
    let mut files = vec![
        (SEGMENTS_FILE, csv_text(&header, &SEGMENTS_HEADER, segments)),
        (CANDIDATES_FILE, csv_text(&header, &["traj", "start", "end", "span", "posterior"], candidates)),
        (CUTS_FILE, csv_text(&header, &CUTS_HEADER, cut_rows)),
        (LIBRARY_FILE, run.library.to_json() + "\n"),
        (EM_LOG_FILE, csv_text(&header, &["stage", "iteration", "log_evidence"], em_log(&run.state.stages()))),
        (MANIFEST_FILE, manifest("segment", &hash, &RunConfig { out: None, ..cfg.clone() })),
    ];
    if let Some(scores) = sweep {
        let rows = scores.iter().map(|(m, b)| format!("{m},{b}"));
        files.push((BIC_FILE, csv_text(&header, &["components", "bic"], rows)));
    }
    write_outputs(&out, &files)
}

fn cmd_baseline(args: &PipelineArgs, jobs: usize) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let r = cfg.resolve(jobs)?;
    let hash = cfg.hash();
    let trajs = load_trajectories(&cfg.inputs, cfg.dt)?;
    let fit = fit_pointwise_gmm(&trajs, &r.gmm).stage("baseline")?;
    if !fit.reseeds.is_empty() {
        log::info!("reseeded empty components at iterations {:?}", fit.reseeds);
    }

    let header = header_lines("baseline", &hash);
    let mut segments = Vec::new();
    for (k, t) in trajs.iter().enumerate() {
        let seg = label_and_segment(t, &fit.model);
        // Segments share their boundary sample, as in `segment` output.
        let n = seg.segments.len();
        for (i, &(start, end, label)) in seg.segments.iter().enumerate() {
            let end = if i + 1 < n { seg.segments[i + 1].0 } else { end };
            segments.push(format!("{k},{start},{end},{label},1"));
        }
    }
    let model = serde_json::to_string_pretty(&fit.model).expect("model serializes") + "\n";
    let files = [
        (SEGMENTS_FILE, csv_text(&header, &SEGMENTS_HEADER, segments)),
        (MODEL_FILE, model),
        (EM_LOG_FILE, csv_text(&header, &["stage", "iteration", "log_evidence"], em_log(&[&fit.history]))),
        (MANIFEST_FILE, manifest("baseline", &hash, &RunConfig { out: None, ..cfg.clone() })),
    ];
    write_outputs(&out, &files)
}

fn read_library(path: &Path) -> Result<PrimitiveLibrary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }).stage("library")?;
    PrimitiveLibrary::from_json(&text).stage("library")
}

fn track_rows(t: &PrimitiveTrack) -> Vec<String> {
    (0..t.len())
        .map(|i| {
            format!(
                "{},{},{},{},{}",
                i as f64 * t.dt,
                t.theta[i],
                t.theta_rate[i],
                t.speed[i],
                t.speed_rate[i]
            )
        })
        .collect()
}

#[derive(Serialize)]
struct RolloutProvenance<'a> {
    library: String,
    component: usize,
    adjustment: &'a DmpAdjustment,
    step: Option<f64>,
}

fn cmd_rollout(args: &RolloutArgs) -> Result<(), CliError> {
    for (name, v) in [("goal-theta", args.goal_theta), ("goal-v", args.goal_v)] {
        if v.is_some_and(|v| !v.is_finite()) {
            return Err(usage(format!("--{name} must be finite")));
        }
    }
    if args.duration.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
        return Err(usage("--duration must be > 0"));
    }
    if args.step.is_some_and(|h| !(h.is_finite() && h > 0.0)) {
        return Err(usage("--step must be > 0"));
    }
    let lib = read_library(&args.library)?;
    let comp = lib.components.get(args.component).ok_or_else(|| CliError::Stage {
        stage: "rollout",
        source: Error::UnknownComponent { id: args.component, available: (0..lib.len()).collect() },
    })?;
    let mut adj = prototype_adjustment(comp);
    if let Some(g) = args.goal_theta {
        adj.g[0] = g;
    }
    if let Some(g) = args.goal_v {
        adj.g[1] = g;
    }
    if let Some(d) = args.duration {
        adj.duration = d;
    }
    let mut dmp = lib.cfg.clone();
    if let Some(h) = args.step {
        dmp = dmp.with_step(IntegrationStep::Seconds(h));
    }
    let track = rollout(&extract_primitive(comp), &adj, &dmp).stage("rollout")?;
    let lib_text = std::fs::read(&args.library).unwrap_or_default();
    let hash = config_hash(&RolloutProvenance {
        library: hex::encode(Sha256::digest(&lib_text)),
        component: args.component,
        adjustment: &adj,
        step: args.step,
    });
    let header = header_lines("rollout", &hash);
    let text = csv_text(&header, &["t", "theta", "theta_rate", "speed", "speed_rate"], track_rows(&track));
    write_or_print(args.out.as_deref(), &text)
}

/// Data rows of a CSV file with `#` comments, checked against `columns`.
/// A file without a header line yields no rows.
fn read_rows(path: &Path, columns: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: format!("{}: {e}", path.display()) })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().ne(columns.iter().copied()) {
        return Err(Error::Schema(format!(
            "{}: expected columns `{}`, found `{}`",
            path.display(),
            columns.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| Error::Parse {
                row: e.position().map_or(0, |p| p.line() as usize),
                message: format!("{}: {e}", path.display()),
            })?;
            let line = r.position().map_or(0, |p| p.line() as usize);
            Ok((line, r))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, k: usize, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    rec[k].parse().map_err(|e| Error::Parse {
        row: line,
        message: format!("{}: {name}: {e}", path.display()),
    })
}

/// One row of a segment file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRow {
    pub start: usize,
    pub end: usize,
    pub component: usize,
    pub alpha: f64,
}

/// Reads a segment file into per-trajectory segment lists ordered by start.
/// Trajectory ids must run from 0 without gaps, and consecutive segments
/// must share their boundary sample.
pub fn read_segments(path: &Path) -> Result<Vec<Vec<SegmentRow>>> {
    let mut by_traj: BTreeMap<usize, Vec<SegmentRow>> = BTreeMap::new();
    for (line, rec) in read_rows(path, &SEGMENTS_HEADER)? {
        let traj: usize = field(path, line, &rec, 0, "traj")?;
        let row = SegmentRow {
            start: field(path, line, &rec, 1, "start")?,
            end: field(path, line, &rec, 2, "end")?,
            component: field(path, line, &rec, 3, "component")?,
            alpha: field(path, line, &rec, 4, "alpha")?,
        };
        if row.end < row.start {
            return Err(Error::Parse { row: line, message: format!("{}: segment ends before it starts", path.display()) });
        }
        by_traj.entry(traj).or_default().push(row);
    }
    if by_traj.is_empty() {
        return Err(Error::Schema(format!("{}: no segments", path.display())));
    }
    let mut out = Vec::with_capacity(by_traj.len());
    for (k, (traj, mut rows)) in by_traj.into_iter().enumerate() {
        if traj != k {
            return Err(Error::Schema(format!("{}: trajectory {k} has no segments", path.display())));
        }
        rows.sort_by_key(|r| r.start);
        if rows.windows(2).any(|w| w[0].end != w[1].start) {
            return Err(Error::Schema(format!("{}: segments of trajectory {k} are not contiguous", path.display())));
        }
        out.push(rows);
    }
    Ok(out)
}

/// Cut list of one trajectory's segments, endpoints included.
pub fn segment_cuts(rows: &[SegmentRow]) -> Vec<usize> {
    let mut cuts: Vec<usize> = rows.iter().map(|r| r.start).collect();
    cuts.extend(rows.last().map(|r| r.end));
    cuts
}

/// Reads `(traj, index)` pairs of a two-or-more column file into one list
/// per trajectory, for `n` trajectories.
fn read_indexed(path: &Path, columns: &[&str], n: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); n];
    for (line, rec) in read_rows(path, columns)? {
        let traj: usize = field(path, line, &rec, 0, columns[0])?;
        let idx: usize = field(path, line, &rec, 1, columns[1])?;
        let slot = out.get_mut(traj).ok_or_else(|| {
            Error::Schema(format!("{}: trajectory {traj} is not in the results ({n} trajectories)", path.display()))
        })?;
        slot.push(idx);
    }
    for v in &mut out {
        v.sort_unstable();
    }
    Ok(out)
}

/// The parent directory's name for a `segments.csv`, else the file stem.
fn method_name(path: &Path) -> String {
    let name = if path.file_name().is_some_and(|n| n == SEGMENTS_FILE) {
        path.parent().and_then(Path::file_name)
    } else {
        path.file_stem()
    };
    name.map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct CompareProvenance<'a> {
    names: &'a [String],
    results: &'a [PathBuf],
    truth: Option<&'a PathBuf>,
    cuts: Option<&'a PathBuf>,
    tol: usize,
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    if !args.names.is_empty() && args.names.len() != args.results.len() {
        return Err(usage(format!(
            "{} names given for {} result files",
            args.names.len(),
            args.results.len()
        )));
    }
    let names: Vec<String> = if args.names.is_empty() {
        args.results.iter().map(|p| method_name(p)).collect()
    } else {
        args.names.clone()
    };
    let mut methods = Vec::new();
    for (name, path) in names.iter().zip(&args.results) {
        let segs = read_segments(path).stage("read")?;
        methods.push((name.clone(), segs.iter().map(|s| segment_cuts(s)).collect::<Vec<_>>()));
    }
    let n = methods[0].1.len();
    let ends: Vec<(usize, usize)> = methods[0].1.iter().map(|c| (c[0], *c.last().expect("non-empty"))).collect();
    // Truth and initial cuts list interior cuts; bracket them with the endpoints.
    let bracket = |lists: Vec<Vec<usize>>| -> Vec<Vec<usize>> {
        lists
            .into_iter()
            .zip(&ends)
            .map(|(mut v, &(a, b))| {
                v.retain(|&i| i != a && i != b);
                v.insert(0, a);
                v.push(b);
                v
            })
            .collect()
    };
    let truth = match &args.truth {
        Some(p) => {
            let rows = read_indexed(p, &TRUTH_HEADER, n).stage("read")?;
            if rows.iter().all(Vec::is_empty) {
                None
            } else {
                Some(bracket(rows))
            }
        }
        None => None,
    };
    let initial = match &args.cuts {
        Some(p) => Some(bracket(read_indexed(p, &CUTS_HEADER, n).stage("read")?)),
        None => None,
    };
    let table = compare(initial.as_deref(), &methods, truth.as_deref(), args.tol).stage("compare")?;
    let hash = config_hash(&CompareProvenance {
        names: &names,
        results: &args.results,
        truth: args.truth.as_ref(),
        cuts: args.cuts.as_ref(),
        tol: args.tol,
    });
    let mut text = String::new();
    for l in header_lines("compare", &hash) {
        let _ = writeln!(text, "# {l}");
    }
    text.push_str(&table.to_table());
    write_or_print(args.out.as_deref(), &text)
}

#[derive(Serialize)]
struct SynthProvenance<'a> {
    config: &'a RunConfig,
    trajectories: usize,
    primitives: usize,
}

/// Seed of trajectory `k` in a synthetic set.
pub fn scenario_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(k as u64)
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = args.config.load()?;
    cfg.out = Some(args.out.clone());
    let r = cfg.resolve(0)?;
    if args.trajectories == 0 || args.primitives == 0 {
        return Err(usage("--trajectories and --primitives must be at least 1"));
    }
    let protos = default_prototypes(&r.dmp).stage("synth")?;
    let scenarios = (0..args.trajectories)
        .map(|k| {
            let mut spec = ScenarioSpec::new(protos.clone(), scenario_seed(cfg.seed, k));
            spec.n_primitives = args.primitives;
            spec.dt = cfg.dt;
            spec.min_gap = cfg.min_gap;
            generate(&spec, &r.dmp)
        })
        .collect::<Result<Vec<_>>>()
        .stage("synth")?;

    let hash = config_hash(&SynthProvenance {
        config: &RunConfig { out: None, ..cfg.clone() },
        trajectories: args.trajectories,
        primitives: args.primitives,
    });
    let header = header_lines("synth", &hash);
    let mut files = Vec::new();
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    for (k, sc) in scenarios.iter().enumerate() {
        let mut body = Vec::new();
        write_samples(&mut body, &sc.samples).stage("synth")?;
        let mut text = String::new();
        for l in &header {
            let _ = writeln!(text, "# {l}");
        }
        text.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
        files.push((format!("traj_{k:03}.csv"), text));
        truth.extend(sc.interior_cuts().iter().map(|c| format!("{k},{c}")));
        for (i, w) in sc.true_cuts.windows(2).enumerate() {
            labels.push(format!("{k},{},{},{},1", w[0], w[1], sc.components[i]));
        }
    }
    files.push((TRUTH_FILE.into(), csv_text(&header, &TRUTH_HEADER, truth)));
    files.push(("truth_segments.csv".into(), csv_text(&header, &SEGMENTS_HEADER, labels)));
    let names: Vec<String> = protos.iter().map(|p| p.name.clone()).collect();
    files.push((MANIFEST_FILE.into(), manifest("synth", &hash, &(RunConfig { out: None, ..cfg.clone() }, args.trajectories, args.primitives, names))));
    let files: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    write_outputs(&args.out, &files)
}

#[derive(Serialize)]
struct PlotProvenance<'a> {
    config: &'a RunConfig,
    segments: &'a Path,
    library: Option<&'a PathBuf>,
}

fn cmd_plotdata(args: &PlotArgs) -> Result<(), CliError> {
    let mut cfg = args.config.load()?;
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs.clone();
    }
    if cfg.inputs.is_empty() {
        return Err(usage("no input trajectories given"));
    }
    cfg.resolve(0)?;
    let trajs = load_trajectories(&cfg.inputs, cfg.dt)?;
    let segs = read_segments(&args.segments).stage("read")?;
    if segs.len() != trajs.len() {
        return Err(CliError::Stage {
            stage: "read",
            source: Error::Schema(format!(
                "{} covers {} trajectories but {} inputs were given",
                args.segments.display(),
                segs.len(),
                trajs.len()
            )),
        });
    }
    let lib = args.library.as_deref().map(read_library).transpose()?;

    let mut bundle = PlotBundle::default();
    for (t, rows) in trajs.iter().zip(&segs) {
        if rows.iter().any(|r| r.end >= t.len()) {
            return Err(CliError::Stage {
                stage: "read",
                source: Error::Schema(format!("{}: segment beyond the end of its trajectory", args.segments.display())),
            });
        }
        let triples: Vec<_> = rows.iter().map(|r| (r.start, r.end, r.component)).collect();
        bundle.segmentations.push((t.clone(), labels_from_segments(t.len(), &triples)));
    }
    if let Some(lib) = &lib {
        for (m, comp) in lib.components.iter().enumerate() {
            let track = rollout(&extract_primitive(comp), &prototype_adjustment(comp), &lib.cfg).stage("plot")?;
            bundle.primitives.push((format!("component_{m}"), track));
        }
        for (k, (t, rows)) in trajs.iter().zip(&segs).enumerate() {
            let dmp = lib.cfg.clone().with_step(IntegrationStep::Seconds(t.dt()));
            for (i, r) in rows.iter().enumerate() {
                let comp = lib.components.get(r.component).ok_or_else(|| CliError::Stage {
                    stage: "plot",
                    source: Error::UnknownComponent { id: r.component, available: (0..lib.len()).collect() },
                })?;
                if r.end - r.start < 4 {
                    continue;
                }
                let demo = observed_track(t, r.start, r.end).stage("plot")?;
                let adj = DmpAdjustment {
                    g: [*demo.theta.last().expect("non-empty"), *demo.speed.last().expect("non-empty")],
                    duration: (r.end - r.start) as f64 * t.dt(),
                };
                let mut params = extract_primitive(comp);
                params.v_init = demo.v_init;
                let learned = rollout(&params, &adj, &dmp).stage("plot")?;
                let report = deviation_report(&demo, &learned).stage("plot")?;
                bundle.deviations.push((format!("traj{k}_seg{i}_c{}", r.component), report));
            }
        }
    }
    let hash = config_hash(&PlotProvenance { config: &cfg, segments: &args.segments, library: args.library.as_ref() });
    bundle.header = header_lines("plotdata", &hash);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e }).stage("output")?;
    emit_plot_data(&bundle, &args.out).stage("output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn documented_defaults_match_run_config() {
        let d = RunConfig::default();
        let cmd = Cli::command();
        let seg = cmd.find_subcommand("segment").unwrap();
        let help = |id: &str| {
            seg.get_arguments()
                .find(|a| a.get_id() == id)
                .unwrap()
                .get_help()
                .unwrap()
                .to_string()
        };
        let cases = [
            ("dt", d.dt.to_string()),
            ("deadband", d.deadband.to_string()),
            ("min_gap", d.min_gap.to_string()),
            ("k_max", d.k_max.to_string()),
            ("p_c", d.p_c.to_string()),
            ("components", d.components.to_string()),
            ("n_basis", d.n_basis.to_string()),
            ("alpha_z", d.alpha_z.to_string()),
            ("alpha_y", d.alpha_y.to_string()),
            ("max_iter", d.max_iter.to_string()),
            ("tol", format!("{:e}", d.tol)),
            ("var_floor", format!("{:e}", d.var_floor)),
            ("seed", d.seed.to_string()),
            ("baseline_max_iter", d.baseline_max_iter.to_string()),
            ("baseline_tol", format!("{:e}", d.baseline_tol)),
            ("eigen_floor", format!("{:e}", d.eigen_floor)),
        ];
        for (id, value) in cases {
            let h = help(id);
            assert!(h.contains(&format!("[default: {value}]")), "{id}: `{h}` lacks {value}");
        }
    }

    #[test]
    fn default_config_resolves_to_module_defaults() {
        let r = RunConfig::default().resolve(0).unwrap();
        assert_eq!(r.dmp, DmpConfig::default());
        assert_eq!(r.em, EmConfig::default());
        assert_eq!(r.gmm, GmmConfig::default());
    }

    #[test]
    fn toml_overrides_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml("p_c = 0.3\nsweep = [2, 5]\n").unwrap();
        assert_eq!(cfg.p_c, 0.3);
        assert_eq!(cfg.sweep, Some([2, 5]));
        assert_eq!(cfg.dt, RunConfig::default().dt);
        assert!(RunConfig::from_toml("pc = 0.3\n").is_err());
        assert!(RunConfig::from_toml("p_c = \"x\"\n").is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = [
            RunConfig { dt: 0.0, ..Default::default() },
            RunConfig { deadband: -1.0, ..Default::default() },
            RunConfig { min_gap: 0, ..Default::default() },
            RunConfig { p_c: 1.0, ..Default::default() },
            RunConfig { components: 0, ..Default::default() },
            RunConfig { k_max: 0, ..Default::default() },
            RunConfig { n_basis: 0, ..Default::default() },
            RunConfig { sweep: Some([5, 2]), ..Default::default() },
            RunConfig { max_iter: 0, ..Default::default() },
            RunConfig { var_floor: 0.0, ..Default::default() },
            RunConfig { eigen_floor: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            let e = cfg.resolve(0).unwrap_err();
            assert_eq!(e.exit_code(), EXIT_USAGE, "{cfg:?}");
        }
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig { out: Some("x".into()), ..Default::default() };
        let b = RunConfig { out: Some("y".into()), ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig { seed: 1, ..a.clone() }.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        let stage = |stage, source| CliError::Stage { stage, source };
        assert_eq!(stage("read", Error::Schema("x".into())).exit_code(), EXIT_INPUT);
        assert_eq!(stage("rollout", Error::UnknownComponent { id: 3, available: vec![0] }).exit_code(), EXIT_INPUT);
        assert_eq!(stage("ingest", Error::param("too short")).exit_code(), EXIT_INPUT);
        assert_eq!(stage("segmentation", Error::NoSegmentationPath).exit_code(), EXIT_COMPUTE);
        assert_eq!(stage("segmentation", Error::param("x")).exit_code(), EXIT_COMPUTE);
        assert_eq!(usage("x").exit_code(), EXIT_USAGE);
        let msg = stage("segmentation", Error::NoSegmentationPath).to_string();
        assert!(msg.starts_with("segmentation failed"));
    }

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("2..12"), Ok(Range(2, 12)));
        assert!(parse_range("2-12").is_err());
        assert!(parse_range("a..3").is_err());
    }

    #[test]
    fn segment_cuts_append_the_last_end() {
        let r = |start, end| SegmentRow { start, end, component: 0, alpha: 1.0 };
        assert_eq!(segment_cuts(&[r(0, 10), r(10, 25)]), vec![0, 10, 25]);
        assert_eq!(segment_cuts(&[r(0, 9)]), vec![0, 9]);
    }
}
