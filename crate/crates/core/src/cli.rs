//! Command-line front end: problem files, the staged pipeline, scans and
//! figure data.
//!
//! Every artifact starts with a header naming the tool version, a SHA-256
//! hash of the effective configuration, the seed, `T` and `t0/T`. Outputs
//! carry no timestamps, so equal configurations give byte-identical files.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::control::{cost, optimize, ControlResult, OptimizerConfig, Stage, TargetSpec};
use crate::diabatic::estimate_td;
use crate::dynamics::{propagate_full, uniform_grid, PreparationResult, PropagationOptions, DEFAULT_SAMPLES};
use crate::effective::build_effective;
use crate::error::Error;
use crate::experiments::{freeze_grid, linspace, scan_ergodicity, scan_robustness, strength_grid};
use crate::hamiltonian::Schedule;
use crate::model::{
    encode_hopfield, logical_to_physical, map_to_lhz, verify_degenerate_ground, BitString, LhzModel,
    LogicalModel,
};

/// Bundled four-spin problem with fair and biased target sets.
pub const BUNDLED_PROBLEM: &str = include_str!("../data/four-spin.json");

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stage an error is attributed to; each has its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineStage {
    Config,
    Encode,
    Map,
    Heff,
    Td,
    Optimize,
    Simulate,
    Scan,
    Output,
}

impl PipelineStage {
    pub fn exit_code(self) -> i32 {
        match self {
            PipelineStage::Config => 2,
            PipelineStage::Encode => 3,
            PipelineStage::Map => 4,
            PipelineStage::Heff => 5,
            PipelineStage::Td => 6,
            PipelineStage::Optimize => 7,
            PipelineStage::Simulate => 8,
            PipelineStage::Scan => 9,
            PipelineStage::Output => 10,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PipelineStage::Config => "config",
            PipelineStage::Encode => "encode",
            PipelineStage::Map => "map",
            PipelineStage::Heff => "heff",
            PipelineStage::Td => "td",
            PipelineStage::Optimize => "optimize",
            PipelineStage::Simulate => "simulate",
            PipelineStage::Scan => "scan",
            PipelineStage::Output => "output",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: PipelineStage,
    pub error: Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

trait AtStage<T> {
    fn at(self, stage: PipelineStage) -> CliResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: PipelineStage) -> CliResult<T> {
        self.map_err(|error| CliError { stage, error })
    }
}

impl<T> AtStage<T> for std::io::Result<T> {
    fn at(self, stage: PipelineStage) -> CliResult<T> {
        self.map_err(|e| CliError {
            stage,
            error: e.into(),
        })
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError {
        stage: PipelineStage::Config,
        error: Error::Parse(msg.into()),
    }
}

/// Target probabilities in a problem file: a list, or `"uniform"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetValues {
    Named(String),
    List(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTargets {
    pub name: String,
    pub probabilities: TargetValues,
}

/// Problem file. Couplings are `[i, j, J_ij]` with 0-based logical indices;
/// when omitted, the Hebbian encoding of the bit strings is used.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub bitstrings: Vec<String>,
    #[serde(default)]
    pub couplings: Option<Vec<(usize, usize, f64)>>,
    #[serde(default)]
    pub field: f64,
    #[serde(default = "default_strength")]
    pub initial_strength: f64,
    #[serde(default)]
    pub targets: Vec<NamedTargets>,
}

fn default_strength() -> f64 {
    4.0
}

impl Problem {
    pub fn parse(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> crate::Result<Self> {
        match path {
            Some(p) => Self::parse(&fs::read_to_string(p)?),
            None => Self::parse(BUNDLED_PROBLEM),
        }
    }

    pub fn strings(&self) -> crate::Result<Vec<BitString>> {
        self.bitstrings.iter().map(|s| s.parse()).collect()
    }

    pub fn logical_model(&self) -> crate::Result<LogicalModel> {
        let strings = self.strings()?;
        let n = strings.first().map(BitString::len).unwrap_or(0);
        match &self.couplings {
            Some(entries) => LogicalModel::from_pairs(n, entries, self.field),
            None => {
                let hebb = encode_hopfield(&strings)?;
                LogicalModel::new(hebb.couplings().clone(), self.field)
            }
        }
    }

    /// Target set by name, or the first one when `name` is `None`.
    pub fn targets(&self, name: Option<&str>, m: usize) -> crate::Result<TargetSpec> {
        let entry = match name {
            Some(n) => self
                .targets
                .iter()
                .find(|t| t.name == n)
                .ok_or_else(|| Error::InvalidTargets(format!("no target set named {n:?}")))?,
            None => self
                .targets
                .first()
                .ok_or_else(|| Error::InvalidTargets("problem defines no targets".into()))?,
        };
        match &entry.probabilities {
            TargetValues::Named(s) if s == "uniform" => TargetSpec::uniform(m),
            TargetValues::Named(s) => Err(Error::InvalidTargets(format!("unknown target keyword {s:?}"))),
            TargetValues::List(p) => TargetSpec::new(p.clone()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "paritysup", version, about = "Programmable bit-string superpositions by parity-encoded annealing")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// Problem file (JSON); the bundled four-spin problem when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sweep duration T.
    #[arg(long = "T", global = true, default_value_t = 100.0)]
    pub total_time: f64,
    /// Start of the effective dynamics as a fraction of T.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub t0_fraction: f64,
    /// Optimization level: static, iterative or exact.
    #[arg(long, global = true, default_value = "exact")]
    pub level: Stage,
    /// Worker threads for restarts and scans.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Time steps of the full propagation.
    #[arg(long, global = true, default_value_t = crate::dynamics::DEFAULT_STEPS)]
    pub steps: usize,
    /// Box for constraint strengths, as `lo,hi`.
    #[arg(long, global = true, value_delimiter = ',', default_value = "0.1,20")]
    pub bounds: Vec<f64>,
    /// Named target set from the problem file.
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// Explicit target probabilities, overriding the problem file.
    #[arg(long, global = true, value_delimiter = ',')]
    pub targets: Option<Vec<f64>>,
    /// Constraint strengths; the problem's initial strength when omitted.
    #[arg(long = "c", global = true, value_delimiter = ',')]
    pub strengths: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode and verify the logical model.
    Encode,
    /// Map to the parity (LHZ) representation.
    Map,
    /// Effective Hamiltonian coefficients, optionally evaluated at t/T values.
    Heff {
        #[arg(long, value_delimiter = ',')]
        at: Vec<f64>,
    },
    /// Freeze-time estimate.
    Td,
    /// Optimize constraint strengths up to --level.
    Optimize,
    /// Full dynamics for the given strengths.
    Simulate {
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Whole pipeline: encode, map, optimize, simulate.
    Run {
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Final probabilities with one constraint strength scaled by e.
    ScanRobustness {
        #[arg(long, default_value_t = 0.6)]
        e_min: f64,
        #[arg(long, default_value_t = 1.4)]
        e_max: f64,
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// 1-based constraint indices; all when omitted.
        #[arg(long, value_delimiter = ',')]
        constraints: Option<Vec<usize>>,
    },
    /// Frozen ground-state probabilities over a grid of strengths and times.
    ScanErgodicity {
        #[arg(long, default_value_t = 0.1)]
        c_min: f64,
        #[arg(long, default_value_t = 4.0)]
        c_max: f64,
        #[arg(long, default_value_t = 0.1)]
        c_step: f64,
        /// Number of freeze times, at (k - 1/2)/n of T.
        #[arg(long, default_value_t = 30)]
        times: usize,
        #[arg(long, default_value_t = 20)]
        divisions: usize,
        /// Also write every grid point.
        #[arg(long)]
        write_points: bool,
    },
    /// Data for one of the standard figures of the bundled problem.
    Reproduce { figure: Figure },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Fair sampling trajectory, exact level.
    Fig2c,
    /// Biased targets trajectory, iterative level.
    Fig2d,
    /// Robustness around the exact fair baseline.
    Fig3,
    /// Simplex coverage histogram.
    Fig4,
}

/// Resolved settings for one pipeline run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: Problem,
    pub total_time: f64,
    pub t0_fraction: f64,
    pub level: Stage,
    pub seed: u64,
    pub steps: usize,
    pub out_dir: PathBuf,
    pub bounds: (f64, f64),
    pub target: Option<String>,
    pub targets: Option<Vec<f64>>,
    pub strengths: Option<Vec<f64>>,
    pub samples: usize,
}

impl RunConfig {
    pub fn from_args(args: &CommonArgs) -> CliResult<Self> {
        let problem = Problem::load(args.config.as_deref()).at(PipelineStage::Config)?;
        let bounds = match args.bounds.as_slice() {
            &[lo, hi] => (lo, hi),
            other => return Err(config_error(format!("--bounds needs two values, got {other:?}"))),
        };
        let cfg = Self {
            problem,
            total_time: args.total_time,
            t0_fraction: args.t0_fraction,
            level: args.level,
            seed: args.seed,
            steps: args.steps,
            out_dir: args.out.clone(),
            bounds,
            target: args.target.clone(),
            targets: args.targets.clone(),
            strengths: args.strengths.clone(),
            samples: DEFAULT_SAMPLES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Bundled problem with default settings.
    pub fn bundled(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            problem: Problem::parse(BUNDLED_PROBLEM).expect("bundled problem parses"),
            total_time: 100.0,
            t0_fraction: 0.1,
            level: Stage::Exact,
            seed: 0,
            steps: crate::dynamics::DEFAULT_STEPS,
            out_dir: out_dir.into(),
            bounds: (0.1, 20.0),
            target: None,
            targets: None,
            strengths: None,
            samples: DEFAULT_SAMPLES,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(config_error(format!("T = {} must be positive", self.total_time)));
        }
        if !(self.t0_fraction > 0.0 && self.t0_fraction < 1.0) {
            return Err(config_error(format!("t0 fraction {} outside (0, 1)", self.t0_fraction)));
        }
        if self.steps == 0 {
            return Err(config_error("step count must be positive"));
        }
        let (lo, hi) = self.bounds;
        if !(lo > 0.0 && hi > lo) {
            return Err(config_error(format!("bounds [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        Ok(())
    }

    pub fn schedule(&self) -> CliResult<Schedule> {
        Schedule::linear(self.total_time).at(PipelineStage::Config)
    }

    pub fn target_spec(&self, m: usize) -> CliResult<TargetSpec> {
        match &self.targets {
            Some(p) => TargetSpec::new(p.clone()),
            None => self.problem.targets(self.target.as_deref(), m),
        }
        .at(PipelineStage::Config)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lower: self.bounds.0,
            upper: self.bounds.1,
            seed: self.seed,
            t0_fraction: self.t0_fraction,
            full_steps: self.steps,
            ..Default::default()
        }
    }

    fn describe(&self, command: &str, extra: Value) -> Value {
        json!({
            "command": command,
            "problem": self.problem,
            "T": self.total_time,
            "t0_fraction": self.t0_fraction,
            "level": self.level.to_string(),
            "seed": self.seed,
            "steps": self.steps,
            "bounds": [self.bounds.0, self.bounds.1],
            "target": self.target,
            "targets": self.targets,
            "strengths": self.strengths,
            "samples": self.samples,
            "extra": extra,
        })
    }
}

/// Provenance recorded at the top of every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub t0_fraction: f64,
}

impl Header {
    pub fn new(config: &RunConfig, description: &Value) -> Self {
        let digest = Sha256::digest(description.to_string().as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            tool: "paritysup",
            version: VERSION,
            config_hash,
            seed: config.seed,
            total_time: config.total_time,
            t0_fraction: config.t0_fraction,
        }
    }

    fn csv_lines(&self) -> String {
        format!(
            "# {} {}\n# config_hash={} seed={} T={} t0_fraction={}\n",
            self.tool, self.version, self.config_hash, self.seed, self.total_time, self.t0_fraction
        )
    }
}

struct Output<'a> {
    dir: &'a Path,
    header: Header,
    written: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(config: &'a RunConfig, command: &str, extra: Value) -> CliResult<Self> {
        fs::create_dir_all(&config.out_dir).at(PipelineStage::Output)?;
        Ok(Self {
            dir: &config.out_dir,
            header: Header::new(config, &config.describe(command, extra)),
            written: Vec::new(),
        })
    }

    fn json(&mut self, name: &str, body: Value) -> CliResult<()> {
        let doc = json!({ "header": self.header, "result": body });
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError {
            stage: PipelineStage::Output,
            error: e.into(),
        })?;
        fs::write(&path, text + "\n").at(PipelineStage::Output)?;
        self.written.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).at(PipelineStage::Output)?;
        self.written.push(path);
        Ok(())
    }

    fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>,
    ) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path).at(PipelineStage::Output)?);
        w.write_all(self.header.csv_lines().as_bytes()).at(PipelineStage::Output)?;
        body(&mut w).at(PipelineStage::Output)?;
        w.flush().at(PipelineStage::Output)?;
        self.written.push(path);
        Ok(())
    }
}

fn fmt_vec(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("({})", parts.join(", "))
}

fn encode_and_map(config: &RunConfig) -> CliResult<(LogicalModel, Vec<BitString>, LhzModel)> {
    let strings = config.problem.strings().at(PipelineStage::Config)?;
    let logical = config.problem.logical_model().at(PipelineStage::Encode)?;
    let report = verify_degenerate_ground(&logical, &strings).at(PipelineStage::Encode)?;
    if !report.is_valid {
        return Err(CliError {
            stage: PipelineStage::Encode,
            error: Error::NotVerified,
        });
    }
    let mut lhz = map_to_lhz(&logical, &strings, config.problem.initial_strength).at(PipelineStage::Map)?;
    if let Some(c) = &config.strengths {
        lhz = lhz.with_strengths(c).at(PipelineStage::Config)?;
    }
    // one label per ground string: the first logical preimage of each
    let mut labels: Vec<BitString> = Vec::new();
    for x in strings {
        if !labels.iter().any(|y| logical_to_physical(y) == logical_to_physical(&x)) {
            labels.push(x);
        }
    }
    Ok((logical, labels, lhz))
}

fn write_trajectory(w: &mut impl Write, run: &PreparationResult, m: usize) -> crate::Result<()> {
    let cols: Vec<String> = (1..=m).map(|n| format!("P{n}")).collect();
    writeln!(w, "t_over_T,{},leakage", cols.join(","))?;
    for p in &run.trajectory {
        let vals: Vec<String> = p.populations.iter().map(|x| format!("{x:.10}")).collect();
        writeln!(w, "{:.6},{},{:.10}", p.t_over_t, vals.join(","), p.leakage)?;
    }
    Ok(())
}

/// Outcome of [`run_pipeline`].
#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub level: Stage,
    pub targets: Vec<f64>,
    pub stages: Vec<ControlResult>,
    pub c: Vec<f64>,
    pub td: f64,
    /// What the last optimization stage measured: ground-state weights at
    /// `t_d`, effective-dynamics or full-dynamics probabilities.
    pub achieved: Vec<f64>,
    /// Full-dynamics outcome; absent at the static level.
    pub final_probabilities: Option<Vec<f64>>,
    pub leakage: Option<f64>,
    /// Cost of the full-dynamics outcome, or of `achieved` at the static level.
    pub omega: f64,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Encode, map, build `H_eff`, estimate `t_d`, optimize up to the configured
/// level, verify with the full dynamics and write `summary.json`,
/// `summary.txt` and `trajectory.csv` into the output directory.
pub fn run_pipeline(config: &RunConfig) -> CliResult<PipelineReport> {
    config.validate()?;
    let schedule = config.schedule()?;
    let (_, strings, lhz) = encode_and_map(config)?;
    let targets = config.target_spec(lhz.m())?;
    let heff = build_effective(&lhz).at(PipelineStage::Heff)?;
    estimate_td(&heff, &schedule).at(PipelineStage::Td)?;

    let stages = optimize(&lhz, &targets, &schedule, config.level, &config.optimizer()).at(PipelineStage::Optimize)?;
    let last = stages.last().expect("at least the static stage").clone();

    let mut warnings = Vec::new();
    let (final_probabilities, leakage, run) = if config.level == Stage::Static {
        warnings.push("static level: no dynamical verification ran".to_string());
        (None, None, None)
    } else {
        let opts = PropagationOptions::with_steps(config.steps).sampled(uniform_grid(config.samples));
        let run = propagate_full(&lhz, &schedule, &last.c, &opts).at(PipelineStage::Simulate)?;
        (Some(run.final_probabilities.clone()), Some(run.leakage), Some(run))
    };
    let omega = cost(final_probabilities.as_deref().unwrap_or(&last.achieved), &targets).at(PipelineStage::Optimize)?;
    if let Some(l) = leakage {
        if l > 1e-2 {
            warnings.push(format!("leakage {l:.3e} exceeds 1e-2"));
        }
    }

    let mut out = Output::new(config, "run", Value::Null)?;
    let mut report = PipelineReport {
        level: config.level,
        targets: targets.probabilities().to_vec(),
        stages,
        c: last.c.clone(),
        td: last.td,
        achieved: last.achieved.clone(),
        final_probabilities,
        leakage,
        omega,
        warnings,
        files: Vec::new(),
    };
    if let Some(run) = &run {
        out.csv("trajectory.csv", |w| write_trajectory(w, run, lhz.m()))?;
    }
    out.text("summary.txt", &summary_table(&report, &strings, &out.header))?;
    out.json("summary.json", serde_json::to_value(&report).expect("serializable"))?;
    report.files = out.written;
    Ok(report)
}

fn summary_table(r: &PipelineReport, strings: &[BitString], header: &Header) -> String {
    let mut s = format!(
        "paritysup {} config_hash={} seed={} T={} t0_fraction={}\n",
        header.version, header.config_hash, header.seed, header.total_time, header.t0_fraction
    );
    s += &format!("level      {}\n", r.level);
    s += &format!("C          {}\n", fmt_vec(&r.c, 4));
    s += &format!("t_d        {:.4}\n", r.td);
    s += "n  string     target   achieved  final\n";
    for (n, target) in r.targets.iter().enumerate() {
        let label = strings.get(n).map(ToString::to_string).unwrap_or_default();
        let fin = r
            .final_probabilities
            .as_ref()
            .map(|p| format!("{:.4}", p[n]))
            .unwrap_or_else(|| "-".into());
        s += &format!("{:<2} {:<10} {:<8.4} {:<9.4} {}\n", n + 1, label, target, r.achieved[n], fin);
    }
    if let Some(l) = r.leakage {
        s += &format!("leakage    {l:.3e}\n");
    }
    s += &format!("omega      {:.3e}\n", r.omega);
    for w in &r.warnings {
        s += &format!("warning: {w}\n");
    }
    s
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T>
where
    T: Send,
{
    match jobs {
        None => f(),
        Some(0) => Err(config_error("--jobs must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config_error(e.to_string()))?
            .install(f),
    }
}

/// Parses arguments, dispatches and maps failures to stage exit codes.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { PipelineStage::Config.exit_code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("paritysup: {e}");
            e.stage.exit_code()
        }
    }
}

/// Executes one subcommand; returns the files written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let jobs = cli.common.jobs;
    if let Command::Reproduce { figure } = cli.command {
        let mut config = RunConfig::bundled(&cli.common.out);
        config.seed = cli.common.seed;
        config.steps = cli.common.steps;
        config.total_time = cli.common.total_time;
        config.t0_fraction = cli.common.t0_fraction;
        config.validate()?;
        return with_jobs(jobs, || reproduce(figure, &config));
    }
    let mut config = RunConfig::from_args(&cli.common)?;
    with_jobs(jobs, || match &cli.command {
        Command::Encode => cmd_encode(&config),
        Command::Map => cmd_map(&config),
        Command::Heff { at } => cmd_heff(&config, at),
        Command::Td => cmd_td(&config),
        Command::Optimize => cmd_optimize(&config),
        Command::Simulate { samples } => {
            config.samples = *samples;
            cmd_simulate(&config)
        }
        Command::Run { samples } => {
            config.samples = *samples;
            run_pipeline(&config).map(|r| r.files)
        }
        Command::ScanRobustness {
            e_min,
            e_max,
            points,
            constraints,
        } => cmd_scan_robustness(&config, *e_min, *e_max, *points, constraints.as_deref()),
        Command::ScanErgodicity {
            c_min,
            c_max,
            c_step,
            times,
            divisions,
            write_points,
        } => cmd_scan_ergodicity(&config, (*c_min, *c_max, *c_step), *times, *divisions, *write_points),
        Command::Reproduce { .. } => unreachable!("handled above"),
    })
}

fn cmd_encode(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let strings = config.problem.strings().at(PipelineStage::Config)?;
    let logical = config.problem.logical_model().at(PipelineStage::Encode)?;
    let report = verify_degenerate_ground(&logical, &strings).at(PipelineStage::Encode)?;
    let mut out = Output::new(config, "encode", Value::Null)?;
    let couplings: Vec<Vec<f64>> = logical.couplings().row_iter().map(|r| r.iter().copied().collect()).collect();
    out.json(
        "encode.json",
        json!({
            "n": logical.n(),
            "couplings": couplings,
            "field": logical.field(),
            "valid": report.is_valid,
            "ground_energy": report.ground_energy,
            "minimizers": report.minimizers,
            "z2_symmetric": report.z2_symmetric,
        }),
    )?;
    if !report.is_valid {
        return Err(CliError {
            stage: PipelineStage::Encode,
            error: Error::NotVerified,
        });
    }
    Ok(out.written)
}

fn cmd_map(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let (_, _, lhz) = encode_and_map(config)?;
    let mut out = Output::new(config, "map", Value::Null)?;
    let exact = lhz.ground_manifold_is_exact().ok();
    out.json(
        "map.json",
        json!({
            "k": lhz.k(),
            "pairs": lhz.pairs(),
            "local_fields": lhz.local_fields(),
            "constraints": lhz.constraints(),
            "member_sets": lhz.member_sets(),
            "ground_strings": lhz.ground_strings(),
            "ground_manifold_is_exact": exact,
        }),
    )?;
    Ok(out.written)
}

fn cmd_heff(config: &RunConfig, at: &[f64]) -> CliResult<Vec<PathBuf>> {
    let schedule = config.schedule()?;
    let (_, _, lhz) = encode_and_map(config)?;
    let heff = build_effective(&lhz).at(PipelineStage::Heff)?;
    let mut matrices = Vec::new();
    for &s in at {
        let m = heff.evaluate(s * config.total_time, &schedule).at(PipelineStage::Heff)?;
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        matrices.push(json!({ "t_over_T": s, "matrix": rows }));
    }
    let mut out = Output::new(config, "heff", json!(at))?;
    out.json("heff.json", json!({ "coefficients": heff, "evaluated": matrices }))?;
    Ok(out.written)
}

fn cmd_td(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let schedule = config.schedule()?;
    let (_, _, lhz) = encode_and_map(config)?;
    let heff = build_effective(&lhz).at(PipelineStage::Heff)?;
    let est = estimate_td(&heff, &schedule).at(PipelineStage::Td)?;
    let mut out = Output::new(config, "td", Value::Null)?;
    out.json("td.json", json!({ "strengths": lhz.strengths(), "estimate": est, "td_over_T": est.td / config.total_time }))?;
    Ok(out.written)
}

fn cmd_optimize(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let schedule = config.schedule()?;
    let (_, _, lhz) = encode_and_map(config)?;
    let targets = config.target_spec(lhz.m())?;
    let stages = optimize(&lhz, &targets, &schedule, config.level, &config.optimizer()).at(PipelineStage::Optimize)?;
    let mut out = Output::new(config, "optimize", Value::Null)?;
    out.json("optimize.json", json!({ "targets": targets.probabilities(), "stages": stages }))?;
    Ok(out.written)
}

fn cmd_simulate(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let schedule = config.schedule()?;
    let (_, _, lhz) = encode_and_map(config)?;
    let c = lhz.strengths();
    let opts = PropagationOptions::with_steps(config.steps).sampled(uniform_grid(config.samples));
    let run = propagate_full(&lhz, &schedule, &c, &opts).at(PipelineStage::Simulate)?;
    let mut out = Output::new(config, "simulate", Value::Null)?;
    out.csv("trajectory.csv", |w| write_trajectory(w, &run, lhz.m()))?;
    out.json(
        "simulate.json",
        json!({
            "strengths": c,
            "final_probabilities": run.final_probabilities,
            "leakage": run.leakage,
            "norm_drift": run.norm_drift,
            "steps": run.steps,
        }),
    )?;
    Ok(out.written)
}

/// Strengths given on the command line, or the exact-level optimum.
fn robustness_baseline(config: &RunConfig, lhz: &LhzModel, schedule: &Schedule) -> CliResult<Vec<f64>> {
    if config.strengths.is_some() {
        return Ok(lhz.strengths());
    }
    let targets = config.target_spec(lhz.m())?;
    let stages = optimize(lhz, &targets, schedule, Stage::Exact, &config.optimizer()).at(PipelineStage::Optimize)?;
    Ok(stages.last().expect("exact stage").c.clone())
}

fn cmd_scan_robustness(
    config: &RunConfig,
    e_min: f64,
    e_max: f64,
    points: usize,
    constraints: Option<&[usize]>,
) -> CliResult<Vec<PathBuf>> {
    let schedule = config.schedule()?;
    let (_, _, lhz) = encode_and_map(config)?;
    let n = lhz.constraints().len();
    let which: Vec<usize> = match constraints {
        Some(list) => {
            if let Some(bad) = list.iter().find(|&&p| p == 0 || p > n) {
                return Err(config_error(format!("constraint {bad} outside 1..={n}")));
            }
            list.iter().map(|p| p - 1).collect()
        }
        None => (0..n).collect(),
    };
    if points == 0 || !(e_min > 0.0 && e_max >= e_min) {
        return Err(config_error(format!("error grid {e_min}..{e_max} with {points} points")));
    }
    let baseline = robustness_baseline(config, &lhz, &schedule)?;
    let scan = scan_robustness(
        &lhz,
        &baseline,
        &linspace(e_min, e_max, points),
        &which,
        &schedule,
        &PropagationOptions::with_steps(config.steps),
    )
    .at(PipelineStage::Scan)?;
    let mut out = Output::new(config, "scan-robustness", json!([e_min, e_max, points, which]))?;
    out.csv("robustness.csv", |w| scan.write_csv(w))?;
    out.json(
        "robustness.json",
        json!({
            "baseline_c": scan.baseline_c,
            "baseline": scan.baseline,
            "relative_deviation_at_1_2": which.iter().map(|&p| scan.relative_deviation(p, 1.2)).collect::<Vec<_>>(),
            "max_jump": which.iter().map(|&p| scan.max_jump(p)).collect::<Vec<_>>(),
            "missing": scan.points.iter().filter(|p| p.probabilities.is_none()).count(),
        }),
    )?;
    Ok(out.written)
}

fn cmd_scan_ergodicity(
    config: &RunConfig,
    (c_min, c_max, c_step): (f64, f64, f64),
    times: usize,
    divisions: usize,
    write_points: bool,
) -> CliResult<Vec<PathBuf>> {
    if times == 0 || divisions == 0 {
        return Err(config_error("need at least one freeze time and one division"));
    }
    let (_, _, lhz) = encode_and_map(config)?;
    let grid = strength_grid(c_min, c_max, c_step).at(PipelineStage::Config)?;
    let scan = scan_ergodicity(&lhz, &grid, &freeze_grid(times), divisions, write_points).at(PipelineStage::Scan)?;
    let extra = json!([c_min, c_max, c_step, times, divisions, write_points]);
    let mut out = Output::new(config, "scan-ergodicity", extra)?;
    out.csv("ergodicity_histogram.csv", |w| scan.histogram.write_csv(w))?;
    if write_points {
        let (n, m) = (lhz.constraints().len(), lhz.m());
        out.csv("ergodicity_points.csv", |w| scan.write_points_csv(w, n, m))?;
    }
    out.json(
        "ergodicity.json",
        json!({
            "coverage": scan.histogram.coverage(),
            "occupied_bins": scan.histogram.occupied_bins(),
            "total_bins": scan.histogram.total_bins(),
            "evaluated": scan.evaluated,
            "skipped": scan.skipped,
        }),
    )?;
    Ok(out.written)
}

/// Figure data from the bundled problem, each in its own subdirectory.
pub fn reproduce(figure: Figure, base: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let mut config = base.clone();
    let sub = format!("{figure:?}").to_lowercase();
    config.out_dir = base.out_dir.join(&sub);
    match figure {
        Figure::Fig2c => {
            config.level = Stage::Exact;
            config.target = Some("fair".into());
            run_pipeline(&config).map(|r| r.files)
        }
        Figure::Fig2d => {
            config.level = Stage::Iterative;
            config.target = Some("biased".into());
            run_pipeline(&config).map(|r| r.files)
        }
        Figure::Fig3 => {
            config.target = Some("fair".into());
            cmd_scan_robustness(&config, 0.6, 1.4, 9, None)
        }
        Figure::Fig4 => cmd_scan_ergodicity(&config, (0.1, 4.0, 0.1), 30, 20, true),
    }
}
