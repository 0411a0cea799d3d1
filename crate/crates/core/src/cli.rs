//! Batch driver: load, compile, simulate, analyze and export.
//!
//! Artifacts land under one output directory with fixed names:
//! `taskgraph.json`, `trace.json`, `gantt.json`, `reports.csv`,
//! `reports.json` and `roofline.json`. When several networks or systems
//! are given, every (network, system) pair gets its own subdirectory
//! `<network>__<system>` and pairs run in parallel.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{self, Analysis, DEFAULT_THETA};
use crate::compiler::{self, save_taskgraph};
use crate::graph::{self, DnnGraph};
use crate::simengine;
use crate::sysdesc::{self, SystemDescription};
use crate::Error;

pub const TASKGRAPH_FILE: &str = "taskgraph.json";
pub const TRACE_FILE: &str = "trace.json";
pub const GANTT_FILE: &str = "gantt.json";
pub const REPORTS_CSV_FILE: &str = "reports.csv";
pub const REPORTS_JSON_FILE: &str = "reports.json";
pub const ROOFLINE_FILE: &str = "roofline.json";

/// Name that selects the bundled network when no such file exists.
pub const BUNDLED_NETWORK: &str = "dilated_vgg";
/// Name that selects the bundled system when no such file exists.
pub const BUNDLED_SYSTEM: &str = "paper-like";

#[derive(Debug, Parser)]
#[command(name = "dnnperf", version, about = "Estimate DNN inference performance on a virtual hardware model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower the network into a task graph.
    Compile(CommonArgs),
    /// Compile and simulate, then write reports, Gantt chart and roofline.
    Simulate(CommonArgs),
    /// Compile, simulate and write the trace, reports and roofline.
    Roofline(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Network file, or `dilated_vgg` for the bundled network. Repeatable.
    #[arg(long = "network", required = true)]
    pub networks: Vec<String>,
    /// System description file, or `paper-like.sys` for the bundled one.
    /// Repeatable.
    #[arg(long = "system", required = true)]
    pub systems: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Busy-fraction threshold for classification, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long)]
    pub dump_taskgraph: bool,
    #[arg(long)]
    pub gantt: bool,
    #[arg(long)]
    pub roofline: bool,
    #[arg(long)]
    pub reports: bool,
    /// Worker threads for multi-pair sweeps.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Compile,
    Simulate,
    Roofline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Artifacts {
    pub taskgraph: bool,
    pub trace: bool,
    pub gantt: bool,
    pub reports: bool,
    pub roofline: bool,
}

impl Artifacts {
    fn needs_simulation(&self) -> bool {
        self.trace || self.gantt || self.reports || self.roofline
    }
}

/// Where an input document comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Bundled(&'static str),
}

impl Source {
    fn label(&self) -> String {
        match self {
            Source::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            Source::Bundled(name) => name.to_string(),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::File(p) => write!(f, "{}", p.display()),
            Source::Bundled(name) => write!(f, "{name} (bundled)"),
        }
    }
}

fn resolve(arg: &str, bundled: &'static str, aliases: &[&str]) -> Source {
    let path = PathBuf::from(arg);
    if !path.exists() && (arg == bundled || aliases.contains(&arg)) {
        Source::Bundled(bundled)
    } else {
        Source::File(path)
    }
}

pub fn resolve_network(arg: &str) -> Source {
    resolve(arg, BUNDLED_NETWORK, &["dilated_vgg.toml"])
}

pub fn resolve_system(arg: &str) -> Source {
    resolve(arg, BUNDLED_SYSTEM, &["paper-like.sys"])
}

/// One fully specified run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: Source,
    pub system: Source,
    pub out_dir: PathBuf,
    pub theta: f64,
    pub stage: Stage,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub graph_load: Duration,
    pub compile: Duration,
    pub simulate: Duration,
    pub analysis_export: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.graph_load + self.compile + self.simulate + self.analysis_export
    }

    /// `(name, duration)` rows, phases first and the total last.
    pub fn rows(&self) -> [(&'static str, Duration); 5] {
        [
            ("graph load", self.graph_load),
            ("compile", self.compile),
            ("simulate", self.simulate),
            ("analysis+export", self.analysis_export),
            ("total", self.total()),
        ]
    }
}

impl fmt::Display for PhaseTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>12}", "phase", "seconds")?;
        for (name, d) in self.rows() {
            writeln!(f, "{:<16} {:>12.6}", name, d.as_secs_f64())?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub timings: PhaseTimings,
    pub analysis: Option<Analysis>,
    pub written: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_graph(src: &Source) -> Result<DnnGraph, Error> {
    match src {
        Source::Bundled(_) => Ok(graph::dilated_vgg()),
        Source::File(p) => graph::load_network(&read(p)?).map_err(|e| Error::Context {
            context: p.display().to_string(),
            source: Box::new(e.into()),
        }),
    }
}

fn load_sys(src: &Source) -> Result<SystemDescription, Error> {
    match src {
        Source::Bundled(_) => Ok(sysdesc::paper_like()),
        Source::File(p) => sysdesc::load_system(&read(p)?).map_err(|e| Error::Context {
            context: p.display().to_string(),
            source: Box::new(e.into()),
        }),
    }
}

/// Write every file or none: on failure the files already written (and
/// the output directory, if this call created it and it is empty) are
/// removed.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, Error> {
    let created = !dir.exists();
    let io = |path: &Path, source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created {
                let _ = fs::remove_dir(dir);
            }
            return Err(io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Execute one run and write its artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome, Error> {
    if !(config.theta > 0.0 && config.theta <= 1.0) {
        return Err(analysis::AnalysisError::InvalidTheta(config.theta).into());
    }
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let sys = load_sys(&config.system)?;
    let net = load_graph(&config.network)?;
    timings.graph_load = t.elapsed();

    let t = Instant::now();
    let tg = compiler::compile(&net, &sys)?;
    timings.compile = t.elapsed();

    let mut files: Vec<(&str, String)> = Vec::new();
    let art = config.artifacts;
    if art.taskgraph {
        files.push((TASKGRAPH_FILE, save_taskgraph(&tg)));
    }

    let mut result = None;
    if config.stage != Stage::Compile {
        let t = Instant::now();
        let trace = simengine::simulate(&tg, &sys);
        timings.simulate = t.elapsed();

        let t = Instant::now();
        let a = analysis::analyze(&trace, &tg, &net, &sys, config.theta)?;
        if art.trace {
            files.push((TRACE_FILE, trace.to_document()));
        }
        if art.gantt {
            files.push((GANTT_FILE, analysis::export_gantt(&trace, &tg)));
        }
        if art.reports {
            let (csv, json) = analysis::export_reports(&a);
            files.push((REPORTS_CSV_FILE, csv));
            files.push((REPORTS_JSON_FILE, json));
        }
        if art.roofline {
            files.push((ROOFLINE_FILE, analysis::export_roofline(&a)));
        }
        timings.analysis_export = t.elapsed();
        result = Some(a);
    }

    let t = Instant::now();
    let written = write_all(&config.out_dir, &files)?;
    timings.analysis_export += t.elapsed();
    Ok(RunOutcome {
        timings,
        analysis: result,
        written,
    })
}

/// Human-readable per-layer table.
pub fn layer_summary(a: &Analysis) -> String {
    let mut s = format!(
        "{:<14} {:>12} {:>12} {:>12} {:>6} {:>6}  {}\n",
        "layer", "latency_us", "ops/byte", "ops/s", "nce", "bus", "class"
    );
    let rows = a.layers.iter().zip(a.classes.iter().map(|c| format!("{c:?}")));
    for (r, class) in rows.chain(std::iter::once((&a.total, String::new()))) {
        s += &format!(
            "{:<14} {:>12.3} {:>12.3} {:>12.4e} {:>6.3} {:>6.3}  {}\n",
            r.layer,
            r.latency.as_us_f64(),
            r.operational_intensity,
            r.achieved_ops_per_sec,
            r.nce_busy_fraction,
            r.bus_busy_fraction,
            class
        );
    }
    s
}

fn configs(stage: Stage, args: &CommonArgs) -> Vec<RunConfig> {
    let explicit = args.dump_taskgraph || args.gantt || args.roofline || args.reports;
    let artifacts = if explicit {
        Artifacts {
            taskgraph: args.dump_taskgraph,
            trace: stage != Stage::Compile,
            gantt: args.gantt,
            reports: args.reports,
            roofline: args.roofline,
        }
    } else {
        match stage {
            Stage::Compile => Artifacts {
                taskgraph: true,
                ..Artifacts::default()
            },
            Stage::Simulate => Artifacts {
                taskgraph: false,
                trace: true,
                gantt: true,
                reports: true,
                roofline: true,
            },
            Stage::Roofline => Artifacts {
                trace: true,
                reports: true,
                roofline: true,
                ..Artifacts::default()
            },
        }
    };
    let sweep = args.networks.len() * args.systems.len() > 1;
    let mut out = Vec::new();
    for n in &args.networks {
        for s in &args.systems {
            let network = resolve_network(n);
            let system = resolve_system(s);
            let out_dir = if sweep {
                args.out.join(format!("{}__{}", network.label(), system.label()))
            } else {
                args.out.clone()
            };
            out.push(RunConfig {
                network,
                system,
                out_dir,
                theta: args.theta,
                stage,
                artifacts,
            });
        }
    }
    out
}

fn report(config: &RunConfig, outcome: &Result<RunOutcome, Error>, sweep: bool) -> bool {
    use std::io::Write;
    match outcome {
        Ok(o) => {
            // A closed stdout (e.g. piped into `head`) is not a run failure.
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "== {} on {}", config.network, config.system);
            if let Some(a) = &o.analysis {
                let _ = write!(out, "{}", layer_summary(a));
            }
            for p in &o.written {
                let _ = writeln!(out, "wrote {}", p.display());
            }
            let _ = write!(out, "{}", o.timings);
            true
        }
        Err(e) if sweep => {
            eprintln!("error: {} on {}: {e}", config.network, config.system);
            false
        }
        Err(e) => {
            eprintln!("error: {e}");
            false
        }
    }
}

/// Parse arguments, run every requested pair and print summaries.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (stage, args) = match &cli.command {
        Command::Compile(a) => (Stage::Compile, a),
        Command::Simulate(a) => (Stage::Simulate, a),
        Command::Roofline(a) => (Stage::Roofline, a),
    };
    let configs = configs(stage, args);
    if stage == Stage::Compile && configs.iter().any(|c| c.artifacts.needs_simulation()) {
        eprintln!("error: --gantt, --reports and --roofline need `simulate` or `roofline`");
        return 2;
    }
    let outcomes: Vec<_> = if configs.len() > 1 {
        let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: cannot start worker pool: {e}");
                return 1;
            }
        };
        pool.install(|| configs.par_iter().map(run).collect())
    } else {
        configs.iter().map(run).collect()
    };
    let ok = configs
        .iter()
        .zip(&outcomes)
        .fold(true, |ok, (c, o)| report(c, o, configs.len() > 1) && ok);
    if ok {
        0
    } else {
        1
    }
}
