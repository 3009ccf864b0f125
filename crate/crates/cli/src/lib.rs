//! Batch experiments on the diamond-in-a-box and ecological problems.
//!
//! Every subcommand resolves a preset plus overrides into a config struct,
//! validates it, runs its cells in parallel on per-cell random streams and
//! writes plot-ready tables. Thread count never changes the output.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use cutpost::cutcore::DesignMethod;
use cutpost::{Error, Result};
use serde::{Deserialize, Serialize};

pub mod coverage;
pub mod db;
pub mod doe;
pub mod eco;
pub mod output;
pub mod seq;

pub use output::{Cell, Format, Table};

pub const TOOL: &str = "cutpost";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced sizes that finish on a workstation.
    Desk,
    /// The published protocol sizes.
    Paper,
}

/// Design used to pick `γ` locations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Iid,
    Lhs,
    Sp,
    Mined,
}

impl Sampler {
    pub fn method(self) -> DesignMethod {
        match self {
            Sampler::Iid => DesignMethod::Iid,
            Sampler::Lhs => DesignMethod::Lhs,
            Sampler::Sp => DesignMethod::SupportPoints,
            Sampler::Mined => DesignMethod::MinEd,
        }
    }

    pub fn name(self) -> &'static str {
        self.method().name()
    }
}

#[derive(Debug, Parser)]
#[command(name = "cutpost", version, about = "Cut-distribution sampling benchmarks")]
pub struct Cli {
    /// Master seed; every cell derives its own stream from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "results")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Fill the wall_ms column. Off by default so reruns are byte-identical.
    #[arg(long, global = true)]
    pub record_wall_time: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// KS of DS and ECP variants to the analytic cut-distribution.
    DbBenchmark(db::DbArgs),
    /// KS of design samplers to the cut-parameter prior.
    DoeCompare(doe::DoeArgs),
    /// DS against ECP on the ecological data, scored against a DS ground truth.
    EcoBenchmark(eco::EcoArgs),
    /// Coverage and MSE of full and cut posteriors under misspecification.
    Coverage(coverage::CoverageArgs),
    /// Sequential against one-shot ECP on the diamond-in-a-box problem.
    SeqDemo(seq::SeqArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::DbBenchmark(_) => "db-benchmark",
            Command::DoeCompare(_) => "doe-compare",
            Command::EcoBenchmark(_) => "eco-benchmark",
            Command::Coverage(_) => "coverage",
            Command::SeqDemo(_) => "seq-demo",
        }
    }
}

/// Options shared by every experiment run.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub record_wall_time: bool,
}

/// Times `f` when wall times are recorded.
pub(crate) fn timed<T>(opts: RunOptions, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
    if opts.record_wall_time {
        let t = Instant::now();
        let v = f()?;
        Ok((v, Some(t.elapsed().as_secs_f64() * 1e3)))
    } else {
        Ok((f()?, None))
    }
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    cutpost::stats::median(xs)
}

pub(crate) fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

#[derive(Serialize)]
struct Echo<'a, C: Serialize> {
    command: &'a str,
    preset: Preset,
    format: Format,
    record_wall_time: bool,
    params: &'a C,
}

fn echo<C: Serialize>(cli: &Cli, params: &C) -> Result<serde_json::Value> {
    serde_json::to_value(Echo {
        command: cli.command.name(),
        preset: cli.preset,
        format: cli.format,
        record_wall_time: cli.record_wall_time,
        params,
    })
    .map_err(|e| Error::Config(e.to_string()))
}

/// Resolves, validates and runs the selected subcommand, returning the
/// written files.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let opts = RunOptions {
        seed: cli.seed,
        record_wall_time: cli.record_wall_time,
    };
    let work = || -> Result<Vec<PathBuf>> {
        let (config, tables) = match &cli.command {
            Command::DbBenchmark(a) => {
                let cfg = db::DbBenchConfig::resolve(cli.preset, a)?;
                (echo(cli, &cfg)?, db::run(&cfg, opts)?.tables(opts.seed))
            }
            Command::DoeCompare(a) => {
                let cfg = doe::DoeConfig::resolve(cli.preset, a)?;
                (echo(cli, &cfg)?, doe::run(&cfg, opts)?.tables(opts.seed))
            }
            Command::EcoBenchmark(a) => {
                let cfg = eco::EcoConfig::resolve(cli.preset, a)?;
                (echo(cli, &cfg)?, eco::run(&cfg, opts)?.tables(opts.seed))
            }
            Command::Coverage(a) => {
                let cfg = coverage::CoverageConfig::resolve(cli.preset, a)?;
                (echo(cli, &cfg)?, coverage::run(&cfg, opts)?.tables())
            }
            Command::SeqDemo(a) => {
                let cfg = seq::SeqDemoConfig::resolve(cli.preset, a)?;
                (echo(cli, &cfg)?, seq::run(&cfg, opts)?.tables(opts.seed))
            }
        };
        output::write_tables(&cli.out_dir, &tables, &config, cli.seed, cli.format)
    };
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Process exit code for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::UnsupportedFamily(_) => 2,
        _ => 3,
    }
}
