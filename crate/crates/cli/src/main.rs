//! `bdris`: run designs, sweeps and benchmark comparisons from the shell.
//!
//! Exit status is 0 on success, 2 when a single run ends infeasible and 1
//! on any other error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bdris::algorithm::{run_pipeline, AlgorithmError, PipelineOptions, Scenario, ThetaSet};
use bdris::benchmarks::Arm;
use bdris::config::SystemConfig;
use bdris::selftest;
use bdris::sweep::{metadata, sweep, write_csv, Param, Row, SweepPlan};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdris", version, about = "Robust BD-RIS RSMA-SWIPT design and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file; a `preset` key inside it wins.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV and metadata files; CSV goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock times (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One full design; writes the per-iteration trace.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Seeded sweep of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// p_max, L, K, M, r_min (Mbps) or rho_tilde.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Comma-separated arms.
        #[arg(long, default_value = "opt-bdris")]
        arms: String,
    },
    /// Benchmark arms at the configured operating point.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "opt-bdris,diag-ris,random-beta,random-precoder,all-random")]
        arms: String,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Fast oracle checks.
    Selftest,
}

/// Error that maps to exit status 2.
#[derive(Debug)]
struct Infeasible(AlgorithmError);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for Infeasible {}

fn load_config(c: &Common) -> Result<SystemConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let has_preset = text
                .lines()
                .any(|l| l.split('#').next().unwrap_or("").split('=').next().map(str::trim) == Some("preset"));
            let text = if has_preset { text } else { format!("preset = {}\n{text}", c.preset) };
            SystemConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SystemConfig::preset(&c.preset)?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} `{}`: {e}", s.trim())))
        .collect()
}

fn emit(out: Option<&Path>, stem: &str, rows: &[Row], timing: bool, meta: String) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let csv = dir.join(format!("{stem}.csv"));
            write_csv(fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?, rows, timing)?;
            fs::write(dir.join(format!("{stem}.meta")), meta)?;
            eprintln!("wrote {}", csv.display());
        }
        None => write_csv(io::stdout().lock(), rows, timing)?,
    }
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scn = Scenario::new(&cfg, cfg.seed)?;
    let out = run_pipeline(&scn, scn.initial_design(ThetaSet::Unitary)?, PipelineOptions::FULL)?;
    let rows = Row::trace(Arm::OptBdris, "none", 0.0, cfg.seed, &out);
    let meta = metadata(&cfg, &[("command", "run".into())]);
    emit(common.out.as_deref(), "run", &rows, common.timing, meta)?;
    eprintln!(
        "sum-rate {:.6} bits/s/Hz after {} iterations (converged: {}), max residual {:.2e}",
        out.standing.sum_rate,
        out.trace.len(),
        out.trace.converged,
        out.standing.residuals.max()
    );
    match out.infeasibility() {
        Some(e) => Err(Infeasible(e).into()),
        None => Ok(()),
    }
}

fn run_sweep(common: &Common, plan: SweepPlan, stem: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let rows = sweep(&cfg, &plan)?;
    let values: Vec<String> = plan.values.iter().map(f64::to_string).collect();
    let arms: Vec<&str> = plan.arms.iter().map(|a| a.name()).collect();
    let meta = metadata(
        &cfg,
        &[
            ("command", stem.to_string()),
            ("param", plan.param.name().to_string()),
            ("values", values.join(",")),
            ("seeds", plan.seeds.to_string()),
            ("arms", arms.join(",")),
        ],
    );
    emit(common.out.as_deref(), stem, &rows, common.timing, meta)?;
    let flagged = rows.iter().filter(|r| r.max_residual().is_nan() || r.max_residual() > 1e-6).count();
    if flagged > 0 {
        eprintln!("{flagged} of {} points infeasible or failed (see residual columns)", rows.len());
    }
    Ok(())
}

fn selftest() -> Result<()> {
    let mut failed = 0;
    let mut stdout = io::stdout().lock();
    for c in selftest::run_all() {
        writeln!(stdout, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common } => run(&common),
        Command::Sweep {
            common,
            param,
            values,
            seeds,
            arms,
        } => (|| {
            let plan = SweepPlan {
                param: param.parse::<Param>()?,
                values: parse_list(&values, "value")?,
                seeds,
                arms: parse_list(&arms, "arm")?,
            };
            run_sweep(&common, plan, "sweep")
        })(),
        Command::Bench { common, arms, seeds } => (|| {
            let p_max = load_config(&common)?.p_max;
            let plan = SweepPlan {
                param: Param::PMax,
                values: vec![p_max],
                seeds,
                arms: parse_list(&arms, "arm")?,
            };
            run_sweep(&common, plan, "bench")
        })(),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Infeasible>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
