//! Command-line front end: flag handling, experiment dispatch and file output.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, ConfigFile, RunConfig};
use crate::error::{Error, Result};
use crate::montecarlo::{
    default_rate_grid, demo_1d, estimate_outage, rate_cdf, required_margin_from_samples, run_batch, Batch,
    Method, SweepRow, SweepTable,
};
use crate::output::{self, MarginRow, OutputDir};
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "radiomap",
    version,
    about = "Outage-constrained rate selection on GP radio maps with noisy sensing locations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file; missing keys take the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed of the trial streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte-Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Comma-separated subset of pure_gp, nigp1, nigp2, path_loss.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Directory receiving the CSV files and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; affects speed only.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One batch at the configured σ_x: outage.csv, optionally records.csv.
    Simulate {
        #[arg(long)]
        sigma_x: Option<f64>,
        /// Also write every (trial, method, test point) record.
        #[arg(long)]
        records: bool,
    },
    /// Outage versus σ_x: sweep_sigma_x.csv.
    SweepSigmaX {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Smallest margin σ_δ meeting the outage target per σ_x: sweep_margin.csv.
    SweepMargin {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Received-rate CDF with per-method calibrated margins: rate_cdf.csv.
    RateCdf {
        #[arg(long)]
        sigma_x: Option<f64>,
    },
    /// One-dimensional prediction profile: demo_1d.csv.
    #[command(name = "demo-1d")]
    Demo1d {
        #[arg(long)]
        sigma_x: Option<f64>,
    },
    /// Runs the embedded invariant suite.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::SweepSigmaX { .. } => "sweep-sigma-x",
            Command::SweepMargin { .. } => "sweep-margin",
            Command::RateCdf { .. } => "rate-cdf",
            Command::Demo1d { .. } => "demo-1d",
            Command::Selftest => "selftest",
        }
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Factorization { .. }
        | Error::TooManyAborted { .. }
        | Error::Bracket { .. }
        | Error::Domain(_) => EXIT_NUMERICAL,
        Error::Config(_) | Error::Io(_) => EXIT_USAGE,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run.sim.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        run.sim.n_trials = trials;
    }
    if let Some(methods) = &cli.methods {
        run.sim = run.sim.clone().with_methods(methods);
    }
    match &cli.command {
        Command::Simulate { sigma_x: Some(sx), .. } => run.sim.noise.sigma_x = *sx,
        Command::SweepSigmaX { grid: Some(g) } => run.experiment.sigma_x_grid = g.clone(),
        Command::SweepMargin { grid: Some(g) } => run.experiment.margin_sigma_x = g.clone(),
        Command::RateCdf { sigma_x: Some(sx) } => run.experiment.cdf_sigma_x = *sx,
        Command::Demo1d { sigma_x: Some(sx) } => run.experiment.demo_sigma_x = *sx,
        _ => {}
    }
    run.validate()?;
    Ok(run)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Command::Selftest = cli.command {
        return run_selftest();
    }
    let run = resolve_config(cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads: must be >= 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut out = OutputDir::create(&cli.out_dir)?;
    let aborted = pool.install(|| execute(&cli.command, &run, &mut out))?;
    let manifest = out.finish(
        cli.command.name(),
        ConfigFile::snapshot(&run),
        run.sim.master_seed,
        start.elapsed().as_secs_f64(),
        aborted,
    )?;
    for f in &manifest.outputs {
        log::info!("wrote {}", cli.out_dir.join(&f.file).display());
    }
    Ok(())
}

/// Runs the experiment and writes its tables; returns the aborted-trial count.
fn execute(command: &Command, run: &RunConfig, out: &mut OutputDir) -> Result<usize> {
    let sim = &run.sim;
    let exp = &run.experiment;
    match command {
        Command::Simulate { records, .. } => {
            let batch = run_batch(sim)?;
            let recs = batch.records(sim.channel.n0, &sim.rate_cfg)?;
            let rows: Vec<SweepRow> = estimate_outage(&recs)
                .into_iter()
                .map(|estimate| SweepRow { sigma_x: sim.noise.sigma_x, estimate })
                .collect();
            out.write("outage.csv", &output::sweep_csv(&rows))?;
            if *records {
                out.write("records.csv", &output::records_csv(&recs))?;
            }
            Ok(batch.aborted.len())
        }
        Command::SweepSigmaX { .. } => {
            let SweepTable { rows, aborted } = crate::montecarlo::sweep_sigma_x(sim, &exp.sigma_x_grid)?;
            out.write("sweep_sigma_x.csv", &output::sweep_csv(&rows))?;
            Ok(aborted)
        }
        Command::SweepMargin { .. } => {
            let target = run.margin_target();
            let mut rows = Vec::new();
            let mut aborted = 0;
            for &sx in &exp.margin_sigma_x {
                let batch = run_batch(&sim.clone().with_sigma_x(sx))?;
                aborted += batch.aborted.len();
                for (method, m) in calibrated_margins(run, &batch, target)? {
                    rows.push(MarginRow { method, sigma_x: sx, sigma_delta_star: m, target_pout: target });
                }
            }
            out.write("sweep_margin.csv", &output::margin_csv(&rows))?;
            Ok(aborted)
        }
        Command::RateCdf { .. } => {
            let sx = exp.cdf_sigma_x;
            let target = run.margin_target();
            let batch = run_batch(&sim.clone().with_sigma_x(sx))?;
            let margins = calibrated_margins(run, &batch, target)?;
            let margin_of = |m: Method| margins.iter().find(|(k, _)| *k == m).map_or(0.0, |(_, v)| *v);
            let recs = batch.records_with_margins(sim.channel.n0, sim.rate_cfg.p_out, margin_of)?;
            let grid = default_rate_grid(&recs, exp.cdf_rate_step);
            out.write("rate_cdf.csv", &output::cdf_csv(&rate_cdf(&recs, &grid)))?;
            let rows: Vec<MarginRow> = margins
                .iter()
                .map(|&(method, m)| MarginRow {
                    method,
                    sigma_x: sx,
                    sigma_delta_star: m,
                    target_pout: target,
                })
                .collect();
            out.write("rate_cdf_margins.csv", &output::margin_csv(&rows))?;
            Ok(batch.aborted.len())
        }
        Command::Demo1d { .. } => {
            let mut cfg = sim.clone().with_sigma_x(exp.demo_sigma_x);
            cfg.n_sensors = exp.demo_sensors;
            let rows = demo_1d(&cfg, exp.demo_grid_points)?;
            out.write("demo_1d.csv", &output::profile_csv(&rows))?;
            Ok(0)
        }
        Command::Selftest => unreachable!("handled before the output directory is created"),
    }
}

/// Smallest margin per configured method that brings its outage to `target`.
pub fn calibrated_margins(run: &RunConfig, batch: &Batch, target: f64) -> Result<Vec<(Method, f64)>> {
    let sim = &run.sim;
    sim.methods
        .iter()
        .map(|&m| {
            required_margin_from_samples(
                &batch.samples,
                m,
                sim.channel.n0,
                sim.rate_cfg.p_out,
                target,
                run.experiment.margin_bracket,
            )
            .map(|v| (m, v))
        })
        .collect()
}

fn run_selftest() -> Result<()> {
    let mut failed = 0;
    for (name, outcome) in selftest::run_all() {
        match outcome {
            Ok(detail) => println!("ok   {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{failed} self-test check(s) failed")))
    }
}
