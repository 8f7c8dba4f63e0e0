use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tskf::config::{ExperimentConfig, Overrides};
use tskf::harness::{self, Algorithm, DelayCell, RunOptions};
use tskf::oracle;

#[derive(Parser)]
#[command(name = "tskf-sim", version, about = "Delayed acoustic navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo batch and write the results tables.
    Run(Common),
    /// Check the configuration and exit.
    Validate(Common),
    /// Run the linear re-filtering oracle suite.
    Oracle,
    /// One seeded run per delay cell with full per-step export.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Run index within the seed sequence.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Delay ceiling, s; replaces the fixed cells with a single cell at this value.
    #[arg(long)]
    delay_ceiling: Option<f64>,
    /// Comma-separated subset of tskf, ekf, ukf, aug-ekf, fgo.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// 500 runs per cell.
    #[arg(long)]
    full_scale: bool,
    /// Write NaN instead of wall-clock timings so repeated runs are byte-identical.
    #[arg(long)]
    omit_timing: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            runs: self.runs,
            seed: self.seed,
            delay_ceiling: self.delay_ceiling,
            algorithms: self.algorithms.clone(),
            output_dir: self.output_dir.clone(),
            full_scale: self.full_scale,
        };
        Ok(ExperimentConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

fn cell_name(cell: DelayCell) -> String {
    match cell {
        DelayCell::Fixed(t) => format!("fixed_{t:.0}s"),
        DelayCell::Dynamic => "dynamic".into(),
    }
}

fn run(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let setup = cfg.setup();
    let cells = cfg.cells();
    eprintln!("{} runs x {} cells, algorithms: {:?}", cfg.runs, cells.len(), setup.algorithms.enabled);
    let mut batch = harness::run_batch(&setup, &cells, cfg.runs, cfg.master_seed, |cell, done| {
        if done % 10 == 0 || done == cfg.runs {
            eprintln!("  {}: {done}/{}", cell_name(cell), cfg.runs);
        }
    })?;
    if common.omit_timing {
        for c in &mut batch.cells {
            c.step_time_ms_mean = f64::NAN;
            c.step_time_ms_p99 = f64::NAN;
        }
        for r in &mut batch.runs {
            r.step_time_ms_mean = f64::NAN;
            r.step_time_ms_p99 = f64::NAN;
        }
    }
    let dir = &cfg.output_dir;
    let (dynamic, fixed): (Vec<_>, Vec<_>) = batch.cells.iter().cloned().partition(|c| c.dynamic);
    if !fixed.is_empty() {
        harness::write_file(&dir.join("results.csv"), |f| harness::write_results_csv(f, &fixed))?;
    }
    if !dynamic.is_empty() {
        harness::write_file(&dir.join("results_dynamic.csv"), |f| harness::write_results_csv(f, &dynamic))?;
    }
    harness::write_file(&dir.join("runs.csv"), |f| harness::write_runs_csv(f, &batch.runs))?;
    let table = harness::format_table(&batch.cells);
    std::fs::write(dir.join("results.txt"), &table)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    print!("{table}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn trace(common: &Common, run: u64) -> Result<()> {
    let cfg = common.resolve()?;
    let setup = cfg.setup();
    let dir = &cfg.output_dir;
    for cell in cfg.cells() {
        let opts = RunOptions { record_trace: true, check_covariance: true };
        let single = harness::run_single(&setup, cell, cfg.master_seed, run, opts)?;
        let name = cell_name(cell);
        harness::write_file(&dir.join(format!("trace_{name}.csv")), |f| {
            harness::write_trace_csv(f, &single, &setup.algorithms.enabled)
        })?;
        harness::write_file(&dir.join(format!("packets_{name}.csv")), |f| {
            harness::write_packets_csv(f, &single.inputs.packets)
        })?;
        if setup.algorithms.enabled.contains(&Algorithm::Tskf) {
            let gp = harness::trace_residual(&setup, &single.inputs)?;
            harness::write_file(&dir.join(format!("residual_{name}.csv")), |f| harness::write_residual_csv(f, &gp))?;
        }
        for m in &single.metrics {
            println!(
                "{name:<10} {:<8} rmse {:>9.3} m  diverged {}  failed {}",
                m.algorithm.id(),
                m.rmse_m,
                m.diverged,
                m.failure.as_deref().unwrap_or("no")
            );
        }
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn run_oracle() -> bool {
    let checks = oracle::run_suite();
    for c in &checks {
        println!(
            "{} {:<48} max rel err {:.2e} (tol {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.tolerance
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    failed == 0
}

fn report(r: Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => report(run(&c)),
        Command::Validate(c) => report(c.resolve().map(|cfg| {
            let cells: Vec<String> = cfg.cells().into_iter().map(cell_name).collect();
            println!("config ok: {} runs, cells {}", cfg.runs, cells.join(", "));
        })),
        Command::Oracle => {
            if run_oracle() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Trace { common, run } => report(trace(&common, run).context("trace failed")),
    }
}
