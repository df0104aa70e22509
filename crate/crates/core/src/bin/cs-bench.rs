//! `cs-bench`: seeded compressive-sensing experiments.
//!
//! Output files for a run named `<name>` (`trials` for `run`, the figure
//! name for `figs`):
//!
//!   <name>.csv                 per-trial table (timing columns empty unless --inline-timing)
//!   <name>_summary.csv         mean / median / percentiles of re, mse, cc, support
//!   <name>_timing.csv          per-trial t_s, t_r, t_p in seconds
//!   <name>_timing_summary.csv  the same statistics for the timings
//!   <name>.dat                 plot data (fig6, fig7)
//!
//! Everything except the two timing files is a pure function of the
//! configuration and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cs_core::bench::figures::{run_figure, Figure, FigureOutcome};
use cs_core::bench::{
    aggregate, run_sweep, summary_to_csv, trials_to_csv, write_file, Metric, RunOptions, SummaryRow, SweepSpec,
    TimingColumns, TrialRecord,
};
use cs_core::CsError;

#[derive(Parser, Debug)]
#[command(name = "cs-bench", version, about = "Compressive sensing benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Exec {
    /// Trial worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Allow timed sections to overlap when workers > 1 (records are flagged).
    #[arg(long)]
    parallel_timing: bool,
    /// Also write timings into the per-trial CSV (makes it run-dependent).
    #[arg(long)]
    inline_timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the sweep described by a TOML config file.
    ///
    /// t_p covers sampling, noise injection, reconstruction and metric
    /// computation; it excludes signal and operator generation.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `base.base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        exec: Exec,
    },
    /// Run a canned reproduction sweep and check its expected trend.
    /// Exits with status 1 when a check fails.
    Figs {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        exec: Exec,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Which {
    Fig6,
    Fig7,
    Table1,
}

impl From<Which> for Figure {
    fn from(w: Which) -> Self {
        match w {
            Which::Fig6 => Figure::Fig6,
            Which::Fig7 => Figure::Fig7,
            Which::Table1 => Figure::Table1,
        }
    }
}

fn is_timing(metric: Metric) -> bool {
    matches!(metric, Metric::Ts | Metric::Tr | Metric::Tp)
}

fn timing_csv(table: &[TrialRecord]) -> String {
    let mut out = String::from("trial_seed,n,m,k,matrix,solver,ts_s,tr_s,tp_s,shared_timing\n");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in table {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.trial_seed,
            r.n,
            r.m,
            r.k,
            r.matrix.as_str(),
            r.solver.as_str(),
            f(r.ts_s),
            f(r.tr_s),
            f(r.tp_s),
            r.shared_timing
        );
    }
    out
}

fn write_outputs(
    out: &Path,
    name: &str,
    table: &[TrialRecord],
    summary: &[SummaryRow],
    exec: &Exec,
) -> Result<(), CsError> {
    let timing = if exec.inline_timing {
        TimingColumns::Inline
    } else {
        TimingColumns::Omitted
    };
    write_file(&out.join(format!("{name}.csv")), &trials_to_csv(table, timing))?;
    let (timed, quality): (Vec<SummaryRow>, Vec<SummaryRow>) =
        summary.iter().cloned().partition(|r| is_timing(r.metric));
    write_file(&out.join(format!("{name}_summary.csv")), &summary_to_csv(&quality))?;
    write_file(&out.join(format!("{name}_timing.csv")), &timing_csv(table))?;
    write_file(&out.join(format!("{name}_timing_summary.csv")), &summary_to_csv(&timed))?;
    Ok(())
}

fn report_failures(table: &[TrialRecord]) {
    let failed: Vec<&TrialRecord> = table.iter().filter(|r| r.failed).collect();
    if !failed.is_empty() {
        eprintln!("{} of {} trials failed", failed.len(), table.len());
        for r in failed.iter().take(5) {
            eprintln!(
                "  seed {} ({} {}): {}",
                r.trial_seed,
                r.matrix.as_str(),
                r.solver.as_str(),
                r.error.as_deref().unwrap_or("unknown")
            );
        }
    }
}

fn options(exec: &Exec) -> RunOptions {
    RunOptions {
        workers: exec.workers,
        parallel_timing: exec.parallel_timing,
    }
}

fn run(config: &Path, out: &Path, seed: Option<u64>, exec: &Exec) -> Result<ExitCode, CsError> {
    let text = std::fs::read_to_string(config).map_err(|e| CsError::Io {
        path: config.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut spec = SweepSpec::from_toml(&text)?;
    if let Some(seed) = seed {
        spec.base.base_seed = seed;
    }
    let table = run_sweep(&spec, options(exec))?;
    let summary = aggregate(&table)?;
    write_file(&out.join("config.toml"), &spec.to_toml())?;
    write_outputs(out, "trials", &table, &summary, exec)?;
    report_failures(&table);
    println!("{} trials written to {}", table.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_outcome(outcome: &FigureOutcome) {
    for check in &outcome.checks {
        println!("{check}");
    }
    for note in &outcome.notes {
        println!("  note: {note}");
    }
}

fn figs(which: Which, out: &Path, seed: u64, trials: usize, exec: &Exec) -> Result<ExitCode, CsError> {
    let fig: Figure = which.into();
    let outcome = run_figure(fig, seed, trials, options(exec))?;
    write_outputs(out, fig.name(), &outcome.table, &outcome.summary, exec)?;
    if let Some(plot) = &outcome.plot {
        write_file(&out.join(format!("{}.dat", fig.name())), plot)?;
    }
    report_failures(&outcome.table);
    print_outcome(&outcome);
    Ok(if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            seed,
            exec,
        } => run(config, out, *seed, exec),
        Command::Figs {
            which,
            out,
            seed,
            trials,
            exec,
        } => figs(*which, out, *seed, *trials, exec),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
