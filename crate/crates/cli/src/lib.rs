//! `lac`: scenario generation, proportion estimation, training, sweeps and
//! reports for learning with augmented classes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod summary;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{parse_override, Axis, ExperimentConfig};
use experiment::{build_scenario, default_out, generate, run, SUMMARY_FILE};
use lac_core::methods::ThetaSource;
use lac_core::mpe::estimate_theta;

#[derive(Debug, Parser)]
#[command(name = "lac", version, about = "Learning with augmented classes: experiment runner")]
pub struct Cli {
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; repeat r runs with seed + r.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Accepted both before and after the subcommand; all occurrences apply in
/// command-line order.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config override, e.g. `--set train.epochs=200`; repeatable, applied
    /// after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write labeled.csv, unlabeled.csv, test.csv and meta.json for one seed.
    Gen {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the estimated known-class proportion and its distance curve.
    EstimateTheta {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and evaluate every method on every seed.
    Train {
        /// Use this proportion instead of estimating it.
        #[arg(long)]
        theta_hat: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat `train` over the values of one setting.
    Sweep {
        #[arg(long)]
        axis: Option<Axis>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize a results file or directory.
    Report { results: PathBuf },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let after = match &cli.command {
        Command::Gen { overrides }
        | Command::EstimateTheta { overrides }
        | Command::Train { overrides, .. }
        | Command::Sweep { overrides, .. } => overrides.set.as_slice(),
        Command::Report { .. } => &[],
    };
    let overrides = cli
        .overrides
        .set
        .iter()
        .chain(after)
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    let mut exp = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::from_entries(&overrides)?,
    };
    if let Some(seed) = cli.seed {
        exp.seed = seed;
    }
    if let Some(out) = &cli.out {
        exp.out = Some(out.clone());
    }
    if let Some(jobs) = cli.jobs {
        exp.jobs = Some(jobs);
    }
    exp.validate()?;
    Ok(exp)
}

fn jobs(exp: &ExperimentConfig) -> usize {
    exp.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs one command. The returned code is 0 on success and 1 when some
/// result rows failed; hard errors come back as `Err`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    if let Command::Report { results } = &cli.command {
        let (records, skipped) = summary::read_results(results)?;
        if skipped > 0 {
            writeln!(stderr, "warning: skipped {skipped} malformed line(s)")?;
        }
        let rows = summary::summarize(&records);
        let axis = records.iter().any(|r| r.axis_value.is_some()).then_some("value");
        write!(stdout, "{}", summary::to_table(&rows, axis))?;
        return Ok(0);
    }

    let mut exp = load_config(cli)?;
    match &cli.command {
        Command::Gen { .. } => {
            let out = exp.out.clone().unwrap_or_else(default_out);
            let s = generate(&exp, exp.seed, &out)?;
            writeln!(
                stdout,
                "wrote {} (k = {}, theta_true = {:?})",
                out.display(),
                s.k,
                s.theta_true.unwrap_or(f64::NAN)
            )?;
            Ok(0)
        }
        Command::EstimateTheta { .. } => {
            let (s, _) = build_scenario(&exp, exp.seed)?;
            let est = estimate_theta(s.labeled.features(), s.unlabeled.features(), &exp.settings.kernel)?;
            writeln!(stdout, "theta_hat = {:?}", est.theta)?;
            writeln!(stdout, "bandwidth = {:?}", est.bandwidth)?;
            if let Some(t) = s.theta_true {
                writeln!(stdout, "theta_true = {t:?}")?;
            }
            write!(stdout, "{}", est.curve_csv())?;
            if let Some(out) = &exp.out {
                std::fs::create_dir_all(out)?;
                let path = out.join("theta_curve.csv");
                std::fs::write(&path, est.curve_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(0)
        }
        Command::Train { theta_hat, .. } => {
            if let Some(value) = theta_hat {
                exp.settings.theta = ThetaSource::Fixed { value: *value };
            }
            let out = exp.out.clone().unwrap_or_else(default_out);
            let result = run(&exp, None, &out, jobs(&exp))?;
            let rows = summary::summarize(&to_records(&result.lines));
            std::fs::write(out.join(SUMMARY_FILE), summary::to_csv(&rows, None))?;
            write!(stdout, "{}", summary::to_table(&rows, None))?;
            finish(result.failed, stderr)
        }
        Command::Sweep { axis, values, .. } => {
            let spec = exp.sweep(*axis, values.clone())?;
            let out = exp.out.clone().unwrap_or_else(default_out);
            let result = run(&exp, Some(&spec), &out, jobs(&exp))?;
            let rows = summary::summarize(&to_records(&result.lines));
            let name = spec.axis.name();
            std::fs::write(out.join(format!("sweep_{name}.csv")), summary::to_csv(&rows, Some(name)))?;
            write!(stdout, "{}", summary::to_table(&rows, Some(name)))?;
            finish(result.failed, stderr)
        }
        Command::Report { .. } => unreachable!(),
    }
}

fn finish(failed: usize, stderr: &mut dyn Write) -> Result<i32> {
    if failed > 0 {
        writeln!(stderr, "{failed} run(s) failed; see the error field in the results file")?;
        Ok(1)
    } else {
        Ok(0)
    }
}

fn to_records(lines: &[experiment::ResultLine]) -> Vec<summary::Record> {
    lines
        .iter()
        .map(|l| summary::Record {
            method: l.method.clone(),
            axis_value: l.axis_value,
            values: l.metrics.as_ref().map(|m| [m.accuracy, m.macro_f1, m.auc]),
        })
        .collect()
}
