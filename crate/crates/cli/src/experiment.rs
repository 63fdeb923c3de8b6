//! Scenario preparation and the parallel method x seed x axis-value runner.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lac_core::data_model::{load_csv, load_scenario, make_scenario, make_synthetic_gaussians, LacScenario, ScenarioConfig};
use lac_core::evaluation::{MetricsReport, PredictionRule};
use lac_core::methods::{run_method, Method, MethodSettings, ThetaSource};
use lac_core::models_optim::{write_history, Checkpoint, TrainConfig};
use lac_core::mpe::estimate_theta;
use lac_core::LacError;

use crate::config::{Axis, ExperimentConfig, Source, SweepSpec};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One line of `results.jsonl`. Together `scenario` (or `source` for
/// directory scenarios), `train_config` and `rule` pin down the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub status: Status,
    pub method: String,
    pub seed: u64,
    pub axis: Option<Axis>,
    pub axis_value: Option<f64>,
    /// The proportion plugged into the estimator, `None` for methods that
    /// do not use one.
    pub theta_hat: Option<f64>,
    pub theta_true: Option<f64>,
    pub source: Source,
    pub scenario: ScenarioConfig,
    pub settings: MethodSettings,
    pub train_config: Option<TrainConfig>,
    pub rule: Option<PredictionRule>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Resolves the configured known classes to one-based class ids.
fn known_ids(exp: &ExperimentConfig, label_names: Option<&[String]>) -> Result<Vec<usize>> {
    exp.known
        .iter()
        .map(|k| {
            if let Some(pos) = label_names.and_then(|names| names.iter().position(|n| n == k)) {
                return Ok(pos + 1);
            }
            k.parse::<usize>()
                .map_err(|_| anyhow!("scenario.known: no class named {k:?}"))
        })
        .collect()
}

/// Builds the scenario of `exp` for one seed.
pub fn build_scenario(exp: &ExperimentConfig, seed: u64) -> Result<(LacScenario, ScenarioConfig)> {
    let mut cfg = exp.scenario.clone();
    cfg.seed = seed;
    match &exp.source {
        Source::Synthetic => {
            cfg.known_class_ids = known_ids(exp, None)?;
            cfg.synthetic = Some(exp.synthetic.clone());
            Ok((make_synthetic_gaussians(&cfg)?, cfg))
        }
        Source::Csv { path, label_column } => {
            let loaded = load_csv(path, Some(label_column))?;
            cfg.known_class_ids = known_ids(exp, Some(&loaded.label_names))?;
            let mut scenario = make_scenario(&loaded.dataset, &cfg).map_err(|e| match e {
                LacError::InsufficientClass { class, .. } => {
                    let name = loaded.label_names.get(class.wrapping_sub(1)).cloned().unwrap_or_default();
                    anyhow!(e).context(format!("source class {name:?}"))
                }
                e => e.into(),
            })?;
            for m in &mut scenario.class_map {
                if let Some(name) = m.original.parse::<usize>().ok().and_then(|i| loaded.label_names.get(i - 1)) {
                    m.original = name.clone();
                }
            }
            Ok((scenario, cfg))
        }
        Source::Dir { path } => {
            let scenario = load_scenario(path)?;
            Ok((scenario, cfg))
        }
    }
}

/// Scenario and (when needed) estimated proportion for one seed, shared by
/// every method run on it.
struct Prepared {
    scenario: std::result::Result<(LacScenario, ScenarioConfig), String>,
    theta_hat: Option<std::result::Result<f64, String>>,
}

fn prepare(exp: &ExperimentConfig, seed: u64) -> Prepared {
    let built = build_scenario(exp, seed).map_err(|e| format!("{e:#}"));
    let wants = matches!(exp.settings.theta, ThetaSource::Estimate) && exp.methods.iter().any(|m| m.uses_theta());
    let theta_hat = match (&built, wants) {
        (Ok((s, _)), true) => Some(
            estimate_theta(s.labeled.features(), s.unlabeled.features(), &exp.settings.kernel)
                .map(|e| e.theta)
                .map_err(|e| format!("theta estimation: {e}")),
        ),
        _ => None,
    };
    Prepared {
        scenario: built,
        theta_hat,
    }
}

struct Job {
    cell: usize,
    method: Method,
    seed: u64,
}

/// Outcome of a whole run.
pub struct RunOutput {
    pub lines: Vec<ResultLine>,
    pub failed: usize,
}

/// Appends whole lines to the results file as runs finish.
struct Sink {
    file: Mutex<File>,
}

impl Sink {
    fn create(path: &Path) -> Result<Self> {
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Sink { file: Mutex::new(file) })
    }

    fn push(&self, line: &ResultLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        let mut f = self.file.lock().map_err(|_| anyhow!("results writer poisoned"))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

fn tag(axis: Option<Axis>, value: Option<f64>, method: Method, seed: u64) -> String {
    match (axis, value) {
        (Some(a), Some(v)) => format!("{a}={v:?}-{method}-seed{seed}"),
        _ => format!("{method}-seed{seed}"),
    }
}

/// Runs every method on every seed (and every sweep value), writing
/// `results.jsonl`, checkpoints and histories under `out`.
pub fn run(exp: &ExperimentConfig, sweep: Option<&SweepSpec>, out: &Path, jobs: usize) -> Result<RunOutput> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let axis = sweep.map(|s| s.axis);
    let values: Vec<Option<f64>> = match sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut cells = Vec::with_capacity(values.len());
    for &v in &values {
        let mut e = exp.clone();
        if let (Some(a), Some(v)) = (axis, v) {
            a.apply(v, &mut e)?;
        }
        cells.push((v, e));
    }
    let seeds: Vec<u64> = (0..exp.repeats as u64).map(|r| exp.seed + r).collect();

    // scenarios only depend on the axis value for scenario-changing axes
    let scenario_key = |cell: usize, seed: u64| match axis {
        Some(a) if a.changes_scenario() => (cell, seed),
        _ => (0, seed),
    };
    let mut keys: Vec<(usize, u64)> = Vec::new();
    for cell in 0..cells.len() {
        for &seed in &seeds {
            let k = scenario_key(cell, seed);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let prepared: HashMap<(usize, u64), Prepared> = pool.install(|| {
        keys.par_iter()
            .map(|&(cell, seed)| ((cell, seed), prepare(&cells[cell].1, seed)))
            .collect()
    });

    let sink = Sink::create(&out.join(RESULTS_FILE))?;
    let ckpt_dir = out.join("checkpoints");
    let hist_dir = out.join("history");
    if exp.checkpoints {
        fs::create_dir_all(&ckpt_dir)?;
        fs::create_dir_all(&hist_dir)?;
    }
    let mut job_list = Vec::new();
    for cell in 0..cells.len() {
        for &seed in &seeds {
            for &method in &exp.methods {
                job_list.push(Job { cell, method, seed });
            }
        }
    }

    let lines: Vec<Result<ResultLine>> = pool.install(|| {
        job_list
            .par_iter()
            .map(|job| {
                let (value, cell_exp) = &cells[job.cell];
                let prep = &prepared[&scenario_key(job.cell, job.seed)];
                let line = run_job(cell_exp, axis, *value, job, prep, &ckpt_dir, &hist_dir);
                sink.push(&line)?;
                Ok(line)
            })
            .collect()
    });
    let lines: Vec<ResultLine> = lines.into_iter().collect::<Result<_>>()?;
    let failed = lines.iter().filter(|l| l.status == Status::Failed).count();
    Ok(RunOutput { lines, failed })
}

fn run_job(
    exp: &ExperimentConfig,
    axis: Option<Axis>,
    axis_value: Option<f64>,
    job: &Job,
    prep: &Prepared,
    ckpt_dir: &Path,
    hist_dir: &Path,
) -> ResultLine {
    let mut line = ResultLine {
        status: Status::Failed,
        method: job.method.to_string(),
        seed: job.seed,
        axis,
        axis_value,
        theta_hat: None,
        theta_true: None,
        source: exp.source.clone(),
        scenario: exp.scenario.clone(),
        settings: exp.settings.clone(),
        train_config: None,
        rule: None,
        metrics: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let (scenario, scenario_cfg) = prep.scenario.as_ref().map_err(|e| anyhow!("{e}"))?;
        line.scenario = scenario_cfg.clone();
        line.theta_true = scenario.theta_true;
        let theta = match exp.settings.theta {
            ThetaSource::Fixed { value } => Some(value),
            ThetaSource::Estimate if job.method.uses_theta() => Some(
                prep.theta_hat
                    .clone()
                    .ok_or_else(|| anyhow!("no proportion estimate"))?
                    .map_err(|e| anyhow!("{e}"))?,
            ),
            // unused by the remaining methods
            ThetaSource::Estimate => None,
        };
        let run = run_method(scenario, job.method, &exp.settings, Some(theta.unwrap_or(0.5)), job.seed);
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                if job.method.uses_theta() {
                    line.theta_hat = theta;
                }
                return Err(e.into());
            }
        };
        line.theta_hat = match job.method {
            Method::Shift => Some(run.train_config.risk.theta_hat),
            m if m.uses_theta() => theta,
            _ => None,
        };
        line.train_config = Some(run.train_config.clone());
        line.rule = Some(run.rule);
        line.metrics = Some(run.report.clone());
        if exp.checkpoints {
            let name = tag(axis, axis_value, job.method, job.seed);
            Checkpoint::new(run.model.clone(), run.train_config.clone()).save(&ckpt_dir.join(format!("{name}.json")))?;
            write_history(&run.history, &hist_dir.join(format!("{name}.csv")))?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => line.status = Status::Ok,
        Err(e) => line.error = Some(format!("{e:#}")),
    }
    line
}

/// Writes a scenario directory for one seed.
pub fn generate(exp: &ExperimentConfig, seed: u64, out: &Path) -> Result<LacScenario> {
    if let Source::Dir { .. } = exp.source {
        bail!("gen needs a synthetic or csv source, not a scenario directory");
    }
    let (scenario, _) = build_scenario(exp, seed)?;
    lac_core::data_model::save_scenario(&scenario, out)?;
    Ok(scenario)
}

/// Default output directory when neither `--out` nor `run.out` is given.
pub fn default_out() -> PathBuf {
    PathBuf::from("lac-out")
}
