//! Experiment configuration: flat `key = value` text with dotted sections.
//!
//! ```text
//! # comment
//! methods = nrpr, relu, abs
//! risk.lambda = 1.0
//! [train]            # later keys read as train.<key>
//! epochs = 1500
//! [] # back to top level
//! ```
//!
//! Every key is validated against a closed set; unknown keys and bad values
//! are reported with their full key path and line number.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use lac_core::data_model::{ScenarioConfig, SyntheticSpec};
use lac_core::methods::{Method, MethodSettings, ThetaSource};
use lac_core::mpe::Bandwidth;

/// Where the scenario for each seed comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    /// Gaussian classes drawn fresh for every seed.
    Synthetic,
    /// A labeled CSV resampled for every seed.
    Csv { path: PathBuf, label_column: String },
    /// A scenario directory written by `gen`; the same splits for every seed.
    Dir { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lambda,
    T,
    MUnlabeled,
    Alpha,
    ThetaPreset,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Lambda, Axis::T, Axis::MUnlabeled, Axis::Alpha, Axis::ThetaPreset];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::T => "t",
            Axis::MUnlabeled => "m_unlabeled",
            Axis::Alpha => "alpha",
            Axis::ThetaPreset => "theta_preset",
        }
    }

    /// Whether changing the value changes the generated scenario.
    pub fn changes_scenario(self) -> bool {
        matches!(self, Axis::MUnlabeled | Axis::Alpha)
    }

    /// Applies one axis value to a copy of the experiment.
    pub fn apply(self, value: f64, exp: &mut ExperimentConfig) -> Result<()> {
        let check = |ok: bool, domain: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("{} value {value:?} outside {domain}", self.name()))
            }
        };
        match self {
            Axis::Lambda => {
                check(value >= 0.0 && value.is_finite(), "[0, inf)")?;
                exp.settings.lambda = value;
            }
            Axis::T => {
                check(value >= 1.0 && value.is_finite(), "[1, inf)")?;
                exp.settings.t = value;
            }
            Axis::MUnlabeled => {
                check(value >= 1.0 && value.fract() == 0.0, "positive integers")?;
                exp.scenario.m_unlabeled = value as usize;
            }
            Axis::Alpha => {
                check((0.0..1.0).contains(&value), "[0, 1)")?;
                exp.scenario.prior_shift_alpha = value;
            }
            Axis::ThetaPreset => {
                check((0.0..=1.0).contains(&value), "[0, 1]")?;
                exp.settings.theta = ThetaSource::Fixed { value };
            }
        }
        Ok(())
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| anyhow!("unknown sweep axis {s:?} (expected lambda, t, m_unlabeled, alpha or theta_preset)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: Source,
    /// Synthetic class layout, used when `source` is synthetic.
    pub synthetic: SyntheticSpec,
    /// Known classes as written in the config: ids, or label names for CSV
    /// sources.
    pub known: Vec<String>,
    /// Split sizes, theta and shift; `known_class_ids` and `seed` are filled
    /// per run.
    pub scenario: ScenarioConfig,
    pub settings: MethodSettings,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub checkpoints: bool,
    pub sweep_axis: Option<Axis>,
    pub sweep_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: Source::Synthetic,
            synthetic: SyntheticSpec::circle(5, 6.0, 2, 1.0),
            known: vec!["1".into(), "2".into(), "3".into()],
            scenario: ScenarioConfig::new(Vec::new(), (500, 1000, 1000), 0),
            settings: MethodSettings::default(),
            methods: vec![Method::Nrpr],
            repeats: 10,
            seed: 0,
            out: None,
            jobs: None,
            checkpoints: true,
            sweep_axis: None,
            sweep_values: Vec::new(),
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "methods",
    "scenario.source",
    "scenario.csv",
    "scenario.label_column",
    "scenario.dir",
    "scenario.known",
    "scenario.n_labeled",
    "scenario.m_unlabeled",
    "scenario.n_test",
    "scenario.theta",
    "scenario.alpha",
    "synthetic.classes",
    "synthetic.radius",
    "synthetic.dim",
    "synthetic.std",
    "synthetic.means",
    "train.loss",
    "train.model",
    "train.lr",
    "train.weight_decay",
    "train.epochs",
    "train.batch_size",
    "risk.lambda",
    "risk.t",
    "risk.theta",
    "risk.shift_priors",
    "kernel.bandwidth",
    "kernel.grid_step",
    "kernel.iters",
    "kernel.slope_threshold",
    "eval.softmax_tau",
    "run.repeats",
    "run.seed",
    "run.out",
    "run.jobs",
    "run.checkpoints",
    "sweep.axis",
    "sweep.values",
];

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Splits config text into entries, expanding `[section]` headers.
pub fn parse_entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let at = format!("{origin}:{}", i + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("{at}: unterminated section header"))?
                .trim();
            if !name.is_empty() && !valid_key(name) {
                bail!("{at}: bad section name {name:?}");
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{at}: expected key = value"))?;
        let key = key.trim();
        if !valid_key(key) {
            bail!("{at}: bad key {key:?}");
        }
        let key = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        out.push(Entry {
            key,
            value: value.trim().to_string(),
            origin: at,
        });
    }
    Ok(out)
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

/// Parses a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<Entry> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override {s:?} is not key=value"))?;
    if !valid_key(key.trim()) {
        bail!("bad key {:?} in override", key.trim());
    }
    Ok(Entry {
        key: key.trim().to_string(),
        value: value.trim().to_string(),
        origin: "--set".into(),
    })
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: invalid value {value:?}"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| num(key, v))
        .collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[Entry]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut entries = parse_entries(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut entries {
            if matches!(e.key.as_str(), "scenario.csv" | "scenario.dir" | "run.out") {
                let p = Path::new(&e.value);
                if p.is_relative() {
                    e.value = base.join(p).display().to_string();
                }
            }
        }
        entries.extend(overrides.iter().cloned());
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut csv_path: Option<PathBuf> = None;
        let mut label_column = lac_core::data_model::LABEL_COLUMN.to_string();
        let mut dir_path: Option<PathBuf> = None;
        let mut source_kind: Option<String> = None;
        let mut circle = (5usize, 6.0f64, 2usize);
        let mut means: Option<Vec<Vec<f64>>> = None;
        let mut std_dev = 1.0;
        for e in entries {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            let applied: Result<()> = (|| {
                match k {
                    "methods" => {
                        cfg.methods = v
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(|m| m.parse::<Method>().map_err(|e| anyhow!("{k}: {e}")))
                            .collect::<Result<_>>()?;
                        if cfg.methods.is_empty() {
                            bail!("{k}: at least one method is required");
                        }
                    }
                    "scenario.source" => source_kind = Some(v.to_string()),
                    "scenario.csv" => csv_path = Some(PathBuf::from(v)),
                    "scenario.label_column" => label_column = v.to_string(),
                    "scenario.dir" => dir_path = Some(PathBuf::from(v)),
                    "scenario.known" => {
                        cfg.known = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                        if cfg.known.is_empty() {
                            bail!("{k}: at least one known class is required");
                        }
                    }
                    "scenario.n_labeled" => cfg.scenario.n_labeled = num(k, v)?,
                    "scenario.m_unlabeled" => cfg.scenario.m_unlabeled = num(k, v)?,
                    "scenario.n_test" => cfg.scenario.n_test = num(k, v)?,
                    "scenario.theta" => {
                        cfg.scenario.theta = match v {
                            "base" => None,
                            _ => Some(num(k, v)?),
                        }
                    }
                    "scenario.alpha" => cfg.scenario.prior_shift_alpha = num(k, v)?,
                    "synthetic.classes" => circle.0 = num(k, v)?,
                    "synthetic.radius" => circle.1 = num(k, v)?,
                    "synthetic.dim" => circle.2 = num(k, v)?,
                    "synthetic.std" => std_dev = num(k, v)?,
                    "synthetic.means" => {
                        means = Some(
                            v.split(';')
                                .map(|m| list::<f64>(k, m))
                                .collect::<Result<_>>()?,
                        )
                    }
                    "train.loss" => cfg.settings.loss = v.parse().map_err(|e| anyhow!("{k}: {e}"))?,
                    "train.model" => cfg.settings.model = v.parse().map_err(|e| anyhow!("{k}: {e}"))?,
                    "train.lr" => cfg.settings.learning_rate = num(k, v)?,
                    "train.weight_decay" => cfg.settings.weight_decay = num(k, v)?,
                    "train.epochs" => cfg.settings.epochs = num(k, v)?,
                    "train.batch_size" => {
                        cfg.settings.batch_size = match v {
                            "full" => None,
                            _ => Some(num(k, v)?),
                        }
                    }
                    "risk.lambda" => cfg.settings.lambda = num(k, v)?,
                    "risk.t" => cfg.settings.t = num(k, v)?,
                    "risk.theta" => {
                        cfg.settings.theta = match v {
                            "estimate" => ThetaSource::Estimate,
                            _ => ThetaSource::Fixed { value: num(k, v)? },
                        }
                    }
                    "risk.shift_priors" => {
                        cfg.settings.shift_priors = match v {
                            "scenario" => None,
                            _ => Some(v.split('/').map(|p| num(k, p.trim())).collect::<Result<_>>()?),
                        }
                    }
                    "kernel.bandwidth" => {
                        cfg.settings.kernel.bandwidth =
                            v.parse::<Bandwidth>().map_err(|e| anyhow!("{k}: {e}"))?
                    }
                    "kernel.grid_step" => {
                        let step: f64 = num(k, v)?;
                        if !(step > 0.0 && step < 1.0) {
                            bail!("{k}: step must lie in (0, 1)");
                        }
                        let n = (1.0 / step).ceil() as usize;
                        cfg.settings.kernel.lambda_grid =
                            (0..n).map(|i| i as f64 * step).filter(|l| *l < 1.0).collect();
                    }
                    "kernel.iters" => cfg.settings.kernel.frank_wolfe_iters = num(k, v)?,
                    "kernel.slope_threshold" => cfg.settings.kernel.slope_threshold = num(k, v)?,
                    "eval.softmax_tau" => cfg.settings.softmax_tau = num(k, v)?,
                    "run.repeats" => cfg.repeats = num(k, v)?,
                    "run.seed" => cfg.seed = num(k, v)?,
                    "run.out" => cfg.out = Some(PathBuf::from(v)),
                    "run.jobs" => cfg.jobs = Some(num(k, v)?),
                    "run.checkpoints" => cfg.checkpoints = flag(k, v)?,
                    "sweep.axis" => cfg.sweep_axis = Some(v.parse().map_err(|e| anyhow!("{k}: {e}"))?),
                    "sweep.values" => cfg.sweep_values = list(k, v)?,
                    _ => bail!("unknown config key {k:?}"),
                }
                Ok(())
            })();
            applied.with_context(|| e.origin.clone())?;
        }

        cfg.synthetic = match means {
            Some(m) => SyntheticSpec { means: m, std_dev },
            None => SyntheticSpec::circle(circle.0, circle.1, circle.2, std_dev),
        };
        cfg.source = match (source_kind.as_deref(), csv_path, dir_path) {
            (_, Some(_), Some(_)) => bail!("scenario.csv and scenario.dir are mutually exclusive"),
            (None | Some("csv"), Some(path), None) => Source::Csv { path, label_column },
            (None | Some("dir"), None, Some(path)) => Source::Dir { path },
            (None | Some("synthetic"), None, None) => Source::Synthetic,
            (Some("csv"), None, _) => bail!("scenario.source = csv needs scenario.csv"),
            (Some("dir"), _, None) => bail!("scenario.source = dir needs scenario.dir"),
            (Some("synthetic"), _, _) => bail!("scenario.source = synthetic conflicts with scenario.csv / scenario.dir"),
            (Some(s), _, _) => bail!("scenario.source: unknown source {s:?} (expected synthetic, csv or dir)"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("run.repeats must be at least 1");
        }
        if self.jobs == Some(0) {
            bail!("run.jobs must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("methods: at least one method is required");
        }
        if !(self.settings.lambda >= 0.0) {
            bail!("risk.lambda must be nonnegative");
        }
        if !(self.settings.t >= 1.0) {
            bail!("risk.t must be at least 1");
        }
        self.settings.kernel.validate().context("kernel")?;
        Ok(())
    }

    /// The sweep requested by config, with command-line values taking
    /// precedence.
    pub fn sweep(&self, axis: Option<Axis>, values: Option<Vec<f64>>) -> Result<SweepSpec> {
        let axis = axis
            .or(self.sweep_axis)
            .ok_or_else(|| anyhow!("no sweep axis: pass --axis or set sweep.axis"))?;
        let values = values.unwrap_or_else(|| self.sweep_values.clone());
        if values.is_empty() {
            bail!("no sweep values: pass --values or set sweep.values");
        }
        for &v in &values {
            axis.apply(v, &mut self.clone())?;
        }
        Ok(SweepSpec { axis, values })
    }
}
