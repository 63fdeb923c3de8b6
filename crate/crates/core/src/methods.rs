//! Named learning methods: how each one trains and predicts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_model::LacScenario;
use crate::error::{LacError, Result};
use crate::evaluation::{evaluate, MetricsReport, PredictionRule, SOFTMAX_THRESHOLD};
use crate::loss::LossSpec;
use crate::models_optim::{train, EpochRecord, Model, ModelSpec, TrainConfig};
use crate::mpe::{estimate_theta, KernelConfig};
use crate::risk::{PriorShiftConfig, RiskConfig, RiskVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Unbiased estimator with the risk penalty.
    Nrpr,
    /// Plain unbiased estimator (`lambda = 0`).
    Ure,
    Relu,
    Abs,
    /// OVR-loss unbiased estimator.
    Eulac,
    /// Supervised OVR classifier rejecting when every known score is negative.
    OvrThreshold,
    /// Supervised softmax classifier rejecting below a confidence threshold.
    SoftmaxT,
    /// Risk-penalized estimator with per-class test priors.
    Shift,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Nrpr,
        Method::Ure,
        Method::Relu,
        Method::Abs,
        Method::Eulac,
        Method::OvrThreshold,
        Method::SoftmaxT,
        Method::Shift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nrpr => "nrpr",
            Method::Ure => "ure",
            Method::Relu => "relu",
            Method::Abs => "abs",
            Method::Eulac => "eulac",
            Method::OvrThreshold => "ovr-threshold",
            Method::SoftmaxT => "softmax-t",
            Method::Shift => "shift",
        }
    }

    /// Whether the method consumes the unlabeled sample and a proportion.
    pub fn uses_theta(self) -> bool {
        !matches!(self, Method::OvrThreshold | Method::SoftmaxT | Method::Shift)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LacError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| LacError::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThetaSource {
    /// Kernel-mean-embedding estimate from the labeled and unlabeled splits.
    Estimate,
    Fixed { value: f64 },
}

/// Penalty exponent used by `nrpr` and `shift` unless configured.
pub const DEFAULT_T: f64 = 2.0;

/// Settings shared by every method in one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    /// Loss for the estimator-based methods (eulac and the baselines fix
    /// their own).
    pub loss: LossSpec,
    pub lambda: f64,
    pub t: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub model: ModelSpec,
    pub theta: ThetaSource,
    pub kernel: KernelConfig,
    /// Per-class test priors for `shift`; the scenario's recorded priors
    /// when absent.
    pub shift_priors: Option<Vec<f64>>,
    pub softmax_tau: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        let train = TrainConfig::default();
        MethodSettings {
            loss: LossSpec::default(),
            lambda: 1.0,
            t: DEFAULT_T,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            epochs: train.epochs,
            batch_size: None,
            model: ModelSpec::Linear,
            theta: ThetaSource::Estimate,
            kernel: KernelConfig::default(),
            shift_priors: None,
            softmax_tau: SOFTMAX_THRESHOLD,
        }
    }
}

impl MethodSettings {
    /// Training configuration and prediction rule for `method`.
    pub fn plan(
        &self,
        method: Method,
        theta_hat: f64,
        scenario: &LacScenario,
        seed: u64,
    ) -> Result<(TrainConfig, PredictionRule)> {
        let penalized = |variant| RiskConfig::new(variant, theta_hat).with_penalty(self.lambda, self.t);
        let (risk, loss, rule) = match method {
            Method::Nrpr => (penalized(RiskVariant::UrePenalty), self.loss, PredictionRule::Argmax),
            Method::Ure => (
                RiskConfig::new(RiskVariant::Ure, theta_hat).with_penalty(0.0, self.t),
                self.loss,
                PredictionRule::Argmax,
            ),
            Method::Relu => (
                RiskConfig::new(RiskVariant::ReluCorrected, theta_hat),
                self.loss,
                PredictionRule::Argmax,
            ),
            Method::Abs => (
                RiskConfig::new(RiskVariant::AbsCorrected, theta_hat),
                self.loss,
                PredictionRule::Argmax,
            ),
            Method::Eulac => (
                RiskConfig::new(RiskVariant::EulacOvr, theta_hat),
                LossSpec::Ovr,
                PredictionRule::Argmax,
            ),
            Method::OvrThreshold => (
                RiskConfig::new(RiskVariant::Supervised, theta_hat),
                LossSpec::Ovr,
                PredictionRule::OvrThreshold,
            ),
            Method::SoftmaxT => (
                RiskConfig::new(RiskVariant::Supervised, theta_hat),
                LossSpec::CrossEntropy,
                PredictionRule::SoftmaxThreshold {
                    tau: self.softmax_tau,
                },
            ),
            Method::Shift => {
                let priors = self
                    .shift_priors
                    .clone()
                    .unwrap_or_else(|| scenario.known_priors.clone());
                if priors.len() != scenario.k {
                    return Err(LacError::invalid(format!(
                        "{} shift priors for {} known classes",
                        priors.len(),
                        scenario.k
                    )));
                }
                let shift = PriorShiftConfig::new(priors)?;
                let mass = shift.known_mass().min(1.0);
                (
                    penalized(RiskVariant::PriorShift(shift)).with_theta(mass),
                    self.loss,
                    PredictionRule::Argmax,
                )
            }
        };
        let config = TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            risk,
            loss,
            model: self.model,
        };
        config.validate()?;
        Ok((config, rule))
    }

    /// The proportion to plug into the estimators for this scenario.
    pub fn resolve_theta(&self, scenario: &LacScenario) -> Result<f64> {
        match self.theta {
            ThetaSource::Fixed { value } => {
                if (0.0..=1.0).contains(&value) {
                    Ok(value)
                } else {
                    Err(LacError::invalid(format!("theta {value} outside [0,1]")))
                }
            }
            ThetaSource::Estimate => Ok(estimate_theta(
                scenario.labeled.features(),
                scenario.unlabeled.features(),
                &self.kernel,
            )?
            .theta),
        }
    }
}

impl RiskConfig {
    fn with_theta(mut self, theta: f64) -> Self {
        self.theta_hat = theta;
        self
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub theta_hat: f64,
    pub train_config: TrainConfig,
    pub rule: PredictionRule,
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub report: MetricsReport,
}

/// Trains `method` on the scenario and evaluates it on the test split.
/// `theta_hat` overrides the settings' proportion source when given.
pub fn run_method(
    scenario: &LacScenario,
    method: Method,
    settings: &MethodSettings,
    theta_hat: Option<f64>,
    seed: u64,
) -> Result<MethodRun> {
    let theta_hat = match theta_hat {
        Some(t) => t,
        None => settings.resolve_theta(scenario)?,
    };
    let (train_config, rule) = settings.plan(method, theta_hat, scenario, seed)?;
    let outcome = train(scenario, &train_config)?;
    let report = evaluate(&outcome.model, rule, &scenario.test)?;
    Ok(MethodRun {
        method,
        theta_hat,
        train_config,
        rule,
        model: outcome.model,
        history: outcome.history,
        report,
    })
}
