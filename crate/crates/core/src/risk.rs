//! Empirical risk estimators for learning with augmented classes.
//!
//! Every estimator consumes precomputed per-example loss values, so the
//! algebra is independent of the model that produced them. With labeled
//! losses `L(f(x_i), y_i)`, `L(f(x_i), ac)` for `i = 1..n` and unlabeled
//! losses `L(f(x_j), ac)` for `j = 1..m`:
//!
//! ```text
//! R_lac = theta/n * sum_i (L(x_i, y_i) - L(x_i, ac)) + 1/m * sum_j L(x_j, ac)
//! R_pac = 1/m * sum_j L(x_j, ac) - theta/n * sum_i L(x_i, ac)
//! Omega = (-R_pac)^t  if R_pac < 0, else 0
//! ```
//!
//! The training objective is `R_lac + lambda * Omega`. With `t = 1` it
//! reproduces the ReLU correction (`lambda = 1`) and the absolute-value
//! correction (`lambda = 2`).

use std::fmt;
use std::str::FromStr;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LacError, Result};
use crate::loss::{parse_args, parse_f64, psi, LossSpec};

/// Class-prior-shift configuration: test prior of each known class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorShiftConfig {
    pub theta_te: Vec<f64>,
}

impl PriorShiftConfig {
    pub fn new(theta_te: Vec<f64>) -> Result<Self> {
        let cfg = PriorShiftConfig { theta_te };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_te.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(LacError::invalid("per-class test priors must be non-negative"));
        }
        let total: f64 = self.theta_te.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(LacError::invalid(format!(
                "per-class test priors sum to {total} > 1"
            )));
        }
        Ok(())
    }

    pub fn known_mass(&self) -> f64 {
        self.theta_te.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskVariant {
    /// Plain unbiased estimator.
    Ure,
    /// Unbiased estimator plus `lambda * Omega`.
    UrePenalty,
    /// `theta/n sum L(y) + max(0, R_pac)`.
    ReluCorrected,
    /// `theta/n sum L(y) + |R_pac|`.
    AbsCorrected,
    /// The one-versus-rest estimator; numerically the plain estimator with
    /// the OVR loss plugged in.
    EulacOvr,
    /// Per-class weighted estimator under class-prior shift, with the same
    /// `lambda`/`t` penalty as [`RiskVariant::UrePenalty`].
    PriorShift(PriorShiftConfig),
    /// Mean labeled loss only; used to train the threshold baselines.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub theta_hat: f64,
    pub lambda: f64,
    pub t: f64,
    pub variant: RiskVariant,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            theta_hat: 0.5,
            lambda: 1.0,
            t: 1.0,
            variant: RiskVariant::UrePenalty,
        }
    }
}

impl RiskConfig {
    pub fn new(variant: RiskVariant, theta_hat: f64) -> Self {
        RiskConfig {
            theta_hat,
            variant,
            ..RiskConfig::default()
        }
    }

    pub fn with_penalty(mut self, lambda: f64, t: f64) -> Self {
        self.lambda = lambda;
        self.t = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta_hat)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(LacError::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.t >= 0.0) || !self.t.is_finite() {
            return Err(LacError::invalid(format!("t must be >= 0, got {}", self.t)));
        }
        if let RiskVariant::PriorShift(shift) = &self.variant {
            shift.validate()?;
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            RiskVariant::Ure => "ure",
            RiskVariant::UrePenalty => "nrpr",
            RiskVariant::ReluCorrected => "relu",
            RiskVariant::AbsCorrected => "abs",
            RiskVariant::EulacOvr => "eulac",
            RiskVariant::PriorShift(_) => "shift",
            RiskVariant::Supervised => "supervised",
        }
    }
}

impl fmt::Display for RiskConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.variant {
            RiskVariant::UrePenalty => write!(f, "nrpr:t={},lambda={}", self.t, self.lambda),
            RiskVariant::PriorShift(s) => {
                let priors: Vec<String> = s.theta_te.iter().map(|p| p.to_string()).collect();
                write!(f, "shift:t={},lambda={},priors={}", self.t, self.lambda, priors.join("/"))
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for RiskConfig {
    type Err = LacError;

    /// Parses `ure`, `nrpr:t=2,lambda=1.0`, `relu`, `abs`, `eulac`,
    /// `shift[:t=..,lambda=..,priors=a/b/c]` and `supervised`. `theta_hat`
    /// defaults to 0.5 and is usually set afterwards.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut cfg = RiskConfig::default();
        let mut priors = Vec::new();
        for (key, value) in parse_args(args)? {
            match key {
                "t" => cfg.t = parse_f64(key, value)?,
                "lambda" => cfg.lambda = parse_f64(key, value)?,
                "theta" => cfg.theta_hat = parse_f64(key, value)?,
                "priors" if name == "shift" => {
                    priors = value
                        .split('/')
                        .map(|v| parse_f64(key, v))
                        .collect::<Result<_>>()?
                }
                _ => return Err(LacError::Parse(format!("unknown risk argument {key:?}"))),
            }
        }
        cfg.variant = match name {
            "ure" => RiskVariant::Ure,
            "nrpr" => RiskVariant::UrePenalty,
            "relu" => RiskVariant::ReluCorrected,
            "abs" => RiskVariant::AbsCorrected,
            "eulac" => RiskVariant::EulacOvr,
            "shift" => RiskVariant::PriorShift(PriorShiftConfig { theta_te: priors }),
            "supervised" => RiskVariant::Supervised,
            _ => return Err(LacError::Parse(format!("unknown risk variant {name:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(LacError::invalid(format!("theta must lie in [0,1], got {theta}")))
    }
}

fn check_batches(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(LacError::EmptyBatch("labeled"));
    }
    if m == 0 {
        return Err(LacError::EmptyBatch("unlabeled"));
    }
    Ok(())
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// The unbiased estimator from `(L(y_i), L(ac))` pairs and unlabeled
/// `L(ac)` values. May be negative.
pub fn lac_risk(labeled: &[(f64, f64)], unlabeled_ac: &[f64], theta_hat: f64) -> Result<f64> {
    check_batches(labeled.len(), unlabeled_ac.len())?;
    check_theta(theta_hat)?;
    let diff: f64 = labeled.iter().map(|(ly, lac)| ly - lac).sum();
    Ok(theta_hat / labeled.len() as f64 * diff + mean(unlabeled_ac.iter().copied()))
}

/// Empirical estimate of the augmented-class part of the risk.
pub fn pac_risk(labeled_ac: &[f64], unlabeled_ac: &[f64], theta_hat: f64) -> Result<f64> {
    check_batches(labeled_ac.len(), unlabeled_ac.len())?;
    check_theta(theta_hat)?;
    let lab: f64 = labeled_ac.iter().sum();
    Ok(mean(unlabeled_ac.iter().copied()) - theta_hat / labeled_ac.len() as f64 * lab)
}

/// `(-pac)^t` when `pac < 0`, else 0.
pub fn penalty(pac: f64, t: f64) -> f64 {
    if pac < 0.0 {
        (-pac).powf(t)
    } else {
        0.0
    }
}

/// Derivative of [`penalty`] with respect to `pac`; 0 at `pac >= 0`.
pub fn penalty_slope(pac: f64, t: f64) -> f64 {
    if pac < 0.0 && t != 0.0 {
        -t * (-pac).powf(t - 1.0)
    } else {
        0.0
    }
}

/// Per-example loss values feeding an objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBatch {
    /// `L(f(x_i), y_i)` for labeled examples.
    pub labeled_true: Vec<f64>,
    /// `L(f(x_i), ac)` for labeled examples.
    pub labeled_ac: Vec<f64>,
    /// Zero-based known class of each labeled example (prior-shift only).
    pub labeled_class: Vec<usize>,
    /// `L(f(x_j), ac)` for unlabeled examples.
    pub unlabeled_ac: Vec<f64>,
}

impl LossBatch {
    pub fn from_pairs(labeled: &[(f64, f64)], unlabeled_ac: &[f64]) -> Self {
        LossBatch {
            labeled_true: labeled.iter().map(|p| p.0).collect(),
            labeled_ac: labeled.iter().map(|p| p.1).collect(),
            labeled_class: vec![0; labeled.len()],
            unlabeled_ac: unlabeled_ac.to_vec(),
        }
    }
}

/// Objective value plus the partial derivative of the value with respect to
/// every loss term in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub pac_risk: f64,
    pub penalty: f64,
    pub labeled_true_weight: Vec<f64>,
    pub labeled_ac_weight: Vec<f64>,
    pub unlabeled_ac_weight: Vec<f64>,
}

/// Evaluates the configured training objective and its gradient weights.
pub fn objective(batch: &LossBatch, config: &RiskConfig) -> Result<Objective> {
    config.validate()?;
    let n = batch.labeled_true.len();
    let m = batch.unlabeled_ac.len();
    if batch.labeled_ac.len() != n {
        return Err(LacError::Shape("labeled loss vectors differ in length".into()));
    }
    if matches!(config.variant, RiskVariant::Supervised) {
        if n == 0 {
            return Err(LacError::EmptyBatch("labeled"));
        }
        return Ok(Objective {
            value: mean(batch.labeled_true.iter().copied()),
            pac_risk: 0.0,
            penalty: 0.0,
            labeled_true_weight: vec![1.0 / n as f64; n],
            labeled_ac_weight: vec![0.0; n],
            unlabeled_ac_weight: vec![0.0; m],
        });
    }
    check_batches(n, m)?;

    // Per-example coefficient of the labeled terms; uniform theta/n except
    // under prior shift, where class i gets theta_te[i] / n_i.
    let labeled_coef: Vec<f64> = match &config.variant {
        RiskVariant::PriorShift(shift) => prior_shift_coefficients(&batch.labeled_class, shift)?,
        _ => vec![config.theta_hat / n as f64; n],
    };
    let inv_m = 1.0 / m as f64;

    let unl_part = mean(batch.unlabeled_ac.iter().copied());
    let (true_part, pac, lac) = match &config.variant {
        RiskVariant::PriorShift(_) => {
            let weighted = |losses: &[f64]| -> f64 {
                labeled_coef.iter().zip(losses).map(|(c, l)| c * l).sum()
            };
            let true_part = weighted(&batch.labeled_true);
            let pac = unl_part - weighted(&batch.labeled_ac);
            (true_part, pac, true_part + pac)
        }
        _ => {
            // Same summation order as `lac_risk` and `pac_risk`.
            let scale = config.theta_hat / n as f64;
            let true_part = scale * batch.labeled_true.iter().sum::<f64>();
            let diff: f64 = batch
                .labeled_true
                .iter()
                .zip(&batch.labeled_ac)
                .map(|(ly, lac)| ly - lac)
                .sum();
            let pac = unl_part - scale * batch.labeled_ac.iter().sum::<f64>();
            (true_part, pac, scale * diff + unl_part)
        }
    };

    // d(value)/d(pac) decides how the pac terms are weighted.
    let (value, pac_slope, pen) = match config.variant {
        RiskVariant::Ure | RiskVariant::EulacOvr => (lac, 1.0, 0.0),
        RiskVariant::UrePenalty | RiskVariant::PriorShift(_) => {
            let pen = penalty(pac, config.t);
            let slope = 1.0 + config.lambda * penalty_slope(pac, config.t);
            (lac + config.lambda * pen, slope, pen)
        }
        RiskVariant::ReluCorrected => {
            let slope = if pac < 0.0 { 0.0 } else { 1.0 };
            (true_part + pac.max(0.0), slope, 0.0)
        }
        RiskVariant::AbsCorrected => {
            let slope = if pac < 0.0 { -1.0 } else { 1.0 };
            (true_part + pac.abs(), slope, 0.0)
        }
        RiskVariant::Supervised => unreachable!(),
    };

    Ok(Objective {
        value,
        pac_risk: pac,
        penalty: pen,
        labeled_true_weight: labeled_coef.clone(),
        labeled_ac_weight: labeled_coef.iter().map(|c| -c * pac_slope).collect(),
        unlabeled_ac_weight: vec![inv_m * pac_slope; m],
    })
}

fn prior_shift_coefficients(classes: &[usize], shift: &PriorShiftConfig) -> Result<Vec<f64>> {
    let k = shift.theta_te.len();
    let mut counts = vec![0usize; k];
    for &c in classes {
        if c >= k {
            return Err(LacError::invalid(format!(
                "labeled class {} has no test prior (k = {k})",
                c + 1
            )));
        }
        counts[c] += 1;
    }
    if let Some(c) = (0..k).find(|&c| shift.theta_te[c] > 0.0 && counts[c] == 0) {
        return Err(LacError::invalid(format!(
            "class {} has positive test prior but no labeled examples",
            c + 1
        )));
    }
    Ok(classes
        .iter()
        .map(|&c| shift.theta_te[c] / counts[c] as f64)
        .collect())
}

/// Per-class weighted estimator under class-prior shift.
///
/// `per_class[i]` holds the `(L(y), L(ac))` pairs of labeled examples of
/// known class `i`.
pub fn prior_shift_risk(
    per_class: &[Vec<(f64, f64)>],
    shift: &PriorShiftConfig,
    unlabeled_ac: &[f64],
) -> Result<f64> {
    shift.validate()?;
    if per_class.len() != shift.theta_te.len() {
        return Err(LacError::Shape(format!(
            "{} classes of losses but {} priors",
            per_class.len(),
            shift.theta_te.len()
        )));
    }
    if unlabeled_ac.is_empty() {
        return Err(LacError::EmptyBatch("unlabeled"));
    }
    let mut total = 0.0;
    for (i, (pairs, &prior)) in per_class.iter().zip(&shift.theta_te).enumerate() {
        if prior == 0.0 {
            continue;
        }
        if pairs.is_empty() {
            return Err(LacError::invalid(format!(
                "class {} has positive test prior but no labeled examples",
                i + 1
            )));
        }
        total += prior * mean(pairs.iter().map(|(ly, lac)| ly - lac));
    }
    Ok(total + mean(unlabeled_ac.iter().copied()))
}

/// The one-versus-rest estimator computed directly from score vectors
/// (`k + 1` entries each, ac last) with the logistic `psi`.
pub fn eulac_ovr_risk(
    labeled_scores: &[Vec<f64>],
    labels: &[usize],
    unlabeled_scores: &[Vec<f64>],
    theta_hat: f64,
    loss: &LossSpec,
) -> Result<f64> {
    if *loss != LossSpec::Ovr {
        return Err(LacError::invalid(format!("expected the ovr loss, got {loss}")));
    }
    check_batches(labeled_scores.len(), unlabeled_scores.len())?;
    check_theta(theta_hat)?;
    if labels.len() != labeled_scores.len() {
        return Err(LacError::Shape("labels and labeled scores differ in length".into()));
    }
    let labeled_term = mean(labeled_scores.iter().zip(labels).map(|(f, &y)| {
        let ac = f.len() - 1;
        psi(f[y]) - psi(-f[y]) + psi(-f[ac]) - psi(f[ac])
    }));
    let unlabeled_term = mean(unlabeled_scores.iter().map(|f| {
        let ac = f.len() - 1;
        psi(f[ac]) + f[..ac].iter().map(|&v| psi(-v)).sum::<f64>()
    }));
    Ok(theta_hat * labeled_term + unlabeled_term)
}

/// An exactly enumerable test distribution over a finite support:
/// `P_te = theta * P_kc + (1 - theta) * P_ac`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistributionSpec {
    /// `(support point, zero-based known class, probability)` under `P_kc`.
    pub known: Vec<(usize, usize, f64)>,
    /// `(support point, probability)` under `P_ac`.
    pub augmented: Vec<(usize, f64)>,
    pub theta: f64,
}

impl DiscreteDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        let kc: f64 = self.known.iter().map(|e| e.2).sum();
        let ac: f64 = self.augmented.iter().map(|e| e.1).sum();
        let negative = self.known.iter().any(|e| e.2 < 0.0) || self.augmented.iter().any(|e| e.1 < 0.0);
        if negative || (kc - 1.0).abs() > 1e-12 || (ac - 1.0).abs() > 1e-12 {
            return Err(LacError::invalid(format!(
                "distribution not normalized: known mass {kc}, augmented mass {ac}"
            )));
        }
        Ok(())
    }

    /// Draws one labeled `(point, class)` from `P_kc`.
    pub fn sampler(&self) -> Result<DiscreteSampler<'_>> {
        self.validate()?;
        let known = WeightedIndex::new(self.known.iter().map(|e| e.2))
            .map_err(|e| LacError::invalid(e.to_string()))?;
        let augmented = WeightedIndex::new(self.augmented.iter().map(|e| e.1))
            .map_err(|e| LacError::invalid(e.to_string()))?;
        Ok(DiscreteSampler {
            spec: self,
            known,
            augmented,
        })
    }
}

pub struct DiscreteSampler<'a> {
    spec: &'a DiscreteDistributionSpec,
    known: WeightedIndex<f64>,
    augmented: WeightedIndex<f64>,
}

impl DiscreteSampler<'_> {
    pub fn known<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let e = self.spec.known[self.known.sample(rng)];
        (e.0, e.1)
    }

    /// A support point drawn from the test mixture.
    pub fn test_point<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.spec.theta {
            self.known(rng).0
        } else {
            self.spec.augmented[self.augmented.sample(rng)].0
        }
    }
}

/// Exact test risk `theta E_kc[L(f, y)] + (1 - theta) E_ac[L(f, ac)]` by
/// enumeration. `scores[p]` is the score vector at support point `p`.
pub fn exact_risk_oracle(
    dist: &DiscreteDistributionSpec,
    scores: &[Vec<f64>],
    loss: &LossSpec,
) -> Result<f64> {
    dist.validate()?;
    let lookup = |p: usize| {
        scores
            .get(p)
            .ok_or_else(|| LacError::invalid(format!("no scores for support point {p}")))
    };
    let mut kc = 0.0;
    for &(p, y, prob) in &dist.known {
        kc += prob * loss.value(lookup(p)?, y)?;
    }
    let mut ac = 0.0;
    for &(p, prob) in &dist.augmented {
        let f = lookup(p)?;
        ac += prob * loss.value(f, f.len() - 1)?;
    }
    Ok(dist.theta * kc + (1.0 - dist.theta) * ac)
}
