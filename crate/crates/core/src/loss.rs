//! Multi-class losses over a `(k+1)`-dimensional score vector, with analytic
//! gradients. Labels are zero-based; index `k` is the augmented class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LacError, Result};

pub const DEFAULT_GCE_Q: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    /// Generalized cross entropy `(1 - p_y^q) / q` on softmax probabilities.
    Gce { q: f64 },
    #[serde(rename = "ce")]
    CrossEntropy,
    /// One-versus-rest with logistic `psi(z) = ln(1 + e^-z)` over all outputs.
    Ovr,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Gce { q: DEFAULT_GCE_Q }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Gce { q } if !(q > 0.0 && q <= 1.0) => {
                Err(LacError::invalid(format!("GCE q must lie in (0,1], got {q}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, scores: &[f64], y: usize) -> Result<f64> {
        self.value_and_grad(scores, y).map(|(v, _)| v)
    }

    pub fn grad(&self, scores: &[f64], y: usize) -> Result<Vec<f64>> {
        self.value_and_grad(scores, y).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, scores: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.validate()?;
        check_scores(scores)?;
        if y >= scores.len() {
            return Err(LacError::invalid(format!(
                "label {} outside 1..={}",
                y + 1,
                scores.len()
            )));
        }
        let mut grad = vec![0.0; scores.len()];
        let mut probs = vec![0.0; scores.len()];
        let v = self.eval_into(scores, y, &mut probs, &mut grad);
        Ok((v, grad))
    }

    /// Loss at label `y`, gradient written to `grad`. `probs` is scratch of
    /// the same length. Inputs are assumed valid.
    pub(crate) fn eval_into(&self, scores: &[f64], y: usize, probs: &mut [f64], grad: &mut [f64]) -> f64 {
        match *self {
            LossSpec::Gce { q } => {
                let log_py = log_softmax_into(scores, probs, y);
                let pq = (q * log_py).exp();
                for (j, g) in grad.iter_mut().enumerate() {
                    let delta = if j == y { 1.0 } else { 0.0 };
                    *g = -pq * (delta - probs[j]);
                }
                -(q * log_py).exp_m1() / q
            }
            LossSpec::CrossEntropy => {
                let log_py = log_softmax_into(scores, probs, y);
                for (j, g) in grad.iter_mut().enumerate() {
                    *g = probs[j] - if j == y { 1.0 } else { 0.0 };
                }
                -log_py
            }
            LossSpec::Ovr => {
                let mut total = 0.0;
                for (j, (&s, g)) in scores.iter().zip(grad.iter_mut()).enumerate() {
                    if j == y {
                        total += psi(s);
                        *g = -sigmoid(-s);
                    } else {
                        total += psi(-s);
                        *g = sigmoid(s);
                    }
                }
                total
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Gce { q } => write!(f, "gce:q={q}"),
            LossSpec::CrossEntropy => f.write_str("ce"),
            LossSpec::Ovr => f.write_str("ovr"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = LacError;

    /// Accepts `gce`, `gce:q=0.7`, `ce` and `ovr`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let spec = match name {
            "gce" => {
                let mut q = DEFAULT_GCE_Q;
                for (key, value) in parse_args(args)? {
                    match key {
                        "q" => q = parse_f64(key, value)?,
                        _ => return Err(LacError::Parse(format!("unknown loss argument {key:?}"))),
                    }
                }
                LossSpec::Gce { q }
            }
            "ce" if args.is_empty() => LossSpec::CrossEntropy,
            "ovr" if args.is_empty() => LossSpec::Ovr,
            _ => return Err(LacError::Parse(format!("unknown loss {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Splits `a=1,b=2` into key/value pairs.
pub(crate) fn parse_args(args: &str) -> Result<Vec<(&str, &str)>> {
    args.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| LacError::Parse(format!("expected key=value, got {a:?}")))
        })
        .collect()
}

pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| LacError::Parse(format!("{key}: not a number: {value:?}")))
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(LacError::invalid("empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LacError::invalid("non-finite score"));
    }
    Ok(())
}

/// Writes softmax probabilities to `probs` and returns `ln p_y`.
fn log_softmax_into(scores: &[f64], probs: &mut [f64], y: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &s) in probs.iter_mut().zip(scores) {
        *p = (s - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    scores[y] - max - sum.ln()
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    check_scores(scores)?;
    let mut probs = vec![0.0; scores.len()];
    log_softmax_into(scores, &mut probs, 0);
    Ok(probs)
}

/// Logistic loss `ln(1 + e^-z)`.
pub fn psi(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// GCE value at a given true-class probability.
pub fn gce_from_prob(p_y: f64, q: f64) -> f64 {
    -(q * p_y.ln()).exp_m1() / q
}

/// `|GCE(q = 1e-6) - CE|` at true-class probability `p_y`.
pub fn gce_limit_gap(p_y: f64) -> Result<f64> {
    if !(p_y > 0.0 && p_y <= 1.0) {
        return Err(LacError::invalid(format!("p_y must lie in (0,1], got {p_y}")));
    }
    Ok((gce_from_prob(p_y, 1e-6) + p_y.ln()).abs())
}
