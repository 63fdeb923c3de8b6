use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{Model, ModelSpec};
use crate::data_model::LacScenario;
use crate::error::{LacError, Result};
use crate::loss::LossSpec;
use crate::risk::{objective, LossBatch, Objective, RiskConfig, RiskVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Combined labeled + unlabeled examples per step; `None` = full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub risk: RiskConfig,
    pub loss: LossSpec,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            epochs: 1500,
            batch_size: None,
            seed: 0,
            risk: RiskConfig::default(),
            loss: LossSpec::default(),
            model: ModelSpec::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(LacError::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(LacError::invalid("weight decay must be >= 0"));
        }
        if self.epochs == 0 {
            return Err(LacError::invalid("epochs must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(LacError::invalid("batch size must be positive"));
        }
        self.loss.validate()?;
        self.risk.validate()?;
        if matches!(self.risk.variant, RiskVariant::EulacOvr) && self.loss != LossSpec::Ovr {
            return Err(LacError::invalid("the eulac estimator requires the ovr loss"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub pac_risk: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Per-example losses and score gradients at both the given and the ac label.
struct LossTable {
    values_true: Vec<f64>,
    values_ac: Vec<f64>,
    grads_true: Array2<f64>,
    grads_ac: Array2<f64>,
}

fn loss_table(loss: &LossSpec, scores: &Array2<f64>, labels: Option<&[usize]>) -> LossTable {
    let (rows, outputs) = scores.dim();
    let ac = outputs - 1;
    let mut t = LossTable {
        values_true: Vec::with_capacity(rows),
        values_ac: Vec::with_capacity(rows),
        grads_true: Array2::zeros((rows, outputs)),
        grads_ac: Array2::zeros((rows, outputs)),
    };
    let mut probs = vec![0.0; outputs];
    for (i, row) in scores.outer_iter().enumerate() {
        let s = row.as_slice().expect("standard layout");
        let mut g_ac = t.grads_ac.row_mut(i);
        t.values_ac
            .push(loss.eval_into(s, ac, &mut probs, g_ac.as_slice_mut().unwrap()));
        if let Some(labels) = labels {
            let mut g = t.grads_true.row_mut(i);
            t.values_true
                .push(loss.eval_into(s, labels[i], &mut probs, g.as_slice_mut().unwrap()));
        }
    }
    t
}

/// Training objective on one labeled/unlabeled batch and its gradient with
/// respect to the flat model parameters.
pub fn objective_and_grad(
    model: &Model,
    loss: &LossSpec,
    risk: &RiskConfig,
    labeled_x: ArrayView2<'_, f64>,
    labels: &[usize],
    unlabeled_x: ArrayView2<'_, f64>,
) -> Result<(Objective, Vec<f64>)> {
    if labels.len() != labeled_x.nrows() {
        return Err(LacError::Shape("labels and labeled rows differ".into()));
    }
    let k = model.outputs() - 1;
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(LacError::invalid(format!("labeled example with label {} > k", y + 1)));
    }
    let supervised = matches!(risk.variant, RiskVariant::Supervised);
    let lab_scores = model.forward(labeled_x)?;
    if lab_scores.iter().any(|v| !v.is_finite()) {
        return Err(LacError::invalid("non-finite scores"));
    }
    let lab = loss_table(loss, &lab_scores, Some(labels));
    let unl = if supervised {
        None
    } else {
        let s = model.forward(unlabeled_x)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LacError::invalid("non-finite scores"));
        }
        Some(loss_table(loss, &s, None))
    };
    let batch = LossBatch {
        labeled_true: lab.values_true,
        labeled_ac: lab.values_ac,
        labeled_class: labels.to_vec(),
        unlabeled_ac: unl.as_ref().map(|u| u.values_ac.clone()).unwrap_or_default(),
    };
    let obj = objective(&batch, risk)?;

    let mut grad_lab = lab.grads_true;
    for (i, mut row) in grad_lab.axis_iter_mut(Axis(0)).enumerate() {
        let wt = obj.labeled_true_weight[i];
        let wa = obj.labeled_ac_weight[i];
        row.zip_mut_with(&lab.grads_ac.row(i), |g, &ga| *g = wt * *g + wa * ga);
    }
    let mut grad = model.backward(labeled_x, grad_lab.view())?;
    if let Some(unl) = unl {
        let mut grad_unl = unl.grads_ac;
        for (mut row, &w) in grad_unl.axis_iter_mut(Axis(0)).zip(&obj.unlabeled_ac_weight) {
            row *= w;
        }
        let g2 = model.backward(unlabeled_x, grad_unl.view())?;
        for (a, b) in grad.iter_mut().zip(g2) {
            *a += b;
        }
    }
    Ok((obj, grad))
}

/// Trains a fresh model on the scenario's labeled and unlabeled splits.
///
/// With a batch size, each epoch shuffles both splits once and walks them in
/// `ceil((n + m) / batch_size)` aligned steps, so each step pairs labeled and
/// unlabeled chunks in proportion `n : m`. History values are the mean over
/// the epoch's steps, evaluated before each update.
pub fn train(scenario: &LacScenario, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let labels = scenario
        .labeled
        .labels()
        .ok_or_else(|| LacError::Scenario("labeled split has no labels".into()))?;
    let n = scenario.labeled.len();
    let m = scenario.unlabeled.len();
    if n == 0 {
        return Err(LacError::EmptyBatch("labeled"));
    }
    if m == 0 && !matches!(config.risk.variant, RiskVariant::Supervised) {
        return Err(LacError::EmptyBatch("unlabeled"));
    }
    let dim = scenario.dim();
    if scenario.unlabeled.dim() != dim && m > 0 {
        return Err(LacError::Shape("labeled and unlabeled feature dimensions differ".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(config.model, dim, scenario.k + 1, &mut rng);
    let mut adam = AdamState::new(model.params().len());

    let steps = match config.batch_size {
        None => 1,
        Some(b) => (n + m).div_ceil(b).clamp(1, n.min(m.max(1))),
    };
    let lx = scenario.labeled.features();
    let ux = scenario.unlabeled.features();
    let mut lab_order: Vec<usize> = (0..n).collect();
    let mut unl_order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if steps > 1 {
            lab_order.shuffle(&mut rng);
            unl_order.shuffle(&mut rng);
        }
        let mut acc = [0.0; 3];
        for step in 0..steps {
            let (obj, grad) = if steps == 1 {
                objective_and_grad(&model, &config.loss, &config.risk, lx, labels, ux)
            } else {
                let li = &lab_order[step * n / steps..(step + 1) * n / steps];
                let ui = &unl_order[step * m / steps..(step + 1) * m / steps];
                let bx = lx.select(Axis(0), li);
                let by: Vec<usize> = li.iter().map(|&i| labels[i]).collect();
                let bu = ux.select(Axis(0), ui);
                objective_and_grad(&model, &config.loss, &config.risk, bx.view(), &by, bu.view())
            }
            .map_err(|e| match e {
                LacError::InvalidArgument(msg) if msg == "non-finite scores" => {
                    LacError::Divergence { epoch, step }
                }
                other => other,
            })?;
            if !obj.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LacError::Divergence { epoch, step });
            }
            acc[0] += obj.value;
            acc[1] += obj.pac_risk;
            acc[2] += obj.penalty;
            adam_step(
                model.params_mut(),
                &grad,
                &mut adam,
                config.learning_rate,
                config.weight_decay,
            )?;
        }
        let s = steps as f64;
        history.push(EpochRecord {
            epoch,
            objective: acc[0] / s,
            pac_risk: acc[1] / s,
            penalty: acc[2] / s,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Writes the per-epoch history as CSV.
pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,objective,pac_risk,penalty\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.objective, r.pac_risk, r.penalty));
    }
    fs::write(path, out).map_err(|e| LacError::io(path, e))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: shapes, 64-bit parameters and the training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub k: usize,
    pub d: usize,
    pub h: Option<usize>,
    pub model: Model,
    pub train_config: TrainConfig,
}

impl Checkpoint {
    pub fn new(model: Model, train_config: TrainConfig) -> Self {
        let h = match model.spec() {
            ModelSpec::Linear => None,
            ModelSpec::Mlp { hidden } => Some(hidden),
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            k: model.outputs() - 1,
            d: model.dim(),
            h,
            model,
            train_config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| LacError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LacError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(LacError::Parse(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
