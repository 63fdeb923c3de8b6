use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LacError, Result};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear,
    Mlp { hidden: usize },
}

pub const DEFAULT_HIDDEN: usize = 64;

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelSpec::Linear => f.write_str("linear"),
            ModelSpec::Mlp { hidden } => write!(f, "mlp:h={hidden}"),
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = LacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(ModelSpec::Linear),
            "mlp" => Ok(ModelSpec::Mlp { hidden: DEFAULT_HIDDEN }),
            other => {
                let h = other
                    .strip_prefix("mlp:h=")
                    .and_then(|h| h.parse::<usize>().ok())
                    .filter(|&h| h >= 1)
                    .ok_or_else(|| LacError::Parse(format!("unknown model {other:?}")))?;
                Ok(ModelSpec::Mlp { hidden: h })
            }
        }
    }
}

/// Affine scores `X W^T + b`. Parameters are stored flat: `W` row-major
/// (`outputs x dim`) followed by `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    dim: usize,
    outputs: usize,
    params: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize, outputs: usize) -> Self {
        LinearModel {
            dim,
            outputs,
            params: vec![0.0; outputs * dim + outputs],
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let (outputs, dim) = weights.dim();
        if bias.len() != outputs {
            return Err(LacError::Shape(format!(
                "bias has {} entries for {outputs} outputs",
                bias.len()
            )));
        }
        let mut params: Vec<f64> = weights.iter().copied().collect();
        params.extend(bias.iter());
        Ok(LinearModel { dim, outputs, params })
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.outputs, self.dim), &self.params[..self.outputs * self.dim])
            .expect("parameter layout")
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.outputs * self.dim..])
    }
}

/// One hidden rectifier layer: `relu(X W1^T + b1) W2^T + b2`. Flat layout
/// `W1 (hidden x dim), b1, W2 (outputs x hidden), b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    dim: usize,
    hidden: usize,
    outputs: usize,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn zeros(dim: usize, hidden: usize, outputs: usize) -> Self {
        MlpModel {
            dim,
            hidden,
            outputs,
            params: vec![0.0; hidden * dim + hidden + outputs * hidden + outputs],
        }
    }

    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        let (hidden, dim) = w1.dim();
        let (outputs, h2) = w2.dim();
        if hidden == 0 || b1.len() != hidden || h2 != hidden || b2.len() != outputs {
            return Err(LacError::Shape("inconsistent MLP layer shapes".into()));
        }
        let mut params: Vec<f64> = w1.iter().copied().collect();
        params.extend(b1.iter());
        params.extend(w2.iter());
        params.extend(b2.iter());
        Ok(MlpModel {
            dim,
            hidden,
            outputs,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden * self.dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.outputs * self.hidden;
        [w1, b1, w2, w2 + self.outputs]
    }

    fn layers(&self) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>, ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let [o1, o2, o3, o4] = self.offsets();
        let p = &self.params;
        (
            ArrayView2::from_shape((self.hidden, self.dim), &p[..o1]).expect("layout"),
            ArrayView1::from(&p[o1..o2]),
            ArrayView2::from_shape((self.outputs, self.hidden), &p[o2..o3]).expect("layout"),
            ArrayView1::from(&p[o3..o4]),
        )
    }

    fn pre_activation(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (w1, b1, _, _) = self.layers();
        x.dot(&w1.t()) + b1
    }
}

/// A score model with `k + 1` outputs (last output = augmented class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    /// Random initialization, uniform in `+-1/sqrt(fan_in)` per layer.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, dim: usize, outputs: usize, rng: &mut R) -> Self {
        let mut uniform = |fan_in: usize, slots: &mut [f64]| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in slots {
                *v = rng.random_range(-bound..bound);
            }
        };
        match spec {
            ModelSpec::Linear => {
                let mut m = LinearModel::zeros(dim, outputs);
                uniform(dim, &mut m.params);
                Model::Linear(m)
            }
            ModelSpec::Mlp { hidden } => {
                let mut m = MlpModel::zeros(dim, hidden.max(1), outputs);
                let [_, o2, _, _] = m.offsets();
                let (first, second) = m.params.split_at_mut(o2);
                uniform(dim, first);
                uniform(m.hidden, second);
                Model::Mlp(m)
            }
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Linear(_) => ModelSpec::Linear,
            Model::Mlp(m) => ModelSpec::Mlp { hidden: m.hidden },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.dim,
            Model::Mlp(m) => m.dim,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Model::Linear(m) => m.outputs,
            Model::Mlp(m) => m.outputs,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Linear(m) => &m.params,
            Model::Mlp(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Linear(m) => &mut m.params,
            Model::Mlp(m) => &mut m.params,
        }
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(LacError::Shape(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Scores for every row of `x` (`rows x outputs`).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(match self {
            Model::Linear(m) => x.dot(&m.weights().t()) + m.bias(),
            Model::Mlp(m) => {
                let (_, _, w2, b2) = m.layers();
                let h = m.pre_activation(x).mapv_into(|v| v.max(0.0));
                h.dot(&w2.t()) + b2
            }
        })
    }

    /// Gradient of `sum_rows <grad_scores, forward(x)>` with respect to the
    /// flat parameter vector.
    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_scores: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if grad_scores.dim() != (x.nrows(), self.outputs()) {
            return Err(LacError::Shape(format!(
                "score gradient is {:?}, expected ({}, {})",
                grad_scores.dim(),
                x.nrows(),
                self.outputs()
            )));
        }
        let mut grad = vec![0.0; self.params().len()];
        match self {
            Model::Linear(m) => {
                let split = m.outputs * m.dim;
                let gw = grad_scores.t().dot(&x);
                grad[..split].copy_from_slice(gw.as_slice().expect("standard layout"));
                for (g, col) in grad[split..].iter_mut().zip(grad_scores.axis_iter(Axis(1))) {
                    *g = col.sum();
                }
            }
            Model::Mlp(m) => {
                let [o1, o2, o3, _] = m.offsets();
                let (_, _, w2, _) = m.layers();
                let pre = m.pre_activation(x);
                let h = pre.mapv(|v| v.max(0.0));
                let gw2 = grad_scores.t().dot(&h);
                grad[o2..o3].copy_from_slice(gw2.as_slice().expect("standard layout"));
                for (g, col) in grad[o3..].iter_mut().zip(grad_scores.axis_iter(Axis(1))) {
                    *g = col.sum();
                }
                let mut dh = grad_scores.dot(&w2);
                dh.zip_mut_with(&pre, |d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
                let gw1 = dh.t().dot(&x);
                grad[..o1].copy_from_slice(gw1.as_slice().expect("standard layout"));
                for (g, col) in grad[o1..o2].iter_mut().zip(dh.axis_iter(Axis(1))) {
                    *g = col.sum();
                }
            }
        }
        Ok(grad)
    }

    /// Scores for a single feature vector.
    pub fn score_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, row.len()), row).map_err(|e| LacError::Shape(e.to_string()))?;
        Ok(self.forward(x)?.slice(s![0, ..]).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_scores_zero() {
        let m = Model::Linear(LinearModel::zeros(3, 4));
        let s = m.forward(array![[1.0, 2.0, 3.0], [-1.0, 0.5, 9.0]].view()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        let m = Model::Mlp(MlpModel::zeros(3, 5, 4));
        assert!(m.forward(array![[1.0, 2.0, 3.0]].view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_arithmetic() {
        let m = Model::Linear(LinearModel::from_parts(array![[2.0], [-1.0]], array![0.0, 1.0]).unwrap());
        assert_eq!(m.score_row(&[3.0]).unwrap(), vec![6.0, -2.0]);
        assert!(m.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn mlp_hand_weights() {
        // h = relu([x1 - x2, -x1 + 2]) ; scores = [h1 + h2, 2 h1 - 1]
        let m = Model::Mlp(
            MlpModel::from_parts(
                array![[1.0, -1.0], [-1.0, 0.0]],
                array![0.0, 2.0],
                array![[1.0, 1.0], [2.0, 0.0]],
                array![0.0, -1.0],
            )
            .unwrap(),
        );
        // x = (3, 1): h = (2, 0) -> (2, 3)
        assert_eq!(m.score_row(&[3.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        // x = (0, 1): h = (0, 2) -> (2, -1)
        assert_eq!(m.score_row(&[0.0, 1.0]).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn backward_linear_outer_product() {
        let m = Model::Linear(LinearModel::zeros(2, 3));
        let x = array![[0.5, -2.0]];
        let g = array![[1.0, -3.0, 0.25]];
        let grad = m.backward(x.view(), g.view()).unwrap();
        let want = [0.5, -2.0, -1.5, 6.0, 0.125, -0.5, 1.0, -3.0, 0.25];
        assert_eq!(grad, want);
        let zero = m.backward(x.view(), Array2::zeros((1, 3)).view()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(m.backward(x.view(), Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn model_spec_strings() {
        assert_eq!("linear".parse::<ModelSpec>().unwrap(), ModelSpec::Linear);
        assert_eq!("mlp:h=16".parse::<ModelSpec>().unwrap(), ModelSpec::Mlp { hidden: 16 });
        assert_eq!("mlp".parse::<ModelSpec>().unwrap().to_string(), "mlp:h=64");
        assert!("mlp:h=0".parse::<ModelSpec>().is_err());
    }
}
