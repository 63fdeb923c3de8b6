//! Mixture-proportion estimation with kernel mean embeddings.
//!
//! The unlabeled sample is modeled as `theta * P_kc + (1 - theta) * P_ac`
//! with `P_kc` represented by the labeled sample. For a candidate proportion
//! `lambda` the residual embedding
//!
//! ```text
//! phi(lambda) = (mu_U - lambda * mu_L) / (1 - lambda)
//! ```
//!
//! is a valid distribution embedding, and therefore close to the convex hull
//! of the unlabeled points, only while `lambda <= theta`. The estimator
//! traces the RKHS distance from `phi(lambda)` to that hull over a grid and
//! returns the last grid point before the curve starts to climb.
//!
//! Past `theta` the unsquared distance grows like `c (lambda - theta) /
//! (1 - lambda)`, so the slope test runs on `(1 - lambda) * distance`, which
//! is flat before `theta` and linear after it.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{LacError, Result};

/// Slope threshold on `(1 - lambda) * distance`, calibrated on separated and
/// overlapping Gaussian mixtures (post-`theta` slopes there are 1.0 to 1.4).
pub const DEFAULT_SLOPE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FRANK_WOLFE_ITERS: usize = 500;
pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed { sigma: f64 },
    /// `scale` times the median pairwise distance of the pooled sample.
    Median { scale: f64 },
}

impl std::str::FromStr for Bandwidth {
    type Err = LacError;

    /// `0.8` or `median:1.5` (`median` alone means scale 1).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| LacError::Parse(format!("bad bandwidth {s:?}")))
        };
        match s.strip_prefix("median") {
            Some("") => Ok(Bandwidth::Median { scale: 1.0 }),
            Some(rest) => Ok(Bandwidth::Median {
                scale: parse(rest.strip_prefix(':').unwrap_or("x"))?,
            }),
            None => Ok(Bandwidth::Fixed { sigma: parse(s)? }),
        }
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Fixed { sigma } => write!(f, "{sigma}"),
            Bandwidth::Median { scale } => write!(f, "median:{scale}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    /// Increasing candidate proportions in `[0, 1)`.
    pub lambda_grid: Vec<f64>,
    pub frank_wolfe_iters: usize,
    pub slope_threshold: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let steps = (1.0 / DEFAULT_GRID_STEP).round() as usize;
        KernelConfig {
            bandwidth: Bandwidth::Median { scale: 1.0 },
            lambda_grid: (0..steps).map(|i| i as f64 * DEFAULT_GRID_STEP).collect(),
            frank_wolfe_iters: DEFAULT_FRANK_WOLFE_ITERS,
            slope_threshold: DEFAULT_SLOPE_THRESHOLD,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.len() < 2 {
            return Err(LacError::invalid("proportion grid needs at least two points"));
        }
        if self.lambda_grid.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(LacError::invalid("proportion grid must lie in [0,1)"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LacError::invalid("proportion grid must be increasing"));
        }
        if self.frank_wolfe_iters == 0 {
            return Err(LacError::invalid("frank_wolfe_iters must be positive"));
        }
        if !(self.slope_threshold > 0.0) {
            return Err(LacError::invalid("slope threshold must be positive"));
        }
        if let Bandwidth::Fixed { sigma } = self.bandwidth {
            if !(sigma > 0.0) {
                return Err(LacError::invalid("bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

/// RBF Gram matrix `exp(-|x_i - y_j|^2 / (2 sigma^2))`.
pub fn gram(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, sigma: f64) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(LacError::Shape(format!(
            "feature dimensions {} and {} differ",
            x.ncols(),
            y.ncols()
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LacError::DegenerateKernel(format!("bandwidth {sigma}")));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let xn: Array1<f64> = x.map_axis(Axis(1), |r| r.dot(&r));
    let yn: Array1<f64> = y.map_axis(Axis(1), |r| r.dot(&r));
    let mut g = x.dot(&y.t());
    for ((i, j), v) in g.indexed_iter_mut() {
        let d2 = (xn[i] + yn[j] - 2.0 * *v).max(0.0);
        *v = (-gamma * d2).exp();
    }
    Ok(g)
}

/// Median pairwise Euclidean distance over the pooled rows.
pub fn median_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let pooled = ndarray::concatenate(Axis(0), &[a, b]).map_err(|e| LacError::Shape(e.to_string()))?;
    let n = pooled.nrows();
    if n < 2 {
        return Err(LacError::DegenerateKernel("fewer than two points".into()));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ri = pooled.row(i);
        for j in (i + 1)..n {
            let d2: f64 = ri.iter().zip(pooled.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            dists.push(d2);
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(m.sqrt())
}

fn resolve_bandwidth(
    bandwidth: Bandwidth,
    labeled: ArrayView2<'_, f64>,
    unlabeled: ArrayView2<'_, f64>,
) -> Result<f64> {
    let sigma = match bandwidth {
        Bandwidth::Fixed { sigma } => sigma,
        Bandwidth::Median { scale } => scale * median_distance(labeled, unlabeled)?,
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LacError::DegenerateKernel(format!(
            "bandwidth resolved to {sigma} (duplicate data?)"
        )));
    }
    Ok(sigma)
}

/// Summary statistics of the three Gram matrices that do not depend on the
/// candidate proportion.
struct EmbeddingStats<'a> {
    g_uu: &'a Array2<f64>,
    uu_col_mean: Array1<f64>,
    ul_row_mean: Array1<f64>,
    uu_mean: f64,
    ul_mean: f64,
    ll_mean: f64,
}

impl<'a> EmbeddingStats<'a> {
    fn new(g_uu: &'a Array2<f64>, g_ul: &Array2<f64>, g_ll: &Array2<f64>) -> Result<Self> {
        let m = g_uu.nrows();
        if m == 0 || g_ll.nrows() == 0 {
            return Err(LacError::EmptyBatch("kernel sample"));
        }
        if g_uu.ncols() != m || g_ul.nrows() != m || g_ul.ncols() != g_ll.nrows() || !g_ll.is_square() {
            return Err(LacError::Shape("inconsistent Gram matrices".into()));
        }
        Ok(EmbeddingStats {
            g_uu,
            uu_col_mean: g_uu.mean_axis(Axis(0)).expect("non-empty"),
            ul_row_mean: g_ul.mean_axis(Axis(1)).expect("non-empty"),
            uu_mean: g_uu.mean().expect("non-empty"),
            ul_mean: g_ul.mean().expect("non-empty"),
            ll_mean: g_ll.mean().expect("non-empty"),
        })
    }

    /// Squared distance from `phi(lambda)` to the hull of the unlabeled
    /// embeddings, by Frank-Wolfe with exact line search from uniform weights.
    fn distance(&self, lambda: f64, iters: usize) -> f64 {
        let m = self.g_uu.nrows();
        let c = 1.0 - lambda;
        let target_sq =
            (self.uu_mean - 2.0 * lambda * self.ul_mean + lambda * lambda * self.ll_mean) / (c * c);
        let a: Array1<f64> = (&self.uu_col_mean - &(lambda * &self.ul_row_mean)) / c;

        let mut w = Array1::from_elem(m, 1.0 / m as f64);
        let mut gw = self.uu_col_mean.clone();
        let mut wgw = self.uu_mean;
        let mut aw = a.sum() / m as f64;
        for _ in 0..iters {
            // gradient of the objective is 2 (G w - a)
            let mut best = 0;
            let mut best_val = f64::INFINITY;
            for j in 0..m {
                let v = gw[j] - a[j];
                if v < best_val {
                    best_val = v;
                    best = j;
                }
            }
            let dir_slope = best_val - (wgw - aw);
            if dir_slope >= -1e-15 {
                break;
            }
            let curvature = self.g_uu[[best, best]] - 2.0 * gw[best] + wgw;
            let step = if curvature > 0.0 {
                (-dir_slope / curvature).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let col = self.g_uu.column(best);
            let keep = 1.0 - step;
            w *= keep;
            w[best] += step;
            let gw_best = gw[best];
            gw.zip_mut_with(&col, |g, &cj| *g = keep * *g + step * cj);
            wgw = keep * keep * wgw + 2.0 * keep * step * gw_best + step * step * self.g_uu[[best, best]];
            aw = keep * aw + step * a[best];
        }
        (target_sq - 2.0 * aw + wgw).max(0.0)
    }
}

/// Squared RKHS distance between `(mu_U - lambda mu_L) / (1 - lambda)` and
/// the convex hull of the unlabeled embeddings. `gram_ul` is
/// unlabeled-by-labeled.
pub fn km_distance(
    lambda: f64,
    gram_uu: &Array2<f64>,
    gram_ul: &Array2<f64>,
    gram_ll: &Array2<f64>,
    frank_wolfe_iters: usize,
) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(LacError::invalid(format!("lambda {lambda} outside [0,1)")));
    }
    let stats = EmbeddingStats::new(gram_uu, gram_ul, gram_ll)?;
    Ok(stats.distance(lambda, frank_wolfe_iters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub bandwidth: f64,
    /// `(lambda, squared distance)` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

impl ThetaEstimate {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("lambda,distance\n");
        for (l, d) in &self.curve {
            out.push_str(&format!("{l:?},{d:?}\n"));
        }
        out
    }
}

/// Estimates the known-class proportion of `unlabeled` relative to
/// `labeled`.
pub fn estimate_theta(
    labeled: ArrayView2<'_, f64>,
    unlabeled: ArrayView2<'_, f64>,
    config: &KernelConfig,
) -> Result<ThetaEstimate> {
    config.validate()?;
    if labeled.nrows() == 0 {
        return Err(LacError::EmptyBatch("labeled"));
    }
    if unlabeled.nrows() == 0 {
        return Err(LacError::EmptyBatch("unlabeled"));
    }
    let sigma = resolve_bandwidth(config.bandwidth, labeled, unlabeled)?;
    let g_uu = gram(unlabeled, unlabeled, sigma)?;
    let g_ul = gram(unlabeled, labeled, sigma)?;
    let g_ll = gram(labeled, labeled, sigma)?;
    let stats = EmbeddingStats::new(&g_uu, &g_ul, &g_ll)?;

    let curve: Vec<(f64, f64)> = config
        .lambda_grid
        .iter()
        .map(|&l| (l, stats.distance(l, config.frank_wolfe_iters)))
        .collect();
    let mut theta = *config.lambda_grid.last().expect("validated");
    let scaled = |(l, d): (f64, f64)| (1.0 - l) * d.sqrt();
    for w in curve.windows(2) {
        let slope = (scaled(w[1]) - scaled(w[0])) / (w[1].0 - w[0].0);
        if slope > config.slope_threshold {
            theta = w[0].0;
            break;
        }
    }
    Ok(ThetaEstimate {
        theta: theta.clamp(0.0, 1.0),
        bandwidth: sigma,
        curve,
    })
}
