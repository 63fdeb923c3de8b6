use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{load_csv, Dataset, LABEL_COLUMN};
use crate::error::{LacError, Result};

/// Isotropic Gaussian classes sharing one standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub means: Vec<Vec<f64>>,
    pub std_dev: f64,
}

impl SyntheticSpec {
    /// `classes` means evenly spaced on a circle of `radius` in the first two
    /// coordinates of a `dim`-dimensional space.
    pub fn circle(classes: usize, radius: f64, dim: usize, std_dev: f64) -> Self {
        let means = (0..classes)
            .map(|c| {
                let angle = 2.0 * PI * c as f64 / classes as f64;
                let mut m = vec![0.0; dim.max(2)];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect();
        SyntheticSpec { means, std_dev }
    }

    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    fn validate(&self) -> Result<usize> {
        if !(self.std_dev > 0.0 && self.std_dev.is_finite()) {
            return Err(LacError::invalid(format!(
                "standard deviation must be positive, got {}",
                self.std_dev
            )));
        }
        let dim = self
            .means
            .first()
            .map(Vec::len)
            .ok_or_else(|| LacError::invalid("synthetic spec has no classes"))?;
        if dim == 0 {
            return Err(LacError::invalid("synthetic means have dimension 0"));
        }
        if let Some(c) = self.means.iter().position(|m| m.len() != dim) {
            return Err(LacError::Shape(format!(
                "mean of class {} has dimension {}, expected {dim}",
                c + 1,
                self.means[c].len()
            )));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LacError::invalid("non-finite synthetic mean"));
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// One-based ids of the known classes, in the order they are relabeled.
    pub known_class_ids: Vec<usize>,
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub n_test: usize,
    /// Known-class mass of the test distribution. `None` keeps the base
    /// class frequencies (uniform for synthetic data).
    pub theta: Option<f64>,
    pub prior_shift_alpha: f64,
    pub synthetic: Option<SyntheticSpec>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(known_class_ids: Vec<usize>, counts: (usize, usize, usize), seed: u64) -> Self {
        ScenarioConfig {
            known_class_ids,
            n_labeled: counts.0,
            m_unlabeled: counts.1,
            n_test: counts.2,
            theta: None,
            prior_shift_alpha: 0.0,
            synthetic: None,
            seed,
        }
    }

    fn validate(&self, available: usize) -> Result<()> {
        if self.known_class_ids.is_empty() {
            return Err(LacError::Scenario("no known classes".into()));
        }
        let unique: BTreeSet<_> = self.known_class_ids.iter().collect();
        if unique.len() != self.known_class_ids.len() {
            return Err(LacError::Scenario("duplicate known class id".into()));
        }
        if let Some(&c) = self
            .known_class_ids
            .iter()
            .find(|&&c| c == 0 || c > available)
        {
            return Err(LacError::Scenario(format!(
                "known class {c} outside 1..={available}"
            )));
        }
        if unique.len() >= available {
            return Err(LacError::Scenario(
                "known classes cover every class; at least one augmented class is required".into(),
            ));
        }
        if self.n_labeled == 0 || self.m_unlabeled == 0 || self.n_test == 0 {
            return Err(LacError::Scenario("split sizes must be positive".into()));
        }
        if let Some(theta) = self.theta {
            if !(0.0..=1.0).contains(&theta) {
                return Err(LacError::Scenario(format!("theta {theta} outside [0,1]")));
            }
        }
        if !(0.0..1.0).contains(&self.prior_shift_alpha) {
            return Err(LacError::Scenario(format!(
                "prior shift alpha {} outside [0,1)",
                self.prior_shift_alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMapping {
    pub original: String,
    /// One-based scenario label; `k + 1` for every augmented class.
    pub label: usize,
}

/// Row indices into the source dataset used by each split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LacScenario {
    /// Known-class examples, labels `0..k`.
    pub labeled: Dataset,
    /// Draws from the test distribution, labels discarded.
    pub unlabeled: Dataset,
    /// Held-out draws from the test distribution, labels `0..=k` (`k` = ac).
    pub test: Dataset,
    pub k: usize,
    pub theta_true: Option<f64>,
    pub class_map: Vec<ClassMapping>,
    /// Per-known-class prior in the test distribution (sums to the
    /// configured known mass).
    pub known_priors: Vec<f64>,
    pub seed: u64,
    pub source_indices: Option<SplitIndices>,
}

impl LacScenario {
    /// Zero-based label of the augmented class.
    pub fn ac(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.labeled.dim()
    }
}

/// Multiplies base known-class priors by the shift pattern
/// `{1-a, 1-a/2, 1, 1+a/2, 1+a/2}` and rescales so the total known mass is
/// unchanged. For `k != 5` the pattern is linearly interpolated over class
/// positions.
pub fn apply_prior_shift(base: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(LacError::invalid(format!("alpha {alpha} outside [0,1)")));
    }
    if base.iter().any(|p| !(*p >= 0.0)) {
        return Err(LacError::invalid("negative base prior"));
    }
    let pattern = [1.0 - alpha, 1.0 - alpha / 2.0, 1.0, 1.0 + alpha / 2.0, 1.0 + alpha / 2.0];
    let k = base.len();
    let multiplier = |i: usize| -> f64 {
        if k == 1 {
            return pattern[0];
        }
        let pos = i as f64 * 4.0 / (k - 1) as f64;
        let lo = (pos.floor() as usize).min(3);
        let frac = pos - lo as f64;
        pattern[lo] * (1.0 - frac) + pattern[lo + 1] * frac
    };
    let shifted: Vec<f64> = base.iter().enumerate().map(|(i, p)| p * multiplier(i)).collect();
    let total: f64 = base.iter().sum();
    let shifted_total: f64 = shifted.iter().sum();
    if shifted_total <= 0.0 {
        return Ok(base.to_vec());
    }
    Ok(shifted.iter().map(|p| p * total / shifted_total).collect())
}

/// Source of examples for a given original class.
trait ExampleSource {
    fn draw(&mut self, class: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Option<usize>)>;
    fn dim(&self) -> usize;
}

struct PoolSource<'a> {
    data: &'a Dataset,
    pools: Vec<Vec<usize>>,
    required: Vec<usize>,
}

impl ExampleSource for PoolSource<'_> {
    fn draw(&mut self, class: usize, _rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Option<usize>)> {
        self.required[class] += 1;
        let idx = self.pools[class].pop().ok_or_else(|| LacError::InsufficientClass {
            class: class + 1,
            available: self.data.indices_by_class()[class].len(),
            required: self.required[class],
        })?;
        Ok((self.data.features().row(idx).to_vec(), Some(idx)))
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }
}

struct GaussianSource<'a> {
    spec: &'a SyntheticSpec,
}

impl ExampleSource for GaussianSource<'_> {
    fn draw(&mut self, class: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Option<usize>)> {
        let row = self.spec.means[class]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.spec.std_dev * z
            })
            .collect();
        Ok((row, None))
    }

    fn dim(&self) -> usize {
        self.spec.means[0].len()
    }
}

/// Draws a LAC scenario from a labeled source dataset, sampling without
/// replacement.
pub fn make_scenario(source: &Dataset, config: &ScenarioConfig) -> Result<LacScenario> {
    if source.labels().is_none() {
        return Err(LacError::Scenario("source dataset has no labels".into()));
    }
    let available = source.class_count();
    config.validate(available)?;
    let groups = source.indices_by_class();
    let base: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let names: Vec<String> = (1..=available).map(|c| c.to_string()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pools = groups;
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut src = PoolSource {
        data: source,
        pools,
        required: vec![0; available],
    };
    build(&mut src, &base, &names, config, &mut rng)
}

/// Generates a scenario from isotropic Gaussian classes. Base class priors
/// are uniform.
pub fn make_synthetic_gaussians(config: &ScenarioConfig) -> Result<LacScenario> {
    let spec = config
        .synthetic
        .as_ref()
        .ok_or_else(|| LacError::Scenario("synthetic spec missing".into()))?;
    spec.validate()?;
    let available = spec.class_count();
    config.validate(available)?;
    let base = vec![1.0; available];
    let names: Vec<String> = (1..=available).map(|c| c.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut src = GaussianSource { spec };
    build(&mut src, &base, &names, config, &mut rng)
}

fn build(
    src: &mut dyn ExampleSource,
    base_weights: &[f64],
    names: &[String],
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LacScenario> {
    let available = base_weights.len();
    let k = config.known_class_ids.len();
    let known: Vec<usize> = config.known_class_ids.iter().map(|c| c - 1).collect();
    let mut relabel = vec![k; available];
    for (new, &orig) in known.iter().enumerate() {
        relabel[orig] = new;
    }
    let is_known = |c: usize| relabel[c] < k;

    let total: f64 = base_weights.iter().sum();
    let known_base: Vec<f64> = known.iter().map(|&c| base_weights[c] / total).collect();
    let known_mass: f64 = known_base.iter().sum();
    let theta = config.theta.unwrap_or(known_mass);
    let aug_mass = 1.0 - known_mass;

    // Labeled split follows the base known-class frequencies.
    let labeled_priors: Vec<f64> = known_base.iter().map(|p| p / known_mass).collect();
    let shifted = apply_prior_shift(&labeled_priors, config.prior_shift_alpha)?;
    let known_priors: Vec<f64> = shifted.iter().map(|p| p * theta).collect();
    let mut test_priors = vec![0.0; available];
    for c in 0..available {
        test_priors[c] = if is_known(c) {
            known_priors[relabel[c]]
        } else if aug_mass > 0.0 {
            (1.0 - theta) * base_weights[c] / total / aug_mass
        } else {
            0.0
        };
    }
    let mut labeled_weights = vec![0.0; available];
    for (i, &c) in known.iter().enumerate() {
        labeled_weights[c] = labeled_priors[i];
    }

    let labeled_dist = WeightedIndex::new(&labeled_weights)
        .map_err(|e| LacError::Scenario(format!("labeled priors: {e}")))?;
    let test_dist = WeightedIndex::new(&test_priors)
        .map_err(|e| LacError::Scenario(format!("test priors: {e}")))?;

    let dim = src.dim();
    let mut draw_split = |count: usize,
                          dist: &WeightedIndex<f64>,
                          rng: &mut ChaCha8Rng|
     -> Result<(Array2<f64>, Vec<usize>, Vec<usize>)> {
        let classes: Vec<usize> = (0..count).map(|_| dist.sample(rng)).collect();
        let mut values = Vec::with_capacity(count * dim);
        let mut indices = Vec::new();
        for &c in &classes {
            let (row, idx) = src.draw(c, rng)?;
            values.extend(row);
            indices.extend(idx);
        }
        let x = Array2::from_shape_vec((count, dim), values)
            .map_err(|e| LacError::Shape(e.to_string()))?;
        Ok((x, classes, indices))
    };

    let (xl, cl, il) = draw_split(config.n_labeled, &labeled_dist, rng)?;
    let (xu, cu, iu) = draw_split(config.m_unlabeled, &test_dist, rng)?;
    let (xt, ct, it) = draw_split(config.n_test, &test_dist, rng)?;

    let known_in_unlabeled = cu.iter().filter(|&&c| is_known(c)).count();
    let theta_true = known_in_unlabeled as f64 / config.m_unlabeled as f64;

    let labeled = Dataset::new(xl, Some(cl.iter().map(|&c| relabel[c]).collect()), k)?;
    let unlabeled = Dataset::unlabeled(xu)?;
    let test = Dataset::new(xt, Some(ct.iter().map(|&c| relabel[c]).collect()), k + 1)?;

    let class_map = (0..available)
        .map(|c| ClassMapping {
            original: names[c].clone(),
            label: relabel[c] + 1,
        })
        .collect();
    let source_indices = (!il.is_empty()).then_some(SplitIndices {
        labeled: il,
        unlabeled: iu,
        test: it,
    });

    Ok(LacScenario {
        labeled,
        unlabeled,
        test,
        k,
        theta_true: Some(theta_true),
        class_map,
        known_priors,
        seed: config.seed,
        source_indices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
}

/// Contents of `meta.json` in a scenario directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub k: usize,
    pub dim: usize,
    pub theta_true: Option<f64>,
    pub class_map: Vec<ClassMapping>,
    pub known_priors: Vec<f64>,
    pub seed: u64,
    pub counts: SplitCounts,
}

pub const LABELED_FILE: &str = "labeled.csv";
pub const UNLABELED_FILE: &str = "unlabeled.csv";
pub const TEST_FILE: &str = "test.csv";
pub const META_FILE: &str = "meta.json";

/// Writes `labeled.csv`, `unlabeled.csv`, `test.csv` and `meta.json`.
pub fn save_scenario(scenario: &LacScenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LacError::io(dir, e))?;
    scenario.labeled.write_csv(&dir.join(LABELED_FILE))?;
    scenario.unlabeled.write_csv(&dir.join(UNLABELED_FILE))?;
    scenario.test.write_csv(&dir.join(TEST_FILE))?;
    let meta = ScenarioMeta {
        k: scenario.k,
        dim: scenario.dim(),
        theta_true: scenario.theta_true,
        class_map: scenario.class_map.clone(),
        known_priors: scenario.known_priors.clone(),
        seed: scenario.seed,
        counts: SplitCounts {
            labeled: scenario.labeled.len(),
            unlabeled: scenario.unlabeled.len(),
            test: scenario.test.len(),
        },
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    let path = dir.join(META_FILE);
    fs::write(&path, json).map_err(|e| LacError::io(path, e))
}

pub fn load_scenario(dir: &Path) -> Result<LacScenario> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LacError::io(&path, e))?;
    let meta: ScenarioMeta = serde_json::from_str(&text)?;
    let labeled = read_numbered(&dir.join(LABELED_FILE), meta.k)?;
    let unlabeled = load_csv(&dir.join(UNLABELED_FILE), None)?.dataset;
    let test = read_numbered(&dir.join(TEST_FILE), meta.k + 1)?;
    Ok(LacScenario {
        labeled,
        unlabeled,
        test,
        k: meta.k,
        theta_true: meta.theta_true,
        class_map: meta.class_map,
        known_priors: meta.known_priors,
        seed: meta.seed,
        source_indices: None,
    })
}

/// Reads a split whose label column holds one-based integer labels.
fn read_numbered(path: &Path, class_count: usize) -> Result<Dataset> {
    let loaded = load_csv(path, Some(LABEL_COLUMN))?;
    let ids: Vec<usize> = loaded
        .label_names
        .iter()
        .map(|s| match s.parse::<usize>() {
            Ok(v) if v >= 1 && v <= class_count => Ok(v - 1),
            _ => Err(LacError::Csv {
                path: path.to_path_buf(),
                message: format!("label {s:?} outside 1..={class_count}"),
            }),
        })
        .collect::<Result<_>>()?;
    let ds = loaded.dataset;
    let labels = ds.labels().unwrap().iter().map(|&i| ids[i]).collect();
    Dataset::new(ds.features().to_owned(), Some(labels), class_count)
}
