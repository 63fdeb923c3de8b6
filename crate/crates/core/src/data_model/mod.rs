//! Datasets, CSV ingestion and construction of augmented-class scenarios.

mod dataset;
mod scenario;

pub use dataset::{load_csv, Dataset, LoadedCsv, LABEL_COLUMN};
pub use scenario::{
    apply_prior_shift, load_scenario, make_scenario, make_synthetic_gaussians, save_scenario,
    ClassMapping, LacScenario, ScenarioConfig, ScenarioMeta, SplitCounts, SplitIndices,
    SyntheticSpec, LABELED_FILE, META_FILE, TEST_FILE, UNLABELED_FILE,
};
