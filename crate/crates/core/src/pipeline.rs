//! End-to-end experiment pipeline: scenes -> dataset -> training ->
//! held-out-set evaluation. The command-line binary and the integration
//! tests drive experiments exclusively through this module so both take the
//! identical code path.

use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, DatasetConfig, DatasetSplit, Sample, Scene};
use crate::error::Result;
use crate::metrics::{evaluate, Metrics, Prediction};
use crate::nn::{
    argmax, build_architecture, train, ArchLabel, EpochStats, Example, Network, TrainConfig,
};
use crate::scene::{ClassLabel, NUM_CLASSES};

/// Everything one experiment run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub arch: ArchLabel,
    /// Forces every stage onto a single thread, overriding `train.threads`.
    /// Multi-threaded runs produce the same numbers; this mode exists so
    /// reproducibility checks do not depend on that guarantee.
    pub strict_deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            arch: ArchLabel::Bl,
            strict_deterministic: false,
        }
    }
}

/// The results of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The trained network (the best-validation snapshot when a validation
    /// split exists).
    pub network: Network,
    pub history: Vec<EpochStats>,
    /// Per-sample classifications of the held-out test split.
    pub predictions: Vec<Prediction>,
    pub metrics: Metrics,
}

/// Runs the trained network over samples, keeping each sample's track and
/// frame provenance so metrics can aggregate per track.
pub fn classify_samples(
    net: &Network,
    samples: &[Sample],
    normalization: f64,
) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| {
            let output = net.forward(&s.input(normalization))?;
            let mut probabilities = [0.0; NUM_CLASSES];
            probabilities.copy_from_slice(output.as_slice());
            Ok(Prediction {
                track_id: s.track_id,
                frame_index: s.frame_index,
                true_class: s.class,
                predicted: ClassLabel::from_index(argmax(output.as_slice()))?,
                probabilities,
            })
        })
        .collect()
}

/// Trains on an already-built dataset and evaluates on its test split.
pub fn run_on_dataset(split: &DatasetSplit, cfg: &RunConfig) -> Result<RunOutcome> {
    let mut train_cfg = cfg.train.clone();
    if cfg.strict_deterministic {
        train_cfg.threads = 1;
    }
    let mut network = build_architecture(cfg.arch, split.representation.channels())?;
    let history = train(&mut network, &split.train, &split.val, &train_cfg)?;
    let predictions = classify_samples(&network, &split.test, train_cfg.normalization)?;
    let metrics = evaluate(&predictions)?;
    Ok(RunOutcome {
        network,
        history,
        predictions,
        metrics,
    })
}

/// The full pipeline: dataset construction, training, evaluation.
pub fn run_pipeline(
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    cfg: &RunConfig,
) -> Result<RunOutcome> {
    let split = build_dataset(train_scenes, test_scenes, &cfg.dataset)?;
    run_on_dataset(&split, cfg)
}
