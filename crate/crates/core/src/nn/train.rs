//! Mini-batch training with Adam and cross-entropy loss.
//!
//! Determinism: weight init and the per-epoch shuffle are driven by fixed
//! seeds, and batch gradients are summed in fixed 16-sample chunks that are
//! reduced in index order. Multi-threaded runs distribute chunks but keep
//! the same floating-point summation order, so the trained weights are
//! identical for any thread count.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{argmax, Network, Tensor};

/// Fixed reduction granularity for batch gradients (see module docs).
const GRAD_CHUNK: usize = 16;

/// Anything the trainer can consume: a classifier input plus its label.
pub trait Example: Sync {
    /// Builds the network input, dividing raw per-pixel counts by
    /// `normalization`.
    fn input(&self, normalization: f64) -> Tensor;
    /// Target class in `0..4`.
    fn class_index(&self) -> usize;
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Divisor applied to raw per-pixel event counts before they enter the
    /// network.
    pub normalization: f64,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Seed for the per-epoch shuffle of the training set.
    pub shuffle_seed: u64,
    /// Worker threads for gradient computation; 0 picks the machine's
    /// available parallelism. Results do not depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            normalization: 15.0,
            init_seed: 7,
            shuffle_seed: 13,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive and finite"));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::validation(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if !(self.normalization > 0.0) {
            return Err(Error::validation("normalization must be positive"));
        }
        Ok(())
    }

    fn effective_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// Adam optimizer state over one flat parameter vector.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, cfg: &TrainConfig) -> Adam {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step_count: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One bias-corrected update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Cross-entropy against a hard target: loss and gradient with respect to
/// the probability vector (zero except `-1 / p[target]` at the target).
pub fn cross_entropy(probs: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < probs.len());
    let mut grad = vec![0.0; probs.len()];
    grad[target] = -1.0 / probs[target];
    (-probs[target].ln(), grad)
}

/// Mean per-class accuracy over `(true, predicted)` pairs, averaged over the
/// classes that actually appear. Returns NaN when `pairs` is empty.
pub fn balanced_accuracy_lenient(pairs: &[(usize, usize)], num_classes: usize) -> f64 {
    let mut correct = vec![0u64; num_classes];
    let mut total = vec![0u64; num_classes];
    for &(truth, pred) in pairs {
        total[truth] += 1;
        if truth == pred {
            correct[truth] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..num_classes {
        if total[c] > 0 {
            sum += correct[c] as f64 / total[c] as f64;
            present += 1;
        }
    }
    if present == 0 {
        f64::NAN
    } else {
        sum / present as f64
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Balanced accuracy on the validation split as a fraction in `[0, 1]`;
    /// NaN when there is no validation data.
    pub val_balanced_accuracy: f64,
}

/// Writes the history as `epoch,train_loss,val_balanced_acc` CSV.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,train_loss,val_balanced_acc")?;
    for row in history {
        writeln!(out, "{},{},{}", row.epoch, row.train_loss, row.val_balanced_accuracy)?;
    }
    out.flush()?;
    Ok(())
}

/// Sum of per-sample losses and gradients for `indices`, reduced in fixed
/// chunk order (see module docs).
fn batch_grad_sum<E: Example>(
    net: &Network,
    set: &[E],
    indices: &[usize],
    normalization: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Vec<f64>)> {
    let chunk_result = |chunk: &[usize]| -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grads = vec![0.0; net.param_count()];
        for &i in chunk {
            let input = set[i].input(normalization);
            let cache = net.forward_cached(&input)?;
            let (sample_loss, grad_out) = cross_entropy(
                cache.output().as_slice(),
                set[i].class_index(),
            );
            let (sample_grads, _) = net.backward(&cache, &grad_out);
            loss += sample_loss;
            for (g, s) in grads.iter_mut().zip(&sample_grads) {
                *g += s;
            }
        }
        Ok((loss, grads))
    };

    let chunks: Vec<(f64, Vec<f64>)> = match pool {
        Some(pool) => pool.install(|| {
            indices
                .par_chunks(GRAD_CHUNK)
                .map(chunk_result)
                .collect::<Result<Vec<_>>>()
        })?,
        None => indices
            .chunks(GRAD_CHUNK)
            .map(chunk_result)
            .collect::<Result<Vec<_>>>()?,
    };

    let mut loss = 0.0;
    let mut grads = vec![0.0; net.param_count()];
    for (chunk_loss, chunk_grads) in chunks {
        loss += chunk_loss;
        for (g, c) in grads.iter_mut().zip(&chunk_grads) {
            *g += c;
        }
    }
    Ok((loss, grads))
}

/// Predicted class per example; parallelism never changes the result.
fn predictions<E: Example>(
    net: &Network,
    set: &[E],
    normalization: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<(usize, usize)>> {
    let one = |ex: &E| -> Result<(usize, usize)> {
        let out = net.forward(&ex.input(normalization))?;
        Ok((ex.class_index(), argmax(out.as_slice())))
    };
    match pool {
        Some(pool) => pool.install(|| set.par_iter().map(one).collect()),
        None => set.iter().map(one).collect(),
    }
}

/// Trains `net` from scratch: reinitializes weights from `cfg.init_seed`,
/// runs Adam for `cfg.epochs`, and finishes with the weights of the epoch
/// whose validation balanced accuracy was highest (strictly-greater
/// comparison, so the earliest best epoch wins; the final weights stay when
/// there is no validation data). A non-finite training loss aborts with
/// [`Error::Training`].
pub fn train<E: Example>(
    net: &mut Network,
    train_set: &[E],
    val_set: &[E],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let out_dim = net
        .output_shape()
        .flat_len()
        .ok_or_else(|| Error::shape("classifier output must be flat"))?;
    for ex in train_set.iter().chain(val_set) {
        if ex.class_index() >= out_dim {
            return Err(Error::validation(format!(
                "class index {} out of range for a {out_dim}-way classifier",
                ex.class_index()
            )));
        }
    }

    let threads = cfg.effective_threads();
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::validation(format!("failed to start {threads} worker threads: {e}")))?,
        )
    } else {
        None
    };

    net.randomize(cfg.init_seed);
    let mut params = net.params();
    let mut adam = Adam::new(params.len(), cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (batch_loss, mut grads) =
                batch_grad_sum(net, train_set, batch, cfg.normalization, pool.as_ref())?;
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                *g *= scale;
            }
            adam.step(&mut params, &grads);
            net.set_params(&params)?;
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_acc = if val_set.is_empty() {
            f64::NAN
        } else {
            let pairs = predictions(net, val_set, cfg.normalization, pool.as_ref())?;
            balanced_accuracy_lenient(&pairs, out_dim)
        };
        if val_acc.is_finite() && best.as_ref().map_or(true, |(b, _)| val_acc > *b) {
            best = Some((val_acc, params.clone()));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_balanced_accuracy: val_acc,
        });
    }

    if let Some((_, snapshot)) = best {
        net.set_params(&snapshot)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Shape};

    #[test]
    fn adam_first_step_moves_by_the_learning_rate_in_sign_direction() {
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut adam = Adam::new(3, &cfg);
        let mut params = vec![0.0, 0.0, 0.0];
        adam.step(&mut params, &[0.5, -0.25, 3.0]);
        assert!((params[0] + 0.1).abs() < 1e-7, "{params:?}");
        assert!((params[1] - 0.1).abs() < 1e-7, "{params:?}");
        assert!((params[2] + 0.1).abs() < 1e-7, "{params:?}");
    }

    #[test]
    fn adam_leaves_zero_gradient_params_alone() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2, &cfg);
        let mut params = vec![1.5, -2.5];
        adam.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![1.5, -2.5]);
    }

    #[test]
    fn cross_entropy_gradient_is_minus_reciprocal_at_the_target() {
        let (loss, grad) = cross_entropy(&[0.25, 0.5, 0.125, 0.125], 1);
        assert!((loss - 0.5f64.ln().abs()).abs() < 1e-15);
        assert_eq!(grad[0], 0.0);
        assert!((grad[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_accuracy_averages_per_class() {
        // Class 0: 2/2, class 1: 1/2 -> 0.75. Classes 2 and 3 absent.
        let pairs = [(0, 0), (0, 0), (1, 1), (1, 0)];
        let acc = balanced_accuracy_lenient(&pairs, 4);
        assert!((acc - 0.75).abs() < 1e-12);
        assert!(balanced_accuracy_lenient(&[], 4).is_nan());
    }

    struct Toy {
        values: [f64; 4],
        class: usize,
    }

    impl Example for Toy {
        fn input(&self, _normalization: f64) -> Tensor {
            Tensor::from_vec(Shape::Flat(4), self.values.to_vec()).unwrap()
        }
        fn class_index(&self) -> usize {
            self.class
        }
    }

    fn toy_set() -> Vec<Toy> {
        // Two noisy examples per class, each dominated by one coordinate.
        let mut set = Vec::new();
        for class in 0..4 {
            for (jitter_index, jitter) in [(0usize, 0.1), (1, -0.1)] {
                let mut values = [0.0; 4];
                values[class] = 1.0;
                values[(class + 1 + jitter_index) % 4] = jitter;
                set.push(Toy { values, class });
            }
        }
        set
    }

    fn toy_net() -> Network {
        Network::new(
            Shape::Flat(4),
            &[
                LayerSpec::Dense { units: 8, activation: Activation::Relu },
                LayerSpec::Dense { units: 4, activation: Activation::Linear },
                LayerSpec::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn training_separates_a_separable_toy_problem() {
        let set = toy_set();
        let mut net = toy_net();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let history = train(&mut net, &set, &set, &cfg).unwrap();
        assert_eq!(history.len(), 60);
        let best = history
            .iter()
            .map(|h| h.val_balanced_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, 1.0, "never reached perfect accuracy: {history:?}");
        // The kept weights are the best snapshot, so they also score 1.0.
        let pairs = predictions(&net, &set, 15.0, None).unwrap();
        assert_eq!(balanced_accuracy_lenient(&pairs, 4), 1.0);
        // Loss should have moved substantially downward.
        assert!(history.last().unwrap().train_loss < history[0].train_loss * 0.5);
    }

    #[test]
    fn empty_validation_set_yields_nan_metric_and_keeps_final_weights() {
        let set = toy_set();
        let mut net = toy_net();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let history = train(&mut net, &set, &[] as &[Toy], &cfg).unwrap();
        assert!(history.iter().all(|h| h.val_balanced_accuracy.is_nan()));
    }

    #[test]
    fn training_is_deterministic_and_thread_count_invariant() {
        let set = toy_set();
        let cfg = TrainConfig { epochs: 5, batch_size: 3, ..TrainConfig::default() };

        let mut a = toy_net();
        train(&mut a, &set, &set, &cfg).unwrap();
        let mut b = toy_net();
        train(&mut b, &set, &set, &cfg).unwrap();
        assert_eq!(a.params(), b.params());

        let mut c = toy_net();
        let threaded = TrainConfig { threads: 3, ..cfg.clone() };
        train(&mut c, &set, &set, &threaded).unwrap();
        assert_eq!(a.params(), c.params(), "thread count changed the result");

        let mut d = toy_net();
        let reshuffled = TrainConfig { shuffle_seed: 99, ..cfg };
        train(&mut d, &set, &set, &reshuffled).unwrap();
        assert_ne!(a.params(), d.params());
    }

    #[test]
    fn exploding_updates_are_reported_as_a_training_error() {
        let set = toy_set();
        let mut net = toy_net();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e12,
            ..TrainConfig::default()
        };
        match train(&mut net, &set, &set, &cfg) {
            Err(Error::Training(_)) => {}
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn class_index_out_of_range_is_rejected_up_front() {
        let set = vec![Toy { values: [1.0, 0.0, 0.0, 0.0], class: 7 }];
        let mut net = toy_net();
        let err = train(&mut net, &set, &[] as &[Toy], &TrainConfig::default()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn history_csv_has_header_and_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = vec![
            EpochStats { epoch: 0, train_loss: 1.25, val_balanced_accuracy: 0.5 },
            EpochStats { epoch: 1, train_loss: 0.75, val_balanced_accuracy: f64::NAN },
        ];
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_balanced_acc");
        assert_eq!(lines[1], "0,1.25,0.5");
        assert_eq!(lines[2], "1,0.75,NaN");
        assert_eq!(lines.len(), 3);
    }
}
