//! Classification scoring: balanced per-sample and per-track accuracy.
//!
//! Both headline numbers are *class-balanced*: the mean of per-class
//! accuracies, so a class with ten samples counts as much as one with a
//! thousand. Per-track accuracy first reduces each ground-truth track to the
//! mode of its predicted labels (ties break toward the smallest class
//! index), then balances across classes the same way.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ClassLabel, NUM_CLASSES};

/// One classified sample, tied back to its ground-truth track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub track_id: u32,
    pub frame_index: u32,
    pub true_class: ClassLabel,
    pub predicted: ClassLabel,
    /// Softmax output; must sum to 1 within 1e-6.
    pub probabilities: [f64; NUM_CLASSES],
}

/// Accuracy of one class, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sample_accuracy: f64,
    pub track_accuracy: f64,
}

/// Per-class percentages in the fixed class order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub car: ClassMetrics,
    pub bus: ClassMetrics,
    pub truck_van: ClassMetrics,
    pub bike: ClassMetrics,
}

impl PerClassMetrics {
    pub fn get(&self, class: ClassLabel) -> ClassMetrics {
        match class {
            ClassLabel::Car => self.car,
            ClassLabel::Bus => self.bus,
            ClassLabel::TruckVan => self.truck_van,
            ClassLabel::Bike => self.bike,
        }
    }
}

/// Full evaluation summary. All accuracy values are percentages in
/// `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of per-class sample accuracies.
    pub per_sample_balanced: f64,
    /// Mean of per-class track accuracies (mode-vote per track).
    pub per_track_balanced: f64,
    pub per_class: PerClassMetrics,
    /// `confusion[true][predicted]` sample counts.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// Scores a batch of predictions. Every class must appear among the true
/// labels (the balanced mean is undefined otherwise); the offending class is
/// named in the error.
pub fn evaluate(predictions: &[Prediction]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::validation("cannot evaluate zero predictions"));
    }
    for p in predictions {
        let sum: f64 = p.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "probabilities for track {} frame {} sum to {sum}, not 1",
                p.track_id, p.frame_index
            )));
        }
    }

    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for p in predictions {
        confusion[p.true_class.index()][p.predicted.index()] += 1;
    }

    let mut sample_accuracy = [0.0f64; NUM_CLASSES];
    for class in ClassLabel::ALL {
        let row = &confusion[class.index()];
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(Error::validation(format!(
                "no samples for class {class}; balanced accuracy is undefined"
            )));
        }
        sample_accuracy[class.index()] = 100.0 * row[class.index()] as f64 / total as f64;
    }

    // Group samples into ground-truth tracks and take the mode vote.
    let mut tracks: BTreeMap<u32, (ClassLabel, [u64; NUM_CLASSES])> = BTreeMap::new();
    for p in predictions {
        let entry = tracks
            .entry(p.track_id)
            .or_insert((p.true_class, [0; NUM_CLASSES]));
        if entry.0 != p.true_class {
            return Err(Error::validation(format!(
                "track {} carries conflicting ground-truth classes {} and {}",
                p.track_id, entry.0, p.true_class
            )));
        }
        entry.1[p.predicted.index()] += 1;
    }

    let mut track_correct = [0u64; NUM_CLASSES];
    let mut track_total = [0u64; NUM_CLASSES];
    for (truth, votes) in tracks.values() {
        let mut mode = 0;
        for c in 1..NUM_CLASSES {
            if votes[c] > votes[mode] {
                mode = c;
            }
        }
        track_total[truth.index()] += 1;
        if mode == truth.index() {
            track_correct[truth.index()] += 1;
        }
    }
    let mut track_accuracy = [0.0f64; NUM_CLASSES];
    for class in ClassLabel::ALL {
        let i = class.index();
        // A class with samples always has at least one track.
        track_accuracy[i] = 100.0 * track_correct[i] as f64 / track_total[i] as f64;
    }

    let class_metrics = |i: usize| ClassMetrics {
        sample_accuracy: sample_accuracy[i],
        track_accuracy: track_accuracy[i],
    };
    Ok(Metrics {
        per_sample_balanced: sample_accuracy.iter().sum::<f64>() / NUM_CLASSES as f64,
        per_track_balanced: track_accuracy.iter().sum::<f64>() / NUM_CLASSES as f64,
        per_class: PerClassMetrics {
            car: class_metrics(0),
            bus: class_metrics(1),
            truck_van: class_metrics(2),
            bike: class_metrics(3),
        },
        confusion,
    })
}

/// Writes metrics as pretty JSON with a trailing newline. The field order is
/// fixed, so identical metrics serialize to identical bytes.
pub fn write_metrics_json(path: &Path, metrics: &Metrics) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, metrics)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_metrics_json(path: &Path) -> Result<Metrics> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(track_id: u32, truth: ClassLabel, predicted: ClassLabel) -> Prediction {
        Prediction {
            track_id,
            frame_index: 0,
            true_class: truth,
            predicted,
            probabilities: [0.25; 4],
        }
    }

    /// One correct singleton track per class, to satisfy the all-classes
    /// precondition when a test focuses on a single class.
    fn one_track_per_class(start_id: u32) -> Vec<Prediction> {
        ClassLabel::ALL
            .into_iter()
            .enumerate()
            .map(|(i, c)| pred(start_id + i as u32, c, c))
            .collect()
    }

    #[test]
    fn all_correct_scores_one_hundred() {
        let preds = one_track_per_class(0);
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.per_sample_balanced, 100.0);
        assert_eq!(m.per_track_balanced, 100.0);
        for c in ClassLabel::ALL {
            assert_eq!(m.per_class.get(c).sample_accuracy, 100.0);
        }
    }

    #[test]
    fn balancing_weights_small_classes_equally() {
        // 1000 correct cars, 10 always-wrong buses, small perfect others:
        // the balanced mean is (100 + 0 + 100 + 100) / 4, nowhere near the
        // raw hit rate of ~97%.
        let mut preds = Vec::new();
        for i in 0..1000 {
            preds.push(pred(i, ClassLabel::Car, ClassLabel::Car));
        }
        for i in 0..10 {
            preds.push(pred(2000 + i, ClassLabel::Bus, ClassLabel::Car));
        }
        for i in 0..10 {
            preds.push(pred(3000 + i, ClassLabel::TruckVan, ClassLabel::TruckVan));
            preds.push(pred(4000 + i, ClassLabel::Bike, ClassLabel::Bike));
        }
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.per_sample_balanced, 75.0);
        let raw = preds
            .iter()
            .filter(|p| p.true_class == p.predicted)
            .count() as f64
            / preds.len() as f64;
        assert!(raw > 0.97);
    }

    #[test]
    fn missing_class_is_reported_by_name() {
        let preds = vec![
            pred(0, ClassLabel::Car, ClassLabel::Car),
            pred(1, ClassLabel::Bus, ClassLabel::Bus),
            pred(2, ClassLabel::TruckVan, ClassLabel::TruckVan),
        ];
        let err = evaluate(&preds).unwrap_err();
        assert!(err.to_string().contains("bike"), "{err}");
    }

    #[test]
    fn majority_vote_decides_each_track() {
        let mut preds = one_track_per_class(100);
        // Track 0: car with votes [car, car, bus] -> mode car -> correct.
        preds.push(pred(0, ClassLabel::Car, ClassLabel::Car));
        preds.push(pred(0, ClassLabel::Car, ClassLabel::Car));
        preds.push(pred(0, ClassLabel::Car, ClassLabel::Bus));
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.per_class.get(ClassLabel::Car).track_accuracy, 100.0);
    }

    #[test]
    fn vote_ties_break_toward_the_smaller_class_index() {
        let mut preds = one_track_per_class(100);
        // A bus track with a car/bus tie: car (index 0) wins -> incorrect.
        preds.push(pred(0, ClassLabel::Bus, ClassLabel::Car));
        preds.push(pred(0, ClassLabel::Bus, ClassLabel::Bus));
        let m = evaluate(&preds).unwrap();
        // Two bus tracks: the singleton (correct) and the tied one (wrong).
        assert_eq!(m.per_class.get(ClassLabel::Bus).track_accuracy, 50.0);
    }

    #[test]
    fn mostly_correct_tracks_make_per_track_perfect() {
        // Every track is >50% correct, so per-track hits 100 even though
        // per-sample does not.
        let mut preds = Vec::new();
        for (t, class) in ClassLabel::ALL.into_iter().enumerate() {
            let wrong = ClassLabel::ALL[(t + 1) % 4];
            for i in 0..5 {
                let p = if i < 3 { class } else { wrong };
                preds.push(pred(t as u32, class, p));
            }
        }
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.per_track_balanced, 100.0);
        assert_eq!(m.per_sample_balanced, 60.0);
    }

    #[test]
    fn uniform_random_predictor_scores_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut preds = Vec::new();
        for (t, class) in ClassLabel::ALL.into_iter().enumerate() {
            for i in 0..4000 {
                let guess = ClassLabel::from_index(rng.gen_range(0..4)).unwrap();
                preds.push(Prediction {
                    track_id: t as u32,
                    frame_index: i,
                    true_class: class,
                    predicted: guess,
                    probabilities: [0.25; 4],
                });
            }
        }
        let m = evaluate(&preds).unwrap();
        assert!(
            (m.per_sample_balanced - 25.0).abs() < 2.0,
            "{}",
            m.per_sample_balanced
        );
    }

    #[test]
    fn metrics_are_invariant_under_class_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut preds = Vec::new();
        for (t, class) in ClassLabel::ALL.into_iter().enumerate() {
            for _ in 0..50 {
                let guess = ClassLabel::from_index(rng.gen_range(0..4)).unwrap();
                preds.push(pred(t as u32, class, guess));
            }
        }
        let base = evaluate(&preds).unwrap();

        // Relabel through a cyclic permutation, applied to truth, guesses
        // and (to keep per-track grouping intact) track ids.
        let perm = |c: ClassLabel| ClassLabel::from_index((c.index() + 1) % 4).unwrap();
        let permuted: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction {
                true_class: perm(p.true_class),
                predicted: perm(p.predicted),
                ..p.clone()
            })
            .collect();
        let swapped = evaluate(&permuted).unwrap();
        assert!((base.per_sample_balanced - swapped.per_sample_balanced).abs() < 1e-9);
        assert!((base.per_track_balanced - swapped.per_track_balanced).abs() < 1e-9);
    }

    #[test]
    fn confusion_trace_matches_the_direct_hit_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut preds = Vec::new();
        for (t, class) in ClassLabel::ALL.into_iter().enumerate() {
            for _ in 0..100 {
                let guess = ClassLabel::from_index(rng.gen_range(0..4)).unwrap();
                preds.push(pred(t as u32, class, guess));
            }
        }
        let m = evaluate(&preds).unwrap();
        let trace: u64 = (0..4).map(|i| m.confusion[i][i]).sum();
        let total: u64 = m.confusion.iter().flatten().sum();
        let direct = preds.iter().filter(|p| p.true_class == p.predicted).count() as u64;
        assert_eq!(trace, direct);
        assert_eq!(total, preds.len() as u64);
        // Row sums are per-class sample counts.
        for i in 0..4 {
            let row: u64 = m.confusion[i].iter().sum();
            assert_eq!(row, 100);
        }
    }

    #[test]
    fn invalid_probability_sums_are_rejected() {
        let mut preds = one_track_per_class(0);
        preds[0].probabilities = [0.5, 0.5, 0.5, 0.5];
        let err = evaluate(&preds).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("sum"), "{err}");
    }

    #[test]
    fn conflicting_track_ground_truth_is_rejected() {
        let mut preds = one_track_per_class(0);
        preds.push(pred(0, ClassLabel::Bus, ClassLabel::Bus)); // track 0 is a car
        let err = evaluate(&preds).unwrap_err();
        assert!(err.to_string().contains("conflicting"), "{err}");
    }

    #[test]
    fn metrics_json_round_trips_and_is_byte_stable() {
        let preds = one_track_per_class(0);
        let m = evaluate(&preds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        write_metrics_json(&a, &m).unwrap();
        write_metrics_json(&b, &m).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_metrics_json(&a).unwrap(), m);
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.contains("per_sample_balanced"));
        assert!(text.contains("truck_van"));
    }
}
