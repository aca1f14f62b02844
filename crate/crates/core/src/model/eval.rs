use std::time::Instant;

use chladni_neural::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelError, Result, Samples};

const WARMUP_RUNS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Summary of per-run latencies; p99 uses the nearest-rank definition.
    pub fn from_samples(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "latency summary of zero runs");
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        Self {
            runs: samples.len(),
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            p99_ms: sorted[rank - 1],
            max_ms: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1_accuracy: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
}

/// Accuracy and macro F1 of a confusion matrix. A class whose precision and
/// recall are both zero (or undefined) contributes an F1 of 0.
pub fn metrics_from_confusion(confusion: &[Vec<usize>]) -> (f64, f64) {
    let k = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let mut f1_sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    let accuracy = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
    (accuracy, f1_sum / k as f64)
}

/// Classifies every sample one at a time (batch 1, inference mode).
pub fn evaluate(model: &Model<f32>, samples: &Samples) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    let k = model.config().num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut latencies = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let (x, labels) = samples.batch(&[i]);
        let start = Instant::now();
        let logits = model.logits(&x)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e3);
        let predicted = logits.argmax_rows()?[0];
        let label = labels[0];
        if label >= k {
            return Err(ModelError::Label { label, classes: k });
        }
        confusion[label][predicted] += 1;
    }
    let (top1_accuracy, macro_f1) = metrics_from_confusion(&confusion);
    let latency = LatencyStats::from_samples(&latencies);
    Ok(EvalReport {
        samples: samples.len(),
        top1_accuracy,
        macro_f1,
        confusion,
        mean_latency_ms: latency.mean_ms,
        p99_latency_ms: latency.p99_ms,
    })
}

/// Times `runs` single-image forward passes on random inputs after
/// ten untimed warm-up passes.
pub fn benchmark_latency(model: &Model<f32>, runs: usize, seed: u64) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(ModelError::Config("benchmark needs at least one run".into()));
    }
    let s = model.config().image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_input = || Tensor::from_fn([1, 3, s, s], |_| rng.gen::<f32>());
    for _ in 0..WARMUP_RUNS {
        model.logits(&random_input())?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let x = random_input();
        let start = Instant::now();
        model.logits(&x)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_confusion() {
        let c = vec![vec![5, 0, 0], vec![0, 4, 1], vec![0, 2, 3]];
        let (acc, f1) = metrics_from_confusion(&c);
        assert!((acc - 0.8).abs() < 1e-12);
        // F1 per class: 1, 8/11, 2/3.
        assert!((f1 - (1.0 + 8.0 / 11.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((f1 - 79.0 / 99.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty_classes() {
        let (acc, f1) = metrics_from_confusion(&[vec![3, 0], vec![0, 2]]);
        assert_eq!((acc, f1), (1.0, 1.0));
        let (_, f1) = metrics_from_confusion(&[vec![3, 0], vec![0, 0]]);
        assert_eq!(f1, 0.5);
    }

    #[test]
    fn latency_summary() {
        let one = LatencyStats::from_samples(&[4.2]);
        assert_eq!((one.mean_ms, one.p99_ms, one.max_ms, one.runs), (4.2, 4.2, 4.2, 1));
        let many: Vec<f64> = (1..=200).map(f64::from).collect();
        let s = LatencyStats::from_samples(&many);
        assert_eq!(s.p99_ms, 198.0);
        assert!(s.mean_ms <= s.max_ms);
    }
}
