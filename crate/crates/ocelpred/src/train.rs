//! Training orchestration and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    apply_scaling, fit_scaling, pad_batch_truncating, DatasetError, PrefixDataset, PrefixSample,
    ScalingStats,
};
use crate::neural::{
    backward_and_step, joint_loss, Adam, GraphTensors, Model, ModelConfig, NeuralError,
};
use crate::tensor::{Scalar, Tensor};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no test samples to evaluate")]
    EmptyTestSplit,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// One row of training history. Accuracy and MAE are measured on the
/// validation split when one exists, otherwise on the training batches as
/// they were seen during the epoch.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub na_accuracy: f64,
    pub ne_mae_days: f64,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRun {
    pub config: ModelConfig,
    pub history: Vec<EpochStats>,
    /// Index into `history` of the restored best epoch (by validation loss,
    /// or training loss without a validation split).
    pub best_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainRun {
    /// Per-epoch history as CSV.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,na_accuracy,ne_mae_days\n");
        for row in &self.history {
            let val = row.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.epoch, row.train_loss, val, row.na_accuracy, row.ne_mae_days
            ));
        }
        out
    }
}

/// A trained model with its scaling statistics and run record.
pub struct TrainOutcome<F: Scalar> {
    pub model: Model<F>,
    pub scaling: ScalingStats,
    pub run: TrainRun,
}

/// Train on the dataset's training split. Scaling statistics are fit on
/// that split only; every epoch shuffles with the seeded generator, so a
/// given (dataset, config) pair reproduces its history exactly.
pub fn train<F: Scalar>(
    dataset: &PrefixDataset,
    graph: &GraphTensors<F>,
    config: &ModelConfig,
) -> Result<TrainOutcome<F>, TrainError> {
    config.validate().map_err(TrainError::Neural)?;
    let train_raw = dataset.train_samples();
    if train_raw.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let scaling = fit_scaling(&train_raw)?;
    let train_scaled: Vec<PrefixSample> = train_raw
        .iter()
        .map(|s| apply_scaling(s, &scaling))
        .collect();
    let val_raw = dataset.validation_samples();

    let model = Model::<F>::new(config.clone(), graph.num_nodes, graph.num_object_types)?;
    let params = model.params();
    let mut optimizer = Adam::new(config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<F>>)> = None;
    let mut stale_epochs = 0usize;
    let mut indices: Vec<usize> = (0..train_scaled.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        let mut abs_err_seconds = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let refs: Vec<&PrefixSample> = chunk.iter().map(|&i| &train_scaled[i]).collect();
            let batch = pad_batch_truncating(&refs, dataset.max_len);
            let output = model.forward(graph, &batch)?;

            let logits = output.na_logits.to_f64_vec();
            for (row, &truth) in batch.targets_na.iter().enumerate() {
                if argmax_row(&logits, row, graph.num_nodes) == truth {
                    correct += 1;
                }
            }
            let ne_pred = output.ne_scaled.to_f64_vec();
            for (row, &truth_scaled) in batch.targets_ne.iter().enumerate() {
                abs_err_seconds += (ne_pred[row] - truth_scaled).abs() * scaling.ne_divisor();
            }

            let targets_ne: Vec<F> = batch.targets_ne.iter().map(|&v| F::from_f64(v)).collect();
            let loss = joint_loss(&output, &batch.targets_na, &targets_ne, config.loss_weight_ne);
            let loss_value = loss.item().as_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            loss_sum += loss_value * batch.size as f64;
            seen += batch.size;
            backward_and_step(&loss, &params, &mut optimizer)?;
        }
        let train_loss = loss_sum / seen as f64;

        let stats = if val_raw.is_empty() {
            EpochStats {
                epoch,
                train_loss,
                val_loss: None,
                na_accuracy: correct as f64 / seen as f64,
                ne_mae_days: abs_err_seconds / seen as f64 / SECONDS_PER_DAY,
            }
        } else {
            let embeddings = model.gat_forward(graph)?;
            let pass = run_inference(
                &model,
                &embeddings,
                &val_raw,
                &scaling,
                dataset.max_len,
                config.batch_size,
                config.loss_weight_ne,
            )?;
            EpochStats {
                epoch,
                train_loss,
                val_loss: Some(pass.mean_loss),
                na_accuracy: pass.accuracy(),
                ne_mae_days: pass.mae_days(),
            }
        };
        let monitored = stats.val_loss.unwrap_or(stats.train_loss);
        history.push(stats);

        let improved = best.as_ref().map_or(true, |(best_loss, _, _)| monitored < *best_loss);
        if improved {
            let snapshot = params.iter().map(Tensor::to_vec).collect();
            best = Some((monitored, history.len() - 1, snapshot));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if config.patience > 0 && stale_epochs >= config.patience {
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|(_, idx, _)| *idx);
    if let Some((_, _, snapshot)) = best {
        for (param, data) in params.iter().zip(&snapshot) {
            param.set_data(data);
        }
    }

    Ok(TrainOutcome {
        model,
        scaling,
        run: TrainRun {
            config: config.clone(),
            history,
            best_epoch,
            seed: config.seed,
        },
    })
}

/// Lowest index wins ties, so predictions are deterministic.
pub fn argmax_row(data: &[f64], row: usize, cols: usize) -> usize {
    let slice = &data[row * cols..(row + 1) * cols];
    let mut best = 0;
    for (j, &v) in slice.iter().enumerate() {
        if v > slice[best] {
            best = j;
        }
    }
    best
}

/// Raw predictions over a sample set, batched, with one cached embedding
/// pass.
pub struct InferenceStats {
    pub mean_loss: f64,
    pub na_predictions: Vec<usize>,
    pub na_truths: Vec<usize>,
    pub ne_pred_seconds: Vec<f64>,
    pub ne_truth_seconds: Vec<f64>,
}

impl InferenceStats {
    pub fn accuracy(&self) -> f64 {
        let correct = self
            .na_predictions
            .iter()
            .zip(&self.na_truths)
            .filter(|(p, t)| p == t)
            .count();
        correct as f64 / self.na_truths.len() as f64
    }

    pub fn mae_days(&self) -> f64 {
        let total: f64 = self
            .ne_pred_seconds
            .iter()
            .zip(&self.ne_truth_seconds)
            .map(|(p, t)| (p - t).abs())
            .sum();
        total / self.ne_truth_seconds.len() as f64 / SECONDS_PER_DAY
    }
}

/// Forward a raw (unscaled) sample set: inputs are scaled with the training
/// statistics, time predictions are mapped back to seconds.
pub fn run_inference<F: Scalar>(
    model: &Model<F>,
    embeddings: &Tensor<F>,
    samples_raw: &[&PrefixSample],
    scaling: &ScalingStats,
    max_len: usize,
    batch_size: usize,
    lambda: f64,
) -> Result<InferenceStats, TrainError> {
    let mut stats = InferenceStats {
        mean_loss: 0.0,
        na_predictions: Vec::with_capacity(samples_raw.len()),
        na_truths: Vec::with_capacity(samples_raw.len()),
        ne_pred_seconds: Vec::with_capacity(samples_raw.len()),
        ne_truth_seconds: Vec::with_capacity(samples_raw.len()),
    };
    let mut loss_sum = 0.0;
    for chunk in samples_raw.chunks(batch_size.max(1)) {
        let scaled: Vec<PrefixSample> = chunk.iter().map(|s| apply_scaling(s, scaling)).collect();
        let refs: Vec<&PrefixSample> = scaled.iter().collect();
        let batch = pad_batch_truncating(&refs, max_len);
        let output = model.forward_with_embeddings(embeddings, &batch)?;

        let targets_ne: Vec<F> = batch.targets_ne.iter().map(|&v| F::from_f64(v)).collect();
        let loss = joint_loss(&output, &batch.targets_na, &targets_ne, lambda);
        loss_sum += loss.item().as_f64() * batch.size as f64;

        let logits = output.na_logits.to_f64_vec();
        let cols = output.na_logits.cols();
        let ne_pred = output.ne_scaled.to_f64_vec();
        for row in 0..batch.size {
            stats.na_predictions.push(argmax_row(&logits, row, cols));
            stats.na_truths.push(batch.targets_na[row]);
            stats.ne_pred_seconds.push(ne_pred[row] * scaling.ne_divisor());
        }
        for sample in chunk {
            stats.ne_truth_seconds.push(sample.target_ne);
        }
    }
    stats.mean_loss = loss_sum / samples_raw.len() as f64;
    Ok(stats)
}

/// Test-split metrics for one object type.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub object_type: String,
    pub samples: usize,
    /// Exact-match fraction in [0, 1].
    pub na_accuracy: f64,
    /// Per-class F1 averaged with class-support weights.
    pub na_f1: f64,
    /// Unweighted per-class mean, reported alongside when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub na_f1_macro: Option<f64>,
    /// Mean absolute error of the time-to-next-event task, in days.
    pub ne_mae_days: f64,
}

/// Evaluate a model on raw samples (typically the test split).
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    graph: &GraphTensors<F>,
    samples_raw: &[&PrefixSample],
    scaling: &ScalingStats,
    object_type: &str,
    max_len: usize,
    report_macro_f1: bool,
) -> Result<EvalReport, TrainError> {
    if samples_raw.is_empty() {
        return Err(TrainError::EmptyTestSplit);
    }
    let embeddings = model.gat_forward(graph)?;
    let pass = run_inference(
        model,
        &embeddings,
        samples_raw,
        scaling,
        max_len,
        model.config().batch_size,
        model.config().loss_weight_ne,
    )?;
    let (weighted, macro_f1) = f1_scores(
        &pass.na_predictions,
        &pass.na_truths,
        model.num_activities(),
    );
    Ok(EvalReport {
        object_type: object_type.to_string(),
        samples: samples_raw.len(),
        na_accuracy: pass.accuracy(),
        na_f1: weighted,
        na_f1_macro: report_macro_f1.then_some(macro_f1),
        ne_mae_days: pass.mae_days(),
    })
}

/// (support-weighted, macro) F1 over the classes that actually occur in the
/// truths; zero-support classes carry no weight and are excluded from both
/// averages.
pub fn f1_scores(predictions: &[usize], truths: &[usize], num_classes: usize) -> (f64, f64) {
    assert_eq!(predictions.len(), truths.len());
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut weighted = 0.0;
    let mut macro_sum = 0.0;
    let mut macro_classes = 0usize;
    let total = truths.len() as f64;
    for c in 0..num_classes {
        let support = tp[c] + fn_[c];
        if support == 0 {
            continue;
        }
        let precision_den = tp[c] + fp[c];
        let precision = if precision_den == 0 {
            0.0
        } else {
            tp[c] as f64 / precision_den as f64
        };
        let recall = tp[c] as f64 / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += f1 * support as f64 / total;
        macro_sum += f1;
        macro_classes += 1;
    }
    let macro_f1 = if macro_classes == 0 {
        0.0
    } else {
        macro_sum / macro_classes as f64
    };
    (weighted, macro_f1)
}

/// `77.4(73.6)`-style accuracy/F1 cell from fractions.
pub fn accuracy_f1_cell(accuracy: f64, f1: f64) -> String {
    format!("{:.1}({:.1})", accuracy * 100.0, f1 * 100.0)
}

/// Human-readable table plus machine-readable CSV, one row per report.
/// Percentages carry one decimal, MAE two.
pub fn metrics_table(reports: &[EvalReport]) -> (String, String) {
    let mut text = String::new();
    text.push_str(&format!(
        "{:<24} {:>10} {:>14} {:>10}\n",
        "object_type", "samples", "acc(F1) %", "MAE days"
    ));
    let mut csv =
        String::from("object_type,samples,na_accuracy,na_f1,accuracy_f1_cell,ne_mae_days\n");
    for report in reports {
        let cell = accuracy_f1_cell(report.na_accuracy, report.na_f1);
        text.push_str(&format!(
            "{:<24} {:>10} {:>14} {:>10.2}\n",
            report.object_type, report.samples, cell, report.ne_mae_days
        ));
        csv.push_str(&format!(
            "{},{},{},{},{},{:.2}\n",
            crate::flatten::csv_field(&report.object_type),
            report.samples,
            report.na_accuracy,
            report.na_f1,
            cell,
            report.ne_mae_days
        ));
    }
    (text, csv)
}
