//! Supervised prefix datasets.
//!
//! Every case of length `n >= 2` yields `n - 1` samples: the prefix of the
//! first `k` events, the next activity as classification target, and the
//! time until that next event as regression target. Each prefix event
//! carries four temporal features: time since the last event, time since the
//! start of the prefix, time since midnight (UTC), and the weekday.
//!
//! Scaling statistics are fit on the training split only and divide each
//! temporal feature and the time target by its training mean ("average
//! scaling"); the weekday is categorical and is normalized to `weekday / 6`
//! instead.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatten::FlattenedLog;
use crate::graph::NodeIndex;
use crate::ocel::Timestamp;

/// Feature column order inside a temporal feature vector.
pub const FEAT_DELTA_LAST: usize = 0;
pub const FEAT_DELTA_START: usize = 1;
pub const FEAT_DELTA_MIDNIGHT: usize = 2;
pub const FEAT_WEEKDAY: usize = 3;

/// Number of temporal features per event.
pub const TEMPORAL_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("activity {0:?} is not in the node index")]
    UnknownActivity(String),
    #[error("timestamps must be non-decreasing (position {0})")]
    NonMonotonicTimestamps(usize),
    #[error("the training split is empty")]
    EmptyTrainingSplit,
    #[error("sample of length {len} exceeds max_len {max_len}")]
    PrefixTooLong { len: usize, max_len: usize },
    #[error("split ratios must be non-negative and sum to 1")]
    BadRatios,
}

/// One prefix with its two targets. Temporal values are seconds (raw) until
/// [`apply_scaling`] divides them by the training means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixSample {
    pub case_id: String,
    pub activity_indices: Vec<usize>,
    pub temporal: Vec<[f64; TEMPORAL_DIM]>,
    pub target_na: usize,
    pub target_ne: f64,
}

impl PrefixSample {
    pub fn len(&self) -> usize {
        self.activity_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activity_indices.is_empty()
    }
}

/// Temporal feature vectors for an ordered timestamp sequence.
///
/// The first event has zero "since last" and "since start" values; "since
/// start" is the running sum of the "since last" column, so the two columns
/// are consistent bit-for-bit.
pub fn temporal_features(
    timestamps: &[Timestamp],
) -> Result<Vec<[f64; TEMPORAL_DIM]>, DatasetError> {
    let mut features = Vec::with_capacity(timestamps.len());
    let mut since_start = 0.0f64;
    for (i, &ts) in timestamps.iter().enumerate() {
        let since_last = if i == 0 {
            0.0
        } else {
            let delta_ms = ts.millis() - timestamps[i - 1].millis();
            if delta_ms < 0 {
                return Err(DatasetError::NonMonotonicTimestamps(i));
            }
            delta_ms as f64 / 1000.0
        };
        since_start += since_last;
        features.push([
            since_last,
            since_start,
            ts.seconds_since_midnight(),
            ts.weekday() as f64,
        ]);
    }
    Ok(features)
}

/// Expand every case of the flattened log into prefix samples.
pub fn build_prefixes(
    fl: &FlattenedLog,
    node_index: &NodeIndex,
) -> Result<Vec<PrefixSample>, DatasetError> {
    let mut samples = Vec::new();
    for case in fl.case_sequences() {
        let indices: Vec<usize> = case
            .activities
            .iter()
            .map(|a| {
                node_index
                    .index_of(a)
                    .ok_or_else(|| DatasetError::UnknownActivity((*a).to_string()))
            })
            .collect::<Result<_, _>>()?;
        let n = indices.len();
        if n < 2 {
            continue;
        }
        let features = temporal_features(&case.timestamps)?;
        for k in 1..n {
            samples.push(PrefixSample {
                case_id: case.object_id.to_string(),
                activity_indices: indices[..k].to_vec(),
                temporal: features[..k].to_vec(),
                target_na: indices[k],
                target_ne: (case.timestamps[k].millis() - case.timestamps[k - 1].millis()) as f64
                    / 1000.0,
            });
        }
    }
    Ok(samples)
}

/// Training-split means for the three continuous temporal features and the
/// time target. A mean of zero (all-zero column) keeps divisor 1 and is
/// flagged degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    /// Means for delta_last, delta_start, delta_midnight, target_ne.
    pub means: [f64; 4],
    pub degenerate: [bool; 4],
}

impl ScalingStats {
    pub fn divisor(&self, idx: usize) -> f64 {
        if self.degenerate[idx] {
            1.0
        } else {
            self.means[idx]
        }
    }

    /// Mean used to undo target scaling.
    pub fn ne_divisor(&self) -> f64 {
        self.divisor(3)
    }
}

/// Per-feature means over every event of every training sample; target mean
/// over the training samples.
pub fn fit_scaling(train: &[&PrefixSample]) -> Result<ScalingStats, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptyTrainingSplit);
    }
    let mut sums = [0.0f64; 4];
    let mut event_count = 0usize;
    for sample in train {
        for feat in &sample.temporal {
            sums[0] += feat[FEAT_DELTA_LAST];
            sums[1] += feat[FEAT_DELTA_START];
            sums[2] += feat[FEAT_DELTA_MIDNIGHT];
        }
        event_count += sample.temporal.len();
        sums[3] += sample.target_ne;
    }
    let mut means = [0.0f64; 4];
    for i in 0..3 {
        means[i] = sums[i] / event_count as f64;
    }
    means[3] = sums[3] / train.len() as f64;
    let degenerate = [
        means[0] == 0.0,
        means[1] == 0.0,
        means[2] == 0.0,
        means[3] == 0.0,
    ];
    Ok(ScalingStats { means, degenerate })
}

/// Divide continuous features and the time target by their training means;
/// map the weekday to `weekday / 6`.
pub fn apply_scaling(sample: &PrefixSample, stats: &ScalingStats) -> PrefixSample {
    let temporal = sample
        .temporal
        .iter()
        .map(|feat| {
            [
                feat[FEAT_DELTA_LAST] / stats.divisor(0),
                feat[FEAT_DELTA_START] / stats.divisor(1),
                feat[FEAT_DELTA_MIDNIGHT] / stats.divisor(2),
                feat[FEAT_WEEKDAY] / 6.0,
            ]
        })
        .collect();
    PrefixSample {
        case_id: sample.case_id.clone(),
        activity_indices: sample.activity_indices.clone(),
        temporal,
        target_na: sample.target_na,
        target_ne: sample.target_ne / stats.ne_divisor(),
    }
}

/// Split assignment of one case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Samples plus everything needed to batch them: the activity index, padding
/// length, and the per-case split.
#[derive(Debug, Clone)]
pub struct PrefixDataset {
    pub samples: Vec<PrefixSample>,
    pub node_index: NodeIndex,
    pub max_len: usize,
    pub split: BTreeMap<String, Split>,
}

/// Shuffle whole cases with the seeded generator and partition them by
/// ratio. Prefixes of one case are heavily correlated, so the split is at
/// case level, never at sample level.
///
/// `max_len` defaults to the 95th percentile of training prefix lengths
/// (nearest-rank); use [`PrefixDataset::with_max_len`] to override.
pub fn split_by_case(
    samples: Vec<PrefixSample>,
    node_index: NodeIndex,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<PrefixDataset, DatasetError> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(DatasetError::BadRatios);
    }
    let mut case_ids: Vec<&str> = {
        let set: std::collections::BTreeSet<&str> =
            samples.iter().map(|s| s.case_id.as_str()).collect();
        set.into_iter().collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    case_ids.shuffle(&mut rng);

    let n = case_ids.len();
    let n_train = (n as f64 * r_train).round() as usize;
    let n_val = ((n as f64 * r_val).round() as usize).min(n - n_train.min(n));
    let mut split = BTreeMap::new();
    for (i, case_id) in case_ids.iter().enumerate() {
        let assignment = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        split.insert((*case_id).to_string(), assignment);
    }

    let mut dataset = PrefixDataset {
        samples,
        node_index,
        max_len: 1,
        split,
    };
    let mut train_lens: Vec<usize> = dataset.split_samples(Split::Train).iter().map(|s| s.len()).collect();
    if train_lens.is_empty() {
        // Degenerate split without training cases: fall back to all samples.
        train_lens = dataset.samples.iter().map(|s| s.len()).collect();
    }
    dataset.max_len = percentile_95(&mut train_lens).max(1);
    Ok(dataset)
}

fn percentile_95(lens: &mut [usize]) -> usize {
    if lens.is_empty() {
        return 1;
    }
    lens.sort_unstable();
    let rank = ((lens.len() as f64) * 0.95).ceil() as usize;
    lens[rank.clamp(1, lens.len()) - 1]
}

impl PrefixDataset {
    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len.max(1);
        self
    }

    pub fn split_of(&self, case_id: &str) -> Option<Split> {
        self.split.get(case_id).copied()
    }

    pub fn split_samples(&self, split: Split) -> Vec<&PrefixSample> {
        self.samples
            .iter()
            .filter(|s| self.split.get(&s.case_id) == Some(&split))
            .collect()
    }

    pub fn train_samples(&self) -> Vec<&PrefixSample> {
        self.split_samples(Split::Train)
    }

    pub fn validation_samples(&self) -> Vec<&PrefixSample> {
        self.split_samples(Split::Validation)
    }

    pub fn test_samples(&self) -> Vec<&PrefixSample> {
        self.split_samples(Split::Test)
    }
}

/// Reserved activity slot for padded positions.
pub const PAD_INDEX: i64 = -1;

/// A padded mini-batch: left-aligned activity indices (`PAD_INDEX` beyond
/// each real length), zeroed features on padded positions, and a 0/1 mask of
/// real positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    /// `size * max_len`, row-major.
    pub activities: Vec<i64>,
    /// `size * max_len * TEMPORAL_DIM`, row-major.
    pub features: Vec<f64>,
    /// `size * max_len`, 1.0 on real positions.
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
    pub targets_na: Vec<usize>,
    pub targets_ne: Vec<f64>,
}

/// Pad samples to `max_len`. Samples longer than `max_len` are an error; see
/// [`truncate_to_recent`] for the documented truncation step callers apply
/// first (the training pipeline always does).
pub fn pad_batch(samples: &[&PrefixSample], max_len: usize) -> Result<Batch, DatasetError> {
    let size = samples.len();
    let mut batch = Batch {
        size,
        max_len,
        activities: vec![PAD_INDEX; size * max_len],
        features: vec![0.0; size * max_len * TEMPORAL_DIM],
        mask: vec![0.0; size * max_len],
        lengths: Vec::with_capacity(size),
        targets_na: Vec::with_capacity(size),
        targets_ne: Vec::with_capacity(size),
    };
    for (row, sample) in samples.iter().enumerate() {
        let len = sample.len();
        if len > max_len {
            return Err(DatasetError::PrefixTooLong { len, max_len });
        }
        for (t, (&activity, feat)) in sample
            .activity_indices
            .iter()
            .zip(&sample.temporal)
            .enumerate()
        {
            batch.activities[row * max_len + t] = activity as i64;
            batch.mask[row * max_len + t] = 1.0;
            let base = (row * max_len + t) * TEMPORAL_DIM;
            batch.features[base..base + TEMPORAL_DIM].copy_from_slice(feat);
        }
        batch.lengths.push(len);
        batch.targets_na.push(sample.target_na);
        batch.targets_ne.push(sample.target_ne);
    }
    Ok(batch)
}

/// Keep the most recent `max_len` events of an over-long prefix. Feature
/// values are kept as computed over the full prefix ("time since start"
/// still refers to the original first event).
pub fn truncate_to_recent(sample: &PrefixSample, max_len: usize) -> PrefixSample {
    if sample.len() <= max_len {
        return sample.clone();
    }
    let start = sample.len() - max_len;
    PrefixSample {
        case_id: sample.case_id.clone(),
        activity_indices: sample.activity_indices[start..].to_vec(),
        temporal: sample.temporal[start..].to_vec(),
        target_na: sample.target_na,
        target_ne: sample.target_ne,
    }
}

/// Truncate-then-pad convenience used by training and inference.
pub fn pad_batch_truncating(samples: &[&PrefixSample], max_len: usize) -> Batch {
    let truncated: Vec<PrefixSample> = samples
        .iter()
        .map(|s| truncate_to_recent(s, max_len))
        .collect();
    let refs: Vec<&PrefixSample> = truncated.iter().collect();
    pad_batch(&refs, max_len).expect("truncated samples fit max_len")
}

/// Deterministically keep a fraction of the cases (used for subsampled smoke
/// runs on large logs). `frac >= 1` keeps everything.
pub fn subsample_cases(samples: Vec<PrefixSample>, frac: f64, seed: u64) -> Vec<PrefixSample> {
    if frac >= 1.0 {
        return samples;
    }
    let mut case_ids: Vec<String> = {
        let set: std::collections::BTreeSet<&str> =
            samples.iter().map(|s| s.case_id.as_str()).collect();
        set.into_iter().map(|s| s.to_string()).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a_17);
    case_ids.shuffle(&mut rng);
    let keep = ((case_ids.len() as f64) * frac.max(0.0)).ceil() as usize;
    let kept: std::collections::BTreeSet<String> = case_ids.into_iter().take(keep).collect();
    samples
        .into_iter()
        .filter(|s| kept.contains(&s.case_id))
        .collect()
}
