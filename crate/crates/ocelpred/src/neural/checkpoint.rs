//! Single-file model checkpoints.
//!
//! A checkpoint is one JSON document holding a format version, the dtype,
//! the model configuration, the activity index, the flattened object types
//! and target type, the feature scaling statistics, and every parameter
//! tensor with its shape. Values are stored as f64, which round-trips both
//! precisions exactly.

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NeuralError, Precision};
use crate::dataset::ScalingStats;
use crate::graph::NodeIndex;
use crate::tensor::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    dtype: String,
    config: ModelConfig,
    node_index: NodeIndex,
    object_types: Vec<String>,
    target_type: String,
    scaling: ScalingStats,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Everything needed to run a restored model.
pub struct ModelBundle<F: Scalar> {
    pub model: Model<F>,
    pub node_index: NodeIndex,
    /// Object types the training graph was discovered over, in order.
    pub object_types: Vec<String>,
    pub target_type: String,
    pub scaling: ScalingStats,
}

/// A restored checkpoint in whichever precision it was trained.
pub enum AnyModel {
    F32(ModelBundle<f32>),
    F64(ModelBundle<f64>),
}

impl AnyModel {
    pub fn node_index(&self) -> &NodeIndex {
        match self {
            AnyModel::F32(b) => &b.node_index,
            AnyModel::F64(b) => &b.node_index,
        }
    }

    pub fn object_types(&self) -> &[String] {
        match self {
            AnyModel::F32(b) => &b.object_types,
            AnyModel::F64(b) => &b.object_types,
        }
    }

    pub fn target_type(&self) -> &str {
        match self {
            AnyModel::F32(b) => &b.target_type,
            AnyModel::F64(b) => &b.target_type,
        }
    }
}

/// Serialize a model and its companions into checkpoint bytes.
pub fn save_model<F: Scalar>(
    model: &Model<F>,
    node_index: &NodeIndex,
    object_types: &[String],
    target_type: &str,
    scaling: &ScalingStats,
) -> Vec<u8> {
    let params = model
        .named_params()
        .into_iter()
        .map(|(name, tensor)| ParamRecord {
            name,
            rows: tensor.rows(),
            cols: tensor.cols(),
            data: tensor.to_f64_vec(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        dtype: F::DTYPE.to_string(),
        config: model.config().clone(),
        node_index: node_index.clone(),
        object_types: object_types.to_vec(),
        target_type: target_type.to_string(),
        scaling: scaling.clone(),
        params,
    };
    serde_json::to_vec(&file).expect("checkpoint serializes")
}

/// Restore a checkpoint. The version tag is checked first; shape or naming
/// disagreements with the rebuilt architecture are corruption.
pub fn load_model(bytes: &[u8]) -> Result<AnyModel, NeuralError> {
    let file: CheckpointFile = serde_json::from_slice(bytes)
        .map_err(|e| NeuralError::CorruptCheckpoint(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(NeuralError::VersionMismatch(format!(
            "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    match file.dtype.as_str() {
        "f32" => Ok(AnyModel::F32(restore::<f32>(file)?)),
        "f64" => Ok(AnyModel::F64(restore::<f64>(file)?)),
        other => Err(NeuralError::CorruptCheckpoint(format!(
            "unknown dtype {other:?}"
        ))),
    }
}

fn restore<F: Scalar>(file: CheckpointFile) -> Result<ModelBundle<F>, NeuralError> {
    let mut config = file.config;
    config.precision = match F::DTYPE {
        "f32" => Precision::F32,
        _ => Precision::F64,
    };
    let model = Model::<F>::new(config, file.node_index.len(), file.object_types.len())?;
    let named = model.named_params();
    if named.len() != file.params.len() {
        return Err(NeuralError::CorruptCheckpoint(format!(
            "{} parameter records, expected {}",
            file.params.len(),
            named.len()
        )));
    }
    for ((expected_name, tensor), record) in named.into_iter().zip(&file.params) {
        if record.name != expected_name {
            return Err(NeuralError::CorruptCheckpoint(format!(
                "parameter {:?} where {expected_name:?} was expected",
                record.name
            )));
        }
        if record.rows != tensor.rows()
            || record.cols != tensor.cols()
            || record.data.len() != tensor.len()
        {
            return Err(NeuralError::CorruptCheckpoint(format!(
                "parameter {expected_name:?} has shape {}x{}, expected {}x{}",
                record.rows,
                record.cols,
                tensor.rows(),
                tensor.cols()
            )));
        }
        let values: Vec<F> = record.data.iter().map(|&v| F::from_f64(v)).collect();
        tensor.set_data(&values);
    }
    Ok(ModelBundle {
        model,
        node_index: file.node_index,
        object_types: file.object_types,
        target_type: file.target_type,
        scaling: file.scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pad_batch, PrefixSample};
    use crate::graph::{NodeIndex, Ocdfg};
    use crate::neural::GraphTensors;
    use std::collections::{BTreeMap, BTreeSet};

    fn fixture() -> (Ocdfg, NodeIndex, Model<f64>, ScalingStats) {
        let graph = Ocdfg {
            activities: BTreeSet::from(["A".to_string(), "B".to_string()]),
            object_types: vec!["t".to_string()],
            edges: BTreeMap::from([(("A".to_string(), "B".to_string()), vec![1])]),
        };
        let index = NodeIndex::from_ocdfg(&graph);
        let config = ModelConfig {
            gat_hidden: 3,
            embed_dim: 2,
            lstm_hidden: 4,
            precision: Precision::F64,
            ..ModelConfig::default()
        };
        let model = Model::<f64>::new(config, 2, 1).unwrap();
        let scaling = ScalingStats {
            means: [10.0, 20.0, 30.0, 40.0],
            degenerate: [false; 4],
        };
        (graph, index, model, scaling)
    }

    fn a_batch() -> crate::dataset::Batch {
        let s = PrefixSample {
            case_id: "c".into(),
            activity_indices: vec![0, 1],
            temporal: vec![[0.0, 0.0, 0.5, 0.1], [1.0, 1.0, 0.6, 0.1]],
            target_na: 0,
            target_ne: 1.0,
        };
        pad_batch(&[&s], 2).unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let (graph, index, model, scaling) = fixture();
        let gt = GraphTensors::<f64>::new(&graph, &index).unwrap();
        let batch = a_batch();
        let before = model.forward(&gt, &batch).unwrap();

        let bytes = save_model(&model, &index, &["t".to_string()], "t", &scaling);
        let AnyModel::F64(restored) = load_model(&bytes).unwrap() else {
            panic!("expected f64 checkpoint");
        };
        assert_eq!(restored.scaling, scaling);
        assert_eq!(restored.target_type, "t");
        let after = restored.model.forward(&gt, &batch).unwrap();
        assert_eq!(before.na_logits.to_vec(), after.na_logits.to_vec());
        assert_eq!(before.ne_scaled.to_vec(), after.ne_scaled.to_vec());
    }

    #[test]
    fn truncated_bytes_are_corrupt() {
        let (_, index, model, scaling) = fixture();
        let bytes = save_model(&model, &index, &["t".to_string()], "t", &scaling);
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            load_model(truncated),
            Err(NeuralError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn future_version_is_a_mismatch() {
        let (_, index, model, scaling) = fixture();
        let bytes = save_model(&model, &index, &["t".to_string()], "t", &scaling);
        let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        doc["version"] = serde_json::json!(99);
        let bumped = serde_json::to_vec(&doc).unwrap();
        assert!(matches!(
            load_model(&bumped),
            Err(NeuralError::VersionMismatch(_))
        ));
    }

    #[test]
    fn graph_of_other_size_is_rejected_at_predict_time() {
        let (_, index, model, scaling) = fixture();
        let bytes = save_model(&model, &index, &["t".to_string()], "t", &scaling);
        let AnyModel::F64(restored) = load_model(&bytes).unwrap() else {
            panic!("expected f64 checkpoint");
        };
        // A graph with three activities does not fit a two-activity model.
        let bigger = Ocdfg {
            activities: BTreeSet::from(["A".to_string(), "B".to_string(), "C".to_string()]),
            object_types: vec!["t".to_string()],
            edges: BTreeMap::from([(("B".to_string(), "C".to_string()), vec![2])]),
        };
        let bigger_index = NodeIndex::from_ocdfg(&bigger);
        let gt = GraphTensors::<f64>::new(&bigger, &bigger_index).unwrap();
        assert!(matches!(
            restored.model.forward(&gt, &a_batch()),
            Err(NeuralError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn f32_round_trip_is_value_exact() {
        let config = ModelConfig {
            gat_hidden: 2,
            embed_dim: 2,
            lstm_hidden: 3,
            ..ModelConfig::default()
        };
        let index = NodeIndex::from_activities(["A".to_string(), "B".to_string()]);
        let model = Model::<f32>::new(config, 2, 1).unwrap();
        let scaling = ScalingStats {
            means: [1.0; 4],
            degenerate: [false; 4],
        };
        let bytes = save_model(&model, &index, &["t".to_string()], "t", &scaling);
        let AnyModel::F32(restored) = load_model(&bytes).unwrap() else {
            panic!("expected f32 checkpoint");
        };
        for ((_, a), (_, b)) in model
            .named_params()
            .iter()
            .zip(restored.model.named_params().iter())
        {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }
}
