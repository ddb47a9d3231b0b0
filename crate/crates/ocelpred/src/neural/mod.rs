//! The prediction model: a graph-attention encoder over the merged
//! directly-follows graph, a match-and-concatenate step joining node
//! embeddings with per-event temporal features, a shared LSTM layer feeding
//! two task-specific LSTM layers, and one head per task.
//!
//! Everything is differentiable end to end: the classification and
//! regression losses propagate through the sequence layers and the embedding
//! lookup back into the graph attention parameters.

mod checkpoint;
mod layers;
mod model;
mod optim;

pub use checkpoint::{load_model, save_model, AnyModel, ModelBundle, CHECKPOINT_VERSION};
pub use layers::{GatLayer, Linear, LstmLayer};
pub use model::{joint_loss, match_and_concatenate, GatDetails, Model, ModelOutput};
pub use optim::{backward_and_step, Adam};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeIndex, Ocdfg};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("non-finite gradient; step aborted")]
    NonFiniteGradient,
    #[error("checkpoint incompatible: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Nonlinearity applied after the hidden graph-attention layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply<F: Scalar>(self, x: &Tensor<F>) -> Tensor<F> {
        match self {
            Activation::Elu => x.elu(),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh_act(),
        }
    }
}

/// Training float width. `f32` is the default; `f64` exists for gradient
/// verification and numerically picky runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// All model hyperparameters. Every field has a documented default; none is
/// a claim about any particular reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the two hidden graph-attention layers (per head).
    pub gat_hidden: usize,
    /// Width of the final node embeddings.
    pub embed_dim: usize,
    /// Attention heads per layer; hidden layers concatenate heads, the
    /// output layer averages them.
    pub attention_heads: usize,
    /// Activation after hidden graph-attention layers; the output layer is
    /// linear.
    pub gat_activation: Activation,
    /// Negative slope of the LeakyReLU on attention logits.
    pub leaky_slope: f64,
    /// Hidden size of the shared and task-specific LSTM layers.
    pub lstm_hidden: usize,
    /// Weight of the time-regression term in the joint loss (lambda).
    /// Zero trains the classification task alone.
    pub loss_weight_ne: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Early-stopping patience in epochs (on validation loss when a
    /// validation split exists, else on training loss).
    pub patience: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gat_hidden: 32,
            embed_dim: 16,
            attention_heads: 1,
            gat_activation: Activation::Elu,
            leaky_slope: 0.2,
            lstm_hidden: 100,
            loss_weight_ne: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 42,
            patience: 10,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let mut problems = Vec::new();
        if self.gat_hidden == 0 {
            problems.push("gat_hidden must be positive");
        }
        if self.embed_dim == 0 {
            problems.push("embed_dim must be positive");
        }
        if self.attention_heads == 0 {
            problems.push("attention_heads must be positive");
        }
        if self.lstm_hidden == 0 {
            problems.push("lstm_hidden must be positive");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive");
        }
        if self.loss_weight_ne < 0.0 {
            problems.push("loss_weight_ne must be non-negative");
        }
        if self.leaky_slope < 0.0 {
            problems.push("leaky_slope must be non-negative");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NeuralError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// The graph in tensor form, ready for the attention layers.
///
/// Node features are one-hot activity identities. Edge features are the
/// per-type frequencies normalized into `(0, 1]` by each type's maximum
/// frequency (zero where a type lacks the edge). Every node without a
/// discovered self-loop gets one with all-zero edge features so attention
/// always includes the node itself.
#[derive(Debug, Clone)]
pub struct GraphTensors<F: Scalar> {
    pub num_nodes: usize,
    pub num_object_types: usize,
    pub node_features: Tensor<F>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_features: Tensor<F>,
}

impl<F: Scalar> GraphTensors<F> {
    pub fn new(graph: &Ocdfg, index: &NodeIndex) -> Result<Self, NeuralError> {
        let n = index.len();
        let n_types = graph.object_types.len();

        let mut edge_src = Vec::with_capacity(graph.edges.len() + n);
        let mut edge_dst = Vec::with_capacity(graph.edges.len() + n);
        let mut features: Vec<f64> = Vec::with_capacity((graph.edges.len() + n) * n_types);

        // Per-type maxima for normalization.
        let mut max_freq = vec![0u64; n_types];
        for freqs in graph.edges.values() {
            for (t, &f) in freqs.iter().enumerate() {
                max_freq[t] = max_freq[t].max(f);
            }
        }

        let mut has_self_loop = vec![false; n];
        for ((src, dst), freqs) in &graph.edges {
            let s = index.index_of(src).ok_or_else(|| {
                NeuralError::VersionMismatch(format!("activity {src:?} is not in the node index"))
            })?;
            let d = index.index_of(dst).ok_or_else(|| {
                NeuralError::VersionMismatch(format!("activity {dst:?} is not in the node index"))
            })?;
            if s == d {
                has_self_loop[s] = true;
            }
            edge_src.push(s);
            edge_dst.push(d);
            for (t, &f) in freqs.iter().enumerate() {
                features.push(if max_freq[t] == 0 {
                    0.0
                } else {
                    f as f64 / max_freq[t] as f64
                });
            }
        }
        for node in 0..n {
            if !has_self_loop[node] {
                edge_src.push(node);
                edge_dst.push(node);
                features.extend(std::iter::repeat(0.0).take(n_types));
            }
        }

        let mut one_hot = vec![F::zero(); n * n];
        for i in 0..n {
            one_hot[i * n + i] = F::one();
        }

        let edge_count = edge_src.len();
        Ok(GraphTensors {
            num_nodes: n,
            num_object_types: n_types,
            node_features: Tensor::constant(n, n, one_hot),
            edge_src,
            edge_dst,
            edge_features: Tensor::constant(
                edge_count,
                n_types,
                features.into_iter().map(F::from_f64).collect(),
            ),
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edge_src.len()
    }
}
