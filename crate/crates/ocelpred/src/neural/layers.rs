//! Parameterized layers: graph attention, LSTM, and linear heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, GraphTensors};
use crate::tensor::{Scalar, Tensor};

/// Glorot-uniform draw for a `fan_in x fan_out` matrix.
fn glorot<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::param(rows, cols, data)
}

/// One attention head: a shared linear map, source/destination attention
/// vectors, and a projection of the edge-feature vector into the logit.
#[derive(Debug, Clone)]
pub struct GatHead<F: Scalar> {
    pub weight: Tensor<F>,
    pub attn_src: Tensor<F>,
    pub attn_dst: Tensor<F>,
    pub edge_proj: Tensor<F>,
}

impl<F: Scalar> GatHead<F> {
    fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, edge_dim: usize) -> Self {
        GatHead {
            weight: glorot(rng, in_dim, out_dim),
            attn_src: glorot(rng, out_dim, 1),
            attn_dst: glorot(rng, out_dim, 1),
            edge_proj: glorot(rng, edge_dim, 1),
        }
    }

    /// Attention-weighted aggregation over in-neighborhoods (every node also
    /// attends to itself through its self-loop edge). Returns the aggregated
    /// rows and the per-edge attention coefficients.
    fn forward(&self, x: &Tensor<F>, graph: &GraphTensors<F>, slope: f64) -> (Tensor<F>, Tensor<F>) {
        let transformed = x.matmul(&self.weight);
        let src_score = transformed.matmul(&self.attn_src);
        let dst_score = transformed.matmul(&self.attn_dst);

        let src_idx: Vec<i64> = graph.edge_src.iter().map(|&i| i as i64).collect();
        let dst_idx: Vec<i64> = graph.edge_dst.iter().map(|&i| i as i64).collect();
        let logits = src_score
            .gather_rows(&src_idx)
            .add(&dst_score.gather_rows(&dst_idx))
            .add(&graph.edge_features.matmul(&self.edge_proj))
            .leaky_relu(slope);
        let attention = logits.segment_softmax(&graph.edge_dst, graph.num_nodes);

        let messages = transformed.gather_rows(&src_idx).row_scale(&attention);
        let aggregated = messages.scatter_add_rows(&graph.edge_dst, graph.num_nodes);
        (aggregated, attention)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.attn_src"), self.attn_src.clone()));
        out.push((format!("{prefix}.attn_dst"), self.attn_dst.clone()));
        out.push((format!("{prefix}.edge_proj"), self.edge_proj.clone()));
    }
}

/// A multi-head graph attention layer. Hidden layers concatenate head
/// outputs and apply the configured activation; the output layer averages
/// heads and stays linear.
#[derive(Debug, Clone)]
pub struct GatLayer<F: Scalar> {
    heads: Vec<GatHead<F>>,
    slope: f64,
    activation: Option<Activation>,
    concat: bool,
}

impl<F: Scalar> GatLayer<F> {
    pub fn hidden(
        rng: &mut ChaCha8Rng,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        edge_dim: usize,
        slope: f64,
        activation: Activation,
    ) -> Self {
        GatLayer {
            heads: (0..heads)
                .map(|_| GatHead::new(rng, in_dim, out_dim, edge_dim))
                .collect(),
            slope,
            activation: Some(activation),
            concat: true,
        }
    }

    pub fn output(
        rng: &mut ChaCha8Rng,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        edge_dim: usize,
        slope: f64,
    ) -> Self {
        GatLayer {
            heads: (0..heads)
                .map(|_| GatHead::new(rng, in_dim, out_dim, edge_dim))
                .collect(),
            slope,
            activation: None,
            concat: false,
        }
    }

    /// Output width given the head layout.
    pub fn out_dim(&self) -> usize {
        let per_head = self.heads[0].weight.cols();
        if self.concat {
            per_head * self.heads.len()
        } else {
            per_head
        }
    }

    pub fn forward(&self, x: &Tensor<F>, graph: &GraphTensors<F>) -> (Tensor<F>, Vec<Tensor<F>>) {
        let mut attentions = Vec::with_capacity(self.heads.len());
        let mut combined: Option<Tensor<F>> = None;
        for head in &self.heads {
            let (out, attention) = head.forward(x, graph, self.slope);
            attentions.push(attention);
            combined = Some(match combined {
                None => out,
                Some(acc) => {
                    if self.concat {
                        acc.concat_cols(&out)
                    } else {
                        acc.add(&out)
                    }
                }
            });
        }
        let mut out = combined.expect("at least one head");
        if !self.concat && self.heads.len() > 1 {
            out = out.scale(1.0 / self.heads.len() as f64);
        }
        if let Some(activation) = self.activation {
            out = activation.apply(&out);
        }
        (out, attentions)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        for (i, head) in self.heads.iter().enumerate() {
            head.params(&format!("{prefix}.head{i}"), out);
        }
    }
}

/// Standard LSTM layer with fused gate weights (order: input, forget, cell,
/// output). The forget-gate bias starts at one.
#[derive(Debug, Clone)]
pub struct LstmLayer<F: Scalar> {
    pub input_weights: Tensor<F>,
    pub hidden_weights: Tensor<F>,
    pub bias: Tensor<F>,
    hidden: usize,
}

impl<F: Scalar> LstmLayer<F> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> Self {
        let mut bias = vec![F::zero(); 4 * hidden];
        for b in bias.iter_mut().skip(hidden).take(hidden) {
            *b = F::one();
        }
        LstmLayer {
            input_weights: glorot(rng, in_dim, 4 * hidden),
            hidden_weights: glorot(rng, hidden, 4 * hidden),
            bias: Tensor::param(1, 4 * hidden, bias),
            hidden,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// One cell step over a batch.
    fn step(&self, x: &Tensor<F>, h: &Tensor<F>, c: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let hidden = self.hidden;
        let gates = x
            .matmul(&self.input_weights)
            .add(&h.matmul(&self.hidden_weights))
            .add_row(&self.bias);
        let input_gate = gates.slice_cols(0, hidden).sigmoid();
        let forget_gate = gates.slice_cols(hidden, 2 * hidden).sigmoid();
        let cell_update = gates.slice_cols(2 * hidden, 3 * hidden).tanh_act();
        let output_gate = gates.slice_cols(3 * hidden, 4 * hidden).sigmoid();
        let c_next = forget_gate.mul(c).add(&input_gate.mul(&cell_update));
        let h_next = output_gate.mul(&c_next.tanh_act());
        (h_next, c_next)
    }

    /// Run over a padded sequence. `masks[t]` is a `batch x 1` column of
    /// 0/1; masked-out (padded) steps carry the previous state through
    /// unchanged, so the last output equals the state at each row's final
    /// real position.
    pub fn forward_sequence(
        &self,
        inputs: &[Tensor<F>],
        masks: &[Tensor<F>],
        inverse_masks: &[Tensor<F>],
    ) -> Vec<Tensor<F>> {
        assert_eq!(inputs.len(), masks.len());
        let batch = inputs.first().map_or(0, Tensor::rows);
        let mut h = Tensor::zeros(batch, self.hidden);
        let mut c = Tensor::zeros(batch, self.hidden);
        let mut outputs = Vec::with_capacity(inputs.len());
        for ((x, mask), inverse) in inputs.iter().zip(masks).zip(inverse_masks) {
            let (h_new, c_new) = self.step(x, &h, &c);
            h = h_new.row_scale(mask).add(&h.row_scale(inverse));
            c = c_new.row_scale(mask).add(&c.row_scale(inverse));
            outputs.push(h.clone());
        }
        outputs
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}.input_weights"), self.input_weights.clone()));
        out.push((format!("{prefix}.hidden_weights"), self.hidden_weights.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Dense layer with bias.
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: glorot(rng, in_dim, out_dim),
            bias: Tensor::param(1, out_dim, vec![F::zero(); out_dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.matmul(&self.weight).add_row(&self.bias)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}
