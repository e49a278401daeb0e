//! Closed-form multiply-accumulate counts for one training step.

use serde::{Deserialize, Serialize};

use crate::classifier::HeadConfig;
use crate::encoder::EncoderConfig;

/// Multiply-accumulates per training step (forward plus a backward counted as twice the forward).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub encoder: f64,
    pub head: f64,
    pub total: f64,
}

/// Forward cost of one block for one sequence of length `seq_len`.
fn block_forward(cfg: &EncoderConfig, seq_len: usize) -> f64 {
    let (l, d, f) = (seq_len as f64, cfg.d_model as f64, cfg.d_ff as f64);
    // Q, K, V, O projections; scores and context; two feed-forward layers
    4.0 * l * d * d + 2.0 * l * l * d + 2.0 * l * d * f
}

pub fn estimate_cost(encoder: &EncoderConfig, head: &HeadConfig, seq_len: usize, batch_size: usize) -> CostEstimate {
    let per_step = 3.0 * batch_size as f64;
    let enc = encoder.block_subset.len() as f64 * block_forward(encoder, seq_len) * per_step;
    let [a, b, c, d] = head.widths();
    let head = (a * b + b * c + c * d) as f64 * per_step;
    CostEstimate {
        encoder: enc,
        head,
        total: enc + head,
    }
}
