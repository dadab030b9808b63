//! Analytic FLOP and byte accounting for the two inference phases: the
//! compute-bound prefill over all visual tokens, and the bandwidth-bound
//! per-token decode. The numbers are model predictions from documented
//! constants, not reproductions of measured latency.
//!
//! Counting conventions, applied throughout:
//! - one multiply-accumulate = 2 FLOPs;
//! - attention per layer = 2 matmuls (QK^T and AV) of `tokens^2 * hidden`
//!   MACs, so `ATTN_FLOP_FACTOR = 4` FLOPs per layer-token^2-hidden;
//! - linear weights per layer = 4 attention projections (4 h^2) plus an
//!   MLP with expansion 4 (8 h^2), so `LINEAR_WEIGHTS_PER_LAYER = 12` h^2;
//! - the decode stage reads every weight matrix once per generated token;
//!   embeddings are lookups, not GEMMs, and are excluded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{Granularity, QuantFormat, QuantSpec};

pub const ATTN_FLOP_FACTOR: u64 = 4;
pub const LINEAR_WEIGHTS_PER_LAYER: u64 = 12;
pub const FLOPS_PER_MAC: u64 = 2;

/// Default per-tile encoder cost: a 12-layer, 768-wide transformer over
/// 1024 patch tokens, under the same attention/linear constants:
/// `4*12*1024^2*768 + 2*12*12*1024*768^2`.
pub const DEFAULT_ENCODER_FLOPS_PER_TILE: u64 = 212_600_881_152;

/// Transformer dimensions the cost model needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub layers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub vocab: u64,
    pub encoder_flops_per_tile: u64,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 256,
            heads: 8,
            vocab: 1000,
            encoder_flops_per_tile: DEFAULT_ENCODER_FLOPS_PER_TILE,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.vocab == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Every weight matrix the decode stage streams, as (name, rows, cols).
    pub fn weight_matrices(&self) -> Vec<(String, u64, u64)> {
        let h = self.hidden;
        let mut out = Vec::new();
        for layer in 0..self.layers {
            for name in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                out.push((format!("layer{layer}.{name}"), h, h));
            }
            out.push((format!("layer{layer}.mlp_up"), 4 * h, h));
            out.push((format!("layer{layer}.mlp_down"), h, 4 * h));
        }
        out.push(("lm_head".to_string(), self.vocab, h));
        out
    }

    pub fn weight_count(&self) -> u64 {
        LINEAR_WEIGHTS_PER_LAYER * self.layers * self.hidden * self.hidden
            + self.vocab * self.hidden
    }
}

/// One stage's accounting. Fields not meaningful for the stage are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub visual_tokens: u64,
    pub prefill_attention_flops: u64,
    pub prefill_linear_flops: u64,
    pub encoder_flops: u64,
    pub decode_flops_per_token: u64,
    pub weight_payload_bytes_per_token: u64,
    pub weight_scale_bytes_per_token: u64,
    pub weight_bytes_per_token: u64,
    pub kv_bytes_per_token: u64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "visual_tokens,prefill_attention_flops,prefill_linear_flops,encoder_flops,decode_flops_per_token,weight_payload_bytes_per_token,weight_scale_bytes_per_token,weight_bytes_per_token,kv_bytes_per_token";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.visual_tokens,
            self.prefill_attention_flops,
            self.prefill_linear_flops,
            self.encoder_flops,
            self.decode_flops_per_token,
            self.weight_payload_bytes_per_token,
            self.weight_scale_bytes_per_token,
            self.weight_bytes_per_token,
            self.kv_bytes_per_token,
        )
    }
}

/// Attention FLOPs for a prefill over `tokens`: exactly quadratic,
/// `ATTN_FLOP_FACTOR * layers * tokens^2 * hidden`.
pub fn attention_flops(tokens: u64, shape: &ModelShape) -> u64 {
    ATTN_FLOP_FACTOR * shape.layers * tokens * tokens * shape.hidden
}

/// Linear-stack FLOPs for a prefill:
/// `FLOPS_PER_MAC * LINEAR_WEIGHTS_PER_LAYER * layers * tokens * hidden^2`.
pub fn linear_flops(tokens: u64, shape: &ModelShape) -> u64 {
    FLOPS_PER_MAC * LINEAR_WEIGHTS_PER_LAYER * shape.layers * tokens * shape.hidden * shape.hidden
}

/// Prefill accounting for `tokens` visual tokens (no encoder term).
pub fn prefill_cost(tokens: u64, shape: &ModelShape) -> Result<CostReport> {
    prefill_cost_tiled(tokens, 0, shape)
}

/// Prefill accounting including the per-tile encoder cost.
pub fn prefill_cost_tiled(tokens: u64, tiles: u64, shape: &ModelShape) -> Result<CostReport> {
    shape.validate()?;
    if tokens == 0 {
        return Err(Error::invalid("prefill needs at least one token"));
    }
    Ok(CostReport {
        visual_tokens: tokens,
        prefill_attention_flops: attention_flops(tokens, shape),
        prefill_linear_flops: linear_flops(tokens, shape),
        encoder_flops: tiles * shape.encoder_flops_per_tile,
        decode_flops_per_token: 0,
        weight_payload_bytes_per_token: 0,
        weight_scale_bytes_per_token: 0,
        weight_bytes_per_token: 0,
        kv_bytes_per_token: 0,
    })
}

/// Payload bits per weight under a numeric format.
fn bits_per_weight(format: QuantFormat) -> u64 {
    match format {
        QuantFormat::Int8Symmetric => 8,
        QuantFormat::Int4Group => 4,
        QuantFormat::Fp8E4M3 => 8,
    }
}

/// Baseline 16-bit weights, for ratio comparisons.
pub fn fp16_weight_bytes(shape: &ModelShape) -> u64 {
    shape.weight_count() * 2
}

fn matrix_payload_bytes(elems: u64, format: QuantFormat) -> u64 {
    // int4 packs two codes per byte, rounded up per matrix.
    (elems * bits_per_weight(format)).div_ceil(8)
}

fn matrix_scale_count(rows: u64, elems: u64, granularity: Granularity) -> u64 {
    match granularity {
        Granularity::PerTensor => 1,
        // Weight matrices quantize per output channel, one scale per row.
        Granularity::PerChannel => rows,
        Granularity::PerGroup(g) => elems.div_ceil(g as u64),
    }
}

/// Decode-stage accounting: weight traffic per generated token under `spec`,
/// KV-cache traffic proportional to context, and GEMV FLOPs.
pub fn decode_cost(shape: &ModelShape, spec: QuantSpec, context: u64) -> Result<CostReport> {
    shape.validate()?;
    spec.validate()?;
    let mut payload = 0u64;
    let mut scale_bytes = 0u64;
    for (_, rows, cols) in shape.weight_matrices() {
        let elems = rows * cols;
        payload += matrix_payload_bytes(elems, spec.format);
        if spec.format != QuantFormat::Fp8E4M3 {
            scale_bytes += 4 * matrix_scale_count(rows, elems, spec.granularity);
        }
    }
    // K and V, 2 bytes per activation element, per layer, over the context.
    let kv = 2 * shape.layers * shape.hidden * context * 2;
    Ok(CostReport {
        visual_tokens: 0,
        prefill_attention_flops: 0,
        prefill_linear_flops: 0,
        encoder_flops: 0,
        decode_flops_per_token: FLOPS_PER_MAC * shape.weight_count(),
        weight_payload_bytes_per_token: payload,
        weight_scale_bytes_per_token: scale_bytes,
        weight_bytes_per_token: payload + scale_bytes,
        kv_bytes_per_token: kv,
    })
}

/// Visual-token budget for a video: `grid_side^2 * ceil(frames / pool_ratio)`.
pub fn video_budget(frames: u64, pool_ratio: u64, grid_side: u64) -> Result<u64> {
    if frames == 0 || grid_side == 0 {
        return Err(Error::invalid("frames and grid side must be positive"));
    }
    if pool_ratio == 0 {
        return Err(Error::invalid("pool ratio must be positive"));
    }
    Ok(grid_side * grid_side * frames.div_ceil(pool_ratio))
}
