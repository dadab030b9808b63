//! Scale-then-compress visual-token pipeline.
//!
//! The library covers the preprocessing and data-engineering side of a
//! vision-language stack at desk scale: any-resolution multi-scale tiling
//! with a pluggable tile encoder, spatial and temporal token compression,
//! loss-delta dataset pruning, fixed-capacity sequence packing, numeric
//! format (int8 / int4 / FP8-E4M3) quantization simulation, and an analytic
//! prefill/decode cost model.

pub mod compress;
pub mod cost;
pub mod error;
pub mod nvt;
pub mod pack;
pub mod prune;
pub mod quant;
pub mod tensor;
pub mod tiling;

pub use compress::{
    count_tokens, stc_inverse, stc_reshape, temporal_pool, tokens_per_tile, TokenCount, TokenGrid,
    VideoTokenTensor,
};
pub use cost::{decode_cost, prefill_cost, video_budget, CostReport, ModelShape};
pub use error::{Error, Result};
pub use pack::{attention_mask, pack_all, unpack, PackPolicy, PackedBatch, Packer, SeqSample};
pub use prune::{
    delta_score, prune_cluster, prune_deltaloss, prune_random, Aggregation, KeepRatios,
    PruneManifest, SampleRecord,
};
pub use quant::{dequantize, quant_error_report, quantize, QuantSpec, QuantizedTensor};
pub use tensor::{block_average, concat_channels, interpolate_bilinear, FeatureMap, Image};
pub use tiling::{
    multiscale_features, plan_tiles, split_tiles, stitch_features, S2Config, ScalePlan,
    TileEncoder, TilePlan, ToyPatchEncoder,
};
