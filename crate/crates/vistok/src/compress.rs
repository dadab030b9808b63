//! Token compression: spatial-to-channel reshape for image token grids and
//! group-averaging over time for video token stacks, plus the token-count
//! arithmetic the two imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{interpolate_bilinear, FeatureMap};
use crate::tiling::TilePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Image,
    VideoFrame,
}

/// Record of a spatial-to-channel reshape applied to a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StcMeta {
    pub k: usize,
    /// True when the grid was first interpolated up to a multiple of `k`.
    pub interpolated: bool,
}

/// A 2-D arrangement of visual tokens; `rows * cols` is the token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub provenance: Provenance,
    pub stc: Option<StcMeta>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>, provenance: Provenance) -> Result<Self> {
        // Reuse the feature-map checks (positive dims, length, finiteness).
        let map = FeatureMap::new(rows, cols, channels, data)?;
        Ok(Self {
            rows,
            cols,
            channels,
            data: map.into_data(),
            provenance,
            stc: None,
        })
    }

    pub fn from_feature_map(map: FeatureMap, provenance: Provenance) -> Self {
        let (rows, cols, channels) = map.shape();
        Self { rows, cols, channels, data: map.into_data(), provenance, stc: None }
    }

    pub fn token_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap::new(self.rows, self.cols, self.channels, self.data.clone())
            .expect("grid invariants imply a valid map")
    }

    #[inline]
    fn at(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.data[(r * self.cols + c) * self.channels + ch]
    }
}

/// A stack of identically shaped per-frame token grids.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTokenTensor {
    pub frames: Vec<TokenGrid>,
}

impl VideoTokenTensor {
    pub fn new(frames: Vec<TokenGrid>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("video tensor needs at least one frame"))?;
        let shape = (first.rows, first.cols, first.channels);
        for (i, f) in frames.iter().enumerate() {
            if (f.rows, f.cols, f.channels) != shape {
                return Err(Error::invalid(format!(
                    "frame {i} shape ({}, {}, {}) differs from frame 0 {:?}",
                    f.rows, f.cols, f.channels, shape
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn token_count(&self) -> usize {
        self.frames.len() * self.frames[0].token_count()
    }
}

/// Fold `k x k` spatial blocks into the channel dimension.
///
/// When `k` divides both sides this is a pure (lossless) reshape: output cell
/// `(i, j)`, channel block `a*k + b` holds input cell `(i*k+a, j*k+b)`. When
/// it does not divide, the grid is first interpolated up to the nearest
/// multiple of `k` per side and the result is flagged in its metadata.
pub fn stc_reshape(g: &TokenGrid, k: usize) -> Result<TokenGrid> {
    if k == 0 {
        return Err(Error::invalid("block side k must be positive"));
    }
    let needs_resize = g.rows % k != 0 || g.cols % k != 0;
    let src;
    let grid = if needs_resize {
        let new_rows = g.rows.div_ceil(k) * k;
        let new_cols = g.cols.div_ceil(k) * k;
        let resized = interpolate_bilinear(&g.to_feature_map(), new_rows, new_cols)?;
        src = TokenGrid::from_feature_map(resized, g.provenance);
        &src
    } else {
        g
    };
    let (rows, cols, c) = (grid.rows, grid.cols, grid.channels);
    let (out_rows, out_cols) = (rows / k, cols / k);
    let out_c = k * k * c;
    let mut out = vec![0.0f32; out_rows * out_cols * out_c];
    for i in 0..out_rows {
        for j in 0..out_cols {
            let base = (i * out_cols + j) * out_c;
            for a in 0..k {
                for b in 0..k {
                    let block = (a * k + b) * c;
                    for ch in 0..c {
                        out[base + block + ch] = grid.at(i * k + a, j * k + b, ch);
                    }
                }
            }
        }
    }
    Ok(TokenGrid {
        rows: out_rows,
        cols: out_cols,
        channels: out_c,
        data: out,
        provenance: g.provenance,
        stc: Some(StcMeta { k, interpolated: needs_resize }),
    })
}

/// Invert a divisible `stc_reshape`; the round trip is bitwise identity.
pub fn stc_inverse(g: &TokenGrid, k: usize) -> Result<TokenGrid> {
    if k == 0 {
        return Err(Error::invalid("block side k must be positive"));
    }
    if g.channels % (k * k) != 0 {
        return Err(Error::invalid(format!(
            "channel count {} is not divisible by k^2 = {}",
            g.channels,
            k * k
        )));
    }
    let c = g.channels / (k * k);
    let (rows, cols) = (g.rows * k, g.cols * k);
    let mut out = vec![0.0f32; rows * cols * c];
    for i in 0..g.rows {
        for j in 0..g.cols {
            for a in 0..k {
                for b in 0..k {
                    let block = (a * k + b) * c;
                    let dst = ((i * k + a) * cols + (j * k + b)) * c;
                    for ch in 0..c {
                        out[dst + ch] = g.at(i, j, block + ch);
                    }
                }
            }
        }
    }
    Ok(TokenGrid {
        rows,
        cols,
        channels: c,
        data: out,
        provenance: g.provenance,
        stc: None,
    })
}

/// Average consecutive groups of `ratio` frames; a smaller final group is
/// averaged over its actual size rather than dropped.
pub fn temporal_pool(v: &VideoTokenTensor, ratio: usize) -> Result<VideoTokenTensor> {
    if ratio == 0 {
        return Err(Error::invalid("pool ratio must be positive"));
    }
    let mut pooled = Vec::with_capacity(v.frames.len().div_ceil(ratio));
    for group in v.frames.chunks(ratio) {
        let first = &group[0];
        let mut acc = vec![0.0f64; first.data.len()];
        for frame in group {
            for (a, &x) in acc.iter_mut().zip(frame.data.iter()) {
                *a += x as f64;
            }
        }
        let inv = 1.0 / group.len() as f64;
        let data: Vec<f32> = acc.iter().map(|&a| (a * inv) as f32).collect();
        pooled.push(TokenGrid {
            rows: first.rows,
            cols: first.cols,
            channels: first.channels,
            data,
            provenance: first.provenance,
            stc: first.stc,
        });
    }
    VideoTokenTensor::new(pooled)
}

/// Token accounting for a tile plan under block-`k` compression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub tokens_per_tile: usize,
    /// Tile count at each scale of the plan.
    pub tiles_per_scale: Vec<usize>,
    /// Cell count of the merged map, which shares the largest scale's grid.
    pub merged_tiles: usize,
    pub total_tokens: usize,
}

/// Tokens per tile after block-`k` compression of a `feature_side` grid,
/// using the same round-up-to-multiple rule as `stc_reshape`.
pub fn tokens_per_tile(feature_side: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("block side k must be positive"));
    }
    if feature_side == 0 {
        return Err(Error::invalid("feature side must be positive"));
    }
    let side = feature_side.div_ceil(k);
    Ok(side * side)
}

/// Count tokens for a plan. Scale merging shares the largest scale's grid,
/// so the total is tokens-per-tile times the merged grid's cell count.
pub fn count_tokens(plan: &TilePlan, k: usize, feature_side: usize) -> Result<TokenCount> {
    let per_tile = tokens_per_tile(feature_side, k)?;
    let tiles_per_scale: Vec<usize> = plan.scales.iter().map(|s| s.tiles()).collect();
    let merged = plan.largest().tiles();
    Ok(TokenCount {
        tokens_per_tile: per_tile,
        tiles_per_scale,
        merged_tiles: merged,
        total_tokens: per_tile * merged,
    })
}

/// JSON sidecar describing a serialized token tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSidecar {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub frames: usize,
    pub k_applied: Option<usize>,
    pub interpolated: bool,
}

impl TokenSidecar {
    pub fn for_grid(g: &TokenGrid) -> Self {
        Self {
            rows: g.rows,
            cols: g.cols,
            channels: g.channels,
            frames: 1,
            k_applied: g.stc.map(|m| m.k),
            interpolated: g.stc.map(|m| m.interpolated).unwrap_or(false),
        }
    }

    pub fn for_video(v: &VideoTokenTensor) -> Self {
        let f = &v.frames[0];
        Self {
            rows: f.rows,
            cols: f.cols,
            channels: f.channels,
            frames: v.frames.len(),
            k_applied: f.stc.map(|m| m.k),
            interpolated: f.stc.map(|m| m.interpolated).unwrap_or(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{plan_tiles, S2Config};
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, channels: usize, seed: u64) -> TokenGrid {
        let mut s = seed.wrapping_add(1);
        let data: Vec<f32> = (0..rows * cols * channels)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f32 / 2147483648.0) - 0.5
            })
            .collect();
        TokenGrid::new(rows, cols, channels, data, Provenance::Image).unwrap()
    }

    #[test]
    fn stc_32_k2_gives_256_tokens() {
        let g = grid(32, 32, 4, 1);
        let out = stc_reshape(&g, 2).unwrap();
        assert_eq!((out.rows, out.cols), (16, 16));
        assert_eq!(out.channels, 16);
        assert_eq!(out.token_count(), 256);
        assert_eq!(out.stc, Some(StcMeta { k: 2, interpolated: false }));
    }

    #[test]
    fn stc_32_k3_interpolates_to_121_tokens() {
        let g = grid(32, 32, 4, 2);
        let out = stc_reshape(&g, 3).unwrap();
        assert_eq!((out.rows, out.cols), (11, 11));
        assert_eq!(out.channels, 36);
        assert_eq!(out.token_count(), 121);
        assert_eq!(out.stc, Some(StcMeta { k: 3, interpolated: true }));
    }

    #[test]
    fn stc_k1_is_identity() {
        let g = grid(5, 7, 3, 3);
        let out = stc_reshape(&g, 1).unwrap();
        assert_eq!(out.data, g.data);
        assert_eq!((out.rows, out.cols, out.channels), (5, 7, 3));
        let back = stc_inverse(&out, 1).unwrap();
        assert_eq!(back.data, g.data);
    }

    #[test]
    fn stc_k0_rejected() {
        let g = grid(4, 4, 1, 4);
        assert!(stc_reshape(&g, 0).is_err());
        assert!(stc_inverse(&g, 0).is_err());
    }

    #[test]
    fn stc_layout_explicit() {
        // 2x2 single-channel grid [0,1;2,3], k=2: one output cell whose
        // channel block order walks the block row-major.
        let g = TokenGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0], Provenance::Image).unwrap();
        let out = stc_reshape(&g, 2).unwrap();
        assert_eq!(out.data, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!((out.rows, out.cols, out.channels), (1, 1, 4));
    }

    #[test]
    fn stc_round_trip_bitwise() {
        let g = grid(32, 32, 4, 5);
        let back = stc_inverse(&stc_reshape(&g, 2).unwrap(), 2).unwrap();
        assert_eq!(back.data, g.data);

        let g = grid(30, 30, 5, 6);
        let back = stc_inverse(&stc_reshape(&g, 5).unwrap(), 5).unwrap();
        assert_eq!(back.data, g.data);
    }

    #[test]
    fn stc_inverse_rejects_bad_channels() {
        let g = grid(4, 4, 3, 7);
        assert!(stc_inverse(&g, 2).is_err());
    }

    #[test]
    fn stc_divisible_preserves_value_multiset() {
        let g = grid(6, 9, 2, 8);
        let out = stc_reshape(&g, 3).unwrap();
        let mut a: Vec<u32> = g.data.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = out.data.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    fn video(frames: usize, rows: usize, cols: usize, seed: u64) -> VideoTokenTensor {
        VideoTokenTensor::new((0..frames).map(|i| {
            let mut g = grid(rows, cols, 2, seed.wrapping_add(i as u64 * 13));
            g.provenance = Provenance::VideoFrame;
            g
        }).collect()).unwrap()
    }

    #[test]
    fn temporal_pool_table_counts() {
        // 8 frames of 16x16, no pooling: 2048 tokens.
        let v = video(8, 16, 16, 1);
        let out = temporal_pool(&v, 1).unwrap();
        assert_eq!(out.token_count(), 2048);
        // 32 frames pooled 4x: 2048.
        let v = video(32, 16, 16, 2);
        let out = temporal_pool(&v, 4).unwrap();
        assert_eq!(out.token_count(), 2048);
        // 256 frames pooled 8x: 8192.
        let v = video(256, 16, 16, 3);
        let out = temporal_pool(&v, 8).unwrap();
        assert_eq!(out.token_count(), 8192);
    }

    #[test]
    fn temporal_pool_ratio_one_is_identity() {
        let v = video(5, 4, 4, 9);
        let out = temporal_pool(&v, 1).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn temporal_pool_full_collapse_is_mean() {
        let v = video(6, 3, 3, 11);
        let out = temporal_pool(&v, 6).unwrap();
        assert_eq!(out.frame_count(), 1);
        for idx in 0..v.frames[0].data.len() {
            let mean: f64 =
                v.frames.iter().map(|f| f.data[idx] as f64).sum::<f64>() / 6.0;
            assert!((out.frames[0].data[idx] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn temporal_pool_ragged_final_group() {
        let v = video(7, 2, 2, 13);
        let out = temporal_pool(&v, 3).unwrap();
        assert_eq!(out.frame_count(), 3);
        // Final group holds frame 6 alone.
        assert_eq!(out.frames[2].data, v.frames[6].data);
    }

    #[test]
    fn temporal_pool_preserves_mean_when_divisible() {
        let v = video(8, 4, 4, 17);
        let out = temporal_pool(&v, 4).unwrap();
        let mean = |t: &VideoTokenTensor| -> f64 {
            let total: f64 = t
                .frames
                .iter()
                .flat_map(|f| f.data.iter())
                .map(|&v| v as f64)
                .sum();
            total / (t.frames.len() * t.frames[0].data.len()) as f64
        };
        assert!((mean(&v) - mean(&out)).abs() < 1e-9);
    }

    #[test]
    fn temporal_pool_zero_ratio_rejected() {
        let v = video(2, 2, 2, 19);
        assert!(temporal_pool(&v, 0).is_err());
    }

    #[test]
    fn tokens_per_tile_reference_values() {
        assert_eq!(tokens_per_tile(32, 2).unwrap(), 256);
        assert_eq!(tokens_per_tile(32, 3).unwrap(), 121);
        assert_eq!(tokens_per_tile(32, 32).unwrap(), 1);
    }

    #[test]
    fn count_tokens_uses_merged_grid() {
        let cfg = S2Config::default();
        let plan = plan_tiles(600, 800, &cfg).unwrap();
        let count = count_tokens(&plan, 3, cfg.feature_side).unwrap();
        assert_eq!(count.tokens_per_tile, 121);
        assert_eq!(count.tiles_per_scale, vec![1, 4, 12]);
        assert_eq!(count.merged_tiles, 12);
        assert_eq!(count.total_tokens, 121 * 12);
    }

    proptest! {
        #[test]
        fn stc_bijective_when_divisible(r in 1usize..6, c in 1usize..6, ch in 1usize..4, k in 1usize..5, seed in 0u64..500) {
            let g = grid(r * k, c * k, ch, seed);
            let out = stc_reshape(&g, k).unwrap();
            prop_assert!(!out.stc.unwrap().interpolated);
            let back = stc_inverse(&out, k).unwrap();
            prop_assert_eq!(back.data, g.data);
        }
    }
}
