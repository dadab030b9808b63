//! Dynamic multi-scale tiling geometry.
//!
//! An image is resized to several scales. Every scale except the largest uses
//! a square grid of fixed side; the largest scale picks the tile grid whose
//! aspect ratio is closest (in log space) to the image's, within configured
//! tile-count bounds. Tiles are encoded independently, stitched per scale,
//! interpolated to the largest scale's size, and concatenated channel-wise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{concat_channels, interpolate_bilinear, FeatureMap, Image};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2Config {
    /// Pixel side of one tile.
    pub tile_side: usize,
    /// Strictly increasing scale multipliers; the first must be 1.
    pub scale_factors: Vec<usize>,
    /// Upper bound on the largest scale's tile count.
    pub max_tiles_largest_scale: usize,
    /// Lower bound on the largest scale's tile count.
    pub min_tiles_largest_scale: usize,
    /// Feature cells per tile side produced by the encoder.
    pub feature_side: usize,
}

impl Default for S2Config {
    fn default() -> Self {
        Self {
            tile_side: 448,
            scale_factors: vec![1, 2, 3],
            max_tiles_largest_scale: 12,
            min_tiles_largest_scale: 1,
            feature_side: 32,
        }
    }
}

impl S2Config {
    pub fn validate(&self) -> Result<()> {
        if self.tile_side == 0 || self.feature_side == 0 {
            return Err(Error::invalid("tile_side and feature_side must be positive"));
        }
        if self.scale_factors.first() != Some(&1) {
            return Err(Error::invalid("scale_factors must start at 1"));
        }
        if !self.scale_factors.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("scale_factors must be strictly increasing"));
        }
        if self.min_tiles_largest_scale == 0
            || self.min_tiles_largest_scale > self.max_tiles_largest_scale
        {
            return Err(Error::invalid(
                "need 1 <= min_tiles_largest_scale <= max_tiles_largest_scale",
            ));
        }
        Ok(())
    }
}

/// Resize dimensions and tile grid for one scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub scale_factor: usize,
    pub resized_height: usize,
    pub resized_width: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl ScalePlan {
    pub fn tiles(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

/// The full geometry decision for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub config: S2Config,
    pub original_height: usize,
    pub original_width: usize,
    pub scales: Vec<ScalePlan>,
}

impl TilePlan {
    pub fn largest(&self) -> &ScalePlan {
        self.scales.last().expect("plan has at least one scale")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Log-aspect distance between grid `(rows, cols)` and image `(h, w)`,
/// computed as `ln(max(cols*h, rows*w) / min(cols*h, rows*w))`. The
/// max/min form makes the value identical for the transposed problem, so
/// ties resolve symmetrically.
fn aspect_error(rows: usize, cols: usize, h: usize, w: usize) -> f64 {
    let p = (cols * h) as f64;
    let q = (rows * w) as f64;
    (p.max(q) / p.min(q)).ln()
}

/// Pick the largest-scale grid: feasible tile counts in
/// `[min_tiles, max_tiles]`, minimal log-aspect distance, ties broken by
/// fewer tiles, then fewer rows.
fn best_grid(h: usize, w: usize, min_tiles: usize, max_tiles: usize) -> (usize, usize) {
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for rows in 1..=max_tiles {
        for cols in 1..=max_tiles {
            let tiles = rows * cols;
            if tiles < min_tiles || tiles > max_tiles {
                continue;
            }
            let err = aspect_error(rows, cols, h, w);
            let key = (err, tiles, rows, cols);
            best = match best {
                None => Some(key),
                Some(cur) if (key.0, key.1, key.2) < (cur.0, cur.1, cur.2) => Some(key),
                Some(cur) => Some(cur),
            };
        }
    }
    let (_, _, rows, cols) = best.expect("bounds admit at least one grid");
    (rows, cols)
}

/// Decide per-scale resize dimensions and tile grids for an image.
pub fn plan_tiles(image_h: usize, image_w: usize, cfg: &S2Config) -> Result<TilePlan> {
    cfg.validate()?;
    if image_h == 0 || image_w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let last = cfg.scale_factors.len() - 1;
    let scales = cfg
        .scale_factors
        .iter()
        .enumerate()
        .map(|(i, &factor)| {
            let (rows, cols) = if i == last {
                best_grid(
                    image_h,
                    image_w,
                    cfg.min_tiles_largest_scale,
                    cfg.max_tiles_largest_scale,
                )
            } else {
                (factor, factor)
            };
            ScalePlan {
                scale_factor: factor,
                resized_height: rows * cfg.tile_side,
                resized_width: cols * cfg.tile_side,
                grid_rows: rows,
                grid_cols: cols,
            }
        })
        .collect();
    Ok(TilePlan {
        config: cfg.clone(),
        original_height: image_h,
        original_width: image_w,
        scales,
    })
}

/// Resize the image to one scale's dimensions and cut it into row-major
/// `tile_side` square tiles.
pub fn split_tiles(img: &Image, plan: &TilePlan, scale_index: usize) -> Result<Vec<Image>> {
    let scale = plan
        .scales
        .get(scale_index)
        .ok_or_else(|| Error::invalid(format!("scale index {scale_index} out of range")))?;
    let resized = img.resize(scale.resized_height, scale.resized_width)?;
    let side = plan.config.tile_side;
    let c = resized.channels();
    let mut tiles = Vec::with_capacity(scale.tiles());
    for ty in 0..scale.grid_rows {
        for tx in 0..scale.grid_cols {
            let mut data = Vec::with_capacity(side * side * c);
            for iy in 0..side {
                let row = ty * side + iy;
                let start = (row * resized.width() + tx * side) * c;
                data.extend_from_slice(&resized.data()[start..start + side * c]);
            }
            tiles.push(Image::new(side, side, c, data)?);
        }
    }
    Ok(tiles)
}

/// Reassemble per-tile feature maps into the whole-image feature map.
/// Tile `(i, j)` of the grid lands at block rows `[i*f, (i+1)*f)`, cols
/// `[j*f, (j+1)*f)`.
pub fn stitch_features(tiles: &[FeatureMap], grid_rows: usize, grid_cols: usize) -> Result<FeatureMap> {
    if grid_rows == 0 || grid_cols == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    if tiles.len() != grid_rows * grid_cols {
        return Err(Error::invalid(format!(
            "expected {} tiles for a {grid_rows}x{grid_cols} grid, got {}",
            grid_rows * grid_cols,
            tiles.len()
        )));
    }
    let (fh, fw, c) = tiles[0].shape();
    if fh != fw {
        return Err(Error::invalid("tiles must be square"));
    }
    for (i, t) in tiles.iter().enumerate() {
        if t.shape() != (fh, fw, c) {
            return Err(Error::invalid(format!(
                "tile {i} has shape {:?}, expected {:?}",
                t.shape(),
                (fh, fw, c)
            )));
        }
    }
    let out_h = grid_rows * fh;
    let out_w = grid_cols * fw;
    let mut out = vec![0.0f32; out_h * out_w * c];
    for ty in 0..grid_rows {
        for tx in 0..grid_cols {
            let tile = &tiles[ty * grid_cols + tx];
            for iy in 0..fh {
                let src = tile.index(iy, 0, 0);
                let dst = ((ty * fh + iy) * out_w + tx * fw) * c;
                out[dst..dst + fw * c].copy_from_slice(&tile.data()[src..src + fw * c]);
            }
        }
    }
    FeatureMap::new(out_h, out_w, c, out)
}

/// Per-tile feature extractor. Equal tile pixels must produce equal features.
pub trait TileEncoder {
    fn channels(&self) -> usize;
    fn encode(&self, tile: &Image) -> Result<FeatureMap>;
}

/// Deterministic stand-in encoder. Channel 0 of every feature cell is the
/// mean intensity of its pixel patch; the remaining channels are fixed
/// seeded random projections of the patch intensities.
pub struct ToyPatchEncoder {
    channels: usize,
    tile_side: usize,
    feature_side: usize,
    /// One weight grid of `patch*patch` values per projection channel.
    weights: Vec<Vec<f32>>,
}

impl ToyPatchEncoder {
    pub fn new(channels: usize, tile_side: usize, feature_side: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("encoder needs at least one channel"));
        }
        if feature_side == 0 || tile_side % feature_side != 0 {
            return Err(Error::invalid(format!(
                "feature_side {feature_side} must divide tile_side {tile_side}"
            )));
        }
        let patch = tile_side / feature_side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (1..channels)
            .map(|_| (0..patch * patch).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Ok(Self { channels, tile_side, feature_side, weights })
    }

    pub fn from_config(channels: usize, cfg: &S2Config, seed: u64) -> Result<Self> {
        Self::new(channels, cfg.tile_side, cfg.feature_side, seed)
    }
}

impl TileEncoder for ToyPatchEncoder {
    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, tile: &Image) -> Result<FeatureMap> {
        if tile.height() != self.tile_side || tile.width() != self.tile_side {
            return Err(Error::invalid(format!(
                "encoder expects {0}x{0} tiles, got {1}x{2}",
                self.tile_side,
                tile.height(),
                tile.width()
            )));
        }
        let f = self.feature_side;
        let patch = self.tile_side / f;
        let pc = tile.channels();
        let mut out = vec![0.0f32; f * f * self.channels];
        let mut intensities = vec![0.0f64; patch * patch];
        for fy in 0..f {
            for fx in 0..f {
                for py in 0..patch {
                    for px in 0..patch {
                        let mut acc = 0.0f64;
                        for ch in 0..pc {
                            acc += tile.as_feature_map().get(fy * patch + py, fx * patch + px, ch)
                                as f64;
                        }
                        intensities[py * patch + px] = acc / pc as f64;
                    }
                }
                let base = (fy * f + fx) * self.channels;
                let mean: f64 = intensities.iter().sum::<f64>() / intensities.len() as f64;
                out[base] = mean as f32;
                for (k, w) in self.weights.iter().enumerate() {
                    let dot: f64 = w
                        .iter()
                        .zip(intensities.iter())
                        .map(|(&wv, &iv)| wv as f64 * iv)
                        .sum();
                    out[base + 1 + k] = (dot / intensities.len() as f64) as f32;
                }
            }
        }
        FeatureMap::new(f, f, self.channels, out)
    }
}

/// Full multi-scale extraction: per scale, split into tiles, encode each,
/// stitch; then interpolate every scale to the largest scale's stitched size
/// and concatenate channels in scale order (smallest first).
pub fn multiscale_features(img: &Image, enc: &dyn TileEncoder, cfg: &S2Config) -> Result<FeatureMap> {
    let plan = plan_tiles(img.height(), img.width(), cfg)?;
    multiscale_features_planned(img, enc, &plan)
}

pub fn multiscale_features_planned(
    img: &Image,
    enc: &dyn TileEncoder,
    plan: &TilePlan,
) -> Result<FeatureMap> {
    let f = plan.config.feature_side;
    let largest = plan.largest();
    let target_h = largest.grid_rows * f;
    let target_w = largest.grid_cols * f;
    let mut per_scale = Vec::with_capacity(plan.scales.len());
    for (i, scale) in plan.scales.iter().enumerate() {
        let tiles = split_tiles(img, plan, i)?;
        let features = tiles
            .iter()
            .map(|t| {
                let m = enc.encode(t)?;
                if m.shape() != (f, f, enc.channels()) {
                    return Err(Error::invalid(format!(
                        "encoder produced shape {:?}, expected {:?}",
                        m.shape(),
                        (f, f, enc.channels())
                    )));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let stitched = stitch_features(&features, scale.grid_rows, scale.grid_cols)?;
        per_scale.push(interpolate_bilinear(&stitched, target_h, target_w)?);
    }
    concat_channels(&per_scale)
}
