//! Dense feature-map substrate: bilinear interpolation, block pooling, and
//! channel concatenation. Everything downstream moves data through these
//! three kernels.

use crate::error::{Error, Result};

/// Dense rank-3 grid of features, row-major `(row, column, channel)`.
///
/// Construction rejects non-finite values; every downstream invariant
/// assumes finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::invalid("feature map dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels} = {expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature map admits only finite values, found {bad}"
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Constant-valued map.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub(crate) fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    /// Extract the channel block `[from, to)` as its own map.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<FeatureMap> {
        if from >= to || to > self.channels {
            return Err(Error::invalid(format!(
                "channel slice [{from}, {to}) out of range for {} channels",
                self.channels
            )));
        }
        let span = to - from;
        let mut out = Vec::with_capacity(self.height * self.width * span);
        for rc in 0..self.height * self.width {
            let base = rc * self.channels;
            out.extend_from_slice(&self.data[base + from..base + to]);
        }
        FeatureMap::new(self.height, self.width, span, out)
    }
}

/// Raster image with values in `[0, 1]`, grayscale or RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    map: FeatureMap,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "image values must lie in [0, 1], found {bad}"
            )));
        }
        Ok(Self { map: FeatureMap::new(height, width, channels, data)? })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid("image fill value must lie in [0, 1]"));
        }
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn channels(&self) -> usize {
        self.map.channels()
    }

    pub fn data(&self) -> &[f32] {
        self.map.data()
    }

    /// View the pixel grid as a feature map (same memory layout).
    pub fn as_feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_feature_map(self) -> FeatureMap {
        self.map
    }

    /// Rebuild an image from pixel features. Values must already be in range;
    /// bilinear resampling of an image preserves the range, so resized maps
    /// pass this check.
    pub fn from_feature_map(map: FeatureMap) -> Result<Self> {
        if map.channels() != 1 && map.channels() != 3 {
            return Err(Error::invalid(format!(
                "image channels must be 1 or 3, got {}",
                map.channels()
            )));
        }
        if let Some(bad) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "image values must lie in [0, 1], found {bad}"
            )));
        }
        Ok(Self { map })
    }

    /// Bilinear resize to `(out_h, out_w)`.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Image> {
        let resized = interpolate_bilinear(&self.map, out_h, out_w)?;
        // Convex combinations of in-range values stay in range.
        Ok(Self { map: resized })
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Source coordinate and blend weight for one output index under
/// align-corners-false sampling, with edge clamping.
#[inline]
fn sample_axis(out_idx: usize, src_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / out_len as f64;
    let pos = (out_idx as f64 + 0.5) * scale - 0.5;
    let floor = pos.floor();
    let frac = pos - floor;
    let clamp = |v: f64| -> usize {
        if v < 0.0 {
            0
        } else if v >= src_len as f64 {
            src_len - 1
        } else {
            v as usize
        }
    };
    let lo = clamp(floor);
    let hi = clamp(floor + 1.0);
    // Both neighbors clamp to the same sample at the edges; the blend then
    // degenerates to that sample regardless of frac.
    if lo == hi {
        (lo, hi, 0.0)
    } else {
        (lo, hi, frac)
    }
}

/// Bilinear interpolation to `(out_h, out_w)` under align-corners-false
/// sampling. Each output value is a convex combination of the four nearest
/// source samples; the identity size is bitwise exact.
pub fn interpolate_bilinear(src: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "interpolation target must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w, c) = src.shape();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for oy in 0..out_h {
        let (y0, y1, dy) = sample_axis(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, dx) = sample_axis(ox, w, out_w);
            for ch in 0..c {
                let v00 = src.get(y0, x0, ch) as f64;
                let v01 = src.get(y0, x1, ch) as f64;
                let v10 = src.get(y1, x0, ch) as f64;
                let v11 = src.get(y1, x1, ch) as f64;
                let top = lerp(v00, v01, dx);
                let bot = lerp(v10, v11, dx);
                out[(oy * out_w + ox) * c + ch] = lerp(top, bot, dy) as f32;
            }
        }
    }
    FeatureMap::new(out_h, out_w, c, out)
}

/// Mean-pool non-overlapping `bh x bw` blocks. Block dims must divide the map.
pub fn block_average(src: &FeatureMap, bh: usize, bw: usize) -> Result<FeatureMap> {
    let (h, w, c) = src.shape();
    if bh == 0 || bw == 0 {
        return Err(Error::invalid("block dimensions must be positive"));
    }
    if h % bh != 0 || w % bw != 0 {
        return Err(Error::invalid(format!(
            "block {bh}x{bw} does not divide map {h}x{w}"
        )));
    }
    let oh = h / bh;
    let ow = w / bw;
    let norm = 1.0 / (bh * bw) as f64;
    let mut out = vec![0.0f32; oh * ow * c];
    for by in 0..oh {
        for bx in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for iy in 0..bh {
                    for ix in 0..bw {
                        acc += src.get(by * bh + iy, bx * bw + ix, ch) as f64;
                    }
                }
                out[(by * ow + bx) * c + ch] = (acc * norm) as f32;
            }
        }
    }
    FeatureMap::new(oh, ow, c, out)
}

/// Concatenate maps along the channel axis, in list order.
pub fn concat_channels(maps: &[FeatureMap]) -> Result<FeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("concat_channels requires at least one map"))?;
    let (h, w, _) = first.shape();
    for (i, m) in maps.iter().enumerate() {
        if m.height() != h || m.width() != w {
            return Err(Error::invalid(format!(
                "map {i} has shape {}x{}, expected {h}x{w}",
                m.height(),
                m.width()
            )));
        }
    }
    let total_c: usize = maps.iter().map(|m| m.channels()).sum();
    let mut out = Vec::with_capacity(h * w * total_c);
    for rc in 0..h * w {
        for m in maps {
            let base = rc * m.channels();
            out.extend_from_slice(&m.data()[base..base + m.channels()]);
        }
    }
    FeatureMap::new(h, w, total_c, out)
}
