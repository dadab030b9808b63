//! Quantization-format simulation: symmetric int8 (per-tensor or
//! per-channel), groupwise symmetric int4, and the FP8 E4M3 byte format,
//! with round-trip error measurement.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod fp8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantFormat {
    /// Symmetric int8, codes in [-127, 127], scale = max|x| / 127.
    Int8Symmetric,
    /// Symmetric int4, codes in [-8, 7], scale = max|x| / 7 per group.
    Int4Group,
    /// 8-bit float, 4 exponent / 3 mantissa bits, saturating at 448.
    Fp8E4M3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "granularity", content = "group_size")]
pub enum Granularity {
    PerTensor,
    /// One scale per index of the last axis.
    PerChannel,
    /// One scale per contiguous run of the flattened tensor; a smaller final
    /// group is allowed and marked on the result.
    PerGroup(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub format: QuantFormat,
    #[serde(flatten)]
    pub granularity: Granularity,
}

impl QuantSpec {
    pub fn int8_per_tensor() -> Self {
        Self { format: QuantFormat::Int8Symmetric, granularity: Granularity::PerTensor }
    }

    pub fn int8_per_channel() -> Self {
        Self { format: QuantFormat::Int8Symmetric, granularity: Granularity::PerChannel }
    }

    pub fn int4_group(group_size: usize) -> Self {
        Self { format: QuantFormat::Int4Group, granularity: Granularity::PerGroup(group_size) }
    }

    pub fn fp8() -> Self {
        Self { format: QuantFormat::Fp8E4M3, granularity: Granularity::PerTensor }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.format, self.granularity) {
            (_, Granularity::PerGroup(0)) => Err(Error::invalid("group size must be positive")),
            (QuantFormat::Int4Group, Granularity::PerGroup(_)) => Ok(()),
            (QuantFormat::Int4Group, _) => {
                Err(Error::invalid("int4 format requires per-group granularity"))
            }
            (QuantFormat::Fp8E4M3, Granularity::PerTensor) => Ok(()),
            (QuantFormat::Fp8E4M3, _) => {
                Err(Error::invalid("fp8 format is a direct codec; use per-tensor granularity"))
            }
            (QuantFormat::Int8Symmetric, Granularity::PerGroup(_)) => {
                Err(Error::invalid("int8 format uses per-tensor or per-channel granularity"))
            }
            (QuantFormat::Int8Symmetric, _) => Ok(()),
        }
    }
}

/// Quantized payload plus the scales needed to reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub spec: QuantSpec,
    pub shape: Vec<usize>,
    /// int8/int4 codes as signed bytes, fp8 as raw bit patterns.
    pub codes: Vec<i8>,
    pub scales: Vec<f32>,
    /// True when per-group granularity left a smaller final group.
    pub ragged_final_group: bool,
}

impl QuantizedTensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Indices of each granularity unit's elements, as (unit, stride walk).
fn for_each_unit<F: FnMut(usize, &mut dyn Iterator<Item = usize>)>(
    shape: &[usize],
    granularity: Granularity,
    mut f: F,
) {
    let count: usize = shape.iter().product();
    match granularity {
        Granularity::PerTensor => {
            f(0, &mut (0..count));
        }
        Granularity::PerChannel => {
            let channels = *shape.last().expect("nonempty shape");
            for ch in 0..channels {
                f(ch, &mut (ch..count).step_by(channels));
            }
        }
        Granularity::PerGroup(g) => {
            let groups = count.div_ceil(g);
            for unit in 0..groups {
                let start = unit * g;
                let end = (start + g).min(count);
                f(unit, &mut (start..end));
            }
        }
    }
}

fn unit_count(shape: &[usize], granularity: Granularity) -> usize {
    let count: usize = shape.iter().product();
    match granularity {
        Granularity::PerTensor => 1,
        Granularity::PerChannel => *shape.last().expect("nonempty shape"),
        Granularity::PerGroup(g) => count.div_ceil(g),
    }
}

fn quantize_symmetric(
    data: &[f32],
    shape: &[usize],
    granularity: Granularity,
    q_max: f32,
) -> (Vec<i8>, Vec<f32>) {
    let mut codes = vec![0i8; data.len()];
    let mut scales = vec![0.0f32; unit_count(shape, granularity)];
    for_each_unit(shape, granularity, |unit, idxs| {
        let idxs: Vec<usize> = idxs.collect();
        let max_abs = idxs.iter().map(|&i| data[i].abs()).fold(0.0f32, f32::max);
        // An all-zero unit keeps scale 0 and all-zero codes; no division.
        if max_abs == 0.0 {
            scales[unit] = 0.0;
            return;
        }
        let scale = max_abs / q_max;
        scales[unit] = scale;
        let lo = -(q_max + 1.0);
        for &i in &idxs {
            let q = (data[i] / scale).round().clamp(lo, q_max);
            codes[i] = q as i8;
        }
    });
    (codes, scales)
}

/// Quantize a flat tensor with the given shape under `spec`.
pub fn quantize(data: &[f32], shape: &[usize], spec: QuantSpec) -> Result<QuantizedTensor> {
    spec.validate()?;
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("bad tensor shape {shape:?}")));
    }
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::invalid(format!(
            "shape {shape:?} implies {count} elements, got {}",
            data.len()
        )));
    }
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("input must be finite, found {bad}")));
    }
    let (codes, scales) = match spec.format {
        QuantFormat::Int8Symmetric => quantize_symmetric(data, shape, spec.granularity, 127.0),
        QuantFormat::Int4Group => quantize_symmetric(data, shape, spec.granularity, 7.0),
        QuantFormat::Fp8E4M3 => {
            let codes = data.iter().map(|&v| fp8::encode(v) as i8).collect();
            (codes, Vec::new())
        }
    };
    let ragged = match spec.granularity {
        Granularity::PerGroup(g) => count % g != 0,
        _ => false,
    };
    Ok(QuantizedTensor {
        spec,
        shape: shape.to_vec(),
        codes,
        scales,
        ragged_final_group: ragged,
    })
}

/// Reconstruct real values: codes times their unit's scale (or the FP8
/// decode). Codes outside the format's range are rejected.
pub fn dequantize(q: &QuantizedTensor) -> Result<Vec<f32>> {
    q.spec.validate()?;
    let count = q.element_count();
    if q.codes.len() != count {
        return Err(Error::CorruptTensor(format!(
            "code count {} does not match shape {:?}",
            q.codes.len(),
            q.shape
        )));
    }
    let mut out = vec![0.0f32; count];
    match q.spec.format {
        QuantFormat::Fp8E4M3 => {
            for (i, &c) in q.codes.iter().enumerate() {
                let v = fp8::decode(c as u8);
                if v.is_nan() {
                    return Err(Error::CorruptTensor(format!("code {i} is a NaN pattern")));
                }
                out[i] = v;
            }
        }
        format => {
            let (lo, hi) = match format {
                QuantFormat::Int8Symmetric => (-127i8, 127i8),
                QuantFormat::Int4Group => (-8i8, 7i8),
                QuantFormat::Fp8E4M3 => unreachable!(),
            };
            if q.scales.len() != unit_count(&q.shape, q.spec.granularity) {
                return Err(Error::CorruptTensor(format!(
                    "scale count {} does not match granularity",
                    q.scales.len()
                )));
            }
            for (i, &c) in q.codes.iter().enumerate() {
                if c < lo || c > hi {
                    return Err(Error::CorruptTensor(format!(
                        "code {c} at index {i} outside [{lo}, {hi}]"
                    )));
                }
            }
            for_each_unit(&q.shape, q.spec.granularity, |unit, idxs| {
                let scale = q.scales[unit];
                for i in idxs {
                    out[i] = q.codes[i] as f32 * scale;
                }
            });
        }
    }
    Ok(out)
}

/// Summary statistics over a set of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub count: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
}

impl ScaleStats {
    fn from(scales: &[f32]) -> Self {
        if scales.is_empty() {
            return Self { count: 0, min: 0.0, max: 0.0, mean: 0.0 };
        }
        let min = scales.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = scales.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mean = scales.iter().map(|&s| s as f64).sum::<f64>() / scales.len() as f64;
        Self { count: scales.len(), min, max, mean }
    }
}

/// Measured error of quantize-then-dequantize against the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantErrorReport {
    pub max_abs_err: f64,
    pub rmse: f64,
    pub scale_stats: ScaleStats,
}

pub fn quant_error_report(data: &[f32], shape: &[usize], spec: QuantSpec) -> Result<QuantErrorReport> {
    let q = quantize(data, shape, spec)?;
    let back = dequantize(&q)?;
    let mut max_abs = 0.0f64;
    let mut sq_sum = 0.0f64;
    for (&x, &y) in data.iter().zip(back.iter()) {
        let err = (x as f64 - y as f64).abs();
        max_abs = max_abs.max(err);
        sq_sum += err * err;
    }
    Ok(QuantErrorReport {
        max_abs_err: max_abs,
        rmse: (sq_sum / data.len() as f64).sqrt(),
        scale_stats: ScaleStats::from(&q.scales),
    })
}

/// File header for the serialized quantized-tensor format.
#[derive(Debug, Serialize, Deserialize)]
struct QuantHeader {
    format: QuantFormat,
    #[serde(flatten)]
    granularity: Granularity,
    shape: Vec<usize>,
}

/// Serialize: one compact JSON header line, then the little-endian code
/// payload (int8/fp8 one byte per code, int4 two codes per byte with the low
/// nibble first), then the f32 scales.
pub fn write_quantized<W: Write>(mut w: W, q: &QuantizedTensor) -> Result<()> {
    let header = QuantHeader {
        format: q.spec.format,
        granularity: q.spec.granularity,
        shape: q.shape.clone(),
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("serializing header: {e}")))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    match q.spec.format {
        QuantFormat::Int4Group => {
            for pair in q.codes.chunks(2) {
                let lo = (pair[0] as u8) & 0x0F;
                let hi = if pair.len() == 2 { (pair[1] as u8) & 0x0F } else { 0 };
                w.write_all(&[lo | (hi << 4)])?;
            }
        }
        _ => {
            for &c in &q.codes {
                w.write_all(&[c as u8])?;
            }
        }
    }
    for &s in &q.scales {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

fn sign_extend_nibble(n: u8) -> i8 {
    if n & 0x8 != 0 {
        (n | 0xF0) as i8
    } else {
        n as i8
    }
}

pub fn read_quantized<R: Read>(mut r: R) -> Result<QuantizedTensor> {
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 1 << 16 {
            return Err(Error::Format("header too large".into()));
        }
    }
    let header: QuantHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let spec = QuantSpec { format: header.format, granularity: header.granularity };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    if header.shape.is_empty() || header.shape.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!("bad shape {:?}", header.shape)));
    }
    let count: usize = header.shape.iter().product();
    let code_bytes = match header.format {
        QuantFormat::Int4Group => count.div_ceil(2),
        _ => count,
    };
    let mut payload = vec![0u8; code_bytes];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    let codes: Vec<i8> = match header.format {
        QuantFormat::Int4Group => {
            let mut codes = Vec::with_capacity(count);
            for &b in &payload {
                codes.push(sign_extend_nibble(b & 0x0F));
                if codes.len() < count {
                    codes.push(sign_extend_nibble(b >> 4));
                }
            }
            codes
        }
        _ => payload.iter().map(|&b| b as i8).collect(),
    };
    let n_scales = match header.format {
        QuantFormat::Fp8E4M3 => 0,
        _ => unit_count(&header.shape, header.granularity),
    };
    let mut scale_bytes = vec![0u8; n_scales * 4];
    r.read_exact(&mut scale_bytes)
        .map_err(|_| Error::Format("truncated scales".into()))?;
    if r.read(&mut byte)? != 0 {
        return Err(Error::Format("trailing bytes after scales".into()));
    }
    let scales: Vec<f32> = scale_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let ragged = match header.granularity {
        Granularity::PerGroup(g) => count % g != 0,
        _ => false,
    };
    Ok(QuantizedTensor {
        spec,
        shape: header.shape,
        codes,
        scales,
        ragged_final_group: ragged,
    })
}

pub fn write_quantized_file(path: &Path, q: &QuantizedTensor) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_quantized(std::io::BufWriter::new(file), q)
}

pub fn read_quantized_file(path: &Path) -> Result<QuantizedTensor> {
    let file = std::fs::File::open(path)?;
    read_quantized(std::io::BufReader::new(file))
}
