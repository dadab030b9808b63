//! Pipeline configuration, loadable from one JSON file. Unknown keys are
//! rejected so typos surface as config errors instead of silent defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vistok::cost::ModelShape;
use vistok::quant::QuantSpec;
use vistok::{Error, Result, S2Config};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub channels: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channels: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// int8 | int4 | fp8
    pub format: String,
    /// per-tensor | per-channel | per-group
    pub granularity: String,
    pub group_size: Option<usize>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            format: "int8".to_string(),
            granularity: "per-channel".to_string(),
            group_size: None,
        }
    }
}

impl QuantConfig {
    pub fn to_spec(&self) -> Result<QuantSpec> {
        build_spec(&self.format, &self.granularity, self.group_size)
    }
}

pub fn build_spec(format: &str, granularity: &str, group_size: Option<usize>) -> Result<QuantSpec> {
    use vistok::quant::{Granularity, QuantFormat};
    let format = match format {
        "int8" => QuantFormat::Int8Symmetric,
        "int4" => QuantFormat::Int4Group,
        "fp8" => QuantFormat::Fp8E4M3,
        other => return Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
    };
    let granularity = match granularity {
        "per-tensor" => Granularity::PerTensor,
        "per-channel" => Granularity::PerChannel,
        "per-group" => Granularity::PerGroup(group_size.ok_or_else(|| {
            Error::InvalidArgument("per-group granularity needs a group size".into())
        })?),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown granularity {other:?}"
            )))
        }
    };
    let spec = QuantSpec { format, granularity };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub s2: S2Config,
    /// Spatial-to-channel block side.
    pub stc_k: usize,
    pub temporal_pool_ratio: usize,
    pub encoder: EncoderConfig,
    pub quant: QuantConfig,
    pub model: ModelShape,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            s2: S2Config::default(),
            stc_k: 2,
            temporal_pool_ratio: 1,
            encoder: EncoderConfig::default(),
            quant: QuantConfig::default(),
            model: ModelShape::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.s2.validate()?;
        if self.stc_k == 0 {
            return Err(Error::InvalidArgument("stc_k must be positive".into()));
        }
        if self.temporal_pool_ratio == 0 {
            return Err(Error::InvalidArgument(
                "temporal_pool_ratio must be positive".into(),
            ));
        }
        if self.encoder.channels == 0 {
            return Err(Error::InvalidArgument(
                "encoder needs at least one channel".into(),
            ));
        }
        self.quant.to_spec()?;
        self.model.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_names_offender() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"stc_kk": 2}"#).unwrap_err();
        assert!(err.to_string().contains("stc_kk"), "{err}");
        let err =
            serde_json::from_str::<PipelineConfig>(r#"{"s2": {"tile_sides": 448}}"#).unwrap_err();
        assert!(err.to_string().contains("tile_sides"), "{err}");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"stc_k": 3}"#).unwrap();
        assert_eq!(cfg.stc_k, 3);
        assert_eq!(cfg.s2, S2Config::default());
    }

    #[test]
    fn quant_spec_construction() {
        assert!(build_spec("int8", "per-channel", None).is_ok());
        assert!(build_spec("int4", "per-group", Some(128)).is_ok());
        assert!(build_spec("int4", "per-tensor", None).is_err());
        assert!(build_spec("fp8", "per-tensor", None).is_ok());
        assert!(build_spec("int9", "per-tensor", None).is_err());
        assert!(build_spec("int4", "per-group", None).is_err());
    }
}
