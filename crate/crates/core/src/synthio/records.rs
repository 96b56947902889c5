use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::geometry::BinaryMask;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub w: u32,
    pub h: u32,
    pub counts: Vec<u32>,
}

impl MaskRecord {
    pub fn to_mask(&self) -> Result<BinaryMask> {
        BinaryMask::from_rle(self.w, self.h, self.counts.clone())
    }
}

impl From<&BinaryMask> for MaskRecord {
    fn from(m: &BinaryMask) -> Self {
        Self {
            w: m.width(),
            h: m.height(),
            counts: m.counts().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Support,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub role: ImageRole,
    /// Feature-map blob path relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub num_classes: u32,
    pub shots: u32,
    pub images: Vec<ImageRecord>,
    pub supports: String,
    pub proposals: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportRecord {
    pub image_id: String,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRecord>,
    pub score: f64,
    /// Base64 of little-endian `f32` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Base64 of the vector as little-endian `f32`.
pub fn encode_feature<S: Scalar>(v: &FeatureVector<S>) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v.as_slice() {
        bytes.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_feature<S: Scalar>(s: &str) -> Result<FeatureVector<S>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Format(format!("feature is not valid base64: {e}")))?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "feature byte length {} is not a positive multiple of 4",
            bytes.len()
        )));
    }
    let values: Vec<S> = bytes
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("feature contains non-finite values".into()));
    }
    Ok(FeatureVector(values))
}
