//! Feature-map blob: a 16-byte header followed by `C * h * w` little-endian `f32` values,
//! channel-major then row-major.
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `b"FMAP"`       |
//! | 4      | 2    | version (u16 LE) = 1  |
//! | 6      | 2    | channels C (u16 LE)   |
//! | 8      | 4    | grid height (u32 LE)  |
//! | 12     | 4    | grid width (u32 LE)   |

use std::path::Path;

use crate::features::FeatureMap;
use crate::{Error, Result, Scalar};

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_feature_map<S: Scalar>(fm: &FeatureMap<S>) -> Result<Vec<u8>> {
    let channels = u16::try_from(fm.channels)
        .map_err(|_| Error::Format(format!("{} channels exceed the u16 header field", fm.channels)))?;
    let mut out = Vec::with_capacity(HEADER_LEN + fm.data.len() * 4);
    out.extend_from_slice(&FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&(fm.grid_h as u32).to_le_bytes());
    out.extend_from_slice(&(fm.grid_w as u32).to_le_bytes());
    for v in &fm.data {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    Ok(out)
}

/// Parses a blob; the source image size is not stored in the blob and must be supplied.
pub fn decode_feature_map<S: Scalar>(bytes: &[u8], image_w: u32, image_h: u32) -> Result<FeatureMap<S>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("feature map blob is {} bytes, shorter than its header", bytes.len())));
    }
    if bytes[0..4] != FMAP_MAGIC {
        return Err(Error::Format("bad feature map magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FMAP_VERSION {
        return Err(Error::Format(format!("unsupported feature map version {version}")));
    }
    let channels = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let grid_h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let grid_w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + channels * grid_h * grid_w * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "feature map blob is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    FeatureMap::new(channels, grid_h, grid_w, data, image_w, image_h)
}

pub fn write_feature_map<S: Scalar>(path: &Path, fm: &FeatureMap<S>) -> Result<()> {
    let bytes = encode_feature_map(fm)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_map<S: Scalar>(path: &Path, image_w: u32, image_h: u32) -> Result<FeatureMap<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes, image_w, image_h)
}
