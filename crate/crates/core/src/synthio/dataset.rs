use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::fmap::read_feature_map;
use super::records::{decode_feature, GroundTruthRecord, ImageRole, Manifest, ProposalRecord, SupportRecord};
use super::{FORMAT_VERSION, MAX_PROPOSALS_PER_IMAGE, SCORE_FLOOR};
use crate::eval::GroundTruthBox;
use crate::features::{FeatureMap, FeatureVector, SupportAnnotation};
use crate::geometry::{box_to_full_mask, BinaryMask, BoundingBox};
use crate::postproc::rank_by_score;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub role: ImageRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryProposal {
    pub bbox: BoundingBox<f64>,
    pub mask: BinaryMask,
    /// False when the mask was rasterized from the box because the record had none.
    pub mask_given: bool,
    pub score: f64,
    pub feature: Option<FeatureVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub info: ImageInfo,
    pub proposals: Vec<QueryProposal>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub proposals_read: usize,
    pub below_score_floor: usize,
    pub over_image_cap: usize,
    pub dropped_degenerate: usize,
}

/// Validated in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub num_classes: u32,
    pub shots: u32,
    pub images: Vec<ImageInfo>,
    pub supports: Vec<SupportAnnotation<f64>>,
    /// Query images in manifest order.
    pub queries: Vec<QueryImage>,
    pub ground_truth: Vec<GroundTruthBox<f64>>,
    pub feature_maps: BTreeMap<String, FeatureMap<f64>>,
    pub warnings: Vec<String>,
    pub stats: LoadStats,
}

impl Dataset {
    /// True when every query proposal carried its own mask.
    pub fn masks_complete(&self) -> bool {
        self.queries
            .iter()
            .all(|q| q.proposals.iter().all(|p| p.mask_given))
    }

    pub fn proposal_count(&self) -> usize {
        self.queries.iter().map(|q| q.proposals.len()).sum()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_maps
            .values()
            .map(|f| f.channels)
            .next()
            .or_else(|| {
                self.queries
                    .iter()
                    .flat_map(|q| &q.proposals)
                    .find_map(|p| p.feature.as_ref().map(|f| f.len()))
            })
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::load(path, Some(i), e))?);
    }
    Ok(out)
}

fn checked_box(a: [f64; 4], info: &ImageInfo) -> std::result::Result<BoundingBox<f64>, String> {
    let b = BoundingBox::from_array(a).map_err(|e| e.to_string())?;
    b.clamp_to(info.width, info.height)
        .ok_or_else(|| format!("box {a:?} lies outside the {}x{} image", info.width, info.height))
}

/// Mask from the record, or the rasterized box when absent or empty. The string is a
/// warning describing the substitution.
fn resolve_mask(
    mask: Option<&super::records::MaskRecord>,
    bbox: &BoundingBox<f64>,
    info: &ImageInfo,
    what: &str,
) -> std::result::Result<(BinaryMask, bool, Option<String>), String> {
    if let Some(rec) = mask {
        let m = rec.to_mask().map_err(|e| e.to_string())?;
        if m.width() != info.width || m.height() != info.height {
            return Err(format!(
                "mask is {}x{} but image {} is {}x{}",
                m.width(),
                m.height(),
                info.id,
                info.width,
                info.height
            ));
        }
        if !m.is_empty() {
            return Ok((m, true, None));
        }
    }
    let (m, _) = box_to_full_mask(bbox, info.width, info.height);
    let reason = if mask.is_some() { "empty mask" } else { "no mask" };
    Ok((
        m,
        false,
        Some(format!("{what}: {reason}, substituted the box raster")),
    ))
}

/// Loads and validates a dataset. Proposals below the score floor are dropped and each image
/// keeps at most its 500 highest-scored proposals (in file order).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::load(manifest_path, None, e))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let bad_manifest = |msg: String| Error::load(manifest_path, None, msg);

    if manifest.format_version != FORMAT_VERSION {
        return Err(bad_manifest(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.shots == 0 {
        return Err(bad_manifest("shots must be >= 1".into()));
    }
    if manifest.num_classes == 0 {
        return Err(bad_manifest("num_classes must be >= 1".into()));
    }

    let mut images = Vec::with_capacity(manifest.images.len());
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut feature_maps = BTreeMap::new();
    for (i, rec) in manifest.images.iter().enumerate() {
        if rec.width == 0 || rec.height == 0 {
            return Err(Error::load(manifest_path, Some(i), "image dims must be positive"));
        }
        if by_id.insert(rec.id.clone(), i).is_some() {
            return Err(Error::load(manifest_path, Some(i), format!("duplicate image id {}", rec.id)));
        }
        let info = ImageInfo {
            id: rec.id.clone(),
            width: rec.width,
            height: rec.height,
            role: rec.role,
        };
        if let Some(rel) = &rec.feature_map {
            let path = root.join(rel);
            let fm = read_feature_map(&path, rec.width, rec.height).map_err(|e| match e {
                Error::Format(msg) => Error::load(&path, None, msg),
                other => other,
            })?;
            feature_maps.insert(rec.id.clone(), fm);
        }
        images.push(info);
    }
    if let Some(first) = feature_maps.values().next() {
        let c = first.channels;
        if let Some((id, fm)) = feature_maps.iter().find(|(_, f)| f.channels != c) {
            return Err(bad_manifest(format!(
                "feature map of {id} has {} channels, expected {c}",
                fm.channels
            )));
        }
    }

    let lookup = |id: &str, role: ImageRole, file: &Path, rec: usize| -> Result<&ImageInfo> {
        let info = by_id
            .get(id)
            .map(|&i| &images[i])
            .ok_or_else(|| Error::load(file, Some(rec), format!("unknown image id {id}")))?;
        if info.role != role {
            return Err(Error::load(
                file,
                Some(rec),
                format!("image {id} is not a {role:?} image"),
            ));
        }
        Ok(info)
    };

    let mut warnings = Vec::new();
    let mut stats = LoadStats::default();

    let supports_path = root.join(&manifest.supports);
    let mut supports = Vec::new();
    for (i, rec) in read_jsonl::<SupportRecord>(&supports_path)?.into_iter().enumerate() {
        let fail = |msg: String| Error::load(&supports_path, Some(i), msg);
        let info = lookup(&rec.image_id, ImageRole::Support, &supports_path, i)?;
        if rec.class_id >= manifest.num_classes {
            return Err(fail(format!("class_id {} >= num_classes {}", rec.class_id, manifest.num_classes)));
        }
        if !feature_maps.contains_key(&rec.image_id) {
            return Err(fail(format!("support image {} has no feature map", rec.image_id)));
        }
        let bbox = checked_box(rec.bbox, info).map_err(fail)?;
        let (mask, _, warn) = resolve_mask(rec.mask.as_ref(), &bbox, info, &format!("support record {i}"))
            .map_err(fail)?;
        if mask.is_empty() {
            return Err(fail("box covers no pixel centre".into()));
        }
        if let Some(w) = warn {
            log::warn!("{w}");
            warnings.push(w);
        }
        supports.push(SupportAnnotation {
            image_id: rec.image_id,
            bbox,
            class_id: rec.class_id,
            mask,
        });
    }

    let proposals_path = root.join(&manifest.proposals);
    let mut per_image: BTreeMap<usize, Vec<QueryProposal>> = BTreeMap::new();
    let mut feature_dim = feature_maps.values().next().map(|f| f.channels);
    for (i, rec) in read_jsonl::<ProposalRecord>(&proposals_path)?.into_iter().enumerate() {
        let fail = |msg: String| Error::load(&proposals_path, Some(i), msg);
        stats.proposals_read += 1;
        let info = lookup(&rec.image_id, ImageRole::Query, &proposals_path, i)?;
        if !rec.score.is_finite() || !(0.0..=1.0).contains(&rec.score) {
            return Err(fail(format!("score {} outside [0, 1]", rec.score)));
        }
        let bbox = checked_box(rec.bbox, info).map_err(fail)?;
        if rec.score < SCORE_FLOOR {
            stats.below_score_floor += 1;
            continue;
        }
        let feature = match &rec.feature {
            Some(s) => {
                let f: FeatureVector<f64> = decode_feature(s).map_err(|e| fail(e.to_string()))?;
                match feature_dim {
                    None => feature_dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(fail(format!("feature has {} values, expected {d}", f.len())))
                    }
                    _ => {}
                }
                if f.norm() == 0.0 {
                    return Err(fail("feature vector is all zeros".into()));
                }
                Some(f)
            }
            None if feature_maps.contains_key(&rec.image_id) => None,
            None => {
                return Err(fail(format!(
                    "proposal has no feature and image {} has no feature map",
                    rec.image_id
                )))
            }
        };
        let (mask, mask_given, warn) =
            resolve_mask(rec.mask.as_ref(), &bbox, info, &format!("proposal record {i}")).map_err(fail)?;
        if mask.is_empty() {
            let w = format!("proposal record {i}: box covers no pixel centre, dropped");
            log::warn!("{w}");
            warnings.push(w);
            stats.dropped_degenerate += 1;
            continue;
        }
        if let Some(w) = warn {
            log::warn!("{w}");
            warnings.push(w);
        }
        per_image.entry(by_id[&rec.image_id]).or_default().push(QueryProposal {
            bbox,
            mask,
            mask_given,
            score: rec.score,
            feature,
        });
    }

    let gt_path = root.join(&manifest.ground_truth);
    let mut ground_truth = Vec::new();
    for (i, rec) in read_jsonl::<GroundTruthRecord>(&gt_path)?.into_iter().enumerate() {
        let fail = |msg: String| Error::load(&gt_path, Some(i), msg);
        let info = lookup(&rec.image_id, ImageRole::Query, &gt_path, i)?;
        if rec.class_id >= manifest.num_classes {
            return Err(fail(format!("class_id {} >= num_classes {}", rec.class_id, manifest.num_classes)));
        }
        let bbox = checked_box(rec.bbox, info).map_err(fail)?;
        ground_truth.push(GroundTruthBox {
            image_id: rec.image_id,
            bbox,
            class_id: rec.class_id,
        });
    }

    let queries = images
        .iter()
        .enumerate()
        .filter(|(_, info)| info.role == ImageRole::Query)
        .map(|(idx, info)| {
            let mut proposals = per_image.remove(&idx).unwrap_or_default();
            if proposals.len() > MAX_PROPOSALS_PER_IMAGE {
                let mut keep = rank_by_score(proposals.iter().map(|p| p.score));
                keep.truncate(MAX_PROPOSALS_PER_IMAGE);
                keep.sort_unstable();
                stats.over_image_cap += proposals.len() - keep.len();
                let mut slots: Vec<Option<QueryProposal>> = proposals.into_iter().map(Some).collect();
                proposals = keep.into_iter().map(|k| slots[k].take().unwrap()).collect();
            }
            QueryImage {
                info: info.clone(),
                proposals,
            }
        })
        .collect();

    Ok(Dataset {
        root,
        num_classes: manifest.num_classes,
        shots: manifest.shots,
        images,
        supports,
        queries,
        ground_truth,
        feature_maps,
        warnings,
        stats,
    })
}
