//! End-to-end orchestration: support prototypes, query matching, score refinement, capping
//! and evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffusion::{diffuse_all_classes, DiffusionParams, Proposal};
use crate::eval::{evaluate, Detection, EvalReport};
use crate::features::{
    build_prototypes, masked_roi_pool, match_proposal, ClassPrototype, FeatureVector, SupportAnnotation,
};
use crate::geometry::mask_downsample;
use crate::postproc::{
    nms, soft_merge, soft_nms, topk_by_score, wbf, ScoredDetection, DEFAULT_NMS_IOU, DEFAULT_SOFT_NMS_SIGMA,
    DEFAULT_WBF_IOU,
};
use crate::synthio::{load_dataset, Dataset, QueryImage};
use crate::{Error, Result};

/// Score refinement applied after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    None,
    Nms,
    SoftNms,
    Wbf,
    SoftMerge,
    Diffusion,
    DiffusionNms,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::None,
        Method::Nms,
        Method::SoftNms,
        Method::Wbf,
        Method::SoftMerge,
        Method::Diffusion,
        Method::DiffusionNms,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Nms => "nms",
            Method::SoftNms => "softnms",
            Method::Wbf => "wbf",
            Method::SoftMerge => "softmerge",
            Method::Diffusion => "diffusion",
            Method::DiffusionNms => "diffusion+nms",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(" | "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrototypeSource {
    /// Build prototypes from the dataset's support annotations.
    Supports,
    Given(Vec<ClassPrototype<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub diffusion: DiffusionParams<f64>,
    pub method: Method,
    /// Detections kept per image after refinement.
    pub max_output: usize,
    pub nms_iou: f64,
    pub soft_nms_sigma: f64,
    pub wbf_iou: f64,
    /// Worker threads for per-image work; 0 uses the rayon default.
    pub jobs: usize,
    pub prototypes: PrototypeSource,
    /// When set, classes with more than `shots` supports use a seeded sample of `shots`.
    pub support_seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionParams::default(),
            method: Method::Diffusion,
            max_output: 100,
            nms_iou: DEFAULT_NMS_IOU,
            soft_nms_sigma: DEFAULT_SOFT_NMS_SIGMA,
            wbf_iou: DEFAULT_WBF_IOU,
            jobs: 0,
            prototypes: PrototypeSource::Supports,
            support_seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        if self.max_output == 0 {
            return Err(Error::InvalidParam("max_output must be >= 1".into()));
        }
        for (name, v) in [("nms_iou", self.nms_iou), ("wbf_iou", self.wbf_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParam(format!("{name} {v} not in (0, 1)")));
            }
        }
        if !(self.soft_nms_sigma > 0.0) {
            return Err(Error::InvalidParam("soft_nms_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Matched proposals of one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProposals {
    pub image_id: String,
    pub proposals: Vec<Proposal<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub prototypes: Vec<ClassPrototype<f64>>,
    pub detections: Vec<Detection<f64>>,
    pub report: EvalReport,
}

/// Pools every support feature under its mask and averages per class.
pub fn run_support_stage(ds: &Dataset) -> Result<Vec<ClassPrototype<f64>>> {
    prototypes_from(ds, ds.supports.iter())
}

/// Keeps at most `ds.shots` supports per class, drawn without replacement with a seeded
/// generator; survivors stay in file order.
pub fn sample_supports(ds: &Dataset, seed: u64) -> Vec<&SupportAnnotation<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; ds.supports.len()];
    for c in 0..ds.num_classes {
        let members: Vec<usize> = (0..ds.supports.len()).filter(|&i| ds.supports[i].class_id == c).collect();
        let k = (ds.shots as usize).min(members.len());
        for j in rand::seq::index::sample(&mut rng, members.len(), k) {
            keep[members[j]] = true;
        }
    }
    ds.supports.iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect()
}

fn prototypes_from<'a>(
    ds: &Dataset,
    supports: impl Iterator<Item = &'a SupportAnnotation<f64>>,
) -> Result<Vec<ClassPrototype<f64>>> {
    let mut pooled = Vec::new();
    for s in supports {
        let fm = ds
            .feature_maps
            .get(&s.image_id)
            .ok_or_else(|| Error::Format(format!("support image {} has no feature map", s.image_id)))?;
        let sm = mask_downsample(&s.mask, fm.grid_w, fm.grid_h);
        pooled.push((s.class_id, masked_roi_pool(fm, &s.bbox, &sm)?.vector));
    }
    let protos = build_prototypes(pooled.iter().map(|(c, v)| (*c, v)))?;
    let missing: Vec<u32> = (0..ds.num_classes)
        .filter(|c| !protos.iter().any(|p| p.class_id == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSupport(missing));
    }
    Ok(protos)
}

fn query_feature(ds: &Dataset, image: &QueryImage, k: usize) -> Result<FeatureVector<f64>> {
    let p = &image.proposals[k];
    if let Some(f) = &p.feature {
        return Ok(f.clone());
    }
    let fm = ds.feature_maps.get(&image.info.id).ok_or_else(|| {
        Error::Format(format!("image {} has neither proposal features nor a feature map", image.info.id))
    })?;
    let sm = mask_downsample(&p.mask, fm.grid_w, fm.grid_h);
    Ok(masked_roi_pool(fm, &p.bbox, &sm)?.vector)
}

/// Matches every proposal of one image against the prototypes.
pub fn match_image(ds: &Dataset, image: &QueryImage, protos: &[ClassPrototype<f64>]) -> Result<ImageProposals> {
    if protos.is_empty() {
        return Err(Error::EmptyPrototypes);
    }
    let proposals = (0..image.proposals.len())
        .map(|k| {
            let feature = query_feature(ds, image, k)?;
            let (pred_class, similarity) = match_proposal(&feature, protos)?;
            let p = &image.proposals[k];
            Ok(Proposal {
                bbox: p.bbox,
                mask: p.mask.clone(),
                upn_score: p.score,
                feature,
                pred_class,
                similarity,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImageProposals {
        image_id: image.info.id.clone(),
        proposals,
    })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn run_query_stage(ds: &Dataset, protos: &[ClassPrototype<f64>], jobs: usize) -> Result<Vec<ImageProposals>> {
    with_pool(jobs, || {
        ds.queries
            .par_iter()
            .map(|q| match_image(ds, q, protos))
            .collect()
    })
}

fn scored(props: &[Proposal<f64>], scores: impl IntoIterator<Item = f64>) -> Vec<ScoredDetection<f64>> {
    props
        .iter()
        .zip(scores)
        .map(|(p, score)| ScoredDetection {
            bbox: p.bbox,
            class_id: p.pred_class,
            score,
            mask: Some(p.mask.clone()),
        })
        .collect()
}

fn diffusion_scores(props: &[Proposal<f64>], params: &DiffusionParams<f64>) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; props.len()];
    for r in diffuse_all_classes(props, params)? {
        scores[r.index] = r.score;
    }
    Ok(scores)
}

/// Applies the selected method to one image's proposals and keeps the `max_output` best.
pub fn run_refine_stage(image: &ImageProposals, cfg: &PipelineConfig) -> Result<Vec<Detection<f64>>> {
    let props = &image.proposals;
    let sims = || props.iter().map(|p| p.similarity);
    let refined = match cfg.method {
        Method::None => scored(props, sims()),
        Method::Nms => nms(&scored(props, sims()), cfg.nms_iou),
        Method::SoftNms => soft_nms(&scored(props, sims()), cfg.soft_nms_sigma),
        Method::Wbf => wbf(&scored(props, sims()), cfg.wbf_iou),
        Method::SoftMerge => soft_merge(&scored(props, sims()))?,
        Method::Diffusion => scored(props, diffusion_scores(props, &cfg.diffusion)?),
        Method::DiffusionNms => nms(&scored(props, diffusion_scores(props, &cfg.diffusion)?), cfg.nms_iou),
    };
    Ok(topk_by_score(&refined, cfg.max_output)
        .into_iter()
        .map(|d| Detection {
            image_id: image.image_id.clone(),
            class_id: d.class_id,
            score: d.score,
            bbox: d.bbox,
        })
        .collect())
}

pub fn prototypes_for(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<ClassPrototype<f64>>> {
    match &cfg.prototypes {
        PrototypeSource::Supports => match cfg.support_seed {
            Some(seed) => prototypes_from(ds, sample_supports(ds, seed).into_iter()),
            None => run_support_stage(ds),
        }
        .map_err(|e| e.in_stage("support")),
        PrototypeSource::Given(p) if p.is_empty() => Err(Error::EmptyPrototypes.in_stage("support")),
        PrototypeSource::Given(p) => Ok(p.clone()),
    }
}

/// Refines already matched proposals and evaluates them against the dataset's ground truth.
pub fn refine_and_evaluate(
    ds: &Dataset,
    matched: &[ImageProposals],
    cfg: &PipelineConfig,
) -> Result<(Vec<Detection<f64>>, EvalReport)> {
    cfg.validate()?;
    if cfg.method == Method::SoftMerge && !ds.masks_complete() {
        return Err(Error::MissingMasks(cfg.method.to_string()).in_stage("refine"));
    }
    let per_image: Vec<Vec<Detection<f64>>> = with_pool(cfg.jobs, || {
        matched
            .par_iter()
            .map(|m| run_refine_stage(m, cfg))
            .collect::<Result<_>>()
    })
    .map_err(|e| e.in_stage("refine"))?;
    let detections: Vec<Detection<f64>> = per_image.into_iter().flatten().collect();
    let report = evaluate(&detections, &ds.ground_truth, cfg.max_output);
    Ok((detections, report))
}

pub fn run_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let prototypes = prototypes_for(ds, cfg)?;
    let matched = run_query_stage(ds, &prototypes, cfg.jobs).map_err(|e| e.in_stage("query"))?;
    let (detections, report) = refine_and_evaluate(ds, &matched, cfg)?;
    Ok(RunOutput {
        prototypes,
        detections,
        report,
    })
}

pub fn run_end_to_end(manifest: &Path, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let ds = load_dataset(manifest).map_err(|e| e.in_stage("load"))?;
    run_dataset(&ds, cfg)
}
